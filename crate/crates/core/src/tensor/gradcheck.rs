use super::{Bound, Fault, ParamStore, Tape, Var};
use crate::error::{Error, Result};

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct GradcheckReport {
    /// `(parameter name, relative error)` in registration order.
    pub per_param: Vec<(String, f64)>,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Compare analytic gradients of the scalar built by `build` against
/// central differences, for every parameter in `params`.
///
/// The error for one tensor is `‖a − n‖∞ / max(‖a‖∞, ‖n‖∞)` over the checked
/// entries. `max_entries` caps the entries probed per tensor; they are then
/// spread evenly through the tensor. Inputs must sit away from kinks of
/// non-smooth ops (|x| at 0, relu at 0).
pub fn gradcheck<F>(
    params: &mut ParamStore<f64>,
    build: F,
    tolerance: f64,
    max_entries: Option<usize>,
    fault: Option<Fault>,
) -> Result<GradcheckReport>
where
    F: for<'t> Fn(&'t Tape<f64>, &Bound<'t, f64>) -> Result<Var<'t, f64>>,
{
    let tape = match fault {
        Some(f) => Tape::with_fault(f),
        None => Tape::new(),
    };
    let bound = params.bind(&tape);
    let loss = build(&tape, &bound)?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = bound
        .vars()
        .iter()
        .zip(params.iter())
        .map(|(v, (_, _, t))| grads.get(*v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect();

    let eval = |params: &ParamStore<f64>| -> Result<f64> {
        let tape = Tape::new();
        let bound = params.bind(&tape);
        let v = build(&tape, &bound)?.item();
        if !v.is_finite() {
            return Err(Error::numerics("gradcheck loss is not finite"));
        }
        Ok(v)
    };

    let mut per_param = Vec::with_capacity(params.len());
    for pi in 0..params.len() {
        let id = super::ParamId(pi);
        let n = params.get(id).numel();
        let picks: Vec<usize> = match max_entries {
            Some(k) if k < n => (0..k).map(|j| j * n / k).collect(),
            _ => (0..n).collect(),
        };
        let mut max_diff: f64 = 0.0;
        let mut scale: f64 = 1e-12;
        for &e in &picks {
            let orig = params.get(id).data()[e];
            params.get_mut(id).data_mut()[e] = orig + FD_STEP;
            let up = eval(params);
            params.get_mut(id).data_mut()[e] = orig - FD_STEP;
            let down = eval(params);
            params.get_mut(id).data_mut()[e] = orig;
            let numeric = (up? - down?) / (2.0 * FD_STEP);
            let a = analytic[pi][e];
            if !a.is_finite() {
                return Err(Error::numerics(format!("non-finite analytic gradient in {}", params.name(id))));
            }
            max_diff = max_diff.max((a - numeric).abs());
            scale = scale.max(a.abs()).max(numeric.abs());
        }
        per_param.push((params.name(id).to_string(), max_diff / scale));
    }
    let max_rel_err = per_param.iter().map(|(_, e)| *e).fold(0.0, f64::max);
    Ok(GradcheckReport { per_param, max_rel_err, tolerance, passed: max_rel_err < tolerance })
}
