//! Built-in verification: finite-difference gradchecks of every layer and of
//! a one-stage network, adjoint pairs, operator equivalences and metric
//! identities. Everything runs in double precision at toy sizes.

use std::fmt::Write as _;
use std::time::Instant;

use crate::error::Result;
use crate::metrics::{evaluate, psnr, sam, PSNR_CAP};
use crate::net::{FusionConfig, FusionNet, StageParams};
use crate::nn::{shifted_window_mask, Conv2d, Conv3d, ConvTranspose2d, LayerNorm, Linear, SwinLayer, WindowAttention};
use crate::observation::{apply_c, apply_ct, apply_r, apply_rt, HsiCube, SpatialDegradation, SpectralResponse};
use crate::rng::{SeededRng, Stream};
use crate::solver::{grad_g, step, FusionProblem, PriorKind};
use crate::tensor::{gradcheck, Bound, DiffTensor, Fault, Padding, ParamStore, Precision, Tape, Var};

pub const LAYER_TOL: f64 = 1e-6;
pub const GRAPH_TOL: f64 = 1e-4;
pub const ADJOINT_TOL: f64 = 1e-10;
pub const ADJOINT_TRIALS: u64 = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckKind {
    /// Gradcheck of a single layer.
    Layer,
    /// Gradcheck of a composite graph.
    Graph,
    Adjoint,
    Oracle,
    Metric,
}

impl CheckKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CheckKind::Layer => "layer",
            CheckKind::Graph => "graph",
            CheckKind::Adjoint => "adjoint",
            CheckKind::Oracle => "oracle",
            CheckKind::Metric => "metric",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Check {
    pub name: String,
    pub kind: CheckKind,
    pub max_error: f64,
    pub tolerance: f64,
    pub passed: bool,
    /// Set when the check could not run at all.
    pub error: Option<String>,
}

impl Check {
    fn measured(name: &str, kind: CheckKind, max_error: f64, tolerance: f64) -> Self {
        Check { name: name.to_string(), kind, max_error, tolerance, passed: max_error < tolerance, error: None }
    }

    fn from_result(name: &str, kind: CheckKind, tolerance: f64, r: Result<f64>) -> Self {
        match r {
            Ok(e) => Check::measured(name, kind, e, tolerance),
            Err(e) => Check {
                name: name.to_string(),
                kind,
                max_error: f64::NAN,
                tolerance,
                passed: false,
                error: Some(e.to_string()),
            },
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct SelftestReport {
    pub checks: Vec<Check>,
    pub seconds: f64,
}

impl SelftestReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }

    pub fn render(&self) -> String {
        let w = self.checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
        let mut out = String::new();
        for c in &self.checks {
            let _ = write!(
                out,
                "{}  {:<7}  {:<w$}  max_err={:.3e}  tol={:.0e}",
                if c.passed { "PASS" } else { "FAIL" },
                c.kind.as_str(),
                c.name,
                c.max_error,
                c.tolerance
            );
            if let Some(e) = &c.error {
                let _ = write!(out, "  ({e})");
            }
            out.push('\n');
        }
        let failed = self.failures().len();
        let _ = writeln!(out, "{} checks, {} failed, {:.1}s", self.checks.len(), failed, self.seconds);
        out
    }
}

/// Every check. `fault` corrupts one backward rule in the gradchecks.
pub fn run(fault: Option<Fault>) -> SelftestReport {
    let t = Instant::now();
    let mut checks = gradchecks(fault);
    checks.extend(adjoint_checks());
    checks.extend(oracle_checks());
    checks.extend(metric_checks());
    SelftestReport { checks, seconds: t.elapsed().as_secs_f64() }
}

/// Only the gradchecks.
pub fn run_gradchecks(fault: Option<Fault>) -> SelftestReport {
    let t = Instant::now();
    let checks = gradchecks(fault);
    SelftestReport { checks, seconds: t.elapsed().as_secs_f64() }
}

fn uniform(n: usize, lo: f64, hi: f64, index: u64) -> Vec<f64> {
    SeededRng::new(17, Stream::Test, index).uniform_vec(n, lo, hi)
}

fn input(store: &mut ParamStore<f64>, shape: Vec<usize>, index: u64) -> crate::tensor::ParamId {
    let n = shape.iter().product();
    store.register("input", DiffTensor::new(shape, uniform(n, -1.0, 1.0, index)).expect("valid shape"))
}

/// Replaces every zero-initialized tensor (biases, norms, position tables)
/// with small random values so all their gradients are generic.
fn spread_constants(store: &mut ParamStore<f64>, index: u64) {
    let ids: Vec<_> = store.iter().filter(|(_, _, t)| t.data().iter().all(|v| *v == 0.0)).map(|(id, _, t)| (id, t.numel())).collect();
    for (k, (id, n)) in ids.into_iter().enumerate() {
        store.set_data(id, uniform(n, -0.3, 0.3, index * 100 + k as u64)).expect("same length");
    }
}

/// `Σ w ⊙ y` with fixed random weights, a smooth scalar probe of `y`.
fn probe<'t>(tape: &'t Tape<f64>, y: Var<'t, f64>, index: u64) -> Result<Var<'t, f64>> {
    let shape = y.shape();
    let w = uniform(y.numel(), -1.0, 1.0, index);
    y.mul(tape.constant(shape, w)?)?.sum()
}

fn layer_check<F>(name: &str, kind: CheckKind, tol: f64, mut store: ParamStore<f64>, max_entries: Option<usize>, fault: Option<Fault>, build: F) -> Check
where
    F: for<'t> Fn(&'t Tape<f64>, &Bound<'t, f64>) -> Result<Var<'t, f64>>,
{
    let r = gradcheck(&mut store, build, tol, max_entries, fault).map(|rep| rep.max_rel_err);
    Check::from_result(name, kind, tol, r)
}

fn gradchecks(fault: Option<Fault>) -> Vec<Check> {
    let mut out = Vec::new();
    let mut rng = SeededRng::new(17, Stream::Init, 0);
    let (l, g) = (CheckKind::Layer, CheckKind::Graph);

    let mut s = ParamStore::new();
    let lin = Linear::new(&mut s, "linear", 5, 3, &mut rng);
    let x = input(&mut s, vec![4, 5], 1);
    spread_constants(&mut s, 1);
    out.push(layer_check("linear", l, LAYER_TOL, s, None, fault, |t, p| probe(t, lin.forward(p, p.var(x))?, 2)));

    let mut s = ParamStore::new();
    let ln = LayerNorm::new(&mut s, "norm", 6);
    let x = input(&mut s, vec![5, 6], 3);
    spread_constants(&mut s, 2);
    out.push(layer_check("layer_norm", l, LAYER_TOL, s, None, fault, |t, p| probe(t, ln.forward(p, p.var(x))?, 4)));

    let mut s = ParamStore::new();
    let x = input(&mut s, vec![3, 4, 5], 5);
    out.push(layer_check("gelu", l, LAYER_TOL, s, None, fault, |t, p| probe(t, p.var(x).gelu()?, 6)));

    let mut s = ParamStore::new();
    let x = input(&mut s, vec![3, 4, 5], 7);
    out.push(layer_check("softplus", l, LAYER_TOL, s, None, fault, |t, p| probe(t, p.var(x).softplus()?, 8)));

    let mut s = ParamStore::new();
    let conv = Conv2d::new(&mut s, "conv", 3, 4, 3, 1, Padding::Zero(1), true, &mut rng);
    let x = input(&mut s, vec![3, 6, 5], 9);
    spread_constants(&mut s, 3);
    out.push(layer_check("conv2d 3x3", l, LAYER_TOL, s, None, fault, |t, p| probe(t, conv.forward(p, p.var(x))?, 10)));

    let mut s = ParamStore::new();
    let down = Conv2d::new(&mut s, "down", 3, 3, 2, 2, Padding::Zero(0), false, &mut rng);
    let x = input(&mut s, vec![3, 6, 8], 11);
    out.push(layer_check("conv2d stride 2", l, LAYER_TOL, s, None, fault, |t, p| probe(t, down.forward(p, p.var(x))?, 12)));

    let mut s = ParamStore::new();
    let up = ConvTranspose2d::new(&mut s, "up", 3, 2, 2, 2, true, &mut rng);
    let x = input(&mut s, vec![3, 3, 4], 13);
    spread_constants(&mut s, 4);
    out.push(layer_check("conv_transpose2d", l, LAYER_TOL, s, None, fault, |t, p| probe(t, up.forward(p, p.var(x))?, 14)));

    let mut s = ParamStore::new();
    let c3 = Conv3d::new(&mut s, "conv3d", 2, 2, 3, &mut rng);
    let x = input(&mut s, vec![2, 4, 5, 3], 15);
    spread_constants(&mut s, 5);
    out.push(layer_check("conv3d", l, LAYER_TOL, s, None, fault, |t, p| probe(t, c3.forward(p, p.var(x))?, 16)));

    let mut s = ParamStore::new();
    match WindowAttention::new(&mut s, "attn", 4, 2, 2, &mut rng) {
        Ok(attn) => {
            let x = input(&mut s, vec![2, 4, 4], 17);
            spread_constants(&mut s, 6);
            let mask = shifted_window_mask(2, 4, 2, 1).expect("valid plan");
            out.push(layer_check("window attention", l, LAYER_TOL, s, None, fault, move |t, p| {
                probe(t, attn.forward(p, p.var(x), Some(&mask))?, 18)
            }));
        }
        Err(e) => out.push(Check::from_result("window attention", l, LAYER_TOL, Err(e))),
    }

    let mut s = ParamStore::new();
    let stl = SwinLayer::new(&mut s, "stl0", 4, 2, 2, false, 2, &mut rng)
        .and_then(|a| Ok((a, SwinLayer::new(&mut s, "stl1", 4, 2, 2, true, 2, &mut rng)?)));
    match stl {
        Ok((a, b)) => {
            let x = input(&mut s, vec![4, 4, 4], 19);
            spread_constants(&mut s, 7);
            out.push(layer_check("swin pair (W-MSA, SW-MSA)", l, LAYER_TOL, s, None, fault, move |t, p| {
                probe(t, b.forward(p, a.forward(p, p.var(x))?)?, 20)
            }));
        }
        Err(e) => out.push(Check::from_result("swin pair (W-MSA, SW-MSA)", l, LAYER_TOL, Err(e))),
    }

    let cfg = toy_config(1);
    let mut s = ParamStore::new();
    match StageParams::new(&mut s, "stage", &cfg, cfg.prior_dim, &mut rng) {
        Ok(st) => {
            let eta = s.register("eta", DiffTensor::new(vec![1], vec![0.4]).expect("scalar"));
            let x = input(&mut s, vec![4, 8, 8], 21);
            let y = uniform(2 * 64, 0.0, 1.0, 22);
            let z = uniform(4 * 4 * 4, 0.0, 1.0, 23);
            spread_constants(&mut s, 8);
            out.push(layer_check("data module", g, GRAPH_TOL, s, Some(8), fault, move |t, p| {
                let y = t.constant(vec![2, 8, 8], y.clone())?;
                let z = t.constant(vec![4, 4, 4], z.clone())?;
                probe(t, st.data_module(p, p.var(x), y, z, p.var(eta).softplus()?)?, 24)
            }));
        }
        Err(e) => out.push(Check::from_result("data module", g, GRAPH_TOL, Err(e))),
    }

    let mut s = ParamStore::new();
    match StageParams::new(&mut s, "stage", &cfg, cfg.prior_dim, &mut rng) {
        Ok(st) => {
            let v = input(&mut s, vec![4, 8, 8], 25);
            let f = input(&mut s, vec![cfg.prior_dim, 8, 8], 26);
            spread_constants(&mut s, 9);
            out.push(layer_check("prior module", g, GRAPH_TOL, s, Some(8), fault, move |t, p| {
                let (x, feats) = st.prior.forward(p, p.var(v), Some(p.var(f)))?;
                probe(t, x, 27)?.add(probe(t, feats, 28)?)
            }));
        }
        Err(e) => out.push(Check::from_result("prior module", g, GRAPH_TOL, Err(e))),
    }

    match FusionNet::<f64>::new(cfg) {
        Ok(net) => {
            let mut s = net.params.clone();
            spread_constants(&mut s, 10);
            let y = cube(8, 8, 2, 29);
            let z = cube(4, 4, 4, 30);
            out.push(layer_check("network, one stage", g, GRAPH_TOL, s, Some(8), fault, move |t, p| {
                probe(t, net.forward_cubes(t, p, &y, &z)?, 31)
            }));
        }
        Err(e) => out.push(Check::from_result("network, one stage", g, GRAPH_TOL, Err(e))),
    }
    out
}

/// 8x8 MSI, 4x4 LR-HSI, `S = 4`, `s = 2`, `d = 2`.
fn toy_config(stages: usize) -> FusionConfig {
    FusionConfig {
        stages,
        scale: 2,
        bands: 4,
        msi_bands: 2,
        prior_dim: 8,
        n_stl: 2,
        window: 4,
        heads: 2,
        mlp_ratio: 2,
        n_conv3d: 2,
        conv3d_channels: 2,
        precision: Precision::Double,
        seed: 17,
        ..FusionConfig::default()
    }
}

fn cube(w: usize, h: usize, s: usize, index: u64) -> HsiCube {
    HsiCube::new(w, h, s, uniform(w * h * s, 0.0, 1.0, index)).expect("positive dims")
}

fn rel_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

fn eval_var(f: impl for<'t> FnOnce(&'t Tape<f64>) -> Result<Var<'t, f64>>) -> Result<Vec<f64>> {
    let tape = Tape::new();
    Ok(f(&tape)?.value())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn adjoint_checks() -> Vec<Check> {
    let a = CheckKind::Adjoint;
    let mut out = Vec::new();

    let observation = || -> Result<f64> {
        let r = SpectralResponse::normalized(5, 3, uniform(15, 0.05, 1.0, 40))?;
        let c = SpatialDegradation::gaussian(8, 2.0, 4)?;
        let mut worst: f64 = 0.0;
        for t in 0..ADJOINT_TRIALS {
            let x = cube(16, 8, 5, 1000 + t);
            let y = cube(16, 8, 3, 2000 + t);
            let z = cube(4, 2, 5, 3000 + t);
            worst = worst.max(rel_gap(apply_r(&x, &r)?.dot(&y)?, x.dot(&apply_rt(&y, &r)?)?));
            worst = worst.max(rel_gap(apply_c(&x, &c)?.dot(&z)?, x.dot(&apply_ct(&z, &c, 16, 8)?)?));
        }
        Ok(worst)
    };
    out.push(Check::from_result("observation R and C", a, ADJOINT_TOL, observation()));

    // Down/up-sampling chain of a scale-4 network with tied weights.
    let learned = || -> Result<f64> {
        let cfg = FusionConfig { scale: 4, ..toy_config(1) };
        let mut store = ParamStore::<f64>::new();
        let mut rng = SeededRng::new(17, Stream::Init, 1);
        let st = StageParams::new(&mut store, "stage", &cfg, cfg.prior_dim, &mut rng)?;
        for (c, ct) in st.c_convs.iter().zip(&st.ct_convs) {
            let w = store.get(c.weight).data().to_vec();
            store.set_data(ct.weight, w)?;
        }
        let mut worst: f64 = 0.0;
        for t in 0..ADJOINT_TRIALS {
            let x = uniform(4 * 16 * 16, -1.0, 1.0, 4000 + t);
            let z = uniform(4 * 4 * 4, -1.0, 1.0, 5000 + t);
            let cx = eval_var(|tape| {
                let p = store.bind(tape);
                let mut v = tape.constant(vec![4, 16, 16], x.clone())?;
                for c in &st.c_convs {
                    v = c.forward(&p, v)?;
                }
                Ok(v)
            })?;
            let ctz = eval_var(|tape| {
                let p = store.bind(tape);
                let mut v = tape.constant(vec![4, 4, 4], z.clone())?;
                for ct in st.ct_convs.iter().rev() {
                    v = ct.forward(&p, v)?;
                }
                Ok(v)
            })?;
            worst = worst.max(rel_gap(dot(&cx, &z), dot(&x, &ctz)));
        }
        Ok(worst)
    };
    out.push(Check::from_result("learned down/up pair, tied", a, ADJOINT_TOL, learned()));
    out
}

fn oracle_checks() -> Vec<Check> {
    let o = CheckKind::Oracle;
    let mut out = Vec::new();
    let setup = || -> Result<(FusionNet<f64>, SpectralResponse, SpatialDegradation)> {
        let mut net = FusionNet::<f64>::new(toy_config(1))?;
        let r = SpectralResponse::normalized(4, 2, uniform(8, 0.05, 1.0, 50))?;
        let c = SpatialDegradation::new(vec![0.4, 0.1, 0.3, 0.2], 2, 2)?;
        net.freeze_data_module(0, &r, &c)?;
        net.set_eta(0, 0.37)?;
        Ok((net, r, c))
    };
    let (x, y, z) = (cube(8, 8, 4, 51), cube(8, 8, 2, 52), cube(4, 4, 4, 53));

    let data_module = || -> Result<f64> {
        let (net, r, c) = setup()?;
        let got = eval_var(|tape| {
            let p = net.params.bind(tape);
            let eta = p.var(net.eta_param(0)).softplus()?;
            net.stage(0).data_module(
                &p,
                tape.constant(x.tensor_shape(), x.data().to_vec())?,
                tape.constant(y.tensor_shape(), y.data().to_vec())?,
                tape.constant(z.tensor_shape(), z.data().to_vec())?,
                eta,
            )
        })?;
        let ry = apply_rt(&apply_r(&x, &r)?.sub(&y)?, &r)?;
        let cz = apply_ct(&apply_c(&x, &c)?.sub(&z)?, &c, 8, 8)?;
        let expect = ry.lin_comb(0.37, &cz, 0.37)?;
        Ok(got.iter().zip(expect.data()).fold(0.0, |m, (a, b)| m.max((a - b).abs())))
    };
    out.push(Check::from_result("frozen data module vs explicit operators", o, 1e-10, data_module()));

    let stage = || -> Result<f64> {
        let (mut net, r, c) = setup()?;
        net.zero_prior_head(0)?;
        let got = eval_var(|tape| {
            let p = net.params.bind(tape);
            net.forward(
                &p,
                tape.constant(y.tensor_shape(), y.data().to_vec())?,
                tape.constant(z.tensor_shape(), z.data().to_vec())?,
                tape.constant(x.tensor_shape(), x.data().to_vec())?,
            )
        })?;
        let problem = FusionProblem::new(y.clone(), z.clone(), r, c, 0.0, PriorKind::None)?;
        let expect = step(&x, &problem, 0.37)?;
        let direct = x.lin_comb(1.0, &grad_g(&x, &problem)?, -0.37)?;
        let gap = expect.max_abs_diff(&direct)?;
        Ok(got.iter().zip(expect.data()).fold(gap, |m, (a, b)| m.max((a - b).abs())))
    };
    out.push(Check::from_result("frozen stage vs solver step", o, 1e-5, stage()));
    out
}

fn metric_checks() -> Vec<Check> {
    let m = CheckKind::Metric;
    let mut out = Vec::new();
    let x = cube(16, 16, 4, 60);
    let identity = || -> Result<f64> {
        let r = evaluate(&x, &x, 4.0)?;
        Ok((r.psnr - PSNR_CAP).abs().max(r.sam.abs()).max(r.ergas.abs()).max((r.ssim - 1.0).abs()))
    };
    out.push(Check::from_result("identical inputs give (cap, 0, 0, 1)", m, 1e-12, identity()));

    let twenty_db = || -> Result<f64> {
        let a = HsiCube::filled(4, 4, 1, 0.5)?;
        let b = HsiCube::filled(4, 4, 1, 0.6)?;
        Ok((psnr(&b, &a)? - 20.0).abs())
    };
    out.push(Check::from_result("MSE 0.01 gives 20 dB", m, 1e-9, twenty_db()));

    let scaled = || -> Result<f64> { sam(&x.lin_comb(2.0, &x, 0.0)?, &x) };
    out.push(Check::from_result("SAM ignores scale", m, 1e-6, scaled()));

    let orthogonal = || -> Result<f64> {
        let mut a = HsiCube::filled(3, 3, 2, 0.0)?;
        let mut b = a.clone();
        a.band_mut(0).fill(1.0);
        b.band_mut(1).fill(1.0);
        Ok((sam(&a, &b)? - 90.0).abs())
    };
    out.push(Check::from_result("orthogonal spectra give 90 degrees", m, 1e-9, orthogonal()));
    out
}
