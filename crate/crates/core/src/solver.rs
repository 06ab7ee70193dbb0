//! Proximal-gradient reference solver for the fusion objective
//! `½‖XR − Y‖² + ½‖CX − Z‖² + λ f(X)` with closed-form priors.

use crate::error::{Error, Result};
use crate::observation::{
    apply_c, apply_ct, apply_r, apply_rt, bicubic_resize, HsiCube, SpatialDegradation, SpectralResponse,
};
use crate::rng::{SeededRng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PriorKind {
    None,
    /// `½‖X‖²`
    Quadratic,
    /// `‖X‖₁`
    Sparse,
}

impl PriorKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(PriorKind::None),
            "quadratic" => Ok(PriorKind::Quadratic),
            "sparse" => Ok(PriorKind::Sparse),
            _ => Err(Error::config(format!("unknown prior '{s}' (none, quadratic, sparse)"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PriorKind::None => "none",
            PriorKind::Quadratic => "quadratic",
            PriorKind::Sparse => "sparse",
        }
    }
}

#[derive(Debug, Clone)]
pub struct FusionProblem {
    pub msi: HsiCube,
    pub hsi: HsiCube,
    pub response: SpectralResponse,
    pub degradation: SpatialDegradation,
    pub lambda: f64,
    pub prior: PriorKind,
}

impl FusionProblem {
    pub fn new(
        msi: HsiCube,
        hsi: HsiCube,
        response: SpectralResponse,
        degradation: SpatialDegradation,
        lambda: f64,
        prior: PriorKind,
    ) -> Result<Self> {
        if !(lambda >= 0.0) {
            return Err(Error::config(format!("lambda must be non-negative, got {lambda}")));
        }
        let d = degradation.factor();
        if msi.bands() != response.msi_bands() || hsi.bands() != response.bands() {
            return Err(Error::shape(format!(
                "band counts {} (MSI) and {} (HSI) do not fit a {}x{} response",
                msi.bands(),
                hsi.bands(),
                response.bands(),
                response.msi_bands()
            )));
        }
        if msi.width() != hsi.width() * d || msi.height() != hsi.height() * d {
            return Err(Error::shape(format!(
                "MSI {}x{} is not {d}x the HSI {}x{}",
                msi.width(),
                msi.height(),
                hsi.width(),
                hsi.height()
            )));
        }
        Ok(FusionProblem { msi, hsi, response, degradation, lambda, prior })
    }

    /// Geometry of the unknown: `(W, H, S)`.
    pub fn unknown_dims(&self) -> (usize, usize, usize) {
        (self.msi.width(), self.msi.height(), self.hsi.bands())
    }

    fn check(&self, x: &HsiCube) -> Result<()> {
        if x.dims() != self.unknown_dims() {
            return Err(Error::shape(format!("iterate {:?} vs problem {:?}", x.dims(), self.unknown_dims())));
        }
        Ok(())
    }

    /// `RᵀR x + CᵀC x`, the Hessian of the fidelity terms.
    fn normal_op(&self, x: &HsiCube) -> Result<HsiCube> {
        let (w, h, _) = self.unknown_dims();
        let a = apply_rt(&apply_r(x, &self.response)?, &self.response)?;
        let b = apply_ct(&apply_c(x, &self.degradation)?, &self.degradation, w, h)?;
        a.lin_comb(1.0, &b, 1.0)
    }
}

/// `(XR − Y)Rᵀ + Cᵀ(CX − Z)`.
pub fn grad_g(x: &HsiCube, p: &FusionProblem) -> Result<HsiCube> {
    p.check(x)?;
    let (w, h, _) = p.unknown_dims();
    let ry = apply_r(x, &p.response)?.sub(&p.msi)?;
    let cz = apply_c(x, &p.degradation)?.sub(&p.hsi)?;
    apply_rt(&ry, &p.response)?.lin_comb(1.0, &apply_ct(&cz, &p.degradation, w, h)?, 1.0)
}

pub fn objective(x: &HsiCube, p: &FusionProblem) -> Result<f64> {
    p.check(x)?;
    let ry = apply_r(x, &p.response)?.sub(&p.msi)?;
    let cz = apply_c(x, &p.degradation)?.sub(&p.hsi)?;
    let prior = match p.prior {
        PriorKind::None => 0.0,
        PriorKind::Quadratic => 0.5 * x.norm().powi(2),
        PriorKind::Sparse => x.data().iter().map(|v| v.abs()).sum(),
    };
    Ok(0.5 * ry.norm().powi(2) + 0.5 * cz.norm().powi(2) + p.lambda * prior)
}

/// `prox_{t f}(v)`.
pub fn prox(v: &HsiCube, t: f64, kind: PriorKind) -> Result<HsiCube> {
    if !(t >= 0.0) {
        return Err(Error::config(format!("prox threshold must be non-negative, got {t}")));
    }
    let data = match kind {
        PriorKind::None => return Ok(v.clone()),
        PriorKind::Quadratic => v.data().iter().map(|x| x / (1.0 + t)).collect(),
        PriorKind::Sparse => v.data().iter().map(|&x| x.signum() * (x.abs() - t).max(0.0)).collect(),
    };
    v.with_data(data)
}

/// One proximal-gradient step `prox_{λη f}(X − η ∇g(X))`.
pub fn step(x: &HsiCube, p: &FusionProblem, eta: f64) -> Result<HsiCube> {
    let g = grad_g(x, p)?;
    prox(&x.lin_comb(1.0, &g, -eta)?, p.lambda * eta, p.prior)
}

/// Largest eigenvalue of `RᵀR + CᵀC` by power iteration from a seeded start.
pub fn lipschitz_estimate(p: &FusionProblem, power_iters: usize, seed: u64) -> Result<f64> {
    let (w, h, s) = p.unknown_dims();
    let mut rng = SeededRng::new(seed, Stream::Power, 0);
    let mut v = HsiCube::new(w, h, s, (0..w * h * s).map(|_| rng.normal()).collect())?;
    let n = v.norm();
    v = v.lin_comb(1.0 / n, &v, 0.0)?;
    let mut est = 0.0;
    for _ in 0..power_iters.max(1) {
        let av = p.normal_op(&v)?;
        est = av.norm();
        if est == 0.0 {
            break;
        }
        v = av.lin_comb(1.0 / est, &av, 0.0)?;
    }
    Ok(est)
}

#[derive(Debug, Clone, Copy)]
pub struct SolveOptions {
    /// Step size; `None` picks `1/L`.
    pub eta: Option<f64>,
    pub max_iters: usize,
    /// Stop when the objective moves less than this, relatively, across
    /// the last 10 iterations. Zero disables the test.
    pub tol: f64,
    pub power_iters: usize,
    pub seed: u64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { eta: None, max_iters: 1000, tol: 1e-8, power_iters: 100, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub x: HsiCube,
    /// Objective before the first step and after each one.
    pub trace: Vec<f64>,
    pub eta: f64,
    pub iterations: usize,
    pub converged: bool,
}

const DIVERGENCE: f64 = 1e12;
const STALL_WINDOW: usize = 10;

pub fn initial_guess(p: &FusionProblem) -> Result<HsiCube> {
    bicubic_resize(&p.hsi, p.degradation.factor() as f64)
}

pub fn solve(p: &FusionProblem, opts: &SolveOptions) -> Result<Solution> {
    let eta = match opts.eta {
        Some(e) => e,
        None => 1.0 / lipschitz_estimate(p, opts.power_iters, opts.seed)?,
    };
    if !(eta > 0.0) || !eta.is_finite() {
        return Err(Error::config(format!("step size must be positive, got {eta}")));
    }
    let mut x = initial_guess(p)?;
    let mut trace = vec![objective(&x, p)?];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iters {
        x = step(&x, p, eta)?;
        iterations += 1;
        let f = objective(&x, p)?;
        if !(f <= DIVERGENCE) {
            return Err(Error::numerics(format!("objective reached {f:e} at iteration {iterations}; solver diverged")));
        }
        trace.push(f);
        if opts.tol > 0.0 && trace.len() > STALL_WINDOW {
            let prev = trace[trace.len() - 1 - STALL_WINDOW];
            if (prev - f).abs() <= opts.tol * f.abs().max(f64::MIN_POSITIVE) {
                converged = true;
                break;
            }
        }
    }
    Ok(Solution { x, trace, eta, iterations, converged })
}

#[cfg(test)]
mod tests {
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;

    use super::*;

    fn cube(w: usize, h: usize, s: usize, seed: u64) -> HsiCube {
        let mut rng = SeededRng::new(seed, Stream::Test, 7);
        HsiCube::new(w, h, s, rng.uniform_vec(w * h * s, 0.0, 1.0)).unwrap()
    }

    fn response(bands: usize, msi: usize, seed: u64) -> SpectralResponse {
        let mut rng = SeededRng::new(seed, Stream::Test, 8);
        SpectralResponse::normalized(bands, msi, rng.uniform_vec(bands * msi, 0.1, 1.0)).unwrap()
    }

    fn tiny(lambda: f64, prior: PriorKind, consistent: bool) -> (FusionProblem, HsiCube) {
        let truth = cube(8, 8, 4, 1);
        let r = response(4, 2, 2);
        let c = SpatialDegradation::gaussian(4, 1.0, 2).unwrap();
        let (mut y, mut z) = (apply_r(&truth, &r).unwrap(), apply_c(&truth, &c).unwrap());
        if !consistent {
            y = y.lin_comb(1.0, &cube(8, 8, 2, 3), 0.05).unwrap();
            z = z.lin_comb(1.0, &cube(4, 4, 4, 4), 0.05).unwrap();
        }
        (FusionProblem::new(y, z, r, c, lambda, prior).unwrap(), truth)
    }

    /// Dense `A_R` and `A_C` built entry by entry on the vectorized cube.
    fn dense_operators(p: &FusionProblem) -> (DMatrix<f64>, DMatrix<f64>) {
        let (w, h, s) = p.unknown_dims();
        let r = &p.response;
        let n = w * h * s;
        let mut ar = DMatrix::zeros(w * h * r.msi_bands(), n);
        for j in 0..r.msi_bands() {
            for i in 0..s {
                for px in 0..w * h {
                    ar[(j * w * h + px, i * w * h + px)] = r.get(i, j);
                }
            }
        }
        let c = &p.degradation;
        let (d, k, anchor) = (c.factor(), c.size(), c.anchor() as isize);
        let (lw, lh) = (w / d, h / d);
        let mut ac = DMatrix::zeros(lw * lh * s, n);
        for b in 0..s {
            for i in 0..lh {
                for jj in 0..lw {
                    for a in 0..k {
                        for e in 0..k {
                            let row = ((d * i) as isize + a as isize - anchor).rem_euclid(h as isize) as usize;
                            let col = ((d * jj) as isize + e as isize - anchor).rem_euclid(w as isize) as usize;
                            ac[(b * lw * lh + i * lw + jj, b * w * h + row * w + col)] += c.kernel()[a * k + e];
                        }
                    }
                }
            }
        }
        (ar, ac)
    }

    fn dense_solution(p: &FusionProblem) -> HsiCube {
        let (ar, ac) = dense_operators(p);
        let n = ar.ncols();
        let lhs = ar.transpose() * &ar + ac.transpose() * &ac + DMatrix::identity(n, n) * p.lambda;
        let rhs = ar.transpose() * DVector::from_column_slice(p.msi.data())
            + ac.transpose() * DVector::from_column_slice(p.hsi.data());
        let x = lhs.cholesky().expect("strongly convex").solve(&rhs);
        let (w, h, s) = p.unknown_dims();
        HsiCube::new(w, h, s, x.as_slice().to_vec()).unwrap()
    }

    #[test]
    fn gradient_vanishes_at_truth() {
        let (p, truth) = tiny(0.0, PriorKind::None, true);
        assert!(grad_g(&truth, &p).unwrap().data().iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn gradient_ignores_lambda() {
        let (p, _) = tiny(0.0, PriorKind::Quadratic, false);
        let q = FusionProblem { lambda: 3.0, ..p.clone() };
        let x = cube(8, 8, 4, 9);
        assert_eq!(grad_g(&x, &p).unwrap(), grad_g(&x, &q).unwrap());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (p, _) = tiny(0.0, PriorKind::None, false);
        let x = cube(8, 8, 4, 10);
        let g = grad_g(&x, &p).unwrap();
        let h = 1e-5;
        let mut num = vec![0.0; x.len()];
        for (i, n) in num.iter_mut().enumerate() {
            let mut d = x.data().to_vec();
            d[i] += h;
            let fp = objective(&x.with_data(d.clone()).unwrap(), &p).unwrap();
            d[i] -= 2.0 * h;
            let fm = objective(&x.with_data(d).unwrap(), &p).unwrap();
            *n = (fp - fm) / (2.0 * h);
        }
        let err = g.data().iter().zip(&num).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        let scale = g.data().iter().fold(0.0f64, |m, a| m.max(a.abs()));
        assert!(err / scale < 1e-6, "relative error {}", err / scale);
    }

    #[test]
    fn prox_examples() {
        let v = HsiCube::new(2, 1, 1, vec![0.5, -0.1]).unwrap();
        for kind in [PriorKind::None, PriorKind::Quadratic, PriorKind::Sparse] {
            assert_eq!(prox(&v, 0.0, kind).unwrap(), v);
        }
        let s = prox(&v, 0.2, PriorKind::Sparse).unwrap();
        assert!((s.data()[0] - 0.3).abs() < 1e-15);
        assert_eq!(s.data()[1], 0.0);
        assert!(matches!(prox(&v, -0.1, PriorKind::Sparse), Err(Error::Config(_))));
    }

    #[test]
    fn quadratic_prox_is_scalar_argmin() {
        // Golden-section search on ½(u − v)² + t·½u².
        for (v, t) in [(0.7, 0.3), (-1.2, 2.0), (0.0, 0.5), (3.0, 0.01)] {
            let f = |u: f64| 0.5 * (u - v) * (u - v) + 0.5 * t * u * u;
            let (mut a, mut b) = (-10.0, 10.0);
            let phi = (5f64.sqrt() - 1.0) / 2.0;
            for _ in 0..200 {
                let c = b - phi * (b - a);
                let d = a + phi * (b - a);
                if f(c) < f(d) {
                    b = d;
                } else {
                    a = c;
                }
            }
            let got = prox(&HsiCube::new(1, 1, 1, vec![v]).unwrap(), t, PriorKind::Quadratic).unwrap();
            assert!((got.data()[0] - (a + b) / 2.0).abs() < 1e-8);
        }
    }

    #[test]
    fn quadratic_solve_matches_normal_equations() {
        let (p, _) = tiny(0.1, PriorKind::Quadratic, false);
        let oracle = dense_solution(&p);
        let sol = solve(&p, &SolveOptions { max_iters: 10_000, tol: 1e-15, ..Default::default() }).unwrap();
        let rel = sol.x.sub(&oracle).unwrap().norm() / oracle.norm();
        assert!(rel < 1e-5, "relative error {rel} after {} iterations", sol.iterations);
    }

    #[test]
    fn oracle_solution_is_a_fixed_point() {
        let (p, _) = tiny(0.1, PriorKind::Quadratic, false);
        let oracle = dense_solution(&p);
        let eta = 1.0 / lipschitz_estimate(&p, 100, 0).unwrap();
        let moved = step(&oracle, &p, eta).unwrap().max_abs_diff(&oracle).unwrap();
        assert!(moved < 1e-8, "moved {moved}");
    }

    #[test]
    fn trace_is_monotone_for_plain_least_squares() {
        for consistent in [true, false] {
            let (p, _) = tiny(0.0, PriorKind::None, consistent);
            let sol = solve(&p, &SolveOptions { max_iters: 300, tol: 0.0, ..Default::default() }).unwrap();
            assert_eq!(sol.trace.len(), 301);
            for w in sol.trace.windows(2) {
                assert!(w[1] <= w[0] * (1.0 + 1e-12), "{} -> {}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn zero_iterations_returns_bicubic_start() {
        let (p, _) = tiny(0.0, PriorKind::None, true);
        let sol = solve(&p, &SolveOptions { max_iters: 0, ..Default::default() }).unwrap();
        assert_eq!(sol.x, bicubic_resize(&p.hsi, 2.0).unwrap());
        assert_eq!(sol.trace.len(), 1);
    }

    #[test]
    fn divergence_is_reported() {
        let (p, _) = tiny(0.0, PriorKind::None, false);
        let err = solve(&p, &SolveOptions { eta: Some(50.0), max_iters: 500, ..Default::default() }).unwrap_err();
        assert!(matches!(err, Error::Numerics(ref m) if m.contains("iteration")), "{err}");
    }

    #[test]
    fn lipschitz_of_identity_operators_is_two() {
        let x = cube(8, 8, 3, 5);
        let p = FusionProblem::new(
            x.clone(),
            x,
            SpectralResponse::identity(3),
            SpatialDegradation::delta(1).unwrap(),
            0.0,
            PriorKind::None,
        )
        .unwrap();
        assert!((lipschitz_estimate(&p, 5, 0).unwrap() - 2.0).abs() < 1e-3);
    }

    #[test]
    fn lipschitz_grows_with_iterations() {
        let (p, _) = tiny(0.0, PriorKind::None, false);
        let ests: Vec<f64> = (1..30).map(|k| lipschitz_estimate(&p, k, 3).unwrap()).collect();
        for w in ests.windows(2) {
            assert!(w[1] >= w[0] * (1.0 - 1e-12));
        }
    }

    #[test]
    fn lipschitz_tracks_kernel_gain() {
        let (p, _) = tiny(0.0, PriorKind::None, false);
        let blind = SpectralResponse::unchecked(4, 2, vec![0.0; 8]).unwrap();
        let base = FusionProblem { response: blind, ..p };
        let scaled = FusionProblem { degradation: base.degradation.scaled(2.0), ..base.clone() };
        let l0 = lipschitz_estimate(&base, 200, 1).unwrap();
        let l1 = lipschitz_estimate(&scaled, 200, 1).unwrap();
        assert!((l1 / l0 - 4.0).abs() < 0.2, "ratio {}", l1 / l0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn prox_is_nonexpansive(seed in 0u64..10_000, t in 0.0f64..2.0) {
            let u = cube(4, 3, 2, seed).lin_comb(4.0, &cube(4, 3, 2, seed + 1), -2.0).unwrap();
            let v = cube(4, 3, 2, seed + 77).lin_comb(3.0, &cube(4, 3, 2, seed + 78), -1.5).unwrap();
            for kind in [PriorKind::None, PriorKind::Quadratic, PriorKind::Sparse] {
                let d = prox(&u, t, kind).unwrap().sub(&prox(&v, t, kind).unwrap()).unwrap().norm();
                prop_assert!(d <= u.sub(&v).unwrap().norm() * (1.0 + 1e-12));
            }
        }
    }
}
