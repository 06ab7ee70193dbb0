//! Full-reference quality indices. Every function takes `(estimate, reference)`.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::observation::HsiCube;

pub const PSNR_CAP: f64 = 100.0;

const SSIM_RADIUS: usize = 5;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    pub psnr: f64,
    pub sam: f64,
    pub ergas: f64,
    pub ssim: f64,
}

impl MetricsReport {
    pub const NAMES: [&'static str; 4] = ["psnr", "sam", "ergas", "ssim"];

    pub fn values(&self) -> [f64; 4] {
        [self.psnr, self.sam, self.ergas, self.ssim]
    }

    /// `name=value` lines with four decimals.
    pub fn to_text(&self) -> String {
        self.render(|v| format!("{v:.4}"))
    }

    /// Same lines at full round-trip precision.
    pub fn to_machine(&self) -> String {
        self.render(|v| format!("{v:?}"))
    }

    fn render(&self, fmt: impl Fn(f64) -> String) -> String {
        let mut out = String::new();
        for (name, v) in Self::NAMES.iter().zip(self.values()) {
            let _ = writeln!(out, "{name}={}", fmt(v));
        }
        out
    }

    pub fn mean(reports: &[MetricsReport]) -> Option<MetricsReport> {
        if reports.is_empty() {
            return None;
        }
        let n = reports.len() as f64;
        let sum = |f: fn(&MetricsReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        Some(MetricsReport {
            psnr: sum(|r| r.psnr),
            sam: sum(|r| r.sam),
            ergas: sum(|r| r.ergas),
            ssim: sum(|r| r.ssim),
        })
    }
}

pub fn evaluate(x: &HsiCube, reference: &HsiCube, scale: f64) -> Result<MetricsReport> {
    Ok(MetricsReport {
        psnr: psnr(x, reference)?,
        sam: sam(x, reference)?,
        ergas: ergas(x, reference, scale)?,
        ssim: ssim(x, reference)?,
    })
}

fn band_mse(x: &[f64], r: &[f64]) -> f64 {
    x.iter().zip(r).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / x.len() as f64
}

/// Mean over bands of `10 log10(1 / MSE_b)`, each band capped at 100 dB.
pub fn psnr(x: &HsiCube, reference: &HsiCube) -> Result<f64> {
    x.same_dims(reference)?;
    let total: f64 = (0..x.bands())
        .map(|b| {
            let mse = band_mse(x.band(b), reference.band(b));
            if mse == 0.0 {
                PSNR_CAP
            } else {
                (10.0 * (1.0 / mse).log10()).min(PSNR_CAP)
            }
        })
        .sum();
    Ok(total / x.bands() as f64)
}

/// Mean spectral angle in degrees, skipping pixels where either spectrum is zero.
pub fn sam(x: &HsiCube, reference: &HsiCube) -> Result<f64> {
    x.same_dims(reference)?;
    let plane = x.width() * x.height();
    let mut nx = vec![0.0; plane];
    let mut nr = vec![0.0; plane];
    for b in 0..x.bands() {
        for (p, (a, r)) in x.band(b).iter().zip(reference.band(b)).enumerate() {
            nx[p] += a * a;
            nr[p] += r * r;
        }
    }
    // Half-angle form on unit spectra: exact zero for parallel vectors,
    // where acos of a rounded cosine is off by ~1e-8 rad.
    let mut diff = vec![0.0; plane];
    let mut sum = vec![0.0; plane];
    for b in 0..x.bands() {
        for (p, (a, r)) in x.band(b).iter().zip(reference.band(b)).enumerate() {
            if nx[p] == 0.0 || nr[p] == 0.0 {
                continue;
            }
            let (u, v) = (a / nx[p].sqrt(), r / nr[p].sqrt());
            diff[p] += (u - v) * (u - v);
            sum[p] += (u + v) * (u + v);
        }
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for p in 0..plane {
        if nx[p] == 0.0 || nr[p] == 0.0 {
            continue;
        }
        total += 2.0 * diff[p].sqrt().atan2(sum[p].sqrt());
        count += 1;
    }
    if count == 0 {
        return Err(Error::numerics("spectral angle undefined: every pixel has a zero spectrum"));
    }
    Ok((total / count as f64).to_degrees())
}

/// `(100/d) sqrt(mean_b (RMSE_b / mean_b)^2)` with band means taken from the reference.
pub fn ergas(x: &HsiCube, reference: &HsiCube, scale: f64) -> Result<f64> {
    x.same_dims(reference)?;
    if !(scale > 0.0) {
        return Err(Error::config(format!("ERGAS scale must be positive, got {scale}")));
    }
    let mut acc = 0.0;
    for b in 0..x.bands() {
        let r = reference.band(b);
        let mean = r.iter().sum::<f64>() / r.len() as f64;
        if mean == 0.0 {
            return Err(Error::numerics(format!("ERGAS undefined: reference band {b} has zero mean")));
        }
        acc += band_mse(x.band(b), r) / (mean * mean);
    }
    Ok(100.0 / scale * (acc / x.bands() as f64).sqrt())
}

/// Index into `0..n` with half-sample symmetric reflection (`dcba|abcd|dcba`).
fn reflect(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - 1 - m) as usize
    }
}

fn gaussian_taps() -> Vec<f64> {
    let g: Vec<f64> = (0..=2 * SSIM_RADIUS)
        .map(|i| {
            let t = i as f64 - SSIM_RADIUS as f64;
            (-t * t / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

fn blur(img: &[f64], w: usize, h: usize, taps: &[f64]) -> Vec<f64> {
    let r = SSIM_RADIUS as isize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] =
                taps.iter().enumerate().map(|(k, t)| t * img[y * w + reflect(x as isize + k as isize - r, w)]).sum();
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] =
                taps.iter().enumerate().map(|(k, t)| t * tmp[reflect(y as isize + k as isize - r, h) * w + x]).sum();
        }
    }
    out
}

/// Gaussian-windowed SSIM (11x11, sigma 1.5, dynamic range 1), averaged over
/// every pixel of every band.
pub fn ssim(x: &HsiCube, reference: &HsiCube) -> Result<f64> {
    x.same_dims(reference)?;
    let (w, h) = (x.width(), x.height());
    let taps = gaussian_taps();
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let mut total = 0.0;
    for b in 0..x.bands() {
        let (a, r) = (x.band(b), reference.band(b));
        let prod = |f: fn(f64, f64) -> f64| a.iter().zip(r).map(|(&p, &q)| f(p, q)).collect::<Vec<_>>();
        let mu_a = blur(a, w, h, &taps);
        let mu_r = blur(r, w, h, &taps);
        let aa = blur(&prod(|p, _| p * p), w, h, &taps);
        let rr = blur(&prod(|_, q| q * q), w, h, &taps);
        let ar = blur(&prod(|p, q| p * q), w, h, &taps);
        let band: f64 = (0..w * h)
            .map(|i| {
                let (ma, mr) = (mu_a[i], mu_r[i]);
                let va = aa[i] - ma * ma;
                let vr = rr[i] - mr * mr;
                let cov = ar[i] - ma * mr;
                ((2.0 * ma * mr + c1) * (2.0 * cov + c2)) / ((ma * ma + mr * mr + c1) * (va + vr + c2))
            })
            .sum();
        total += band / (w * h) as f64;
    }
    Ok(total / x.bands() as f64)
}
