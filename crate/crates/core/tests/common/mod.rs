//! Loop-level metric references shared by the test targets.
#![allow(dead_code)]

use hsi_unfold::observation::HsiCube;
use hsi_unfold::rng::{SeededRng, Stream};

pub fn cube(w: usize, h: usize, s: usize, seed: u64, lo: f64, hi: f64) -> HsiCube {
    HsiCube::new(w, h, s, SeededRng::new(seed, Stream::Test, 0).uniform_vec(w * h * s, lo, hi)).unwrap()
}

// Plain nested-loop references, written against (x, y, band) indexing.

pub fn psnr_ref(a: &HsiCube, r: &HsiCube) -> f64 {
    let (w, h, s) = a.dims();
    let mut total = 0.0;
    for b in 0..s {
        let mut se = 0.0;
        for y in 0..h {
            for x in 0..w {
                let d = a.get(x, y, b) - r.get(x, y, b);
                se += d * d;
            }
        }
        let mse = se / (w * h) as f64;
        total += if mse == 0.0 { 100.0 } else { (10.0 * (1.0 / mse).log10()).min(100.0) };
    }
    total / s as f64
}

pub fn sam_ref(a: &HsiCube, r: &HsiCube) -> f64 {
    let (w, h, s) = a.dims();
    let (mut total, mut n) = (0.0, 0);
    for y in 0..h {
        for x in 0..w {
            let (mut d, mut na, mut nr) = (0.0, 0.0, 0.0);
            for b in 0..s {
                d += a.get(x, y, b) * r.get(x, y, b);
                na += a.get(x, y, b).powi(2);
                nr += r.get(x, y, b).powi(2);
            }
            if na > 0.0 && nr > 0.0 {
                total += (d / (na.sqrt() * nr.sqrt())).clamp(-1.0, 1.0).acos();
                n += 1;
            }
        }
    }
    (total / n as f64) * 180.0 / std::f64::consts::PI
}

pub fn ergas_ref(a: &HsiCube, r: &HsiCube, d: f64) -> f64 {
    let (w, h, s) = a.dims();
    let mut acc = 0.0;
    for b in 0..s {
        let (mut se, mut sum) = (0.0, 0.0);
        for y in 0..h {
            for x in 0..w {
                se += (a.get(x, y, b) - r.get(x, y, b)).powi(2);
                sum += r.get(x, y, b);
            }
        }
        let n = (w * h) as f64;
        acc += (se / n).sqrt().powi(2) / (sum / n).powi(2);
    }
    100.0 / d * (acc / s as f64).sqrt()
}

/// Mirror an out-of-range index back inside `0..n`, edge sample repeated.
fn mirror(mut i: isize, n: isize) -> usize {
    loop {
        if i < 0 {
            i = -i - 1;
        } else if i >= n {
            i = 2 * n - 1 - i;
        } else {
            return i as usize;
        }
    }
}

pub fn ssim_ref(a: &HsiCube, r: &HsiCube) -> f64 {
    let (w, h, s) = a.dims();
    let g: Vec<f64> = (-5..=5).map(|t: i32| (-(t * t) as f64 / 4.5).exp()).collect();
    let gs: f64 = g.iter().sum::<f64>().powi(2);
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut total = 0.0;
    for b in 0..s {
        let mut band = 0.0;
        for y in 0..h {
            for x in 0..w {
                let (mut ma, mut mr, mut aa, mut rr, mut ar) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for dy in -5..=5isize {
                    for dx in -5..=5isize {
                        let wt = g[(dy + 5) as usize] * g[(dx + 5) as usize] / gs;
                        let xi = mirror(x as isize + dx, w as isize);
                        let yi = mirror(y as isize + dy, h as isize);
                        let (p, q) = (a.get(xi, yi, b), r.get(xi, yi, b));
                        ma += wt * p;
                        mr += wt * q;
                        aa += wt * p * p;
                        rr += wt * q * q;
                        ar += wt * p * q;
                    }
                }
                let (va, vr, cov) = (aa - ma * ma, rr - mr * mr, ar - ma * mr);
                band += ((2.0 * ma * mr + c1) * (2.0 * cov + c2)) / ((ma * ma + mr * mr + c1) * (va + vr + c2));
            }
        }
        total += band / (w * h) as f64;
    }
    total / s as f64
}
