use super::HsiCube;
use crate::error::{Error, Result};

const KEYS_A: f64 = -0.5;

fn keys(t: f64) -> f64 {
    let t = t.abs();
    if t <= 1.0 {
        ((KEYS_A + 2.0) * t - (KEYS_A + 3.0)) * t * t + 1.0
    } else if t < 2.0 {
        ((KEYS_A * t - 5.0 * KEYS_A) * t + 8.0 * KEYS_A) * t - 4.0 * KEYS_A
    } else {
        0.0
    }
}

/// Per output sample: `(first source index, weights)` over clamped sources.
fn taps(n_in: usize, n_out: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = n_out as f64 / n_in as f64;
    // When shrinking, stretch the kernel so it integrates over the footprint.
    let stretch = if scale < 1.0 { 1.0 / scale } else { 1.0 };
    let support = 2.0 * stretch;
    (0..n_out)
        .map(|o| {
            let centre = (o as f64 + 0.5) / scale - 0.5;
            let lo = (centre - support).floor() as isize;
            let hi = (centre + support).ceil() as isize;
            let mut row: Vec<(usize, f64)> = (lo..=hi)
                .map(|i| {
                    let w = keys((i as f64 - centre) / stretch);
                    (i.clamp(0, n_in as isize - 1) as usize, w)
                })
                .filter(|&(_, w)| w != 0.0)
                .collect();
            let total: f64 = row.iter().map(|&(_, w)| w).sum();
            row.iter_mut().for_each(|(_, w)| *w /= total);
            row
        })
        .collect()
}

/// Catmull-Rom resampling of every band by `factor`, edges clamped,
/// pixel centres aligned. The target size is `round(W * factor)`.
pub fn bicubic_resize(x: &HsiCube, factor: f64) -> Result<HsiCube> {
    if !(factor > 0.0) || !factor.is_finite() {
        return Err(Error::config(format!("resize factor must be positive, got {factor}")));
    }
    let ow = (x.width() as f64 * factor).round() as usize;
    let oh = (x.height() as f64 * factor).round() as usize;
    if ow == 0 || oh == 0 {
        return Err(Error::config(format!(
            "resizing {}x{} by {factor} gives an empty image",
            x.width(),
            x.height()
        )));
    }
    if (ow, oh) == (x.width(), x.height()) {
        return Ok(x.clone());
    }
    let (w, h) = (x.width(), x.height());
    let tx = taps(w, ow);
    let ty = taps(h, oh);
    let mut out = Vec::with_capacity(ow * oh * x.bands());
    let mut rows = vec![0.0; oh * w];
    for b in 0..x.bands() {
        let src = x.band(b);
        rows.iter_mut().for_each(|v| *v = 0.0);
        for (o, tap) in ty.iter().enumerate() {
            let dst = &mut rows[o * w..(o + 1) * w];
            for &(i, wt) in tap {
                for (d, s) in dst.iter_mut().zip(&src[i * w..(i + 1) * w]) {
                    *d += wt * s;
                }
            }
        }
        for o in 0..oh {
            let row = &rows[o * w..(o + 1) * w];
            out.extend(tx.iter().map(|tap| tap.iter().map(|&(i, wt)| wt * row[i]).sum::<f64>()));
        }
    }
    HsiCube::new(ow, oh, x.bands(), out)
}
