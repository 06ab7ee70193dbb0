//! Explicit degradation operators and dataset simulation.
//!
//! `R` is a per-pixel spectral projection, `C` a circular blur followed by
//! decimation. Both come with exact adjoints so that classical solvers and
//! the unfolded network's frozen variant can share one reference.

mod cube;
mod resample;
mod simulate;

pub use cube::HsiCube;
pub use resample::bicubic_resize;
pub use simulate::{
    extract_patches, simulate_pair, synthetic_scene, wald_protocol, wald_protocol_with, WaldTriple,
};

use crate::error::{Error, Result};

/// Column-normalized `S x s` spectral response, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralResponse {
    bands: usize,
    msi_bands: usize,
    data: Vec<f64>,
}

const COLUMN_SUM_TOL: f64 = 1e-9;

impl SpectralResponse {
    /// Validates non-negativity and unit column sums.
    pub fn new(bands: usize, msi_bands: usize, data: Vec<f64>) -> Result<Self> {
        let r = Self::unchecked(bands, msi_bands, data)?;
        if r.data.iter().any(|&v| v < 0.0) {
            return Err(Error::config("spectral response has negative entries"));
        }
        for j in 0..msi_bands {
            let s: f64 = (0..bands).map(|i| r.get(i, j)).sum();
            if (s - 1.0).abs() > COLUMN_SUM_TOL {
                return Err(Error::config(format!("spectral response column {j} sums to {s}, expected 1")));
            }
        }
        Ok(r)
    }

    /// Scales each column to sum to one. Rejects negative entries and empty columns.
    pub fn normalized(bands: usize, msi_bands: usize, mut data: Vec<f64>) -> Result<Self> {
        Self::unchecked(bands, msi_bands, data.clone())?;
        for j in 0..msi_bands {
            let s: f64 = (0..bands).map(|i| data[i * msi_bands + j]).sum();
            if s <= 0.0 || !s.is_finite() {
                return Err(Error::config(format!("spectral response column {j} has no positive mass")));
            }
            for i in 0..bands {
                data[i * msi_bands + j] /= s;
            }
        }
        Self::new(bands, msi_bands, data)
    }

    /// Any finite matrix. Used by the frozen-operator checks, which need
    /// responses outside the physical class.
    pub fn unchecked(bands: usize, msi_bands: usize, data: Vec<f64>) -> Result<Self> {
        if bands == 0 || msi_bands == 0 || data.len() != bands * msi_bands {
            return Err(Error::shape(format!(
                "spectral response needs {bands}x{msi_bands} entries, got {}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("spectral response has non-finite entries"));
        }
        Ok(SpectralResponse { bands, msi_bands, data })
    }

    pub fn identity(bands: usize) -> Self {
        let mut data = vec![0.0; bands * bands];
        for i in 0..bands {
            data[i * bands + i] = 1.0;
        }
        SpectralResponse { bands, msi_bands: bands, data }
    }

    /// `msi_bands` Gaussian lobes spread evenly across the spectrum.
    pub fn gaussian_lobes(bands: usize, msi_bands: usize) -> Result<Self> {
        if bands == 0 || msi_bands == 0 {
            return Err(Error::config("spectral response needs at least one band on each side"));
        }
        let width = (bands as f64 / msi_bands as f64).max(1.0);
        let mut data = vec![0.0; bands * msi_bands];
        for j in 0..msi_bands {
            let centre = (j as f64 + 0.5) * bands as f64 / msi_bands as f64 - 0.5;
            for i in 0..bands {
                let t = (i as f64 - centre) / width;
                data[i * msi_bands + j] = (-0.5 * t * t).exp();
            }
        }
        Self::normalized(bands, msi_bands, data)
    }

    /// Parses `S` lines of `s` whitespace-separated numbers, then column-normalizes.
    pub fn parse(text: &str) -> Result<Self> {
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let row = line
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::config(format!("spectral response line {}: {e}", n + 1)))?;
            rows.push(row);
        }
        let msi_bands = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != msi_bands) {
            return Err(Error::config("spectral response rows have differing lengths"));
        }
        Self::normalized(rows.len(), msi_bands, rows.concat())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for i in 0..self.bands {
            let row: Vec<String> = (0..self.msi_bands).map(|j| format!("{:e}", self.get(i, j))).collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn msi_bands(&self) -> usize {
        self.msi_bands
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.msi_bands + j]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// Square blur kernel plus integer decimation factor, circular boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialDegradation {
    kernel: Vec<f64>,
    size: usize,
    factor: usize,
}

impl SpatialDegradation {
    pub fn new(kernel: Vec<f64>, size: usize, factor: usize) -> Result<Self> {
        let c = Self::unnormalized(kernel, size, factor)?;
        let s: f64 = c.kernel.iter().sum();
        if (s - 1.0).abs() > 1e-12 {
            return Err(Error::config(format!("blur kernel sums to {s}, expected 1")));
        }
        Ok(c)
    }

    /// Skips the unit-sum check.
    pub fn unnormalized(kernel: Vec<f64>, size: usize, factor: usize) -> Result<Self> {
        if size == 0 || kernel.len() != size * size {
            return Err(Error::shape(format!("blur kernel needs {size}x{size} entries, got {}", kernel.len())));
        }
        if factor == 0 {
            return Err(Error::config("decimation factor must be positive"));
        }
        if kernel.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("blur kernel has non-finite entries"));
        }
        Ok(SpatialDegradation { kernel, size, factor })
    }

    pub fn gaussian(size: usize, sigma: f64, factor: usize) -> Result<Self> {
        Self::new(gaussian_kernel(size, sigma)?, size, factor)
    }

    /// Single unit tap; with `factor` 1 this is the identity.
    pub fn delta(factor: usize) -> Result<Self> {
        Self::new(vec![1.0], 1, factor)
    }

    pub fn kernel(&self) -> &[f64] {
        &self.kernel
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn factor(&self) -> usize {
        self.factor
    }

    /// Tap `a` reads input offset `a - anchor`.
    pub fn anchor(&self) -> usize {
        (self.size - 1) / 2
    }

    pub fn scaled(&self, gain: f64) -> Self {
        SpatialDegradation { kernel: self.kernel.iter().map(|v| v * gain).collect(), ..self.clone() }
    }

    fn check(&self, width: usize, height: usize) -> Result<(usize, usize)> {
        let d = self.factor;
        if !width.is_multiple_of(d) || !height.is_multiple_of(d) {
            return Err(Error::shape(format!("{width}x{height} is not divisible by the factor {d}")));
        }
        Ok((width / d, height / d))
    }
}

/// Separable Gaussian sampled at `i - (size-1)/2`, normalized to unit sum.
pub fn gaussian_kernel(size: usize, sigma: f64) -> Result<Vec<f64>> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::config(format!("gaussian sigma must be positive, got {sigma}")));
    }
    if size == 0 {
        return Err(Error::config("gaussian kernel size must be positive"));
    }
    let centre = (size as f64 - 1.0) / 2.0;
    let g: Vec<f64> = (0..size)
        .map(|i| {
            let t = i as f64 - centre;
            (-t * t / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let mut k: Vec<f64> = g.iter().flat_map(|a| g.iter().map(move |b| a * b)).collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    Ok(k)
}

/// `Y = X R`, pixel by pixel.
pub fn apply_r(x: &HsiCube, r: &SpectralResponse) -> Result<HsiCube> {
    if x.bands() != r.bands() {
        return Err(Error::shape(format!("cube has {} bands, response expects {}", x.bands(), r.bands())));
    }
    spectral_mix(x, r.msi_bands(), |i, j| r.get(i, j))
}

/// `Y R^T`, the adjoint of [`apply_r`].
pub fn apply_rt(y: &HsiCube, r: &SpectralResponse) -> Result<HsiCube> {
    if y.bands() != r.msi_bands() {
        return Err(Error::shape(format!("cube has {} bands, response yields {}", y.bands(), r.msi_bands())));
    }
    spectral_mix(y, r.bands(), |i, j| r.get(j, i))
}

fn spectral_mix(x: &HsiCube, out_bands: usize, m: impl Fn(usize, usize) -> f64) -> Result<HsiCube> {
    let plane = x.width() * x.height();
    let mut out = vec![0.0; plane * out_bands];
    for j in 0..out_bands {
        let dst = &mut out[j * plane..(j + 1) * plane];
        for i in 0..x.bands() {
            let w = m(i, j);
            if w == 0.0 {
                continue;
            }
            for (o, v) in dst.iter_mut().zip(x.band(i)) {
                *o += w * v;
            }
        }
    }
    HsiCube::new(x.width(), x.height(), out_bands, out)
}

/// `Z = C X`: circular blur then keep samples `0, d, 2d, ...` on each axis.
pub fn apply_c(x: &HsiCube, c: &SpatialDegradation) -> Result<HsiCube> {
    let (w, h) = (x.width(), x.height());
    let (lw, lh) = c.check(w, h)?;
    let (k, d, anchor) = (c.size, c.factor, c.anchor() as isize);
    let mut out = vec![0.0; lw * lh * x.bands()];
    for b in 0..x.bands() {
        let src = x.band(b);
        let dst = &mut out[b * lw * lh..(b + 1) * lw * lh];
        for i in 0..lh {
            for j in 0..lw {
                let mut acc = 0.0;
                for a in 0..k {
                    let row = wrap((d * i) as isize + a as isize - anchor, h) * w;
                    for e in 0..k {
                        let col = wrap((d * j) as isize + e as isize - anchor, w);
                        acc += c.kernel[a * k + e] * src[row + col];
                    }
                }
                dst[i * lw + j] = acc;
            }
        }
    }
    HsiCube::new(lw, lh, x.bands(), out)
}

/// `C^T Z`: zero-fill upsampling followed by the flipped circular blur.
pub fn apply_ct(z: &HsiCube, c: &SpatialDegradation, width: usize, height: usize) -> Result<HsiCube> {
    let (lw, lh) = c.check(width, height)?;
    if (z.width(), z.height()) != (lw, lh) {
        return Err(Error::shape(format!(
            "low-resolution cube is {}x{}, expected {lw}x{lh}",
            z.width(),
            z.height()
        )));
    }
    let (k, d, anchor) = (c.size, c.factor, c.anchor() as isize);
    let plane = width * height;
    let mut out = vec![0.0; plane * z.bands()];
    for b in 0..z.bands() {
        let src = z.band(b);
        let dst = &mut out[b * plane..(b + 1) * plane];
        for i in 0..lh {
            for j in 0..lw {
                let v = src[i * lw + j];
                for a in 0..k {
                    let row = wrap((d * i) as isize + a as isize - anchor, height) * width;
                    for e in 0..k {
                        let col = wrap((d * j) as isize + e as isize - anchor, width);
                        dst[row + col] += c.kernel[a * k + e] * v;
                    }
                }
            }
        }
    }
    HsiCube::new(width, height, z.bands(), out)
}

fn wrap(i: isize, n: usize) -> usize {
    i.rem_euclid(n as isize) as usize
}

#[cfg(test)]
mod tests;
