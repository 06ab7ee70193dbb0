use super::{apply_c, apply_r, bicubic_resize, HsiCube, SpatialDegradation, SpectralResponse};
use crate::error::{Error, Result};
use crate::rng::{SeededRng, Stream};

/// `(apply_r(x), apply_c(x))`: the HR-MSI and LR-HSI seen by the sensors.
pub fn simulate_pair(x: &HsiCube, r: &SpectralResponse, c: &SpatialDegradation) -> Result<(HsiCube, HsiCube)> {
    Ok((apply_r(x, r)?, apply_c(x, c)?))
}

/// Supervised sample built by degrading an observed pair once more.
#[derive(Debug, Clone, PartialEq)]
pub struct WaldTriple {
    pub msi: HsiCube,
    pub hsi: HsiCube,
    pub truth: HsiCube,
}

/// Degrades with an 8x8, sigma 2 Gaussian on the HSI side.
pub fn wald_protocol(y: &HsiCube, z: &HsiCube, factor: usize) -> Result<WaldTriple> {
    wald_protocol_with(y, z, &SpatialDegradation::gaussian(8, 2.0, factor.max(1))?)
}

/// The LR-HSI goes through `c`, the HR-MSI through bicubic shrinking by the
/// same factor, and the untouched LR-HSI becomes the target.
pub fn wald_protocol_with(y: &HsiCube, z: &HsiCube, c: &SpatialDegradation) -> Result<WaldTriple> {
    let factor = c.factor();
    for (name, cube) in [("HR-MSI", y), ("LR-HSI", z)] {
        if cube.width() % factor != 0 || cube.height() % factor != 0 {
            return Err(Error::shape(format!(
                "{name} {}x{} is not divisible by {factor}",
                cube.width(),
                cube.height()
            )));
        }
    }
    if factor == 1 {
        return Ok(WaldTriple { msi: y.clone(), hsi: z.clone(), truth: z.clone() });
    }
    let msi = bicubic_resize(y, 1.0 / factor as f64)?;
    let hsi = apply_c(z, c)?;
    Ok(WaldTriple { msi, hsi, truth: z.clone() })
}

/// `count` square patches drawn with replacement from the grid of top-left
/// corners spaced `stride` apart.
pub fn extract_patches(x: &HsiCube, size: usize, stride: usize, count: usize, seed: u64) -> Result<Vec<HsiCube>> {
    if size == 0 || size > x.width() || size > x.height() {
        return Err(Error::shape(format!(
            "patch size {size} does not fit a {}x{} image",
            x.width(),
            x.height()
        )));
    }
    if stride == 0 {
        return Err(Error::config("patch stride must be positive"));
    }
    let xs: Vec<usize> = (0..=x.width() - size).step_by(stride).collect();
    let ys: Vec<usize> = (0..=x.height() - size).step_by(stride).collect();
    let mut rng = SeededRng::new(seed, Stream::Patches, 0);
    (0..count)
        .map(|_| {
            let px = xs[rng.below(xs.len())];
            let py = ys[rng.below(ys.len())];
            x.crop(px, py, size, size)
        })
        .collect()
}

/// A smooth-plus-edges scene mixed from a handful of Gaussian endmember
/// spectra, peak-normalized to 1. `index` selects one of many scenes per seed.
pub fn synthetic_scene(width: usize, height: usize, bands: usize, seed: u64, index: u64) -> Result<HsiCube> {
    if width == 0 || height == 0 || bands == 0 {
        return Err(Error::shape("synthetic scene dims must be positive"));
    }
    let mut rng = SeededRng::new(seed, Stream::Synthetic, index);
    let n_end = 4;
    let endmembers: Vec<Vec<f64>> = (0..n_end)
        .map(|_| {
            let centre = rng.uniform(0.0, bands as f64);
            let spread = rng.uniform(0.15, 0.5) * bands as f64;
            let base = rng.uniform(0.05, 0.3);
            (0..bands)
                .map(|b| {
                    let t = (b as f64 - centre) / spread;
                    base + (1.0 - base) * (-0.5 * t * t).exp()
                })
                .collect()
        })
        .collect();

    // Background: two endmembers blended along a random direction.
    let theta = rng.uniform(0.0, std::f64::consts::TAU);
    let (dx, dy) = (theta.cos(), theta.sin());
    let mut abundance = vec![0.0; width * height * n_end];
    for y in 0..height {
        for x in 0..width {
            let u = (x as f64 / width as f64 - 0.5) * dx + (y as f64 / height as f64 - 0.5) * dy;
            let t = 0.5 + 0.5 * (3.0 * u).tanh();
            let a = &mut abundance[(y * width + x) * n_end..][..n_end];
            a[0] = t;
            a[1] = 1.0 - t;
        }
    }

    // Sharp-edged discs and boxes carry the high-frequency content.
    let shapes = 6;
    for s in 0..shapes {
        let member = 2 + s % (n_end - 2);
        let cx = rng.uniform(0.0, width as f64);
        let cy = rng.uniform(0.0, height as f64);
        let rad = rng.uniform(0.08, 0.25) * width.min(height) as f64;
        let strength = rng.uniform(0.5, 0.9);
        let disc = s % 2 == 0;
        for y in 0..height {
            for x in 0..width {
                let (ex, ey) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                let inside = if disc { ex * ex + ey * ey <= rad * rad } else { ex.abs() <= rad && ey.abs() <= 0.6 * rad };
                if inside {
                    let a = &mut abundance[(y * width + x) * n_end..][..n_end];
                    a.iter_mut().for_each(|v| *v *= 1.0 - strength);
                    a[member] += strength;
                }
            }
        }
    }

    let fx = rng.uniform(1.0, 3.0);
    let fy = rng.uniform(1.0, 3.0);
    let mut data = vec![0.0; width * height * bands];
    for y in 0..height {
        for x in 0..width {
            let a = &abundance[(y * width + x) * n_end..][..n_end];
            let texture = 1.0
                + 0.1
                    * (std::f64::consts::TAU * fx * x as f64 / width as f64).sin()
                    * (std::f64::consts::TAU * fy * y as f64 / height as f64).cos();
            for (b, plane) in data.chunks_mut(width * height).enumerate() {
                let v: f64 = a.iter().zip(&endmembers).map(|(w, e)| w * e[b]).sum();
                plane[y * width + x] = v * texture;
            }
        }
    }
    let mut cube = HsiCube::new(width, height, bands, data)?;
    cube.normalize_peak();
    Ok(cube)
}
