use proptest::prelude::*;

use super::*;
use crate::error::Error;
use crate::rng::{SeededRng, Stream};

fn random_cube(w: usize, h: usize, s: usize, seed: u64) -> HsiCube {
    let mut rng = SeededRng::new(seed, Stream::Test, 0);
    HsiCube::new(w, h, s, rng.uniform_vec(w * h * s, 0.0, 1.0)).unwrap()
}

fn random_response(bands: usize, msi: usize, seed: u64) -> SpectralResponse {
    let mut rng = SeededRng::new(seed, Stream::Test, 1);
    SpectralResponse::normalized(bands, msi, rng.uniform_vec(bands * msi, 0.05, 1.0)).unwrap()
}

#[test]
fn identity_response_is_identity() {
    let x = random_cube(5, 4, 3, 1);
    assert_eq!(apply_r(&x, &SpectralResponse::identity(3)).unwrap(), x);
}

#[test]
fn constant_cube_survives_response() {
    let x = HsiCube::filled(4, 4, 6, 0.37).unwrap();
    let y = apply_r(&x, &random_response(6, 3, 2)).unwrap();
    assert!(y.data().iter().all(|v| (v - 0.37).abs() < 1e-15));
}

#[test]
fn response_matches_pixel_matrix_product() {
    let x = random_cube(4, 4, 6, 3);
    let r = random_response(6, 3, 4);
    let y = apply_r(&x, &r).unwrap();
    // (WH x S) * (S x s), pixel-major, then back to band-sequential.
    let n = 16;
    let pix: Vec<f64> = (0..n * 6).map(|k| x.data()[(k % 6) * n + k / 6]).collect();
    for p in 0..n {
        for j in 0..3 {
            let mut acc = 0.0;
            for i in 0..6 {
                acc += pix[p * 6 + i] * r.get(i, j);
            }
            assert_eq!(y.data()[j * n + p], acc);
        }
    }
}

#[test]
fn response_rejects_band_mismatch() {
    let x = random_cube(2, 2, 5, 5);
    assert!(matches!(apply_r(&x, &random_response(6, 3, 6)), Err(Error::Shape(_))));
}

#[test]
fn response_validation() {
    assert!(matches!(SpectralResponse::new(2, 1, vec![0.5, 0.6]), Err(Error::Config(_))));
    assert!(matches!(SpectralResponse::new(2, 1, vec![1.5, -0.5]), Err(Error::Config(_))));
    let r = SpectralResponse::parse("1 0\n1 2\n# comment\n2 2\n").unwrap();
    assert_eq!((r.bands(), r.msi_bands()), (3, 2));
    assert!((r.get(2, 1) - 0.5).abs() < 1e-15);
    let back = SpectralResponse::parse(&r.to_text()).unwrap();
    assert_eq!(back, r);
    let lobes = SpectralResponse::gaussian_lobes(31, 3).unwrap();
    for j in 0..3 {
        let s: f64 = (0..31).map(|i| lobes.get(i, j)).sum();
        assert!((s - 1.0).abs() < 1e-12);
    }
}

#[test]
fn blur_keeps_constants() {
    let x = HsiCube::filled(16, 16, 2, 0.8).unwrap();
    let z = apply_c(&x, &SpatialDegradation::gaussian(8, 2.0, 4).unwrap()).unwrap();
    assert_eq!(z.dims(), (4, 4, 2));
    assert!(z.data().iter().all(|v| (v - 0.8).abs() < 1e-14));
}

#[test]
fn delta_image_returns_kernel_copy() {
    let c = SpatialDegradation::gaussian(4, 1.0, 1).unwrap();
    let mut x = HsiCube::filled(8, 8, 1, 0.0).unwrap();
    x.set(4, 5, 0, 1.0);
    let z = apply_c(&x, &c).unwrap();
    // Output (i, j) reads x[i + a - 1, j + e - 1], so the spike shows up as the
    // kernel tap at (5 - i + 1, 4 - j + 1).
    for i in 0..8 {
        for j in 0..8 {
            let (a, e) = (5 + 1 - i as isize, 4 + 1 - j as isize);
            let expect = if (0..4).contains(&a) && (0..4).contains(&e) { c.kernel()[a as usize * 4 + e as usize] } else { 0.0 };
            assert_eq!(z.get(j, i, 0), expect);
        }
    }
}

/// Dense `(lh*lw) x (h*w)` matrix of the circular blur plus decimation, one band.
fn dense_c(c: &SpatialDegradation, w: usize, h: usize) -> Vec<Vec<f64>> {
    let d = c.factor();
    let k = c.size();
    let anchor = c.anchor() as isize;
    let (lw, lh) = (w / d, h / d);
    let mut m = vec![vec![0.0; w * h]; lw * lh];
    for i in 0..lh {
        for j in 0..lw {
            for a in 0..k {
                for e in 0..k {
                    let r = ((d * i) as isize + a as isize - anchor).rem_euclid(h as isize) as usize;
                    let q = ((d * j) as isize + e as isize - anchor).rem_euclid(w as isize) as usize;
                    m[i * lw + j][r * w + q] += c.kernel()[a * k + e];
                }
            }
        }
    }
    m
}

#[test]
fn blur_matches_dense_matrix() {
    let x = random_cube(16, 16, 2, 7);
    for c in [SpatialDegradation::gaussian(8, 2.0, 2).unwrap(), SpatialDegradation::gaussian(5, 1.3, 4).unwrap()] {
        let z = apply_c(&x, &c).unwrap();
        let m = dense_c(&c, 16, 16);
        for b in 0..2 {
            for (row, out) in m.iter().zip(z.band(b)) {
                let v: f64 = row.iter().zip(x.band(b)).map(|(a, b)| a * b).sum();
                assert!((v - out).abs() < 1e-10);
            }
        }
        let zt = apply_ct(&z, &c, 16, 16).unwrap();
        for b in 0..2 {
            for p in 0..256 {
                let v: f64 = (0..m.len()).map(|r| m[r][p] * z.band(b)[r]).sum();
                assert!((v - zt.band(b)[p]).abs() < 1e-10);
            }
        }
    }
}

#[test]
fn blur_rejects_indivisible_dims() {
    let x = random_cube(10, 8, 1, 8);
    let c = SpatialDegradation::gaussian(8, 2.0, 4).unwrap();
    assert!(matches!(apply_c(&x, &c), Err(Error::Shape(_))));
}

#[test]
fn adjoint_pairs() {
    let r = random_response(5, 2, 9);
    let c = SpatialDegradation::gaussian(8, 2.0, 4).unwrap();
    for t in 0..10 {
        let x = random_cube(16, 8, 5, 100 + t);
        let y = random_cube(16, 8, 2, 200 + t);
        let z = random_cube(4, 2, 5, 300 + t);
        let lhs = apply_r(&x, &r).unwrap().dot(&y).unwrap();
        let rhs = x.dot(&apply_rt(&y, &r).unwrap()).unwrap();
        assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));
        let lhs = apply_c(&x, &c).unwrap().dot(&z).unwrap();
        let rhs = x.dot(&apply_ct(&z, &c, 16, 8).unwrap()).unwrap();
        assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));
    }
}

#[test]
fn gaussian_kernel_properties() {
    let k = gaussian_kernel(8, 2.0).unwrap();
    assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    for i in 0..64 {
        assert!((k[i] - k[63 - i]).abs() < 1e-18);
    }
    let centre = (k[3 * 8 + 3] + k[3 * 8 + 4] + k[4 * 8 + 3] + k[4 * 8 + 4]) / 4.0;
    let corner = k[0];
    let expect = ((3.5f64.powi(2) * 2.0 - 0.5f64.powi(2) * 2.0) / (2.0 * 4.0)).exp();
    assert!((centre / corner - expect).abs() < 1e-9 * expect);
    assert!(matches!(gaussian_kernel(8, 0.0), Err(Error::Config(_))));
    assert!(matches!(gaussian_kernel(8, -1.0), Err(Error::Config(_))));
    assert_eq!(gaussian_kernel(3, 1.0).unwrap().len(), 9);
}

#[test]
fn bicubic_identity_and_constants() {
    let x = random_cube(7, 5, 2, 11);
    assert_eq!(bicubic_resize(&x, 1.0).unwrap(), x);
    let c = HsiCube::filled(8, 6, 2, 0.42).unwrap();
    for f in [0.25, 0.5, 1.5, 2.0, 3.0, 8.0] {
        let y = bicubic_resize(&c, f).unwrap();
        assert!(y.data().iter().all(|v| (v - 0.42).abs() < 1e-13), "factor {f}");
    }
    assert!(matches!(bicubic_resize(&x, 0.0), Err(Error::Config(_))));
    assert!(matches!(bicubic_resize(&x, -2.0), Err(Error::Config(_))));
    assert!(matches!(bicubic_resize(&x, 0.01), Err(Error::Config(_))));
}

#[test]
fn bicubic_reproduces_ramp_inside() {
    let (w, h) = (12, 10);
    let f = |x: f64, y: f64| 0.3 * x - 0.2 * y + 1.0;
    let mut data = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            data[y * w + x] = f(x as f64, y as f64);
        }
    }
    let up = bicubic_resize(&HsiCube::new(w, h, 1, data).unwrap(), 2.0).unwrap();
    assert_eq!(up.dims(), (24, 20, 1));
    // Stay clear of the clamped border.
    for oy in 6..14 {
        for ox in 6..18 {
            let (sx, sy) = ((ox as f64 + 0.5) / 2.0 - 0.5, (oy as f64 + 0.5) / 2.0 - 0.5);
            assert!((up.get(ox, oy, 0) - f(sx, sy)).abs() < 1e-6);
        }
    }
}

#[test]
fn simulate_pair_dims_and_identity() {
    let x = synthetic_scene(64, 64, 31, 5, 0).unwrap();
    let r = SpectralResponse::gaussian_lobes(31, 3).unwrap();
    let c = SpatialDegradation::gaussian(8, 2.0, 8).unwrap();
    let (y, z) = simulate_pair(&x, &r, &c).unwrap();
    assert_eq!(y.dims(), (64, 64, 3));
    assert_eq!(z.dims(), (8, 8, 31));
    assert_eq!(simulate_pair(&x, &r, &c).unwrap(), (y, z));

    let x = random_cube(6, 6, 3, 12);
    let (y, z) = simulate_pair(&x, &SpectralResponse::identity(3), &SpatialDegradation::delta(1).unwrap()).unwrap();
    assert_eq!(y, x);
    assert_eq!(z, x);
}

#[test]
fn wald_dims_and_truth() {
    let y = random_cube(256, 256, 3, 13);
    let z = random_cube(64, 64, 8, 14);
    let t = wald_protocol(&y, &z, 4).unwrap();
    assert_eq!(t.msi.dims(), (64, 64, 3));
    assert_eq!(t.hsi.dims(), (16, 16, 8));
    assert_eq!(t.truth, z);

    let t = wald_protocol(&y, &z, 1).unwrap();
    assert_eq!((t.msi, t.hsi), (y.clone(), z.clone()));
    assert!(matches!(wald_protocol(&y, &random_cube(10, 10, 8, 15), 4), Err(Error::Shape(_))));
}

#[test]
fn patches() {
    let x = random_cube(16, 16, 2, 16);
    let full = extract_patches(&x, 16, 4, 3, 1).unwrap();
    assert!(full.iter().all(|p| *p == x));
    let some = extract_patches(&x, 8, 2, 5, 9).unwrap();
    assert_eq!(some.len(), 5);
    assert!(some.iter().all(|p| p.dims() == (8, 8, 2)));
    assert_eq!(some, extract_patches(&x, 8, 2, 5, 9).unwrap());
    assert!(matches!(extract_patches(&x, 17, 1, 1, 0), Err(Error::Shape(_))));
}

#[test]
fn synthetic_scene_is_normalized_and_seeded() {
    let a = synthetic_scene(32, 32, 8, 1, 0).unwrap();
    let peak = a.data().iter().cloned().fold(0.0, f64::max);
    assert!((peak - 1.0).abs() < 1e-15);
    assert!(a.data().iter().all(|&v| v >= 0.0));
    assert_eq!(a, synthetic_scene(32, 32, 8, 1, 0).unwrap());
    assert_ne!(a, synthetic_scene(32, 32, 8, 2, 0).unwrap());
    assert_ne!(a, synthetic_scene(32, 32, 8, 1, 1).unwrap());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn blur_is_linear(seed in 0u64..1000, a in -2.0f64..2.0, b in -2.0f64..2.0) {
        let c = SpatialDegradation::gaussian(8, 2.0, 2).unwrap();
        let x = random_cube(8, 8, 2, seed);
        let y = random_cube(8, 8, 2, seed + 5000);
        let lhs = apply_c(&x.lin_comb(a, &y, b).unwrap(), &c).unwrap();
        let rhs = apply_c(&x, &c).unwrap().lin_comb(a, &apply_c(&y, &c).unwrap(), b).unwrap();
        prop_assert!(lhs.max_abs_diff(&rhs).unwrap() < 1e-12);
    }

    #[test]
    fn spectral_and_spatial_commute(seed in 0u64..1000) {
        let c = SpatialDegradation::gaussian(8, 2.0, 4).unwrap();
        let r = random_response(6, 3, seed);
        let x = random_cube(16, 8, 6, seed);
        let a = apply_r(&apply_c(&x, &c).unwrap(), &r).unwrap();
        let b = apply_c(&apply_r(&x, &r).unwrap(), &c).unwrap();
        prop_assert!(a.max_abs_diff(&b).unwrap() < 1e-10);
    }

    #[test]
    fn blur_of_constant_is_constant(v in 0.0f64..1.0, size in 1usize..9) {
        let c = SpatialDegradation::gaussian(size, 1.5, 2).unwrap();
        let z = apply_c(&HsiCube::filled(8, 8, 1, v).unwrap(), &c).unwrap();
        prop_assert!(z.data().iter().all(|x| (x - v).abs() < 1e-14));
    }
}
