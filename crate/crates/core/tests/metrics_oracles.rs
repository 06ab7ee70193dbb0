mod common;

use common::{cube, ergas_ref, psnr_ref, sam_ref, ssim_ref};
use hsi_unfold::metrics::{ergas, evaluate, psnr, sam, ssim, PSNR_CAP};
use hsi_unfold::observation::HsiCube;
use hsi_unfold::Error;

#[test]
fn metrics_match_loop_references() {
    for seed in 0..3 {
        let r = cube(32, 32, 4, 10 + seed, 0.05, 1.0);
        let x = cube(32, 32, 4, 20 + seed, 0.05, 1.0).lin_comb(0.3, &r, 0.7).unwrap();
        assert!((psnr(&x, &r).unwrap() - psnr_ref(&x, &r)).abs() < 1e-9);
        assert!((sam(&x, &r).unwrap() - sam_ref(&x, &r)).abs() < 1e-9);
        assert!((ergas(&x, &r, 4.0).unwrap() - ergas_ref(&x, &r, 4.0)).abs() < 1e-9);
        assert!((ssim(&x, &r).unwrap() - ssim_ref(&x, &r)).abs() < 1e-9);
    }
}

#[test]
fn ssim_reference_handles_non_square_bands() {
    let r = cube(13, 9, 2, 3, 0.0, 1.0);
    let x = cube(13, 9, 2, 4, 0.0, 1.0);
    assert!((ssim(&x, &r).unwrap() - ssim_ref(&x, &r)).abs() < 1e-9);
}

#[test]
fn identical_inputs() {
    let r = cube(32, 32, 4, 5, 0.05, 1.0);
    let m = evaluate(&r, &r, 8.0).unwrap();
    assert_eq!((m.psnr, m.sam, m.ergas), (PSNR_CAP, 0.0, 0.0));
    assert!((m.ssim - 1.0).abs() < 1e-12);
}

#[test]
fn quality_degrades_with_noise_amplitude() {
    let r = cube(32, 32, 4, 6, 0.2, 0.8);
    let noise = cube(32, 32, 4, 7, -1.0, 1.0);
    let reports: Vec<_> = [0.01, 0.02, 0.05, 0.1, 0.2]
        .iter()
        .map(|a| evaluate(&r.lin_comb(1.0, &noise, *a).unwrap(), &r, 4.0).unwrap())
        .collect();
    for w in reports.windows(2) {
        assert!(w[1].psnr < w[0].psnr);
        assert!(w[1].sam > w[0].sam);
        assert!(w[1].ergas > w[0].ergas);
        assert!(w[1].ssim < w[0].ssim);
    }
}

#[test]
fn band_order_does_not_matter() {
    let r = cube(16, 16, 5, 8, 0.05, 1.0);
    let x = cube(16, 16, 5, 9, 0.05, 1.0);
    let perm = [3, 0, 4, 1, 2];
    let shuffle = |c: &HsiCube| {
        let data: Vec<f64> = perm.iter().flat_map(|&b| c.band(b).to_vec()).collect();
        HsiCube::new(16, 16, 5, data).unwrap()
    };
    let a = evaluate(&x, &r, 2.0).unwrap();
    let b = evaluate(&shuffle(&x), &shuffle(&r), 2.0).unwrap();
    for (u, v) in a.values().iter().zip(b.values()) {
        assert!((u - v).abs() < 1e-12);
    }
}

#[test]
fn known_values_and_errors() {
    let mut a = HsiCube::filled(4, 4, 2, 0.0).unwrap();
    let mut b = a.clone();
    a.band_mut(0).fill(1.0);
    b.band_mut(1).fill(1.0);
    assert!((sam(&a, &b).unwrap() - 90.0).abs() < 1e-12);
    let zero = HsiCube::filled(4, 4, 2, 0.0).unwrap();
    assert!(matches!(sam(&zero, &zero), Err(Error::Numerics(_))));
    assert!(matches!(ergas(&a, &zero, 2.0), Err(Error::Numerics(_))));
    let other = HsiCube::filled(4, 2, 2, 0.0).unwrap();
    assert!(matches!(psnr(&a, &other), Err(Error::Shape(_))));
    let r = HsiCube::filled(8, 8, 1, 0.5).unwrap();
    assert!((psnr(&HsiCube::filled(8, 8, 1, 0.6).unwrap(), &r).unwrap() - 20.0).abs() < 1e-9);
}
