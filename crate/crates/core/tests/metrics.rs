mod common;

use common::*;
use proptest::prelude::*;
use spleenlen::geometry::{BinaryMask, Spacing};
use spleenlen::metrics::*;

#[test]
fn ple_examples() {
    assert_eq!(ple(&[100.0, 50.0], &[100.0, 50.0]).unwrap(), 0.0);
    let gt = [80.0, 120.0, 95.0];
    let pred: Vec<f64> = gt.iter().map(|g| 1.1 * g).collect();
    assert!((ple(&pred, &gt).unwrap() - 10.0).abs() < 1e-9);
    assert!((ple(&[90.0, 110.0], &[100.0, 100.0]).unwrap() - 10.0).abs() < 1e-12);
    assert!(ple(&[1.0], &[0.0]).is_err());
    assert!(ple(&[1.0, 2.0], &[1.0]).is_err());
}

/// Textbook form: (n Σxy − Σx Σy) / sqrt((n Σx² − (Σx)²)(n Σy² − (Σy)²)).
fn pearson_textbook(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let sx: f64 = x.iter().sum();
    let sy: f64 = y.iter().sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let sxx: f64 = x.iter().map(|a| a * a).sum();
    let syy: f64 = y.iter().map(|b| b * b).sum();
    (n * sxy - sx * sy) / ((n * sxx - sx * sx) * (n * syy - sy * sy)).sqrt()
}

#[test]
fn pearson_examples() {
    let x = [1.0, 2.0, 4.0, 7.0, 11.0];
    let lin: Vec<f64> = x.iter().map(|v| 2.0 * v + 3.0).collect();
    assert!((pearson_r(&x, &lin).unwrap() - 1.0).abs() < 1e-12);
    let neg: Vec<f64> = x.iter().map(|v| -v).collect();
    assert!((pearson_r(&x, &neg).unwrap() + 1.0).abs() < 1e-12);
    let y = [2.0, 1.0, 5.0, 4.0, 9.0];
    assert!((pearson_r(&x, &y).unwrap() - pearson_textbook(&x, &y)).abs() < 1e-12);
    assert!(pearson_r(&x, &[3.0; 5]).is_err());
    assert!(pearson_r(&[1.0], &[1.0]).is_err());
}

#[test]
fn dice_examples() {
    let s = Spacing::unit();
    let a = BinaryMask::from_fn(20, 20, s, |r, c| r < 10 && c < 10);
    assert_eq!(dice_coefficient(&a, &a).unwrap(), 1.0);
    let far = BinaryMask::from_fn(20, 20, s, |r, c| r >= 10 && c >= 10);
    assert_eq!(dice_coefficient(&a, &far).unwrap(), 0.0);
    let half = BinaryMask::from_fn(20, 20, s, |r, c| (5..15).contains(&r) && c < 10);
    assert!((dice_coefficient(&a, &half).unwrap() - 0.5).abs() < 1e-12);
    let empty = BinaryMask::new(20, 20, s);
    assert_eq!(dice_coefficient(&empty, &empty).unwrap(), 1.0);
    assert!(dice_coefficient(&a, &BinaryMask::new(20, 21, s)).is_err());
}

#[test]
fn hausdorff_examples() {
    let s = Spacing::unit();
    let a = BinaryMask::from_fn(10, 10, s, |r, c| r == 2 && c == 2);
    let b = BinaryMask::from_fn(10, 10, s, |r, c| r == 2 && c == 5);
    assert_eq!(hausdorff_distance(&a, &b).unwrap(), 3.0);
    assert_eq!(hausdorff_distance(&a, &a).unwrap(), 0.0);
    assert!(hausdorff_distance(&a, &BinaryMask::new(10, 10, s)).is_err());
}

#[test]
fn hausdorff_matches_brute_force_on_solid_and_random_masks() {
    let mut r = rng(11);
    for i in 0..100 {
        let spacing = if i % 3 == 0 { Spacing::new(0.5, 1.5).unwrap() } else { Spacing::unit() };
        let (h, w) = (10 + i % 21, 12 + (i * 7) % 19);
        let (a, b) = if i % 2 == 0 {
            (random_blob(h, w, 20 + i % 30, spacing, &mut r), random_blob(h, w, 15 + i % 25, spacing, &mut r))
        } else {
            (random_mask(h, w, 0.3, spacing, &mut r), random_mask(h, w, 0.15, spacing, &mut r))
        };
        if a.is_empty() || b.is_empty() {
            continue;
        }
        let got = hausdorff_distance(&a, &b).unwrap();
        let want = hausdorff_brute(&a, &b);
        assert!((got - want).abs() < 1e-12, "case {i}: {got} vs {want}");
    }
}

#[test]
fn report_from_lengths_and_segmentation() {
    let s = Spacing::unit();
    let m = BinaryMask::from_fn(8, 8, s, |r, c| r > 1 && c > 1 && r < 6 && c < 6);
    let rep =
        MetricsReport::from_segmentation(&[90.0, 110.0], &[100.0, 100.0], &[(m.clone(), m.clone()), (m.clone(), m)]).unwrap();
    assert!((rep.ple_percent - 10.0).abs() < 1e-12);
    assert_eq!(rep.dice, Some(1.0));
    assert_eq!(rep.hausdorff_mm, Some(0.0));
    assert_eq!(rep.n_cases, 2);
    let reg = MetricsReport::from_lengths(&[90.0, 110.0, 100.0], &[100.0, 100.0, 101.0]).unwrap();
    assert!(reg.dice.is_none() && reg.hausdorff_mm.is_none());
    let json = serde_json::to_string(&reg).unwrap();
    assert!(!json.contains("dice"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ple_nonnegative_and_zero_iff_equal(gt in prop::collection::vec(1.0f64..200.0, 1..10), noise in prop::collection::vec(-5.0f64..5.0, 10)) {
        let pred: Vec<f64> = gt.iter().zip(&noise).map(|(g, n)| g + n).collect();
        let p = ple(&pred, &gt).unwrap();
        prop_assert!(p >= 0.0);
        prop_assert_eq!(p == 0.0, pred == gt);
    }

    #[test]
    fn pearson_affine_invariance(x in prop::collection::vec(-50.0f64..50.0, 3..12), y0 in prop::collection::vec(-50.0f64..50.0, 12),
                                 a in 0.1f64..10.0, b in -20.0f64..20.0) {
        let y = &y0[..x.len()];
        let r = match pearson_r(&x, y) { Ok(r) => r, Err(_) => return Ok(()) };
        let xt: Vec<f64> = x.iter().map(|v| a * v + b).collect();
        prop_assert!((pearson_r(&xt, y).unwrap() - r).abs() < 1e-9);
        let yn: Vec<f64> = y.iter().map(|v| -v).collect();
        prop_assert!((pearson_r(&x, &yn).unwrap() + r).abs() < 1e-9);
        prop_assert!((-1.0..=1.0).contains(&r));
    }

    #[test]
    fn dice_and_hausdorff_symmetric_with_triangle_inequality(seed in any::<u64>()) {
        let mut r = rng(seed);
        let s = Spacing::new(0.8, 1.2).unwrap();
        let a = random_blob(16, 16, 25, s, &mut r);
        let b = random_blob(16, 16, 30, s, &mut r);
        let c = random_mask(16, 16, 0.2, s, &mut r);
        prop_assert_eq!(dice_coefficient(&a, &b).unwrap(), dice_coefficient(&b, &a).unwrap());
        let ab = hausdorff_distance(&a, &b).unwrap();
        prop_assert_eq!(ab, hausdorff_distance(&b, &a).unwrap());
        if !c.is_empty() {
            let ac = hausdorff_distance(&a, &c).unwrap();
            let cb = hausdorff_distance(&c, &b).unwrap();
            prop_assert!(ab <= ac + cb + 1e-12);
        }
        let d = dice_coefficient(&a, &c).unwrap();
        prop_assert!((0.0..=1.0).contains(&d));
    }
}
