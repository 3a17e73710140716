mod common;

use common::*;
use proptest::prelude::*;
use spleenlen::geometry::*;

fn unit() -> Spacing {
    Spacing::unit()
}

#[test]
fn largest_component_examples() {
    let blob = ellipse_mask(30, 40, 15.0, 20.0, 10.0, 5.0, 10.0, unit());
    assert_eq!(largest_component(&blob), blob);
    let empty = BinaryMask::new(10, 10, unit());
    assert_eq!(largest_component(&empty), empty);

    // 25-pixel square and a 10-pixel bar
    let m = BinaryMask::from_fn(20, 20, unit(), |r, c| (r < 5 && c < 5) || (r == 15 && (5..15).contains(&c)));
    let kept = largest_component(&m);
    assert_eq!(kept.count(), 25);
    assert_eq!(kept, flood_fill_largest(&m));
}

#[test]
fn largest_component_tie_keeps_first_in_scan_order() {
    let m = BinaryMask::from_fn(6, 6, unit(), |r, c| (r == 0 && c < 2) || (r == 5 && c > 3));
    let kept = largest_component(&m);
    assert!(kept.get(0, 0) && kept.get(0, 1));
    assert_eq!(kept.count(), 2);
}

#[test]
fn largest_component_uses_diagonal_connectivity() {
    let m = BinaryMask::from_fn(5, 5, unit(), |r, c| r == c);
    assert_eq!(largest_component(&m).count(), 5);
}

#[test]
fn largest_component_matches_flood_fill_on_random_masks() {
    let mut r = rng(1);
    for i in 0..60 {
        let density = [0.2, 0.4, 0.55][i % 3];
        let m = random_mask(12 + i % 9, 15 + i % 7, density, unit(), &mut r);
        assert_eq!(largest_component(&m), flood_fill_largest(&m), "mask {i}");
    }
}

#[test]
fn principal_axis_examples() {
    let seg = BinaryMask::from_fn(5, 20, unit(), |r, c| r == 2 && (3..15).contains(&c));
    let m = principal_axis(&seg).unwrap();
    assert_eq!(m.axis, [0.0, 1.0]);
    assert_eq!(m.centroid, [2.0, 8.5]);

    let diag = BinaryMask::from_fn(10, 10, unit(), |r, c| r == c);
    let a = principal_axis(&diag).unwrap().axis;
    let h = std::f64::consts::FRAC_1_SQRT_2;
    assert!((a[0] - h).abs() < 1e-12 && (a[1] - h).abs() < 1e-12, "{a:?}");
    let anti = BinaryMask::from_fn(10, 10, unit(), |r, c| r + c == 9);
    let a = principal_axis(&anti).unwrap().axis;
    assert!((a[0] - h).abs() < 1e-12 && (a[1] + h).abs() < 1e-12, "{a:?}");

    // isotropic square: eigenvalues tie
    let sq = BinaryMask::from_fn(6, 6, unit(), |r, c| (1..5).contains(&r) && (1..5).contains(&c));
    assert_eq!(principal_axis(&sq).unwrap().axis, [1.0, 0.0]);

    let one = BinaryMask::from_fn(3, 3, unit(), |r, c| r == 1 && c == 1);
    assert!(principal_axis(&one).is_err());
}

#[test]
fn principal_axis_matches_angle_grid_oracle() {
    let mut r = rng(2);
    for i in 0..25 {
        let spacing = if i % 2 == 0 { unit() } else { Spacing::new(0.7, 1.3).unwrap() };
        let blob = random_blob(40, 40, 200, spacing, &mut r);
        let pca = axis_angle(principal_axis(&blob).unwrap().axis);
        let grid = angle_grid_axis(&blob, 0.01);
        assert!(line_angle_diff(pca, grid) < 1.0, "blob {i}: {pca} vs {grid}");
    }
}

#[test]
fn length_along_axis_examples() {
    let one = BinaryMask::from_fn(3, 3, unit(), |r, c| r == 1 && c == 1);
    assert_eq!(length_along_axis(&one, [0.0, 1.0]).unwrap(), (0.0, 0.0));
    let run = BinaryMask::from_fn(3, 20, Spacing::new(1.0, 0.5).unwrap(), |r, c| r == 1 && (2..13).contains(&c));
    let (mm, px) = length_along_axis(&run, [0.0, 1.0]).unwrap();
    assert_eq!(mm, 5.0);
    assert_eq!(px, 10.0);
    assert!(length_along_axis(&BinaryMask::new(3, 3, unit()), [1.0, 0.0]).is_err());
    assert!(length_along_axis(&run, [1.0, 1.0]).is_err());
}

#[test]
fn length_along_axis_matches_exhaustive_oracle() {
    let mut r = rng(3);
    for i in 0..20 {
        let spacing = Spacing::new(0.5 + 0.1 * i as f64, 0.8).unwrap();
        let blob = random_blob(30, 30, 80, spacing, &mut r);
        let axis = principal_axis(&blob).unwrap().axis;
        let (mm, _) = length_along_axis(&blob, axis).unwrap();
        let oracle = projection_range_oracle(&blob, axis);
        assert!((mm - oracle).abs() <= 1e-9 * oracle.max(1.0), "{mm} vs {oracle}");
    }
}

#[test]
fn measure_ellipse_and_rotation() {
    let e = ellipse_mask(80, 100, 40.0, 50.0, 30.0, 10.0, 0.0, unit());
    let m = measure_mask(&e).unwrap();
    assert!((m.length_px - 60.0).abs() <= 2.0, "{}", m.length_px);
    let rot = ellipse_mask(80, 100, 40.0, 50.0, 30.0, 10.0, 30.0, unit());
    let mr = measure_mask(&rot).unwrap();
    assert!((mr.length_px - 60.0).abs() <= 2.0, "{}", mr.length_px);
    assert!(line_angle_diff(axis_angle(mr.axis), 60.0) < 1.0, "{:?}", mr.axis);
}

#[test]
fn measure_ignores_spurious_blobs_and_reports_empty() {
    let e = ellipse_mask(60, 80, 30.0, 40.0, 20.0, 8.0, 15.0, unit());
    let mut noisy = e.clone();
    for (r, c) in [(2, 2), (2, 3), (3, 2), (55, 75)] {
        noisy.set(r, c, true);
    }
    assert_eq!(measure_mask(&noisy).unwrap(), measure_mask(&e).unwrap());
    assert!(matches!(measure_mask(&BinaryMask::new(5, 5, unit())), Err(spleenlen::Error::NoSpleenFound)));
}

fn translate(m: &BinaryMask, dr: usize, dc: usize) -> BinaryMask {
    BinaryMask::from_fn(m.height() + dr, m.width() + dc, m.spacing(), |r, c| r >= dr && c >= dc && m.get(r - dr, c - dc))
}

fn rot90(m: &BinaryMask) -> BinaryMask {
    // (r, c) -> (c, H - 1 - r)
    let (h, w) = (m.height(), m.width());
    let s = m.spacing();
    BinaryMask::from_fn(w, h, Spacing::new(s.sx, s.sy).unwrap(), |r, c| m.get(h - 1 - c, r))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn translation_and_quarter_turns_preserve_measurement(seed in any::<u64>(), dr in 0usize..7, dc in 0usize..7) {
        let mut r = rng(seed);
        let blob = random_blob(24, 24, 60, Spacing::new(0.6, 1.1).unwrap(), &mut r);
        let m = measure_mask(&blob).unwrap();
        let t = measure_mask(&translate(&blob, dr, dc)).unwrap();
        prop_assert!((m.axis[0] - t.axis[0]).abs() < 1e-9 && (m.axis[1] - t.axis[1]).abs() < 1e-9);
        prop_assert!((m.length_mm - t.length_mm).abs() < 1e-9);
        prop_assert!((t.centroid[0] - m.centroid[0] - dr as f64).abs() < 1e-9);
        prop_assert!((t.centroid[1] - m.centroid[1] - dc as f64).abs() < 1e-9);

        let q = measure_mask(&rot90(&blob)).unwrap();
        prop_assert!((q.length_mm - m.length_mm).abs() < 1e-9);
        prop_assert!((q.axis[0].abs() - m.axis[1].abs()).abs() < 1e-9);
        prop_assert!((q.axis[1].abs() - m.axis[0].abs()).abs() < 1e-9);
    }

    #[test]
    fn length_scales_with_isotropic_spacing(seed in any::<u64>(), s in 0.1f64..3.0) {
        let mut r = rng(seed);
        let blob = random_blob(24, 24, 50, Spacing::unit(), &mut r);
        let base = measure_mask(&blob).unwrap();
        let scaled = measure_mask(&blob.clone().with_spacing(Spacing::isotropic(s).unwrap())).unwrap();
        prop_assert!((scaled.length_mm - s * base.length_mm).abs() < 1e-9 * (1.0 + scaled.length_mm));
        prop_assert!((scaled.length_px - base.length_px).abs() < 1e-9);
    }

    #[test]
    fn adding_smaller_components_does_not_change_measurement(seed in any::<u64>()) {
        let mut r = rng(seed);
        let blob = random_blob(30, 30, 80, Spacing::unit(), &mut r);
        let mut padded = BinaryMask::from_fn(30, 40, Spacing::unit(), |r, c| c < 30 && blob.get(r, c));
        for row in 0..5 {
            padded.set(row * 2, 38, true);
        }
        prop_assert!((measure_mask(&padded).unwrap().length_mm - measure_mask(&blob).unwrap().length_mm).abs() < 1e-12);
    }
}
