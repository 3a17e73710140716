mod common;

use std::collections::{BTreeMap, BTreeSet};

use spleenlen::geometry::{measure_mask, Spacing};
use spleenlen::phantom::*;

fn small(count: usize, seed: u64) -> PhantomConfig {
    PhantomConfig { count, patients: None, seed, ..PhantomConfig::default() }
}

/// Extent of an ellipse along its own major axis after an axis scaling:
/// twice the largest singular value of `S R diag(a, b)`.
fn ellipse_major_mm(a: f64, b: f64, angle_deg: f64, s: Spacing) -> f64 {
    let t = angle_deg.to_radians();
    // columns: images of the local u and v unit vectors, in (row, col) mm
    let m = [[-t.sin() * a * s.sy, t.cos() * b * s.sy], [t.cos() * a * s.sx, t.sin() * b * s.sx]];
    let g00 = m[0][0] * m[0][0] + m[0][1] * m[0][1];
    let g11 = m[1][0] * m[1][0] + m[1][1] * m[1][1];
    let g01 = m[0][0] * m[1][0] + m[0][1] * m[1][1];
    let tr = g00 + g11;
    let det = g00 * g11 - g01 * g01;
    let lmax = tr / 2.0 + (tr * tr / 4.0 - det).sqrt();
    2.0 * lmax.sqrt()
}

#[test]
fn unbent_ellipse_analytic_length_matches_closed_form() {
    for (i, angle) in [0.0, 17.0, -30.0, 45.0, 80.0].into_iter().enumerate() {
        let spacing = if i % 2 == 0 { Spacing::unit() } else { Spacing::new(1.5, 0.8).unwrap() };
        let shape = SpleenShape { center: [40.0, 50.0], a: 25.0, b: 9.0, angle_deg: angle, bend: 0.0 };
        let got = shape.analytic_length(spacing);
        let want = ellipse_major_mm(25.0, 9.0, angle, spacing);
        assert!((got.length_mm - want).abs() < 1e-6 * want, "angle {angle}: {} vs {want}", got.length_mm);
        if i % 2 == 0 {
            assert!((got.length_px - 50.0).abs() < 1e-6);
        }
    }
}

#[test]
fn bent_shape_axis_matches_supersampled_moments() {
    let shape = SpleenShape { center: [30.0, 45.0], a: 26.0, b: 9.0, angle_deg: 20.0, bend: 0.2 };
    let s = Spacing::new(1.0, 1.0).unwrap();
    let got = shape.analytic_length(s);
    let step = 0.05;
    let (mut n, mut sy, mut sx, mut syy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    let mut y = 0.0;
    while y < 60.0 {
        let mut x = 0.0;
        while x < 90.0 {
            if shape.contains(y, x) {
                n += 1.0;
                sy += y;
                sx += x;
                syy += y * y;
                sxx += x * x;
                sxy += x * y;
            }
            x += step;
        }
        y += step;
    }
    let (my, mx) = (sy / n, sx / n);
    let (cyy, cxx, cxy) = (syy / n - my * my, sxx / n - mx * mx, sxy / n - mx * my);
    let angle = 0.5 * (2.0 * cxy).atan2(cyy - cxx);
    let oracle = [angle.cos(), angle.sin()];
    let cos = (oracle[0] * got.axis[0] + oracle[1] * got.axis[1]).abs();
    assert!(cos > (0.5f64).to_radians().cos(), "axis {:?} vs {:?}", got.axis, oracle);
}

#[test]
fn clean_phantoms_pass_the_self_check() {
    let samples = generate(&PhantomConfig::clean(40, 3)).unwrap();
    for s in &samples {
        let m = measure_mask(&s.mask).unwrap();
        assert!((m.length_px - s.length_px).abs() <= 2.0, "case {}: {} vs {}", s.case_id, m.length_px, s.length_px);
        assert!(s.image.in_unit_range());
    }
}

#[test]
fn default_phantoms_are_self_consistent() {
    let samples = generate(&PhantomConfig::paper_like(11)).unwrap();
    for s in &samples {
        let m = measure_mask(&s.mask).unwrap();
        assert!((m.length_px - s.length_px).abs() <= 2.0, "case {}", s.case_id);
        assert!((s.length_mm - 2.0 * s.length_px).abs() < 1e-9);
    }
}

#[test]
fn paper_like_grouping() {
    let cfg = PhantomConfig::paper_like(5);
    let samples = generate(&cfg).unwrap();
    assert_eq!(samples.len(), 108);
    let mut per: BTreeMap<u64, usize> = BTreeMap::new();
    for s in &samples {
        *per.entry(s.patient_id).or_default() += 1;
    }
    assert_eq!(per.len(), 93);
    assert!(per.values().all(|&n| (1..=4).contains(&n)));
    let ids: BTreeSet<u64> = samples.iter().map(|s| s.case_id).collect();
    assert_eq!(ids.len(), 108);
}

#[test]
fn generation_is_deterministic_and_thread_independent() {
    let cfg = small(12, 21);
    let a = generate(&cfg).unwrap();
    let b = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap().install(|| generate(&cfg).unwrap());
    assert_eq!(a, b);
    let other = generate(&small(12, 22)).unwrap();
    assert_ne!(a[0].image, other[0].image);

    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    write_dataset(&a, d1.path(), Some(21)).unwrap();
    write_dataset(&b, d2.path(), Some(21)).unwrap();
    for rel in ["manifest.csv", "images/case_0003.png", "masks/case_0011.png"] {
        assert_eq!(std::fs::read(d1.path().join(rel)).unwrap(), std::fs::read(d2.path().join(rel)).unwrap(), "{rel}");
    }
}

#[test]
fn dataset_round_trip() {
    let cfg = PhantomConfig { calipers: true, ..small(6, 8) };
    let samples = generate(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_dataset(&samples, dir.path(), Some(8)).unwrap();
    let back = read_dataset(dir.path()).unwrap();
    assert_eq!(back, samples);
    let (seed, rows) = read_manifest(dir.path()).unwrap();
    assert_eq!(seed, Some(8));
    assert_eq!(rows.len(), samples.len());
    let text = std::fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap();
    assert!(text.lines().nth(1).unwrap().starts_with("case_id,patient_id,image_path,mask_path,sy_mm,sx_mm,length_mm,length_px"));
    assert!(text.contains(&samples[2].length_mm.to_string()));
}

#[test]
fn corrupt_mask_names_the_case() {
    let samples = generate(&small(4, 9)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_dataset(&samples, dir.path(), None).unwrap();
    std::fs::write(dir.path().join("masks/case_0002.png"), b"garbage").unwrap();
    match read_dataset(dir.path()) {
        Err(spleenlen::Error::Case { case_id, .. }) => assert_eq!(case_id, 2),
        other => panic!("expected a case error, got {other:?}"),
    }
    std::fs::remove_file(dir.path().join("images/case_0001.png")).unwrap();
    assert!(matches!(read_dataset(dir.path()), Err(spleenlen::Error::Case { case_id: 1, .. })));
}

#[test]
fn calipers_only_touch_annotated_pixels() {
    let plain = generate(&small(5, 4)).unwrap();
    let marked = generate(&PhantomConfig { calipers: true, ..small(5, 4) }).unwrap();
    for (p, m) in plain.iter().zip(&marked) {
        let ann = m.annotations.as_ref().unwrap();
        assert!(ann.count() > 0 && ann.count() <= 2 * (4 * CALIPER_ARM + 1));
        assert_eq!(p.mask, m.mask);
        assert_eq!(p.length_mm, m.length_mm);
        for r in 0..p.image.height() {
            for c in 0..p.image.width() {
                if ann.get(r, c) {
                    assert_eq!(m.image.get(r, c), 1.0);
                } else {
                    assert_eq!(m.image.get(r, c), p.image.get(r, c));
                }
            }
        }
    }
}

#[test]
fn invalid_configs_are_rejected() {
    assert!(generate(&PhantomConfig { count: 0, ..small(1, 0) }).is_err());
    assert!(generate(&PhantomConfig { height: 60, ..small(1, 0) }).is_err());
    assert!(generate(&PhantomConfig { contrast: 0.0, ..small(1, 0) }).is_err());
    assert!(generate(&PhantomConfig { semi_major: (60.0, 70.0), ..small(1, 0) }).is_err());
    assert!(generate(&PhantomConfig { patients: Some(10), count: 50, ..small(1, 0) }).is_err());
}
