mod common;

use common::*;
use proptest::prelude::*;
use rand::Rng;
use spleenlen::geometry::{measure_mask, BinaryMask, Spacing};
use spleenlen::metrics::dice_coefficient;
use spleenlen::preprocess::io::*;
use spleenlen::preprocess::*;

fn sp() -> Spacing {
    Spacing::new(0.5, 0.7).unwrap()
}

fn random_image(h: usize, w: usize, seed: u64) -> GrayImage {
    let mut r = rng(seed);
    GrayImage::from_fn(h, w, sp(), |_, _| r.random::<f64>())
}

fn square_defect(h: usize, w: usize, r0: usize, c0: usize, size: usize) -> BinaryMask {
    BinaryMask::from_fn(h, w, sp(), |r, c| (r0..r0 + size).contains(&r) && (c0..c0 + size).contains(&c))
}

fn cross_defect(h: usize, w: usize, cy: usize, cx: usize, arm: usize) -> BinaryMask {
    BinaryMask::from_fn(h, w, sp(), |r, c| (r == cy && c.abs_diff(cx) <= arm) || (c == cx && r.abs_diff(cy) <= arm))
}

#[test]
fn inpaint_constant_image_fills_constant() {
    let mut img = GrayImage::filled(30, 30, 0.37, sp());
    let defect = cross_defect(30, 30, 14, 15, 5);
    for (r, c) in defect.pixels() {
        img.set(r, c, 1.0);
    }
    let out = inpaint_biharmonic(&img, &defect).unwrap();
    for v in out.data() {
        assert!((v - 0.37).abs() < 1e-9, "{v}");
    }
}

#[test]
fn inpaint_restores_affine_ramp() {
    let ramp = GrayImage::from_fn(40, 50, sp(), |r, c| 0.1 + 0.01 * r as f64 + 0.006 * c as f64);
    for defect in [square_defect(40, 50, 12, 15, 10), cross_defect(40, 50, 20, 25, 8)] {
        let mut damaged = ramp.clone();
        for (r, c) in defect.pixels() {
            damaged.set(r, c, 0.0);
        }
        let (out, stats) = inpaint_biharmonic_with(&damaged, &defect, InpaintOptions::default()).unwrap();
        assert!(stats.iterations <= ITERATIONS_PER_PIXEL * defect.count());
        assert!(stats.residual < 1e-6);
        for (i, (a, b)) in out.data().iter().zip(ramp.data()).enumerate() {
            assert!((a - b).abs() < 1e-4, "pixel {i}: {a} vs {b}");
        }
    }
}

#[test]
fn inpaint_leaves_intact_pixels_and_is_idempotent() {
    let img = random_image(32, 32, 5);
    let defect = cross_defect(32, 32, 16, 16, 6);
    let (once, _) = inpaint_biharmonic_with(&img, &defect, InpaintOptions::default()).unwrap();
    for (r, c) in (0..32).flat_map(|r| (0..32).map(move |c| (r, c))) {
        if !defect.get(r, c) {
            assert_eq!(once.get(r, c), img.get(r, c));
        }
    }
    let (twice, stats) = inpaint_biharmonic_with(&once, &defect, InpaintOptions::default()).unwrap();
    assert_eq!(stats.iterations, 0);
    assert_eq!(twice, once);
}

#[test]
fn inpaint_rejects_border_and_large_defects() {
    let img = random_image(20, 20, 6);
    assert!(inpaint_biharmonic(&img, &square_defect(20, 20, 1, 5, 3)).is_err());
    assert!(inpaint_biharmonic(&img, &square_defect(20, 20, 5, 16, 3)).is_err());
    assert!(inpaint_biharmonic(&img, &square_defect(20, 20, 3, 3, 9)).is_err());
    assert!(inpaint_biharmonic(&img, &square_defect(21, 20, 5, 5, 3)).is_err());
    let tight = InpaintOptions { tolerance: 1e-12, iterations_per_pixel: 0 };
    assert!(matches!(
        inpaint_biharmonic_with(&img, &square_defect(20, 20, 5, 5, 3), tight),
        Err(spleenlen::Error::NotConverged { .. })
    ));
    assert_eq!(inpaint_biharmonic(&img, &BinaryMask::new(20, 20, sp())).unwrap(), img);
}

#[test]
fn normalize_examples() {
    let img = random_image(40, 40, 7);
    let out = normalize_intensity(&img);
    assert!((out.mean() - 0.5).abs() < 1e-9);
    let clipped = out.data().iter().filter(|&&v| v == 0.0 || v == 1.0).count();
    assert!((clipped as f64) < 0.01 * 1600.0);
    assert!(out.in_unit_range());

    let shifted = normalize_intensity(&img.map(|v| v + 0.2));
    for (a, b) in out.data().iter().zip(shifted.data()) {
        assert!((a - b).abs() < 1e-12);
    }
    let flat = normalize_intensity(&GrayImage::filled(5, 5, 0.8, sp()));
    assert!(flat.data().iter().all(|&v| v == 0.5));

    // standardized input: output is exactly 0.5 + z / 6
    let z = GrayImage::new(2, 2, vec![1.0, -1.0, 1.0, -1.0], sp()).unwrap();
    let n = normalize_intensity(&z);
    let want = [0.5 + 1.0 / 6.0, 0.5 - 1.0 / 6.0];
    assert!((n.get(0, 0) - want[0]).abs() < 1e-15 && (n.get(0, 1) - want[1]).abs() < 1e-15);
}

#[test]
fn gamma_examples() {
    let img = random_image(10, 10, 8);
    assert_eq!(gamma_correct(&img, 1.0).unwrap(), img);
    let ends = GrayImage::new(1, 2, vec![0.0, 1.0], sp()).unwrap();
    assert_eq!(gamma_correct(&ends, 0.7).unwrap(), ends);
    assert_eq!(gamma_correct(&ends, 1.5).unwrap(), ends);
    assert!(gamma_correct(&img, 0.0).is_err());
}

/// Per-pixel equalization computed directly from the four surrounding tiles.
fn naive_equalize(img: &GrayImage, tiles: usize, clip: f64) -> Vec<f64> {
    let (h, w) = (img.height(), img.width());
    let bins = 256usize;
    let bin = |v: f64| ((v * bins as f64).floor() as usize).min(bins - 1);
    let cdf_at = |ti: usize, tj: usize, b: usize| -> f64 {
        let (r0, r1) = (ti * h / tiles, (ti + 1) * h / tiles);
        let (c0, c1) = (tj * w / tiles, (tj + 1) * w / tiles);
        let mut hist = vec![0.0; bins];
        for r in r0..r1 {
            for c in c0..c1 {
                hist[bin(img.get(r, c))] += 1.0;
            }
        }
        let n = ((r1 - r0) * (c1 - c0)) as f64;
        let lim = f64::max(clip * n, 1.0);
        let excess: f64 = hist.iter().map(|&x: &f64| (x - lim).max(0.0)).sum();
        let below: f64 = hist[..=b].iter().map(|&x: &f64| x.min(lim)).sum();
        ((below + excess * (b + 1) as f64 / bins as f64) / n).min(1.0)
    };
    let centre = |len: usize, i: usize| ((i * len / tiles) + ((i + 1) * len / tiles)) as f64 / 2.0 - 0.5;
    let locate = |len: usize, p: f64| {
        let cs: Vec<f64> = (0..tiles).map(|i| centre(len, i)).collect();
        if p <= cs[0] {
            return (0, 0, 0.0);
        }
        for k in 0..tiles - 1 {
            if p < cs[k + 1] {
                return (k, k + 1, (p - cs[k]) / (cs[k + 1] - cs[k]));
            }
        }
        (tiles - 1, tiles - 1, 0.0)
    };
    let mut out = Vec::new();
    for r in 0..h {
        for c in 0..w {
            let b = bin(img.get(r, c));
            let (i0, i1, fy) = locate(h, r as f64);
            let (j0, j1, fx) = locate(w, c as f64);
            let v = (1.0 - fy) * ((1.0 - fx) * cdf_at(i0, j0, b) + fx * cdf_at(i0, j1, b))
                + fy * ((1.0 - fx) * cdf_at(i1, j0, b) + fx * cdf_at(i1, j1, b));
            out.push(v.clamp(0.0, 1.0));
        }
    }
    out
}

#[test]
fn equalization_matches_naive_oracle() {
    let mut r = rng(9);
    let img = GrayImage::from_fn(37, 45, sp(), |row, _| (0.3 * r.random::<f64>() + 0.01 * row as f64).min(1.0));
    let got = adaptive_equalize(&img, 4, 0.01).unwrap();
    let want = naive_equalize(&img, 4, 0.01);
    for (a, b) in got.data().iter().zip(&want) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}

#[test]
fn equalization_of_uniform_histogram_barely_moves_pixels() {
    // every 16x16 tile holds each of the 256 levels exactly once
    let img = GrayImage::from_fn(128, 128, sp(), |r, c| {
        let k = ((r % 16) * 16 + (c % 16) * 7 + r / 16 + c / 16) % 256;
        let k = (k * 97) % 256;
        (k as f64 + 0.5) / 256.0
    });
    let out = adaptive_equalize(&img, 8, 0.01).unwrap();
    let want = naive_equalize(&img, 8, 0.01);
    let max_change = out.data().iter().zip(img.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(max_change <= 0.5 / 256.0 + 1e-12, "{max_change}");
    for (a, b) in out.data().iter().zip(&want) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn rotation_examples() {
    let img = random_image(9, 9, 10);
    assert_eq!(rotate_image(&img, 0.0), img);
    let q = rotate_image(&img, 90.0);
    for r in 0..9 {
        for c in 0..9 {
            assert_eq!(q.get(r, c), img.get(c, 8 - r));
        }
    }
    let m = BinaryMask::from_fn(9, 9, sp(), |r, c| r < 3 && c > 4);
    let qm = rotate_mask(&m, 90.0);
    for r in 0..9 {
        for c in 0..9 {
            assert_eq!(qm.get(r, c), m.get(c, 8 - r));
        }
    }
}

#[test]
fn mask_rotation_round_trip_keeps_dice() {
    let mut r = rng(12);
    for i in 0..20 {
        let blob = random_blob(48, 48, 100 + 10 * i, Spacing::unit(), &mut r);
        let theta = r.random_range(-20.0..20.0);
        let back = rotate_mask(&rotate_mask(&blob, theta), -theta);
        let d = dice_coefficient(&blob, &back).unwrap();
        assert!(d >= 0.95, "blob {i}, {theta}: dice {d}");
    }
}

#[test]
fn augmentation_identity_and_determinism() {
    let img = random_image(24, 24, 13);
    let mask = ellipse_mask(24, 24, 12.0, 12.0, 8.0, 4.0, 10.0, sp());
    let (i2, m2, p) = augment(&img, Some(&mask), &AugmentationSpec::identity(), 99).unwrap();
    assert_eq!(i2, img);
    assert_eq!(m2.unwrap(), mask);
    assert_eq!((p.angle_deg, p.gamma, p.equalize), (0.0, 1.0, false));

    let spec = AugmentationSpec::default();
    let a = augment(&img, Some(&mask), &spec, 1234).unwrap();
    let b = augment(&img, Some(&mask), &spec, 1234).unwrap();
    assert_eq!(a.0, b.0);
    assert_eq!(a.1, b.1);
    assert_eq!(a.2, b.2);
    assert!(a.0.in_unit_range());

    let lit = AugmentationSpec::positive_rotations_only();
    for key in 0..50 {
        let p = lit.draw(key);
        assert!((0.0..=20.0).contains(&p.angle_deg));
        assert!((0.7..=1.5).contains(&p.gamma));
    }
    assert!(AugmentationSpec { rotation_deg: (-30.0, 30.0), ..spec }.validate_paper_faithful().is_err());
    assert!(spec.validate_paper_faithful().is_ok());
}

#[test]
fn rotated_mask_length_is_stable() {
    let spec = AugmentationSpec::default();
    for key in 0..30u64 {
        let a = 30.0 + (key % 7) as f64 * 2.0;
        let mask = ellipse_mask(112, 112, 56.0, 56.0, a, 12.0, key as f64 * 11.0, Spacing::unit());
        let base = measure_mask(&mask).unwrap().length_mm;
        let (_, rot, p) = augment(&GrayImage::filled(112, 112, 0.5, Spacing::unit()), Some(&mask), &spec, key).unwrap();
        let len = measure_mask(&rot.unwrap()).unwrap().length_mm;
        assert!((len - base).abs() / base < 0.02, "key {key} angle {}: {len} vs {base}", p.angle_deg);
    }
}

#[test]
fn image_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let img = random_image(13, 17, 14).quantize16();
    for name in ["a.png", "a.pgm"] {
        let path = dir.path().join(name);
        write_image(&img, &path, BitDepth::Sixteen).unwrap();
        assert_eq!(read_image(&path, sp()).unwrap(), img, "{name}");
    }
    let img8 = img.map(|v| (v * 255.0).round() / 255.0);
    for name in ["b.png", "b.pgm"] {
        let path = dir.path().join(name);
        write_image(&img8, &path, BitDepth::Eight).unwrap();
        assert_eq!(read_image(&path, sp()).unwrap(), img8, "{name}");
    }
    let mask = ellipse_mask(13, 17, 6.0, 8.0, 5.0, 3.0, 0.0, sp());
    let mpath = dir.path().join("m.png");
    write_mask(&mask, &mpath).unwrap();
    assert_eq!(read_mask(&mpath, sp()).unwrap(), mask);

    std::fs::write(dir.path().join("bad.png"), b"not a png").unwrap();
    assert!(read_image(&dir.path().join("bad.png"), sp()).is_err());
    assert!(read_image(&dir.path().join("missing.png"), sp()).is_err());
    assert!(write_image(&img, &dir.path().join("x.bmp"), BitDepth::Eight).is_err());
}

#[test]
fn pgm_parser_handles_comments_and_rejects_truncation() {
    let bytes = b"P5\n# comment\n3 1\n# another\n255\n\x00\x80\xff".to_vec();
    let raw = decode_pgm(&bytes).unwrap();
    assert_eq!(raw.samples, vec![0, 128, 255]);
    assert!(decode_pgm(&bytes[..bytes.len() - 1]).is_err());
    assert!(decode_pgm(b"P2\n1 1\n255\n0").is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn intensity_ops_stay_in_unit_range(seed in any::<u64>(), gamma in 0.2f64..3.0, tiles in 1usize..9, clip in 0.005f64..0.5) {
        let img = random_image(20, 23, seed);
        prop_assert!(normalize_intensity(&img).in_unit_range());
        prop_assert!(gamma_correct(&img, gamma).unwrap().in_unit_range());
        prop_assert!(adaptive_equalize(&img, tiles, clip).unwrap().in_unit_range());
        prop_assert!(rotate_image(&img, gamma * 10.0).in_unit_range());
    }
}
