use crate::error::{ensure, Result};

use super::GrayImage;

/// Standard deviations mapped onto each half of `[0, 1]`.
pub const NORMALIZE_SPAN_SD: f64 = 3.0;
pub const EQUALIZE_TILES: usize = 8;
pub const EQUALIZE_CLIP: f64 = 0.01;
pub const EQUALIZE_BINS: usize = 256;

/// Per-image z-score, then `mean → 0.5` and `±3 sd → {0, 1}` with clipping.
/// A constant image maps to a uniform 0.5.
pub fn normalize_intensity(image: &GrayImage) -> GrayImage {
    let n = image.data().len().max(1) as f64;
    let mean = image.mean();
    let var = image.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    if sd <= 1e-12 * mean.abs().max(1.0) {
        return image.map(|_| 0.5);
    }
    image.map(|v| (0.5 + (v - mean) / sd / (2.0 * NORMALIZE_SPAN_SD)).clamp(0.0, 1.0))
}

/// Pointwise `u^gamma` on values clamped to `[0, 1]`.
pub fn gamma_correct(image: &GrayImage, gamma: f64) -> Result<GrayImage> {
    ensure!(gamma > 0.0 && gamma.is_finite(), InvalidArgument, "gamma must be positive, got {gamma}");
    Ok(image.map(|v| v.clamp(0.0, 1.0).powf(gamma)))
}

#[inline]
fn bin_of(v: f64) -> usize {
    ((v.clamp(0.0, 1.0) * EQUALIZE_BINS as f64) as usize).min(EQUALIZE_BINS - 1)
}

/// Half-open pixel range of tile `i` out of `tiles` along an axis of `len`.
pub fn tile_bounds(len: usize, tiles: usize, i: usize) -> (usize, usize) {
    (i * len / tiles, (i + 1) * len / tiles)
}

/// Clipped, redistributed cumulative histogram of one tile, scaled to `[0, 1]`.
pub fn tile_mapping(values: impl Iterator<Item = f64>, clip: f64) -> Vec<f64> {
    let mut hist = vec![0.0f64; EQUALIZE_BINS];
    let mut n = 0usize;
    for v in values {
        hist[bin_of(v)] += 1.0;
        n += 1;
    }
    if n == 0 {
        return (0..EQUALIZE_BINS).map(|b| (b as f64 + 0.5) / EQUALIZE_BINS as f64).collect();
    }
    let limit = (clip * n as f64).max(1.0);
    let mut excess = 0.0;
    for h in hist.iter_mut() {
        if *h > limit {
            excess += *h - limit;
            *h = limit;
        }
    }
    let share = excess / EQUALIZE_BINS as f64;
    let mut acc = 0.0;
    hist.iter()
        .map(|h| {
            acc += h + share;
            (acc / n as f64).min(1.0)
        })
        .collect()
}

/// Contrast-limited adaptive histogram equalization: a clipped histogram
/// mapping per tile of a `tiles × tiles` grid, blended bilinearly between
/// tile centres.
pub fn adaptive_equalize(image: &GrayImage, tiles: usize, clip: f64) -> Result<GrayImage> {
    ensure!(tiles >= 1, InvalidArgument, "need at least one tile");
    ensure!(clip > 0.0 && clip <= 1.0, InvalidArgument, "clip must lie in (0, 1], got {clip}");
    let (h, w) = (image.height(), image.width());
    let ty = tiles.min(h.max(1));
    let tx = tiles.min(w.max(1));
    let mut maps = Vec::with_capacity(ty * tx);
    for i in 0..ty {
        let (ra, rb) = tile_bounds(h, ty, i);
        for j in 0..tx {
            let (ca, cb) = tile_bounds(w, tx, j);
            let vals = (ra..rb).flat_map(|r| (ca..cb).map(move |c| (r, c))).map(|(r, c)| image.get(r, c));
            maps.push(tile_mapping(vals, clip));
        }
    }
    let centre = |len: usize, t: usize, i: usize| {
        let (a, b) = tile_bounds(len, t, i);
        (a + b) as f64 / 2.0 - 0.5
    };
    let cy: Vec<f64> = (0..ty).map(|i| centre(h, ty, i)).collect();
    let cx: Vec<f64> = (0..tx).map(|j| centre(w, tx, j)).collect();
    // neighbouring tile indices and weight of the upper one
    let interp = |centres: &[f64], p: f64| -> (usize, usize, f64) {
        let last = centres.len() - 1;
        if p <= centres[0] {
            return (0, 0, 0.0);
        }
        if p >= centres[last] {
            return (last, last, 0.0);
        }
        let k = centres.partition_point(|&c| c <= p) - 1;
        let t = (p - centres[k]) / (centres[k + 1] - centres[k]);
        (k, k + 1, t)
    };
    let out = GrayImage::from_fn(h, w, image.spacing(), |r, c| {
        let b = bin_of(image.get(r, c));
        let (i0, i1, fy) = interp(&cy, r as f64);
        let (j0, j1, fx) = interp(&cx, c as f64);
        let m = |i: usize, j: usize| maps[i * tx + j][b];
        let top = m(i0, j0) * (1.0 - fx) + m(i0, j1) * fx;
        let bottom = m(i1, j0) * (1.0 - fx) + m(i1, j1) * fx;
        (top * (1.0 - fy) + bottom * fy).clamp(0.0, 1.0)
    });
    Ok(out)
}
