//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spleenlen::geometry::{BinaryMask, Spacing};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Each pixel on with probability `density`.
pub fn random_mask(h: usize, w: usize, density: f64, spacing: Spacing, r: &mut ChaCha8Rng) -> BinaryMask {
    let bits = (0..h * w).map(|_| r.random::<f64>() < density).collect();
    BinaryMask::from_bits(h, w, bits, spacing).unwrap()
}

/// Connected blob grown from the centre by random 4-neighbour accretion.
pub fn random_blob(h: usize, w: usize, pixels: usize, spacing: Spacing, r: &mut ChaCha8Rng) -> BinaryMask {
    let mut m = BinaryMask::new(h, w, spacing);
    let mut members = vec![(h / 2, w / 2)];
    m.set(h / 2, w / 2, true);
    // bias growth along a random direction so blobs are elongated
    let stretch: f64 = r.random_range(0.2..0.8);
    while members.len() < pixels {
        let (pr, pc) = members[r.random_range(0..members.len())];
        let (dr, dc): (isize, isize) = if r.random::<f64>() < stretch {
            if r.random::<bool>() {
                (0, 1)
            } else {
                (0, -1)
            }
        } else {
            [(1, 0), (-1, 0), (0, 1), (0, -1)][r.random_range(0..4)]
        };
        let (nr, nc) = (pr as isize + dr, pc as isize + dc);
        if nr < 0 || nc < 0 || nr >= h as isize || nc >= w as isize {
            continue;
        }
        let (nr, nc) = (nr as usize, nc as usize);
        if !m.get(nr, nc) {
            m.set(nr, nc, true);
            members.push((nr, nc));
        }
    }
    m
}

/// Largest 8-connected component by recursive-style depth-first flood fill.
pub fn flood_fill_largest(mask: &BinaryMask) -> BinaryMask {
    let (h, w) = (mask.height(), mask.width());
    let mut seen = vec![false; h * w];
    let mut best: Vec<(usize, usize)> = Vec::new();
    for r0 in 0..h {
        for c0 in 0..w {
            if !mask.get(r0, c0) || seen[r0 * w + c0] {
                continue;
            }
            let mut comp = Vec::new();
            let mut stack = vec![(r0, c0)];
            seen[r0 * w + c0] = true;
            while let Some((r, c)) = stack.pop() {
                comp.push((r, c));
                for nr in r.saturating_sub(1)..=(r + 1).min(h - 1) {
                    for nc in c.saturating_sub(1)..=(c + 1).min(w - 1) {
                        if mask.get(nr, nc) && !seen[nr * w + nc] {
                            seen[nr * w + nc] = true;
                            stack.push((nr, nc));
                        }
                    }
                }
            }
            if comp.len() > best.len() {
                best = comp;
            }
        }
    }
    let mut out = BinaryMask::new(h, w, mask.spacing());
    for (r, c) in best {
        out.set(r, c, true);
    }
    out
}

/// Angle (degrees in [0, 180), measured from the row axis towards the
/// column axis) maximizing projection variance, by grid search.
pub fn angle_grid_axis(mask: &BinaryMask, step_deg: f64) -> f64 {
    let s = mask.spacing();
    let pts: Vec<(f64, f64)> = mask.pixels().map(|(r, c)| (r as f64 * s.sy, c as f64 * s.sx)).collect();
    let n = pts.len() as f64;
    let my = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let mx = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let steps = (180.0 / step_deg).round() as usize;
    let mut best = (f64::NEG_INFINITY, 0.0);
    for i in 0..steps {
        let t = (i as f64 * step_deg).to_radians();
        let (cy, cx) = (t.cos(), t.sin());
        let var = pts.iter().map(|(y, x)| ((y - my) * cy + (x - mx) * cx).powi(2)).sum::<f64>();
        if var > best.0 {
            best = (var, i as f64 * step_deg);
        }
    }
    best.1
}

/// Axis-direction angle in degrees, folded to [0, 180).
pub fn axis_angle(axis: [f64; 2]) -> f64 {
    let a = axis[1].atan2(axis[0]).to_degrees();
    a.rem_euclid(180.0)
}

/// Smallest difference between two undirected line angles (degrees).
pub fn line_angle_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(180.0);
    d.min(180.0 - d)
}

/// Exhaustive projection range in millimetres.
pub fn projection_range_oracle(mask: &BinaryMask, axis: [f64; 2]) -> f64 {
    let s = mask.spacing();
    let proj: Vec<f64> = mask.pixels().map(|(r, c)| r as f64 * s.sy * axis[0] + c as f64 * s.sx * axis[1]).collect();
    let mut best: f64 = 0.0;
    for a in &proj {
        for b in &proj {
            best = best.max(a - b);
        }
    }
    best
}

/// Symmetric Hausdorff distance by brute force over all pixel pairs.
pub fn hausdorff_brute(a: &BinaryMask, b: &BinaryMask) -> f64 {
    let s = a.spacing();
    let pa: Vec<(usize, usize)> = a.pixels().collect();
    let pb: Vec<(usize, usize)> = b.pixels().collect();
    let d = |p: (usize, usize), q: (usize, usize)| ((p.0 as f64 - q.0 as f64) * s.sy).hypot((p.1 as f64 - q.1 as f64) * s.sx);
    let directed = |x: &[(usize, usize)], y: &[(usize, usize)]| {
        x.iter().map(|&p| y.iter().map(|&q| d(p, q)).fold(f64::INFINITY, f64::min)).fold(0.0, f64::max)
    };
    directed(&pa, &pb).max(directed(&pb, &pa))
}

/// Ellipse with semi-axes `a` (along `angle_deg` from the column axis) and
/// `b`, centred at `(cy, cx)`, rasterized at pixel centres.
pub fn ellipse_mask(h: usize, w: usize, cy: f64, cx: f64, a: f64, b: f64, angle_deg: f64, spacing: Spacing) -> BinaryMask {
    let t = angle_deg.to_radians();
    BinaryMask::from_fn(h, w, spacing, |r, c| {
        let (dy, dx) = (r as f64 - cy, c as f64 - cx);
        let u = dx * t.cos() + dy * t.sin();
        let v = -dx * t.sin() + dy * t.cos();
        (u / a).powi(2) + (v / b).powi(2) <= 1.0
    })
}
