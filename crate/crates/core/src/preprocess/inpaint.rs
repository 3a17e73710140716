//! Biharmonic inpainting of annotation defects.
//!
//! Defect pixels solve `Δ²u = 0` with the 13-point stencil (the 5-point
//! Laplacian applied twice), the surrounding intact pixels acting as clamped
//! boundary values. Restricted to the defect, the operator is symmetric
//! positive definite, so conjugate gradients converge.

use crate::error::{ensure, Error, Result};
use crate::geometry::BinaryMask;

use super::GrayImage;

/// Largest defect area as a fraction of the image.
pub const MAX_DEFECT_FRACTION: f64 = 0.2;
/// Residual ∞-norm at which the solve stops.
pub const DEFAULT_TOLERANCE: f64 = 1e-9;
/// Iteration cap per defect pixel.
pub const ITERATIONS_PER_PIXEL: usize = 50;

#[derive(Debug, Clone, Copy)]
pub struct InpaintOptions {
    pub tolerance: f64,
    pub iterations_per_pixel: usize,
}

impl Default for InpaintOptions {
    fn default() -> Self {
        Self { tolerance: DEFAULT_TOLERANCE, iterations_per_pixel: ITERATIONS_PER_PIXEL }
    }
}

/// Result of a solve, for diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InpaintStats {
    pub iterations: usize,
    pub residual: f64,
}

/// Local working window: the defect's bounding box grown by two pixels.
struct Window {
    r0: usize,
    c0: usize,
    h: usize,
    w: usize,
    /// Window-local flat indices of defect pixels.
    unknowns: Vec<usize>,
}

impl Window {
    fn laplacian(&self, x: &[f64], out: &mut [f64]) {
        let (h, w) = (self.h, self.w);
        out.iter_mut().for_each(|v| *v = 0.0);
        for r in 1..h - 1 {
            for c in 1..w - 1 {
                let i = r * w + c;
                out[i] = x[i - w] + x[i + w] + x[i - 1] + x[i + 1] - 4.0 * x[i];
            }
        }
    }

    /// `Δ²` of `field`, sampled at the defect pixels.
    fn bilaplacian_at_unknowns(&self, field: &[f64], tmp: &mut [f64], tmp2: &mut [f64]) -> Vec<f64> {
        self.laplacian(field, tmp);
        self.laplacian(tmp, tmp2);
        self.unknowns.iter().map(|&i| tmp2[i]).collect()
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Inpaint with default options.
pub fn inpaint_biharmonic(image: &GrayImage, defect: &BinaryMask) -> Result<GrayImage> {
    inpaint_biharmonic_with(image, defect, InpaintOptions::default()).map(|(img, _)| img)
}

/// Replace the pixels under `defect` by the discrete biharmonic interpolant
/// of their surroundings. Pixels outside the defect are returned unchanged.
///
/// The current defect values are the starting guess, so re-running on an
/// already inpainted image performs no iterations.
pub fn inpaint_biharmonic_with(
    image: &GrayImage,
    defect: &BinaryMask,
    opts: InpaintOptions,
) -> Result<(GrayImage, InpaintStats)> {
    let (h, w) = (image.height(), image.width());
    ensure!(
        defect.height() == h && defect.width() == w,
        Shape,
        "defect mask {}x{} does not match image {h}x{w}",
        defect.height(),
        defect.width()
    );
    ensure!(opts.tolerance > 0.0, InvalidArgument, "tolerance must be positive");
    let n = defect.count();
    if n == 0 {
        return Ok((image.clone(), InpaintStats { iterations: 0, residual: 0.0 }));
    }
    ensure!(
        (n as f64) < MAX_DEFECT_FRACTION * (h * w) as f64,
        InvalidArgument,
        "defect covers {n} of {} pixels (limit {}%)",
        h * w,
        MAX_DEFECT_FRACTION * 100.0
    );
    let (mut rmin, mut rmax, mut cmin, mut cmax) = (usize::MAX, 0, usize::MAX, 0);
    for (r, c) in defect.pixels() {
        rmin = rmin.min(r);
        rmax = rmax.max(r);
        cmin = cmin.min(c);
        cmax = cmax.max(c);
    }
    ensure!(
        rmin >= 2 && cmin >= 2 && rmax + 2 < h && cmax + 2 < w,
        InvalidArgument,
        "defect must stay at least 2 pixels away from the image border"
    );

    let (r0, c0) = (rmin - 2, cmin - 2);
    let (wh, ww) = (rmax + 3 - r0, cmax + 3 - c0);
    let mut field = vec![0.0; wh * ww];
    let mut unknowns = Vec::with_capacity(n);
    for r in 0..wh {
        for c in 0..ww {
            let i = r * ww + c;
            field[i] = image.get(r0 + r, c0 + c);
            if defect.get(r0 + r, c0 + c) {
                unknowns.push(i);
            }
        }
    }
    let win = Window { r0, c0, h: wh, w: ww, unknowns };
    let mut t1 = vec![0.0; wh * ww];
    let mut t2 = vec![0.0; wh * ww];

    // residual r = -Δ²(field) at the unknowns
    let mut res: Vec<f64> = win.bilaplacian_at_unknowns(&field, &mut t1, &mut t2).iter().map(|v| -v).collect();
    let cap = opts.iterations_per_pixel.saturating_mul(n).max(1);
    let mut iterations = 0;
    let mut rnorm = inf_norm(&res);
    let mut dir = res.clone();
    let mut rr = dot(&res, &res);
    let mut dfield = vec![0.0; wh * ww];
    while rnorm >= opts.tolerance {
        if iterations >= cap {
            return Err(Error::NotConverged { iterations, residual: rnorm });
        }
        for (k, &i) in win.unknowns.iter().enumerate() {
            dfield[i] = dir[k];
        }
        let ad = win.bilaplacian_at_unknowns(&dfield, &mut t1, &mut t2);
        let dad = dot(&dir, &ad);
        ensure!(dad > 0.0 && dad.is_finite(), NonFinite, "biharmonic solve (operator lost definiteness)");
        let alpha = rr / dad;
        for (k, &i) in win.unknowns.iter().enumerate() {
            field[i] += alpha * dir[k];
            res[k] -= alpha * ad[k];
        }
        iterations += 1;
        // refresh the residual periodically to shed accumulated round-off
        if iterations % 50 == 0 {
            res = win.bilaplacian_at_unknowns(&field, &mut t1, &mut t2).iter().map(|v| -v).collect();
        }
        let rr_new = dot(&res, &res);
        let beta = rr_new / rr;
        rr = rr_new;
        for (d, r) in dir.iter_mut().zip(&res) {
            *d = r + beta * *d;
        }
        rnorm = inf_norm(&res);
        if rnorm < opts.tolerance {
            // confirm against the true residual before accepting
            let truth = inf_norm(&win.bilaplacian_at_unknowns(&field, &mut t1, &mut t2));
            if truth >= opts.tolerance {
                res = win.bilaplacian_at_unknowns(&field, &mut t1, &mut t2).iter().map(|v| -v).collect();
                rr = dot(&res, &res);
                dir = res.clone();
            }
            rnorm = truth;
        }
    }

    let mut out = image.clone();
    for &i in &win.unknowns {
        out.set(win.r0 + i / win.w, win.c0 + i % win.w, field[i]);
    }
    ensure!(out.data().iter().all(|v| v.is_finite()), NonFinite, "biharmonic inpainting");
    Ok((out, InpaintStats { iterations, residual: rnorm }))
}
