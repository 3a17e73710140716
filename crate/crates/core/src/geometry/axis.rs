use serde::{Deserialize, Serialize};

use super::{largest_component, BinaryMask};
use crate::error::{ensure, Error, Result};

/// Relative eigenvalue gap below which the covariance is treated as isotropic.
const EIGEN_TIE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisMeasurement {
    /// `(row, col)` in pixels.
    pub centroid: [f64; 2],
    /// Unit vector in `(row, col)` order, first nonzero component non-negative.
    pub axis: [f64; 2],
    pub length_px: f64,
    pub length_mm: f64,
}

fn canonical(v: [f64; 2]) -> [f64; 2] {
    let n = v[0].hypot(v[1]);
    let u = [v[0] / n, v[1] / n];
    let flip = if u[0] != 0.0 { u[0] < 0.0 } else { u[1] < 0.0 };
    if flip {
        [-u[0], -u[1]]
    } else {
        u
    }
}

/// Leading eigenvector of the symmetric matrix `[[a, b], [b, c]]`.
///
/// Returns `(1, 0)` when both eigenvalues coincide.
pub fn leading_eigenvector(a: f64, b: f64, c: f64) -> [f64; 2] {
    let half_diff = 0.5 * (a - c);
    let radius = half_diff.hypot(b);
    let trace = a + c;
    if radius <= EIGEN_TIE_TOL * trace.abs() || radius == 0.0 {
        return [1.0, 0.0];
    }
    let lambda = 0.5 * trace + radius;
    let v = if a >= c { [lambda - c, b] } else { [b, lambda - a] };
    canonical(v)
}

/// Principal axis of the mask's pixel centres in millimetre coordinates.
///
/// Only `centroid` and `axis` are filled in; lengths are zero.
pub fn principal_axis(mask: &BinaryMask) -> Result<AxisMeasurement> {
    let n = mask.count();
    ensure!(n >= 2, InvalidArgument, "principal axis needs at least 2 pixels, mask has {n}");
    let s = mask.spacing();
    let (mut sr, mut sc) = (0.0, 0.0);
    for (r, c) in mask.pixels() {
        sr += r as f64;
        sc += c as f64;
    }
    let (mr, mc) = (sr / n as f64, sc / n as f64);
    let (mut yy, mut yx, mut xx) = (0.0, 0.0, 0.0);
    for (r, c) in mask.pixels() {
        let dy = (r as f64 - mr) * s.sy;
        let dx = (c as f64 - mc) * s.sx;
        yy += dy * dy;
        yx += dy * dx;
        xx += dx * dx;
    }
    let nf = n as f64;
    Ok(AxisMeasurement {
        centroid: [mr, mc],
        axis: leading_eigenvector(yy / nf, yx / nf, xx / nf),
        length_px: 0.0,
        length_mm: 0.0,
    })
}

/// Range of pixel-centre projections onto `axis`: `(length_mm, length_px)`.
///
/// The millimetre range projects physical coordinates; the pixel range
/// projects raw `(row, col)` indices onto the same axis.
pub fn length_along_axis(mask: &BinaryMask, axis: [f64; 2]) -> Result<(f64, f64)> {
    ensure!(!mask.is_empty(), InvalidArgument, "cannot measure an empty mask");
    let norm = axis[0].hypot(axis[1]);
    ensure!((norm - 1.0).abs() < 1e-9, InvalidArgument, "axis {axis:?} is not a unit vector");
    let s = mask.spacing();
    let (mut lo_mm, mut hi_mm) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut lo_px, mut hi_px) = (f64::INFINITY, f64::NEG_INFINITY);
    for (r, c) in mask.pixels() {
        let (r, c) = (r as f64, c as f64);
        let mm = r * s.sy * axis[0] + c * s.sx * axis[1];
        let px = r * axis[0] + c * axis[1];
        lo_mm = lo_mm.min(mm);
        hi_mm = hi_mm.max(mm);
        lo_px = lo_px.min(px);
        hi_px = hi_px.max(px);
    }
    Ok((hi_mm - lo_mm, hi_px - lo_px))
}

/// Largest component, then principal axis, then projection range.
pub fn measure_mask(mask: &BinaryMask) -> Result<AxisMeasurement> {
    let kept = largest_component(mask);
    match kept.count() {
        0 => Err(Error::NoSpleenFound),
        1 => {
            let (r, c) = kept.pixels().next().expect("one pixel");
            Ok(AxisMeasurement { centroid: [r as f64, c as f64], axis: [1.0, 0.0], length_px: 0.0, length_mm: 0.0 })
        }
        _ => {
            let mut m = principal_axis(&kept)?;
            let (mm, px) = length_along_axis(&kept, m.axis)?;
            m.length_mm = mm;
            m.length_px = px;
            Ok(m)
        }
    }
}
