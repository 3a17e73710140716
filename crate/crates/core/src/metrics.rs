//! Evaluation measures: percentage length error, Pearson correlation, Dice
//! overlap and Hausdorff distance.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::geometry::BinaryMask;

/// Mean of `|pred - gt| / gt`, in percent.
pub fn ple(pred_mm: &[f64], gt_mm: &[f64]) -> Result<f64> {
    ensure!(pred_mm.len() == gt_mm.len(), Shape, "{} predictions for {} ground-truth lengths", pred_mm.len(), gt_mm.len());
    ensure!(!gt_mm.is_empty(), InvalidArgument, "percentage length error of zero cases");
    if let Some((i, g)) = gt_mm.iter().enumerate().find(|(_, &g)| g <= 0.0 || !g.is_finite()) {
        return Err(Error::InvalidArgument(format!("ground-truth length {g} at case {i} must be positive")));
    }
    let total: f64 = pred_mm.iter().zip(gt_mm).map(|(p, g)| (p - g).abs() / g).sum();
    Ok(100.0 * total / gt_mm.len() as f64)
}

/// Sample Pearson correlation coefficient.
pub fn pearson_r(x: &[f64], y: &[f64]) -> Result<f64> {
    ensure!(x.len() == y.len(), Shape, "pearson_r on {} vs {} values", x.len(), y.len());
    ensure!(x.len() >= 2, InvalidArgument, "pearson_r needs at least 2 pairs");
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    ensure!(sxx > 0.0 && syy > 0.0, InvalidArgument, "pearson_r is undefined for zero variance");
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// `2|A∩B| / (|A| + |B|)`; two empty masks score 1.
pub fn dice_coefficient(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    ensure!(a.same_grid(b), Shape, "dice on {}x{} vs {}x{}", a.height(), a.width(), b.height(), b.width());
    let inter = a.bits().iter().zip(b.bits()).filter(|(x, y)| **x && **y).count();
    let total = a.count() + b.count();
    if total == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / total as f64)
}

/// Largest distance from a pixel of `a` to its nearest pixel of `b`, in mm.
///
/// The nearest pixel of `b` to any point outside `b` is always a boundary
/// pixel of `b`, so only `b`'s boundary is searched; pixels of `a` inside `b`
/// contribute zero.
fn directed_hausdorff(a: &BinaryMask, b: &BinaryMask) -> f64 {
    let s = a.spacing();
    let edge = b.boundary_pixels();
    let mut worst: f64 = 0.0;
    for (r, c) in a.pixels() {
        if b.get(r, c) {
            continue;
        }
        let mut best = f64::INFINITY;
        for &(br, bc) in &edge {
            let dy = (r as f64 - br as f64) * s.sy;
            let dx = (c as f64 - bc as f64) * s.sx;
            best = best.min(dy * dy + dx * dx);
            if best <= worst {
                break;
            }
        }
        worst = worst.max(best);
    }
    worst.sqrt()
}

/// Symmetric Hausdorff distance between pixel-centre sets, in mm.
pub fn hausdorff_distance(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    ensure!(a.same_grid(b), Shape, "hausdorff on {}x{} vs {}x{}", a.height(), a.width(), b.height(), b.width());
    ensure!(!a.is_empty() && !b.is_empty(), InvalidArgument, "hausdorff distance needs non-empty masks");
    Ok(directed_hausdorff(a, b).max(directed_hausdorff(b, a)))
}

/// One method's scores over all evaluated cases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub ple_percent: f64,
    pub pearson_r: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dice: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hausdorff_mm: Option<f64>,
    pub n_cases: usize,
}

impl MetricsReport {
    /// Length metrics only (regression methods). `pearson_r` is `None` when undefined.
    pub fn from_lengths(pred_mm: &[f64], gt_mm: &[f64]) -> Result<Self> {
        Ok(Self {
            ple_percent: ple(pred_mm, gt_mm)?,
            pearson_r: pearson_r(pred_mm, gt_mm).ok(),
            dice: None,
            hausdorff_mm: None,
            n_cases: gt_mm.len(),
        })
    }

    /// Length metrics plus mean Dice and mean Hausdorff over mask pairs.
    ///
    /// Pairs with an empty prediction are scored Dice 0 and left out of the
    /// Hausdorff mean.
    pub fn from_segmentation(pred_mm: &[f64], gt_mm: &[f64], masks: &[(BinaryMask, BinaryMask)]) -> Result<Self> {
        let mut report = Self::from_lengths(pred_mm, gt_mm)?;
        let mut dice = 0.0;
        let mut hd = Vec::new();
        for (pred, gt) in masks {
            dice += dice_coefficient(pred, gt)?;
            if !pred.is_empty() && !gt.is_empty() {
                hd.push(hausdorff_distance(pred, gt)?);
            }
        }
        if !masks.is_empty() {
            report.dice = Some(dice / masks.len() as f64);
        }
        if !hd.is_empty() {
            report.hausdorff_mm = Some(hd.iter().sum::<f64>() / hd.len() as f64);
        }
        Ok(report)
    }
}
