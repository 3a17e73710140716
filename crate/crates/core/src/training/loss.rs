use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::geometry::BinaryMask;
use crate::models::ArchTag;
use crate::tensor::{Graph, Tensor, Var};

/// Smoothing constant of the Dice loss.
pub const DICE_SMOOTH: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Dice,
    Mse,
}

impl LossKind {
    /// Dice for segmentation, MSE for the regressors.
    pub fn for_arch(tag: ArchTag) -> Self {
        match tag {
            ArchTag::SB => LossKind::Dice,
            ArchTag::DE | ArchTag::VGG => LossKind::Mse,
        }
    }
}

/// Concatenated masks as 0/1 values, in batch order.
pub fn mask_targets(masks: &[&BinaryMask]) -> Vec<f64> {
    masks.iter().flat_map(|m| m.to_f64()).collect()
}

/// `1 − (2 Σ p·t + s) / (Σ p + Σ t + s)` over the whole batch.
pub fn dice_loss(graph: &mut Graph, pred: Var, targets: &[&BinaryMask], smooth: f64) -> Result<Var> {
    let t = mask_targets(targets);
    graph.dice_loss(pred, &t, smooth)
}

/// Mean squared error against target lengths in pixels.
pub fn mse_loss(graph: &mut Graph, pred: Var, target_px: &[f64]) -> Result<Var> {
    graph.mse_loss(pred, target_px)
}

/// Dice loss of a probability map against one mask, without a graph.
pub fn dice_loss_value(pred: &Tensor, target: &BinaryMask, smooth: f64) -> Result<f64> {
    ensure!(
        pred.numel() == target.height() * target.width(),
        Shape,
        "prediction has {} values, mask {}",
        pred.numel(),
        target.height() * target.width()
    );
    let p = pred.data();
    let t = target.to_f64();
    let inter: f64 = p.iter().zip(&t).map(|(a, b)| a * b).sum();
    let denom = p.iter().sum::<f64>() + t.iter().sum::<f64>() + smooth;
    ensure!(denom > 0.0, InvalidArgument, "dice denominator is zero");
    Ok(1.0 - (2.0 * inter + smooth) / denom)
}
