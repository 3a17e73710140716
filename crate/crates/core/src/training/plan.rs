use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::preprocess::AugmentationSpec;

use super::{LossKind, DICE_SMOOTH};

pub const DEFAULT_EPOCHS: usize = 150;
pub const DEFAULT_BATCH_SIZE: usize = 4;
pub const DESK_LEARNING_RATE: f64 = 1e-3;
pub const PAPER_LEARNING_RATE: f64 = 1e-5;

/// How a model is trained; optimizer settings live in [`super::OptimState`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainPlan {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// `None` disables augmentation.
    pub augmentation: Option<AugmentationSpec>,
    pub loss: LossKind,
    pub dice_smooth: f64,
}

impl TrainPlan {
    pub fn new(loss: LossKind, seed: u64) -> Self {
        Self {
            epochs: DEFAULT_EPOCHS,
            batch_size: DEFAULT_BATCH_SIZE,
            seed,
            augmentation: Some(AugmentationSpec::default()),
            loss,
            dice_smooth: DICE_SMOOTH,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.batch_size >= 1, InvalidArgument, "batch size must be at least 1");
        ensure!(self.dice_smooth >= 0.0, InvalidArgument, "dice smoothing must be non-negative");
        if let Some(a) = &self.augmentation {
            a.validate()?;
        }
        Ok(())
    }

    /// Batches of shuffled indices. A trailing batch of one is folded into
    /// the previous batch, since batch norm cannot normalize a single vector.
    pub fn batches(&self, order: &[usize]) -> Vec<Vec<usize>> {
        let mut out: Vec<Vec<usize>> = order.chunks(self.batch_size).map(<[usize]>::to_vec).collect();
        if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
            let tail = out.pop().expect("non-empty");
            out.last_mut().expect("at least one").extend(tail);
        }
        out
    }
}
