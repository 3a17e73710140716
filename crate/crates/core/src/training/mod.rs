//! Losses, the Adam optimizer and the mini-batch training loop.

mod adam;
mod io;
mod loss;
mod plan;
mod trainer;

pub use adam::{adam_step, OptimState};
pub use io::{read_loss_curve, write_loss_curve, write_sidecar};
pub use loss::{dice_loss, dice_loss_value, mask_targets, mse_loss, LossKind, DICE_SMOOTH};
pub use plan::{TrainPlan, DEFAULT_BATCH_SIZE, DEFAULT_EPOCHS, DESK_LEARNING_RATE, PAPER_LEARNING_RATE};
pub use trainer::{
    batch_tensor, mean_spacing, predict_lengths_px, predict_probabilities, train, train_with, TrainExample, TrainReport,
};
