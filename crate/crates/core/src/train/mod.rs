//! Losses, metrics, the Adam optimizer and the training loop.

mod adam;
mod data;
mod fit;
mod loss;
mod metrics;

pub use adam::{adam_step, AdamState, BETA1, BETA2, EPSILON};
pub use data::{prepare_input, prepare_target, stack, PairSet, INPUT_SCHEME, TARGET_SCHEME};
pub use fit::{evaluate, fit, fit_with, predict_set, EpochLog, FitOutcome, TrainConfig};
pub use loss::{loss_mae, loss_mse, loss_ssim, loss_ssim_grad, mixed_loss, ssim, LossWeights, MixedLoss, SsimConfig};
pub use metrics::{format_table, r2_score, ComparisonRow, MetricsRecord};
