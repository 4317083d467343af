//! Training: initialization, schedule, Adam, augmentation, the training
//! loop and the repeatability harness.

mod data;
mod harness;
pub mod init;
mod optim;
mod run;

pub use data::{augment, collect_samples, Flip, Sample};
pub use harness::{evaluate_cases, repeatability_harness, ReproRow, ReproTable};
pub use init::{init_weights, TruncatedNormal, INIT_BIAS, INIT_STD};
pub use optim::{adam_step, cosine_lr, AdamParams, AdamState};
pub use run::{
    apply_gradients, loss_and_gradients, train, train_with, EpochLoss, TrainConfig, TrainOutcome,
};
