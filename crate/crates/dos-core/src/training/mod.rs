//! Optimization: Adam, the step learning-rate schedule, and the
//! two-stage training loops with parameter freezing.

mod adam;
mod loops;

pub use adam::{adam_step, lr_at, AdamState};
pub use loops::{
    train_head, train_stage1, EpochStats, HeadObjective, TrainConfig, TrainOutcome,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("non-finite gradient for parameter {param}")]
    NonFiniteGradient { param: String },
    #[error("autodiff error: {0}")]
    Autodiff(#[from] crate::autodiff::AutodiffError),
}
