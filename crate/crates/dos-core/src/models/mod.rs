//! Trainable models: the trajectory predictor and the set-prediction
//! heads, plus parameter storage and checkpoints.

mod batch;
mod heads;
mod layers;
mod params;
mod predictor;

pub use batch::Batch;
pub use heads::{
    dos_to_ellipses, gaussian_to_moments, head_forward_frozen, interpret_dos, interpret_gaussian,
    interpret_radius, DosStepVars, DosVariant, GaussStepVars, HeadConfig, HeadForward, HeadKind,
    TwoBranchHead,
};
pub use layers::{GruSpec, LinearSpec};
pub use params::{BoundParams, ParamStore};
pub use predictor::{
    error_stats, predict_batch, PredictorConfig, PredictorForward, ScenePrediction,
    TrajectoryPredictor,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("autodiff error: {0}")]
    Autodiff(#[from] crate::autodiff::AutodiffError),
    #[error("empty sample set: {0}")]
    EmptySample(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}
