//! Desk-scale two-stage trainer.
//!
//! Stage I maps rotated voxel grids to a `[shape | pose]` embedding with a
//! class head on the shape half and rotation bin/delta heads on the pose
//! half. Stage II maps shaded renders to the Stage I embedding of the
//! same object plus class, rotation and translation heads.

mod network;
mod toy;

pub use network::{
    adam_step, Activations, AdamState, ModelDims, ModelParams, ADAM_BETA1, ADAM_BETA2, ADAM_EPSILON,
};
pub use toy::{
    camera_for_translation, default_shape_specs, train_stage1, train_stage2, EpochRecord,
    ProbeResult, Stage1Result, Stage2Eval, Stage2Result, StageConfig, ToyConfig, ToyWorld,
    TRAJECTORY_CSV_HEADER,
};

use crate::losses::LossError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LearnerError {
    #[error("invalid config: {0}")]
    ConfigError(String),
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("non-finite parameter")]
    NonFinite,
    #[error(transparent)]
    Loss(#[from] LossError),
}
