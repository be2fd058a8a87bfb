//! Minimal reverse-mode automatic differentiation over dense layers.

mod checkpoint;
mod gradcheck;
mod layers;
mod matrix;
mod optim;
mod params;
mod tape;

pub use checkpoint::{Checkpoint, ParameterRecord, CHECKPOINT_FORMAT_VERSION};
pub use gradcheck::{finite_difference_check, GradCheckOptions, GradCheckReport};
pub use layers::{build_mlp, mlp_forward, Dense, Init, Mlp};
pub use matrix::{argmax, l2_norm, DenseMatrix};
pub use optim::{Optimizer, OptimizerConfig};
pub use params::{ParamId, Parameter, ParameterStore, Partition};
pub use tape::{softmax, softmax_cross_entropy, NodeId, Tape};

#[derive(Debug, thiserror::Error)]
pub enum AutodiffError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("invalid optimizer config: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}
