//! Joint bias-aware training of the main classifier and the bias
//! projection, bias-free inference and training diagnostics.

mod config;
mod diagnostics;
mod loss;
mod model;
mod train;

pub use config::{LrSchedule, TrainerConfig, TrainingMode};
pub use diagnostics::{
    bias_branch_group_accuracy, gradient_diagnostic, per_sample_ce_grad_norms, BiasBranchGroupRow,
    GradientDiagnostic,
};
pub use loss::{alignment_loss, record_loss, LossNodes};
pub use model::{BatchLogits, BiasAwareModel, ModelSpec};
pub use train::{
    train, train_with_observer, write_metrics_csv, EpochMetrics, TrainOutcome, TrainingSet,
};

use crate::autodiff::AutodiffError;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid trainer config: {0}")]
    Config(String),
    #[error("invalid training data: {0}")]
    Data(String),
    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}
