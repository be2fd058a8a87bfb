//! File-based end-to-end runs: dataset generation, discovery, training,
//! evaluation and diagnostics, driven by one TOML configuration.

mod commands;
mod config;
mod data;

pub use commands::{
    run_diagnose, run_discover, run_eval, run_synth, run_train, DiagnoseSummary, EvalSummary,
    TrainSummary,
};
pub use config::{
    DatasetKind, DiscoverConfig, EmbeddingConfig, EmbeddingSource, EvalConfig, PathsConfig,
    RelevanceConfig, RunConfig, SynthConfig, TaggerConfig, TrainConfig, CONFIG_FORMAT_VERSION,
};
pub use data::{
    embeddings_path, meta_path, records_from_samples, split_path, tags_path, Dataset, DatasetMeta,
    DatasetRecord, RecordTagger, Split, DATASET_FORMAT_VERSION,
};

use std::fmt::Display;
use std::path::{Path, PathBuf};

use crate::autodiff::AutodiffError;
use crate::discovery::DiscoveryError;
use crate::evaluation::EvalError;
use crate::synth::SynthError;
use crate::trainer::TrainError;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    /// A required input file is missing or malformed.
    #[error("{}: {message}", path.display())]
    Input { path: PathBuf, message: String },
    #[error("cannot write {}: {message}", path.display())]
    Io { path: PathBuf, message: String },
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Discovery(#[from] DiscoveryError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

impl PipelineError {
    pub(crate) fn input(path: &Path, message: impl Display) -> Self {
        PipelineError::Input {
            path: path.to_path_buf(),
            message: message.to_string(),
        }
    }

    pub(crate) fn io(path: &Path, message: impl Display) -> Self {
        PipelineError::Io {
            path: path.to_path_buf(),
            message: message.to_string(),
        }
    }

    /// Process exit code: 2 for bad configuration or input, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_)
            | PipelineError::Input { .. }
            | PipelineError::Synth(_)
            | PipelineError::Train(TrainError::Config(_)) => 2,
            _ => 1,
        }
    }
}
