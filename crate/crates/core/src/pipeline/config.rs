use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::autodiff::OptimizerConfig;
use crate::discovery::AggregationMode;
use crate::synth::{BlobsConfig, TwoMoons3DConfig};
use crate::trainer::{LrSchedule, TrainingMode};

pub const CONFIG_FORMAT_VERSION: u32 = 1;

/// Whole-run configuration, read from TOML. Every section has defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub format_version: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub paths: PathsConfig,
    #[serde(default)]
    pub synth: SynthConfig,
    #[serde(default)]
    pub discover: DiscoverConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            format_version: CONFIG_FORMAT_VERSION,
            seed: 0,
            paths: PathsConfig::default(),
            synth: SynthConfig::default(),
            discover: DiscoverConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        if cfg.format_version != CONFIG_FORMAT_VERSION {
            return Err(PipelineError::Config(format!(
                "unsupported format_version {} (expected {CONFIG_FORMAT_VERSION})",
                cfg.format_version
            )));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::Input {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Self::from_toml(&text).map_err(|e| match e {
            PipelineError::Config(m) => PipelineError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Dataset directory: `meta.json`, `train.jsonl`, `test.jsonl`.
    pub data_dir: PathBuf,
    /// Discovery output: tag and embedding files per split.
    pub discovery_dir: PathBuf,
    /// Training, evaluation and diagnostic outputs.
    pub out_dir: PathBuf,
    /// Checkpoint to evaluate or diagnose. Defaults to `out_dir/checkpoint.json`.
    pub checkpoint: Option<PathBuf>,
    /// Vanilla checkpoint whose predictions define the biased tags.
    /// Defaults to the evaluated checkpoint.
    pub reference_checkpoint: Option<PathBuf>,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            data_dir: "data".into(),
            discovery_dir: "discovery".into(),
            out_dir: "run".into(),
            checkpoint: None,
            reference_checkpoint: None,
        }
    }
}

impl PathsConfig {
    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint
            .clone()
            .unwrap_or_else(|| self.out_dir.join("checkpoint.json"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetKind {
    TwoMoons3d(TwoMoons3DConfig),
    Blobs(BlobsConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub dataset: DatasetKind,
    pub test_samples: usize,
    /// Alignment rate of the test split; defaults to `1 / #bias values`
    /// (bias independent of the label).
    pub test_align_rate: Option<f64>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetKind::TwoMoons3d(TwoMoons3DConfig::default()),
            test_samples: 4000,
            test_align_rate: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TaggerConfig {
    /// Use the `tags` field of each dataset record.
    Dataset,
    Mock {
        vocabulary: Vec<String>,
        min_tags: usize,
        max_tags: usize,
    },
    Http {
        endpoint: String,
        #[serde(default)]
        api_key_env: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RelevanceConfig {
    /// Offline judge; classes without keywords use the words of their name.
    Keyword {
        #[serde(default)]
        keywords: BTreeMap<String, Vec<String>>,
    },
    Http {
        endpoint: String,
        model: String,
        #[serde(default)]
        api_key_env: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EmbeddingConfig {
    Mock {
        dim: usize,
    },
    Http {
        endpoint: String,
        model: String,
        dim: usize,
        #[serde(default)]
        api_key_env: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscoverConfig {
    pub tagger: TaggerConfig,
    pub relevance: RelevanceConfig,
    pub embedding: EmbeddingConfig,
    pub aggregation: AggregationMode,
    pub max_in_flight: usize,
    pub retries: usize,
    pub timeout_secs: u64,
}

impl Default for DiscoverConfig {
    fn default() -> Self {
        Self {
            tagger: TaggerConfig::Dataset,
            relevance: RelevanceConfig::Keyword {
                keywords: BTreeMap::new(),
            },
            embedding: EmbeddingConfig::Mock { dim: 8 },
            aggregation: AggregationMode::Collectively,
            max_in_flight: 4,
            retries: 2,
            timeout_secs: 60,
        }
    }
}

/// Where training takes bias embeddings from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingSource {
    /// Files written by `discover`; samples without one get zeros.
    Discovered,
    /// The `bias_embedding` field of the dataset records.
    Dataset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: TrainingMode,
    pub optimizer: OptimizerConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_schedule: LrSchedule,
    pub hidden: Vec<usize>,
    pub feature_dim: usize,
    pub embeddings: EmbeddingSource,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: TrainingMode::Mavias {
                alpha: 0.05,
                lambda: 0.3,
            },
            optimizer: OptimizerConfig::Sgd {
                lr: 0.1,
                momentum: 0.0,
                weight_decay: 0.0,
            },
            epochs: 4,
            batch_size: 256,
            lr_schedule: LrSchedule::Constant,
            hidden: vec![64],
            feature_dim: 16,
            embeddings: EmbeddingSource::Discovered,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub min_support: usize,
    pub top_k: usize,
    pub export_logits: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            min_support: crate::evaluation::DEFAULT_MIN_SUPPORT,
            top_k: 10,
            export_logits: false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_roundtrips_through_toml() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn rejects_unknown_keys_and_versions() {
        assert!(RunConfig::from_toml("format_version = 1\nbogus = 3\n").is_err());
        assert!(RunConfig::from_toml("format_version = 2\n").is_err());
        assert!(RunConfig::from_toml("seed = 1\n").is_err());
        let nested = "format_version = 1\n[train]\nepochs = 3\nwhat = 1\n";
        assert!(RunConfig::from_toml(nested).is_err());
    }

    #[test]
    fn partial_sections_fill_defaults() {
        let text = r#"
format_version = 1
seed = 4
[train]
mode = { kind = "mavias", alpha = 0.05, lambda = 0.6 }
optimizer = { kind = "adam", lr = 0.001 }
epochs = 3
batch_size = 32
hidden = [8]
feature_dim = 4
embeddings = "dataset"
"#;
        let cfg = RunConfig::from_toml(text).unwrap();
        assert_eq!(cfg.seed, 4);
        assert_eq!(cfg.train.hidden, [8]);
        assert_eq!(cfg.eval, EvalConfig::default());
    }
}
