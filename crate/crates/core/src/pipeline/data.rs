use std::collections::HashMap;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::autodiff::DenseMatrix;
use crate::discovery::{
    read_jsonl, write_jsonl, DiscoveryError, EmbeddingRecord, TagRecord, TaggerClient,
};
use crate::synth::BiasedSample;

pub const DATASET_FORMAT_VERSION: u32 = 1;

/// `meta.json` of a dataset directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub format_version: u32,
    pub classes: Vec<String>,
    /// Names of the known bias values, if the data has bias labels.
    #[serde(default)]
    pub bias_values: Option<Vec<String>>,
    pub feature_dim: usize,
}

/// One line of `train.jsonl` / `test.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetRecord {
    pub id: String,
    pub label: usize,
    pub features: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tags: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias_embedding: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aligned: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

pub fn meta_path(data_dir: &Path) -> PathBuf {
    data_dir.join("meta.json")
}

pub fn split_path(data_dir: &Path, split: Split) -> PathBuf {
    data_dir.join(format!("{}.jsonl", split.name()))
}

pub fn tags_path(discovery_dir: &Path, split: Split) -> PathBuf {
    discovery_dir.join(format!("{}.tags.jsonl", split.name()))
}

pub fn embeddings_path(discovery_dir: &Path, split: Split) -> PathBuf {
    discovery_dir.join(format!("{}.embeddings.jsonl", split.name()))
}

fn open(path: &Path) -> Result<BufReader<File>, PipelineError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| PipelineError::input(path, e))
}

/// Creates the parent directory and writes `bytes`.
pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| PipelineError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| PipelineError::io(path, e))?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

pub fn write_records<T: Serialize>(path: &Path, records: &[T]) -> Result<(), PipelineError> {
    let mut buf = Vec::new();
    write_jsonl(records, &mut buf).map_err(|e| PipelineError::io(path, e))?;
    write_file(path, &buf)
}

pub fn read_records<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, PipelineError> {
    read_jsonl(open(path)?).map_err(|e| PipelineError::input(path, e))
}

pub fn read_meta(data_dir: &Path) -> Result<DatasetMeta, PipelineError> {
    let path = meta_path(data_dir);
    let meta: DatasetMeta =
        serde_json::from_reader(open(&path)?).map_err(|e| PipelineError::input(&path, e))?;
    if meta.format_version != DATASET_FORMAT_VERSION {
        return Err(PipelineError::input(
            &path,
            format!("unsupported format_version {}", meta.format_version),
        ));
    }
    if meta.classes.len() < 2 {
        return Err(PipelineError::input(&path, "need at least two classes"));
    }
    Ok(meta)
}

/// A loaded split, checked against its metadata.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub split: Split,
    pub records: Vec<DatasetRecord>,
}

impl Dataset {
    pub fn load(data_dir: &Path, split: Split) -> Result<Self, PipelineError> {
        let meta = read_meta(data_dir)?;
        let path = split_path(data_dir, split);
        let records: Vec<DatasetRecord> = read_records(&path)?;
        if records.is_empty() {
            return Err(PipelineError::input(&path, "split has no records"));
        }
        let num_bias = meta.bias_values.as_ref().map(Vec::len);
        for r in &records {
            let bad = if r.label >= meta.classes.len() {
                Some(format!("label {} out of range", r.label))
            } else if r.features.len() != meta.feature_dim {
                Some(format!(
                    "{} features, expected {}",
                    r.features.len(),
                    meta.feature_dim
                ))
            } else if r.features.iter().any(|v| !v.is_finite()) {
                Some("non-finite feature".into())
            } else {
                match (r.bias, num_bias) {
                    (Some(b), Some(n)) if b >= n => Some(format!("bias {b} out of range")),
                    (Some(_), None) => Some("bias label but no bias_values in meta".into()),
                    _ => None,
                }
            };
            if let Some(m) = bad {
                return Err(PipelineError::input(&path, format!("record {}: {m}", r.id)));
            }
        }
        Ok(Self {
            meta,
            split,
            records,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.label).collect()
    }

    pub fn features(&self) -> DenseMatrix {
        let rows: Vec<&[f64]> = self.records.iter().map(|r| r.features.as_slice()).collect();
        DenseMatrix::from_rows(&rows).expect("validated on load")
    }

    /// Bias labels and alignment flags, if every record carries both.
    pub fn bias_labels(&self) -> Option<(Vec<usize>, Vec<bool>)> {
        self.records
            .iter()
            .map(|r| Some((r.bias?, r.aligned?)))
            .collect::<Option<Vec<_>>>()
            .map(|v| v.into_iter().unzip())
    }

    /// Embeddings stored in the records. Every record must have one of the
    /// same width.
    pub fn record_embeddings(&self, data_dir: &Path) -> Result<DenseMatrix, PipelineError> {
        let path = split_path(data_dir, self.split);
        let rows = self
            .records
            .iter()
            .map(|r| {
                r.bias_embedding.as_deref().ok_or_else(|| {
                    PipelineError::input(&path, format!("record {} has no bias_embedding", r.id))
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        DenseMatrix::from_rows(&rows).map_err(|e| PipelineError::input(&path, e))
    }

    /// Embeddings from a discovery file; samples without a line get zeros.
    pub fn discovered_embeddings(
        &self,
        discovery_dir: &Path,
    ) -> Result<DenseMatrix, PipelineError> {
        let path = embeddings_path(discovery_dir, self.split);
        let recs: Vec<EmbeddingRecord> = read_records(&path)?;
        let dim = match recs.first() {
            Some(r) => r.dim,
            None => return Err(PipelineError::input(&path, "no embeddings")),
        };
        let mut by_id = HashMap::with_capacity(recs.len());
        for r in &recs {
            if r.dim != dim || r.values.len() != dim {
                return Err(PipelineError::input(
                    &path,
                    format!("embedding of {} does not have width {dim}", r.id),
                ));
            }
            by_id.insert(r.id.as_str(), r.values.as_slice());
        }
        let mut m = DenseMatrix::zeros(self.len(), dim);
        for (i, r) in self.records.iter().enumerate() {
            if let Some(v) = by_id.get(r.id.as_str()) {
                m.row_mut(i).copy_from_slice(v);
            }
        }
        Ok(m)
    }

    /// Irrelevant tags per record, in record order, from a discovery tag file.
    pub fn irrelevant_tags(&self, discovery_dir: &Path) -> Result<Vec<Vec<String>>, PipelineError> {
        let path = tags_path(discovery_dir, self.split);
        let recs: Vec<TagRecord> = read_records(&path)?;
        let mut by_id: HashMap<String, Vec<String>> = recs
            .into_iter()
            .map(|r| (r.id, r.irrelevant_tags.unwrap_or_default()))
            .collect();
        self.records
            .iter()
            .map(|r| {
                by_id.remove(&r.id).ok_or_else(|| {
                    PipelineError::input(&path, format!("no tag record for sample {}", r.id))
                })
            })
            .collect()
    }
}

/// Serves the `tags` stored in dataset records.
pub struct RecordTagger {
    tags: HashMap<String, Vec<String>>,
}

impl RecordTagger {
    pub fn new(splits: &[&Dataset]) -> Self {
        let tags = splits
            .iter()
            .flat_map(|d| d.records.iter())
            .filter_map(|r| Some((r.id.clone(), r.tags.clone()?)))
            .collect();
        Self { tags }
    }
}

impl TaggerClient for RecordTagger {
    fn raw_tags(&self, image_ref: &str) -> Result<Vec<String>, DiscoveryError> {
        self.tags.get(image_ref).cloned().ok_or_else(|| {
            DiscoveryError::Contract(format!("dataset record {image_ref} has no tags"))
        })
    }
}

/// Dataset records of generated samples. Each record is tagged with its
/// class name and its bias value's name.
pub fn records_from_samples(
    samples: &[BiasedSample],
    split: Split,
    classes: &[String],
    bias_values: &[String],
) -> Vec<DatasetRecord> {
    let width = samples.len().max(1).to_string().len();
    samples
        .iter()
        .enumerate()
        .map(|(i, s)| DatasetRecord {
            id: format!("{}-{i:0width$}", split.name()),
            label: s.label,
            features: s.features.clone(),
            tags: Some(vec![classes[s.label].clone(), bias_values[s.bias].clone()]),
            bias_embedding: Some(s.bias_embedding.clone()),
            aligned: Some(s.aligned),
            bias: Some(s.bias),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_two_moons_3d, TwoMoons3DConfig, MOON_BIAS_TAGS, MOON_CLASSES};

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn write_moons(dir: &Path, n: usize) {
        let samples = generate_two_moons_3d(&TwoMoons3DConfig {
            n,
            ..Default::default()
        })
        .unwrap();
        let classes = names(&MOON_CLASSES);
        let meta = DatasetMeta {
            format_version: DATASET_FORMAT_VERSION,
            classes: classes.clone(),
            bias_values: Some(names(&MOON_BIAS_TAGS)),
            feature_dim: 3,
        };
        write_json(&meta_path(dir), &meta).unwrap();
        let recs = records_from_samples(&samples, Split::Train, &classes, &names(&MOON_BIAS_TAGS));
        write_records(&split_path(dir, Split::Train), &recs).unwrap();
    }

    #[test]
    fn roundtrip_split() {
        let dir = tempfile::tempdir().unwrap();
        write_moons(dir.path(), 20);
        let d = Dataset::load(dir.path(), Split::Train).unwrap();
        assert_eq!(d.len(), 20);
        assert_eq!(d.records[3].id, "train-03");
        assert_eq!(d.features().shape(), (20, 3));
        assert_eq!(d.record_embeddings(dir.path()).unwrap().shape(), (20, 1));
        let (bias, aligned) = d.bias_labels().unwrap();
        assert_eq!(bias.len(), 20);
        assert_eq!(aligned.iter().filter(|a| **a).count(), 19);
        let tags = d.records[0].tags.as_ref().unwrap();
        assert_eq!(tags[0], "upper moon");
    }

    #[test]
    fn missing_and_malformed_inputs_name_the_path() {
        let dir = tempfile::tempdir().unwrap();
        match Dataset::load(dir.path(), Split::Train) {
            Err(e @ PipelineError::Input { .. }) => {
                assert!(e.to_string().contains("meta.json"), "{e}")
            }
            other => panic!("{other:?}"),
        }
        write_moons(dir.path(), 4);
        let path = split_path(dir.path(), Split::Train);
        std::fs::write(&path, "{\"id\":\"a\",\"label\":5,\"features\":[0,0,0]}\n").unwrap();
        match Dataset::load(dir.path(), Split::Train) {
            Err(e @ PipelineError::Input { .. }) => assert!(e.to_string().contains("label 5")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn discovered_embeddings_fill_zeros() {
        let dir = tempfile::tempdir().unwrap();
        write_moons(dir.path(), 4);
        let d = Dataset::load(dir.path(), Split::Train).unwrap();
        let recs = vec![EmbeddingRecord {
            id: "train-1".into(),
            dim: 2,
            values: vec![0.6, 0.8],
        }];
        write_records(&embeddings_path(dir.path(), Split::Train), &recs).unwrap();
        let m = d.discovered_embeddings(dir.path()).unwrap();
        assert_eq!(m.row(1), [0.6, 0.8]);
        assert_eq!(m.row(0), [0.0, 0.0]);
    }
}
