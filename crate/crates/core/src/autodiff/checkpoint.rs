//! JSON checkpoint format.
//!
//! ```json
//! {
//!   "format_version": 1,
//!   "metadata": { ... },
//!   "parameters": [
//!     { "name": "backbone.0.weight", "partition": "backbone",
//!       "rows": 32, "cols": 3, "values": [ ... row-major ... ] }
//!   ]
//! }
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AutodiffError, DenseMatrix, ParameterStore, Partition};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParameterRecord {
    pub name: String,
    pub partition: Partition,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    #[serde(default)]
    pub metadata: serde_json::Value,
    pub parameters: Vec<ParameterRecord>,
}

impl Checkpoint {
    pub fn from_store(store: &ParameterStore, metadata: serde_json::Value) -> Self {
        Self {
            format_version: CHECKPOINT_FORMAT_VERSION,
            metadata,
            parameters: store
                .iter()
                .map(|p| ParameterRecord {
                    name: p.name.clone(),
                    partition: p.partition,
                    rows: p.value.rows(),
                    cols: p.value.cols(),
                    values: p.value.as_slice().to_vec(),
                })
                .collect(),
        }
    }

    /// Overwrites the values of `store` from this checkpoint. Every parameter
    /// must be present with a matching shape and partition.
    pub fn load_into(&self, store: &mut ParameterStore) -> Result<(), AutodiffError> {
        if self.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(AutodiffError::Checkpoint(format!(
                "unsupported format_version {} (expected {CHECKPOINT_FORMAT_VERSION})",
                self.format_version
            )));
        }
        if self.parameters.len() != store.len() {
            return Err(AutodiffError::Checkpoint(format!(
                "checkpoint has {} parameters, model has {}",
                self.parameters.len(),
                store.len()
            )));
        }
        for rec in &self.parameters {
            let id = store.id_of(&rec.name).ok_or_else(|| {
                AutodiffError::Checkpoint(format!("unknown parameter `{}`", rec.name))
            })?;
            let p = store.get_mut(id);
            if p.partition != rec.partition || p.value.shape() != (rec.rows, rec.cols) {
                return Err(AutodiffError::Checkpoint(format!(
                    "parameter `{}` is {:?} {:?} in the model but {:?} {:?} in the checkpoint",
                    rec.name,
                    p.partition,
                    p.value.shape(),
                    rec.partition,
                    (rec.rows, rec.cols)
                )));
            }
            p.value = DenseMatrix::from_vec(rec.rows, rec.cols, rec.values.clone())?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serializes")
    }

    pub fn save(&self, path: &Path) -> Result<(), AutodiffError> {
        std::fs::write(path, self.to_json())
            .map_err(|e| AutodiffError::Checkpoint(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, AutodiffError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| AutodiffError::Checkpoint(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| AutodiffError::Checkpoint(format!("{}: {e}", path.display())))
    }
}
