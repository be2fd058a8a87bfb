use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{
    build_mlp, AutodiffError, Checkpoint, Dense, DenseMatrix, Init, Mlp, NodeId, ParameterStore,
    Partition, Tape,
};

/// Layer sizes of a [`BiasAwareModel`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub input_dim: usize,
    /// Hidden widths of the backbone before the feature layer.
    pub hidden: Vec<usize>,
    /// Feature size `r` shared by the backbone output and the projection output.
    pub feature_dim: usize,
    pub num_classes: usize,
    /// Bias embedding size `d`.
    pub embed_dim: usize,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<(), AutodiffError> {
        if self.input_dim == 0
            || self.feature_dim == 0
            || self.embed_dim == 0
            || self.hidden.contains(&0)
        {
            return Err(AutodiffError::Shape(format!(
                "model dimensions must be positive: {self:?}"
            )));
        }
        if self.num_classes < 2 {
            return Err(AutodiffError::Shape(format!(
                "need at least 2 classes, got {}",
                self.num_classes
            )));
        }
        Ok(())
    }
}

/// Logits of one batch: main branch, bias branch and their sum.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchLogits {
    pub z_main: DenseMatrix,
    pub z_tag: DenseMatrix,
    pub z: DenseMatrix,
}

/// Main classifier `head ∘ backbone` plus a projection `g` of bias
/// embeddings into the backbone's feature space.
///
/// The bias branch reuses the head's weight matrix: `z_tag = W_head · g(e)`.
/// The head bias is applied once, on the main branch, so a zero embedding
/// contributes exactly zero bias logits and `z = z_main + z_tag` still holds
/// elementwise.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasAwareModel {
    spec: ModelSpec,
    store: ParameterStore,
    backbone: Mlp,
    head: Dense,
    projection: Dense,
}

impl BiasAwareModel {
    /// Seeded fan-in scaled initialization. Parameters are drawn in the order
    /// backbone, head, projection, so the main classifier's initial values do
    /// not depend on `embed_dim`.
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self, AutodiffError> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParameterStore::new();
        let mut dims = vec![spec.input_dim];
        dims.extend_from_slice(&spec.hidden);
        dims.push(spec.feature_dim);
        let backbone = build_mlp(
            &mut store,
            "backbone",
            Partition::Backbone,
            &dims,
            true,
            &mut rng,
        )?;
        let head = Dense::new(
            &mut store,
            "head",
            Partition::Head,
            spec.feature_dim,
            spec.num_classes,
            true,
            Init::LeCun,
            &mut rng,
        )?;
        let projection = Dense::new(
            &mut store,
            "projection",
            Partition::Projection,
            spec.embed_dim,
            spec.feature_dim,
            false,
            Init::LeCun,
            &mut rng,
        )?;
        Ok(Self {
            spec,
            store,
            backbone,
            head,
            projection,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn store(&self) -> &ParameterStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParameterStore {
        &mut self.store
    }

    pub fn head(&self) -> &Dense {
        &self.head
    }

    pub fn projection(&self) -> &Dense {
        &self.projection
    }

    /// Records `z_main = head(backbone(x))` on `tape`.
    pub fn record_main(&self, tape: &mut Tape, x: NodeId) -> Result<NodeId, AutodiffError> {
        let cols = tape.value(x).cols();
        if cols != self.spec.input_dim {
            return Err(AutodiffError::Shape(format!(
                "features have {cols} columns, model expects {}",
                self.spec.input_dim
            )));
        }
        let h = self.backbone.forward(tape, &self.store, x)?;
        self.head.forward(tape, &self.store, h)
    }

    /// Records `z_tag = W_head · projection(e)` on `tape`.
    pub fn record_tag(&self, tape: &mut Tape, e: NodeId) -> Result<NodeId, AutodiffError> {
        let cols = tape.value(e).cols();
        if cols != self.spec.embed_dim {
            return Err(AutodiffError::Shape(format!(
                "bias embeddings have {cols} columns, model expects {}",
                self.spec.embed_dim
            )));
        }
        let b = self.projection.forward(tape, &self.store, e)?;
        self.head.forward_weight_only(tape, &self.store, b)
    }

    /// Both branches and their sum for a batch.
    pub fn forward_combined(
        &self,
        x: &DenseMatrix,
        e: &DenseMatrix,
    ) -> Result<BatchLogits, AutodiffError> {
        if x.rows() != e.rows() {
            return Err(AutodiffError::Shape(format!(
                "{} feature rows but {} embedding rows",
                x.rows(),
                e.rows()
            )));
        }
        let mut tape = Tape::new();
        let xn = tape.constant(x.clone());
        let en = tape.constant(e.clone());
        let zm = self.record_main(&mut tape, xn)?;
        let zt = self.record_tag(&mut tape, en)?;
        let z = tape.add(zm, zt)?;
        Ok(BatchLogits {
            z_main: tape.value(zm).clone(),
            z_tag: tape.value(zt).clone(),
            z: tape.value(z).clone(),
        })
    }

    /// Main-branch logits. No bias embedding is involved.
    pub fn main_logits(&self, x: &DenseMatrix) -> Result<DenseMatrix, AutodiffError> {
        let mut tape = Tape::new();
        let xn = tape.constant(x.clone());
        let zm = self.record_main(&mut tape, xn)?;
        Ok(tape.value(zm).clone())
    }

    pub fn tag_logits(&self, e: &DenseMatrix) -> Result<DenseMatrix, AutodiffError> {
        let mut tape = Tape::new();
        let en = tape.constant(e.clone());
        let zt = self.record_tag(&mut tape, en)?;
        Ok(tape.value(zt).clone())
    }

    /// Inference path: argmax of `z_main`, together with the logits.
    pub fn predict(&self, x: &DenseMatrix) -> Result<(Vec<usize>, DenseMatrix), AutodiffError> {
        let z = self.main_logits(x)?;
        Ok((z.row_argmax(), z))
    }

    pub fn to_checkpoint(&self, extra: serde_json::Value) -> Checkpoint {
        let metadata = serde_json::json!({
            "model": self.spec,
            "run": extra,
        });
        Checkpoint::from_store(&self.store, metadata)
    }

    /// Rebuilds a model from a checkpoint written by [`Self::to_checkpoint`].
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, AutodiffError> {
        let spec: ModelSpec = serde_json::from_value(ck.metadata["model"].clone())
            .map_err(|e| AutodiffError::Checkpoint(format!("model spec: {e}")))?;
        let mut model = Self::new(spec, 0)?;
        ck.load_into(&mut model.store)?;
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> ModelSpec {
        ModelSpec {
            input_dim: 3,
            hidden: vec![8],
            feature_dim: 6,
            num_classes: 2,
            embed_dim: 4,
        }
    }

    #[test]
    fn zero_embedding_gives_zero_bias_logits() {
        let model = BiasAwareModel::new(spec(), 3).unwrap();
        let x = DenseMatrix::from_rows(&[vec![0.2, -1.0, 0.5]]).unwrap();
        let e = DenseMatrix::zeros(1, 4);
        let out = model.forward_combined(&x, &e).unwrap();
        assert!(out.z_tag.as_slice().iter().all(|v| *v == 0.0));
        assert_eq!(out.z, out.z_main);
    }

    #[test]
    fn combined_is_elementwise_sum() {
        let model = BiasAwareModel::new(spec(), 5).unwrap();
        let x = DenseMatrix::from_rows(&[vec![0.2, -1.0, 0.5], vec![1.0, 1.0, 1.0]]).unwrap();
        let e =
            DenseMatrix::from_rows(&[vec![0.5, 0.5, 0.5, 0.5], vec![1.0, 0.0, 0.0, 0.0]]).unwrap();
        let out = model.forward_combined(&x, &e).unwrap();
        for i in 0..out.z.len() {
            assert_eq!(
                out.z.as_slice()[i],
                out.z_main.as_slice()[i] + out.z_tag.as_slice()[i]
            );
        }
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let model = BiasAwareModel::new(spec(), 0).unwrap();
        let x = DenseMatrix::zeros(1, 2);
        assert!(model.main_logits(&x).is_err());
        let e = DenseMatrix::zeros(1, 3);
        assert!(model.tag_logits(&e).is_err());
    }

    #[test]
    fn predict_ignores_projection() {
        let mut model = BiasAwareModel::new(spec(), 11).unwrap();
        let x = DenseMatrix::from_rows(&[vec![0.3, 0.1, -2.0], vec![-1.0, 2.0, 0.0]]).unwrap();
        let before = model.predict(&x).unwrap();
        let pid = model.projection().weight;
        model.store_mut().get_mut(pid).value.fill(123.0);
        assert_eq!(model.predict(&x).unwrap(), before);
    }

    #[test]
    fn checkpoint_round_trip() {
        let model = BiasAwareModel::new(spec(), 2).unwrap();
        let ck = model.to_checkpoint(serde_json::json!({"mode": "mavias"}));
        let back = BiasAwareModel::from_checkpoint(&ck).unwrap();
        assert_eq!(back, model);
    }
}
