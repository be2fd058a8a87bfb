use crate::autodiff::{l2_norm, AutodiffError, DenseMatrix, NodeId, Tape};

use super::{BiasAwareModel, TrainingMode};

/// Per-sample logit alignment `½ (‖z_main‖ − λ‖z_tag‖)²`.
pub fn alignment_loss(z_main: &[f64], z_tag: &[f64], lambda: f64) -> Result<f64, AutodiffError> {
    if z_main.len() != z_tag.len() {
        return Err(AutodiffError::Shape(format!(
            "z_main has {} entries, z_tag {}",
            z_main.len(),
            z_tag.len()
        )));
    }
    let d = l2_norm(z_main) - lambda * l2_norm(z_tag);
    Ok(0.5 * d * d)
}

/// Nodes of one recorded loss evaluation.
#[derive(Debug, Clone, Copy)]
pub struct LossNodes {
    pub total: NodeId,
    pub cls: NodeId,
    pub align: Option<NodeId>,
    pub z_main: NodeId,
    pub z_tag: Option<NodeId>,
    /// Logits the classification loss is computed on.
    pub z: NodeId,
}

/// Records the training objective on `tape`.
///
/// Vanilla: mean CE of `z_main`. Mavias: mean CE of `z = z_main + z_tag`
/// plus `alpha` times the batch mean of the alignment term; both terms
/// reach the backbone, head and projection.
pub fn record_loss(
    tape: &mut Tape,
    model: &BiasAwareModel,
    x: &DenseMatrix,
    e: &DenseMatrix,
    labels: &[usize],
    mode: TrainingMode,
) -> Result<LossNodes, AutodiffError> {
    if labels.is_empty() {
        return Err(AutodiffError::Contract("empty batch".into()));
    }
    let xn = tape.constant(x.clone());
    let z_main = model.record_main(tape, xn)?;
    match mode {
        TrainingMode::Vanilla => {
            let cls = tape.cross_entropy_mean(z_main, labels)?;
            Ok(LossNodes {
                total: cls,
                cls,
                align: None,
                z_main,
                z_tag: None,
                z: z_main,
            })
        }
        TrainingMode::Mavias { alpha, lambda } => {
            if e.rows() != x.rows() {
                return Err(AutodiffError::Shape(format!(
                    "{} feature rows but {} embedding rows",
                    x.rows(),
                    e.rows()
                )));
            }
            let en = tape.constant(e.clone());
            let z_tag = model.record_tag(tape, en)?;
            let z = tape.add(z_main, z_tag)?;
            let cls = tape.cross_entropy_mean(z, labels)?;
            let main_norm = tape.row_norm(z_main)?;
            let tag_norm = tape.row_norm(z_tag)?;
            let scaled = tape.scale(tag_norm, lambda)?;
            let gap = tape.sub(main_norm, scaled)?;
            let align = tape.half_square_mean(gap)?;
            let weighted = tape.scale(align, alpha)?;
            let total = tape.add(cls, weighted)?;
            Ok(LossNodes {
                total,
                cls,
                align: Some(align),
                z_main,
                z_tag: Some(z_tag),
                z,
            })
        }
    }
}
