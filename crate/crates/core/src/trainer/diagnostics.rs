//! Measurements the bias-aware objective predicts: suppressed CE gradients on
//! bias-aligned samples and a bias branch that tracks the shortcut.

use serde::{Deserialize, Serialize};

use crate::autodiff::{argmax, Tape};

use super::{BiasAwareModel, TrainError, TrainingMode, TrainingSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientDiagnostic {
    pub aligned_samples: usize,
    pub conflicting_samples: usize,
    pub mean_grad_norm_aligned: f64,
    pub mean_grad_norm_conflicting: f64,
    /// aligned / conflicting
    pub ratio: f64,
}

/// Norm of `∂L_cls/∂θ` (backbone and head only) for every sample.
///
/// With `use_bias_branch` the CE is taken on `z_main + z_tag`, as during
/// bias-aware training; otherwise on `z_main` alone.
pub fn per_sample_ce_grad_norms(
    model: &BiasAwareModel,
    data: &TrainingSet,
    use_bias_branch: bool,
) -> Result<Vec<f64>, TrainError> {
    let mut scratch = model.clone();
    // alpha = 0 leaves only the CE term; lambda is irrelevant then
    let mode = if use_bias_branch {
        TrainingMode::Mavias {
            alpha: 0.0,
            lambda: 0.5,
        }
    } else {
        TrainingMode::Vanilla
    };
    let mut norms = Vec::with_capacity(data.len());
    for i in 0..data.len() {
        let x = data.features.select_rows(&[i]);
        let e = data.embeddings.select_rows(&[i]);
        let y = [data.labels[i]];
        scratch.store_mut().zero_grads();
        let mut tape = Tape::new();
        let nodes = super::record_loss(&mut tape, &scratch, &x, &e, &y, mode)?;
        tape.backward(nodes.cls, 1.0, scratch.store_mut())?;
        norms.push(scratch.store().grad_norm(|p| p.is_main()));
    }
    Ok(norms)
}

/// Mean CE-gradient norm over bias-aligned vs. bias-conflicting samples.
pub fn gradient_diagnostic(
    model: &BiasAwareModel,
    aligned: &TrainingSet,
    conflicting: &TrainingSet,
    use_bias_branch: bool,
) -> Result<GradientDiagnostic, TrainError> {
    if aligned.is_empty() || conflicting.is_empty() {
        return Err(TrainError::Data(format!(
            "gradient diagnostic needs both groups; got {} aligned, {} conflicting",
            aligned.len(),
            conflicting.len()
        )));
    }
    let mean = |v: Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
    let a = mean(per_sample_ce_grad_norms(model, aligned, use_bias_branch)?);
    let c = mean(per_sample_ce_grad_norms(
        model,
        conflicting,
        use_bias_branch,
    )?);
    Ok(GradientDiagnostic {
        aligned_samples: aligned.len(),
        conflicting_samples: conflicting.len(),
        mean_grad_norm_aligned: a,
        mean_grad_norm_conflicting: c,
        ratio: a / c,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasBranchGroupRow {
    pub group: String,
    pub samples: usize,
    /// `None` for an empty group.
    pub accuracy: Option<f64>,
}

/// Accuracy of `argmax z_tag` per group. `groups[i]` indexes `group_names`.
pub fn bias_branch_group_accuracy(
    model: &BiasAwareModel,
    data: &TrainingSet,
    groups: &[usize],
    group_names: &[String],
) -> Result<Vec<BiasBranchGroupRow>, TrainError> {
    if groups.len() != data.len() {
        return Err(TrainError::Data(format!(
            "{} group ids for {} samples",
            groups.len(),
            data.len()
        )));
    }
    if let Some(g) = groups.iter().find(|&&g| g >= group_names.len()) {
        return Err(TrainError::Data(format!("group id {g} has no name")));
    }
    let z_tag = model.tag_logits(&data.embeddings)?;
    let mut counts = vec![0usize; group_names.len()];
    let mut correct = vec![0usize; group_names.len()];
    for (i, &g) in groups.iter().enumerate() {
        counts[g] += 1;
        if argmax(z_tag.row(i)) == data.labels[i] {
            correct[g] += 1;
        }
    }
    Ok(group_names
        .iter()
        .enumerate()
        .map(|(g, name)| BiasBranchGroupRow {
            group: name.clone(),
            samples: counts[g],
            accuracy: (counts[g] > 0).then(|| correct[g] as f64 / counts[g] as f64),
        })
        .collect())
}
