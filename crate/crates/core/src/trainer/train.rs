use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{l2_norm, AutodiffError, DenseMatrix, Optimizer, ParameterStore, Tape};

use super::{record_loss, BiasAwareModel, TrainError, TrainerConfig};

/// Features, bias embeddings and labels of a training set, row-aligned.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub features: DenseMatrix,
    /// Bias embedding per sample. Samples without irrelevant tags carry zeros.
    pub embeddings: DenseMatrix,
    pub labels: Vec<usize>,
}

impl TrainingSet {
    pub fn new(
        features: DenseMatrix,
        embeddings: DenseMatrix,
        labels: Vec<usize>,
    ) -> Result<Self, TrainError> {
        if features.rows() != labels.len() || embeddings.rows() != labels.len() {
            return Err(TrainError::Data(format!(
                "row counts differ: {} features, {} embeddings, {} labels",
                features.rows(),
                embeddings.rows(),
                labels.len()
            )));
        }
        Ok(Self {
            features,
            embeddings,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn subset(&self, indices: &[usize]) -> TrainingSet {
        TrainingSet {
            features: self.features.select_rows(indices),
            embeddings: self.embeddings.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

/// One row of the per-epoch metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub cls_loss: f64,
    pub align_loss: f64,
    pub mean_main_norm: f64,
    pub mean_tag_norm: f64,
    /// Mean of `|‖z_main‖ − λ‖z_tag‖|` over the epoch's samples.
    pub mean_alignment_gap: f64,
    /// Accuracy of the main branch on the training batches.
    pub train_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub log: Vec<EpochMetrics>,
    pub steps: u64,
}

/// Trains `model` in place. Deterministic given the model's initial
/// parameters and `config.seed`.
pub fn train(
    model: &mut BiasAwareModel,
    data: &TrainingSet,
    config: &TrainerConfig,
) -> Result<TrainOutcome, TrainError> {
    train_with_observer(model, data, config, |_, _| {})
}

/// As [`train`], calling `observer(step, params)` after every optimizer step.
pub fn train_with_observer<F>(
    model: &mut BiasAwareModel,
    data: &TrainingSet,
    config: &TrainerConfig,
    mut observer: F,
) -> Result<TrainOutcome, TrainError>
where
    F: FnMut(u64, &ParameterStore),
{
    config.validate()?;
    if data.is_empty() {
        return Err(TrainError::Data("training set is empty".into()));
    }
    let spec = model.spec();
    if data.features.cols() != spec.input_dim || data.embeddings.cols() != spec.embed_dim {
        return Err(TrainError::Data(format!(
            "data has {} feature / {} embedding columns, model expects {} / {}",
            data.features.cols(),
            data.embeddings.cols(),
            spec.input_dim,
            spec.embed_dim
        )));
    }
    if let Some(bad) = data.labels.iter().find(|&&y| y >= spec.num_classes) {
        return Err(TrainError::Data(format!(
            "label {bad} out of range for {} classes",
            spec.num_classes
        )));
    }

    let lambda = match config.mode {
        super::TrainingMode::Mavias { lambda, .. } => lambda,
        super::TrainingMode::Vanilla => 0.0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut optimizer = Optimizer::new(config.optimizer, model.store())?;
    let base_lr = config.optimizer.lr();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut log = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let lr = base_lr * config.lr_schedule.factor(epoch, config.epochs);
        optimizer.set_lr(lr);
        order.shuffle(&mut rng);

        let mut acc = EpochAccumulator::default();
        for batch in order.chunks(config.batch_size) {
            let x = data.features.select_rows(batch);
            let e = data.embeddings.select_rows(batch);
            let labels: Vec<usize> = batch.iter().map(|&i| data.labels[i]).collect();

            model.store_mut().zero_grads();
            let mut tape = Tape::new();
            let nodes = match record_loss(&mut tape, model, &x, &e, &labels, config.mode) {
                Err(AutodiffError::NonFinite(_)) => return Err(TrainError::Diverged { epoch }),
                other => other?,
            };
            tape.backward(nodes.total, 1.0, model.store_mut())?;
            optimizer.step(model.store_mut());
            observer(optimizer.steps(), model.store());

            let n = labels.len() as f64;
            acc.samples += labels.len();
            acc.cls += tape.value(nodes.cls).item() * n;
            if let Some(a) = nodes.align {
                acc.align += tape.value(a).item() * n;
            }
            let zm = tape.value(nodes.z_main);
            for (b, &y) in labels.iter().enumerate() {
                let mn = l2_norm(zm.row(b));
                acc.main_norm += mn;
                let tn = nodes
                    .z_tag
                    .map(|t| l2_norm(tape.value(t).row(b)))
                    .unwrap_or(0.0);
                acc.tag_norm += tn;
                acc.gap += (mn - lambda * tn).abs();
                if crate::autodiff::argmax(zm.row(b)) == y {
                    acc.correct += 1;
                }
            }
        }
        let n = acc.samples as f64;
        let metrics = EpochMetrics {
            epoch,
            lr,
            cls_loss: acc.cls / n,
            align_loss: acc.align / n,
            mean_main_norm: acc.main_norm / n,
            mean_tag_norm: acc.tag_norm / n,
            mean_alignment_gap: acc.gap / n,
            train_accuracy: acc.correct as f64 / n,
        };
        log::debug!("epoch {epoch}: {metrics:?}");
        if !metrics.cls_loss.is_finite() {
            return Err(TrainError::Diverged { epoch });
        }
        log.push(metrics);
    }
    Ok(TrainOutcome {
        log,
        steps: optimizer.steps(),
    })
}

#[derive(Default)]
struct EpochAccumulator {
    samples: usize,
    correct: usize,
    cls: f64,
    align: f64,
    main_norm: f64,
    tag_norm: f64,
    gap: f64,
}

/// Writes the metrics log as CSV with a header row.
pub fn write_metrics_csv<W: std::io::Write>(
    log: &[EpochMetrics],
    writer: W,
) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    for row in log {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}
