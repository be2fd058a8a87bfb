use serde::{Deserialize, Serialize};

use crate::autodiff::OptimizerConfig;

use super::TrainError;

/// What the trainer optimizes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TrainingMode {
    /// Plain cross-entropy on the main-branch logits.
    Vanilla,
    /// Cross-entropy on `z_main + z_tag` plus `alpha` times the logit
    /// alignment term.
    ///
    /// `lambda` scales the bias-branch norm the main-branch norm is pulled
    /// towards: the greater the bias in the data, the smaller `lambda`
    /// should be. Values near 0.5 are a good start; above 0.5 tends to suit
    /// mildly biased data, below 0.5 extremely biased data. `alpha` is far
    /// less sensitive (0.001 to 0.1 all behave similarly on real data).
    /// `alpha = 0` disables the alignment term.
    Mavias { alpha: f64, lambda: f64 },
}

impl TrainingMode {
    pub fn name(&self) -> &'static str {
        match self {
            TrainingMode::Vanilla => "vanilla",
            TrainingMode::Mavias { .. } => "mavias",
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if let TrainingMode::Mavias { alpha, lambda } = *self {
            if !(0.0..1.0).contains(&alpha) {
                return Err(TrainError::Config(format!(
                    "alpha must be in [0, 1), got {alpha}"
                )));
            }
            if !(lambda > 0.0 && lambda < 1.0) {
                return Err(TrainError::Config(format!(
                    "lambda must be in (0, 1), got {lambda}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Learning rate divided by 10 at each third of the epochs.
    StepThirds,
}

impl LrSchedule {
    pub fn factor(self, epoch: usize, epochs: usize) -> f64 {
        match self {
            LrSchedule::Constant => 1.0,
            LrSchedule::StepThirds => {
                let drops = (3 * epoch) / epochs.max(1);
                0.1f64.powi(drops.min(2) as i32)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainerConfig {
    pub mode: TrainingMode,
    pub optimizer: OptimizerConfig,
    pub epochs: usize,
    pub batch_size: usize,
    /// Seeds the mini-batch shuffling.
    pub seed: u64,
    #[serde(default)]
    pub lr_schedule: LrSchedule,
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        self.mode.validate()?;
        self.optimizer
            .validate()
            .map_err(|e| TrainError::Config(e.to_string()))?;
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(TrainError::Config(
                "epochs and batch_size must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_thirds_schedule() {
        let s = LrSchedule::StepThirds;
        let f: Vec<f64> = (0..9).map(|e| s.factor(e, 9)).collect();
        assert_eq!(f[0..3], [1.0; 3]);
        assert!(f[3..6].iter().all(|v| (*v - 0.1).abs() < 1e-15));
        assert!(f[6..9].iter().all(|v| (*v - 0.01).abs() < 1e-15));
    }

    #[test]
    fn mode_bounds() {
        assert!(TrainingMode::Mavias {
            alpha: 0.01,
            lambda: 0.5
        }
        .validate()
        .is_ok());
        assert!(TrainingMode::Mavias {
            alpha: 0.0,
            lambda: 0.5
        }
        .validate()
        .is_ok());
        assert!(TrainingMode::Mavias {
            alpha: 0.01,
            lambda: 1.5
        }
        .validate()
        .is_err());
        assert!(TrainingMode::Mavias {
            alpha: 1.0,
            lambda: 0.5
        }
        .validate()
        .is_err());
        assert!(TrainingMode::Mavias {
            alpha: 0.1,
            lambda: 0.0
        }
        .validate()
        .is_err());
    }
}
