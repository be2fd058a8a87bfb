use serde::{Deserialize, Serialize};

use super::{AutodiffError, DenseMatrix, ParameterStore};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerConfig {
    Sgd {
        lr: f64,
        #[serde(default)]
        momentum: f64,
        #[serde(default)]
        weight_decay: f64,
    },
    Adam {
        lr: f64,
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
        #[serde(default)]
        weight_decay: f64,
    },
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl OptimizerConfig {
    pub fn lr(&self) -> f64 {
        match *self {
            OptimizerConfig::Sgd { lr, .. } | OptimizerConfig::Adam { lr, .. } => lr,
        }
    }

    pub fn validate(&self) -> Result<(), AutodiffError> {
        let lr = self.lr();
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(AutodiffError::Config(format!(
                "learning rate must be positive, got {lr}"
            )));
        }
        match *self {
            OptimizerConfig::Sgd {
                momentum,
                weight_decay,
                ..
            } => {
                if !(0.0..1.0).contains(&momentum) {
                    return Err(AutodiffError::Config(format!(
                        "momentum must be in [0, 1), got {momentum}"
                    )));
                }
                if weight_decay < 0.0 {
                    return Err(AutodiffError::Config("weight_decay must be >= 0".into()));
                }
            }
            OptimizerConfig::Adam {
                beta1,
                beta2,
                eps,
                weight_decay,
                ..
            } => {
                if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) {
                    return Err(AutodiffError::Config("adam betas must be in [0, 1)".into()));
                }
                if eps <= 0.0 || weight_decay < 0.0 {
                    return Err(AutodiffError::Config(
                        "adam eps must be > 0 and weight_decay >= 0".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Stateful optimizer. Weight decay is applied as an L2 term added to the
/// gradient before the update.
#[derive(Debug, Clone)]
pub struct Optimizer {
    config: OptimizerConfig,
    lr: f64,
    step: u64,
    first: Vec<DenseMatrix>,
    second: Vec<DenseMatrix>,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig, store: &ParameterStore) -> Result<Self, AutodiffError> {
        config.validate()?;
        let zeros = || {
            store
                .iter()
                .map(|p| DenseMatrix::zeros(p.value.rows(), p.value.cols()))
                .collect::<Vec<_>>()
        };
        let second = match config {
            OptimizerConfig::Adam { .. } => zeros(),
            OptimizerConfig::Sgd { .. } => Vec::new(),
        };
        Ok(Self {
            config,
            lr: config.lr(),
            step: 0,
            first: zeros(),
            second,
        })
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, store: &mut ParameterStore) {
        self.step += 1;
        let lr = self.lr;
        match self.config {
            OptimizerConfig::Sgd {
                momentum,
                weight_decay,
                ..
            } => {
                for (p, vel) in store.iter_mut().zip(&mut self.first) {
                    let vals = p.value.as_mut_slice();
                    for ((w, &g), v) in vals
                        .iter_mut()
                        .zip(p.grad.as_slice())
                        .zip(vel.as_mut_slice())
                    {
                        let g = g + weight_decay * *w;
                        let update = if momentum > 0.0 {
                            *v = momentum * *v + g;
                            *v
                        } else {
                            g
                        };
                        *w -= lr * update;
                    }
                }
            }
            OptimizerConfig::Adam {
                beta1,
                beta2,
                eps,
                weight_decay,
                ..
            } => {
                let t = self.step as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for ((p, m), s) in store.iter_mut().zip(&mut self.first).zip(&mut self.second) {
                    let vals = p.value.as_mut_slice();
                    for (((w, &g), mv), sv) in vals
                        .iter_mut()
                        .zip(p.grad.as_slice())
                        .zip(m.as_mut_slice())
                        .zip(s.as_mut_slice())
                    {
                        let g = g + weight_decay * *w;
                        *mv = beta1 * *mv + (1.0 - beta1) * g;
                        *sv = beta2 * *sv + (1.0 - beta2) * g * g;
                        let m_hat = *mv / c1;
                        let s_hat = *sv / c2;
                        *w -= lr * m_hat / (s_hat.sqrt() + eps);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Partition;
    use approx::assert_abs_diff_eq;

    fn single(w: f64, g: f64) -> ParameterStore {
        let mut store = ParameterStore::new();
        let id = store
            .add("w", Partition::Head, DenseMatrix::scalar(w))
            .unwrap();
        store.get_mut(id).grad = DenseMatrix::scalar(g);
        store
    }

    #[test]
    fn plain_sgd_step() {
        let mut store = single(1.0, 2.0);
        let cfg = OptimizerConfig::Sgd {
            lr: 0.1,
            momentum: 0.0,
            weight_decay: 0.0,
        };
        let mut opt = Optimizer::new(cfg, &store).unwrap();
        opt.step(&mut store);
        assert_abs_diff_eq!(store.flat_values()[0], 0.8, epsilon = 1e-15);
        assert_eq!(opt.steps(), 1);
    }

    #[test]
    fn weight_decay_adds_scaled_weight_to_gradient() {
        let mut store = single(3.0, 0.5);
        let cfg = OptimizerConfig::Sgd {
            lr: 0.1,
            momentum: 0.0,
            weight_decay: 1e-4,
        };
        let mut opt = Optimizer::new(cfg, &store).unwrap();
        opt.step(&mut store);
        assert_abs_diff_eq!(
            store.flat_values()[0],
            3.0 - 0.1 * (0.5 + 1e-4 * 3.0),
            epsilon = 1e-15
        );
    }

    #[test]
    fn momentum_accumulates_velocity() {
        let mut store = single(0.0, 1.0);
        let cfg = OptimizerConfig::Sgd {
            lr: 1.0,
            momentum: 0.5,
            weight_decay: 0.0,
        };
        let mut opt = Optimizer::new(cfg, &store).unwrap();
        opt.step(&mut store);
        opt.step(&mut store);
        // v1 = 1, v2 = 1.5
        assert_abs_diff_eq!(store.flat_values()[0], -2.5, epsilon = 1e-15);
    }

    #[test]
    fn adam_first_step_has_magnitude_lr() {
        // m̂ = g, ŝ = g², update = lr·g/(|g|+eps) ≈ lr·sign(g)
        for g in [1e-3, 1.0, 250.0, -7.0] {
            let mut store = single(0.0, g);
            let cfg = OptimizerConfig::Adam {
                lr: 0.01,
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
                weight_decay: 0.0,
            };
            let mut opt = Optimizer::new(cfg, &store).unwrap();
            opt.step(&mut store);
            let w = store.flat_values()[0];
            assert_abs_diff_eq!(w.abs(), 0.01, epsilon = 1e-6);
            assert_eq!(w.signum(), -g.signum());
        }
    }

    #[test]
    fn non_positive_lr_rejected() {
        let store = single(0.0, 0.0);
        for lr in [0.0, -0.1] {
            let cfg = OptimizerConfig::Sgd {
                lr,
                momentum: 0.0,
                weight_decay: 0.0,
            };
            assert!(matches!(
                Optimizer::new(cfg, &store),
                Err(AutodiffError::Config(_))
            ));
        }
    }
}
