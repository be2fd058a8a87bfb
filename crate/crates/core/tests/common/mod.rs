//! Plain-loop reference implementation of the bias-aware model, written
//! independently of the tape.

#![allow(dead_code)]

use mavias::autodiff::DenseMatrix;
use mavias::trainer::{BiasAwareModel, ModelSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn param(model: &BiasAwareModel, name: &str) -> DenseMatrix {
    let id = model.store().id_of(name).expect(name);
    model.store().get(id).value.clone()
}

/// `x · Wᵀ (+ b)` for one row.
fn dense(x: &[f64], w: &DenseMatrix, b: Option<&DenseMatrix>) -> Vec<f64> {
    (0..w.rows())
        .map(|o| {
            let s: f64 = (0..w.cols()).map(|i| w.get(o, i) * x[i]).sum();
            s + b.map_or(0.0, |b| b.get(0, o))
        })
        .collect()
}

pub struct RowForward {
    /// Backbone output (after its final ReLU).
    pub h: Vec<f64>,
    /// Projection output `g(e)`.
    pub g: Vec<f64>,
    pub z_main: Vec<f64>,
    pub z_tag: Vec<f64>,
}

pub fn forward_row(model: &BiasAwareModel, x: &[f64], e: &[f64]) -> RowForward {
    let layers = model.spec().hidden.len() + 1;
    let mut h = x.to_vec();
    for l in 0..layers {
        let w = param(model, &format!("backbone.{l}.weight"));
        let b = param(model, &format!("backbone.{l}.bias"));
        h = dense(&h, &w, Some(&b))
            .into_iter()
            .map(|v| v.max(0.0))
            .collect();
    }
    let hw = param(model, "head.weight");
    let hb = param(model, "head.bias");
    let pw = param(model, "projection.weight");
    let g = dense(e, &pw, None);
    RowForward {
        z_main: dense(&h, &hw, Some(&hb)),
        z_tag: dense(&g, &hw, None),
        h,
        g,
    }
}

pub fn log_softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    z.iter().map(|v| v - lse).collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Mean CE of `z_main + z_tag` plus `alpha` times the mean of
/// `½(‖z_main‖ − λ‖z_tag‖)²`.
pub fn mavias_loss(
    model: &BiasAwareModel,
    x: &DenseMatrix,
    e: &DenseMatrix,
    labels: &[usize],
    alpha: f64,
    lambda: f64,
) -> f64 {
    let n = labels.len() as f64;
    let mut ce = 0.0;
    let mut align = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let f = forward_row(model, x.row(i), e.row(i));
        let z: Vec<f64> = f.z_main.iter().zip(&f.z_tag).map(|(a, b)| a + b).collect();
        ce -= log_softmax(&z)[y];
        let d = norm(&f.z_main) - lambda * norm(&f.z_tag);
        align += 0.5 * d * d;
    }
    ce / n + alpha * align / n
}

pub fn small_spec(rng: &mut ChaCha8Rng) -> ModelSpec {
    let layers = rng.gen_range(0..=2);
    ModelSpec {
        input_dim: rng.gen_range(1..=4),
        hidden: (0..layers).map(|_| rng.gen_range(2..=6)).collect(),
        feature_dim: rng.gen_range(2..=5),
        num_classes: rng.gen_range(2..=4),
        embed_dim: rng.gen_range(1..=4),
    }
}

pub fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DenseMatrix {
    let v = (0..rows * cols).map(|_| rng.gen_range(-1.5..1.5)).collect();
    DenseMatrix::from_vec(rows, cols, v).unwrap()
}

/// Adds uniform noise to every parameter so zero-initialized biases are
/// exercised too.
pub fn jitter(model: &mut BiasAwareModel, scale: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in model.store_mut().iter_mut() {
        for v in p.value.as_mut_slice() {
            *v += rng.gen_range(-scale..scale);
        }
    }
}
