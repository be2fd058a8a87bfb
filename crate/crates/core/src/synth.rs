//! Synthetic biased datasets with known bias structure.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{l2_norm, DenseMatrix};
use crate::trainer::TrainingSet;

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("invalid generator config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasedSample {
    pub features: Vec<f64>,
    pub label: usize,
    pub bias_embedding: Vec<f64>,
    /// The sample's bias value agrees with the majority pairing for its label.
    pub aligned: bool,
    /// Index of the bias value (mode) the sample carries.
    pub bias: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TwoMoons3DConfig {
    pub n: usize,
    pub noise: f64,
    pub bias_gap: f64,
    pub align_rate: f64,
    pub seed: u64,
}

impl Default for TwoMoons3DConfig {
    fn default() -> Self {
        Self {
            n: 4000,
            noise: 0.1,
            bias_gap: 2.0,
            align_rate: 0.95,
            seed: 0,
        }
    }
}

/// Class names of the two-moons data (label order).
pub const MOON_CLASSES: [&str; 2] = ["upper moon", "lower moon"];
/// Bias tag names (bias value order): value 0 is `x3 < 0`, value 1 is `x3 > 0`.
pub const MOON_BIAS_TAGS: [&str; 2] = ["low z", "high z"];

/// Exactly `round(rate * n)` aligned flags at seeded random positions.
fn aligned_mask(n: usize, rate: f64, rng: &mut ChaCha8Rng) -> Vec<bool> {
    let k = ((rate * n as f64).round() as usize).min(n);
    let mut mask = vec![false; n];
    for i in sample(rng, n, k) {
        mask[i] = true;
    }
    mask
}

/// Two interleaving half-circles in `(x1, x2)` with a third coordinate
/// `x3 = ±bias_gap/2` that matches the label for `align_rate` of the samples.
/// Labels alternate `0, 1, 0, 1, ...`. The bias embedding is `[x3]`.
pub fn generate_two_moons_3d(config: &TwoMoons3DConfig) -> Result<Vec<BiasedSample>, SynthError> {
    if config.n < 2 {
        return Err(SynthError::Config(format!(
            "n must be >= 2, got {}",
            config.n
        )));
    }
    if !(config.align_rate > 0.0 && config.align_rate <= 1.0) {
        return Err(SynthError::Config(format!(
            "align_rate must be in (0, 1], got {}",
            config.align_rate
        )));
    }
    if config.noise.is_nan() || config.noise < 0.0 || !config.bias_gap.is_finite() {
        return Err(SynthError::Config(
            "noise must be >= 0 and bias_gap finite".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let aligned = aligned_mask(config.n, config.align_rate, &mut rng);
    let samples = (0..config.n)
        .map(|i| {
            let label = i % 2;
            let t: f64 = rng.gen_range(0.0..std::f64::consts::PI);
            let (mut x1, mut x2) = if label == 0 {
                (t.cos(), t.sin())
            } else {
                (1.0 - t.cos(), 0.5 - t.sin())
            };
            let jx: f64 = rng.sample(StandardNormal);
            let jy: f64 = rng.sample(StandardNormal);
            x1 += config.noise * jx;
            x2 += config.noise * jy;
            let bias = if aligned[i] { label } else { 1 - label };
            let x3 = if bias == 1 {
                config.bias_gap / 2.0
            } else {
                -config.bias_gap / 2.0
            };
            BiasedSample {
                features: vec![x1, x2, x3],
                label,
                bias_embedding: vec![x3],
                aligned: aligned[i],
                bias,
            }
        })
        .collect();
    Ok(samples)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlobsConfig {
    pub num_classes: usize,
    pub samples_per_class: usize,
    /// Dimensions carrying the class signal.
    pub relevant_dim: usize,
    /// Bias embedding size `d`.
    pub embed_dim: usize,
    pub align_rate: f64,
    pub cluster_std: f64,
    pub embed_noise: f64,
    /// Scale of the one-hot bias block appended to the features.
    pub bias_strength: f64,
    /// Seeds class means and bias directions; splits drawn with different
    /// `seed`s but the same `layout_seed` share them.
    pub layout_seed: u64,
    /// Seeds the samples.
    pub seed: u64,
}

impl Default for BlobsConfig {
    fn default() -> Self {
        Self {
            num_classes: 3,
            samples_per_class: 200,
            relevant_dim: 2,
            embed_dim: 8,
            align_rate: 0.9,
            cluster_std: 1.0,
            embed_noise: 0.05,
            bias_strength: 1.0,
            layout_seed: 0,
            seed: 0,
        }
    }
}

/// Gaussian class clusters with one bias mode per class.
///
/// Features are the relevant coordinates followed by a
/// `bias_strength`-scaled one-hot of the bias mode. An aligned sample's mode
/// equals its label; a conflicting sample's mode is drawn uniformly from the
/// other modes. Ground-truth group of a sample is `label * p + bias`.
pub fn generate_biased_blobs(config: &BlobsConfig) -> Result<Vec<BiasedSample>, SynthError> {
    let p = config.num_classes;
    if p < 2 || config.embed_dim == 0 || config.relevant_dim == 0 || config.samples_per_class == 0 {
        return Err(SynthError::Config(format!(
            "need p >= 2 and positive dims/sizes, got {config:?}"
        )));
    }
    if !(config.align_rate > 0.0 && config.align_rate <= 1.0) {
        return Err(SynthError::Config(format!(
            "align_rate must be in (0, 1], got {}",
            config.align_rate
        )));
    }
    if config.cluster_std < 0.0 || config.embed_noise < 0.0 {
        return Err(SynthError::Config("noise levels must be >= 0".into()));
    }
    let mut layout = ChaCha8Rng::seed_from_u64(config.layout_seed);
    let means: Vec<Vec<f64>> = (0..p)
        .map(|_| {
            (0..config.relevant_dim)
                .map(|_| 3.0 * layout.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect();
    let directions: Vec<Vec<f64>> = (0..p)
        .map(|k| {
            if config.embed_dim >= p {
                let mut v = vec![0.0; config.embed_dim];
                v[k] = 1.0;
                v
            } else {
                let v: Vec<f64> = (0..config.embed_dim)
                    .map(|_| layout.sample(StandardNormal))
                    .collect();
                normalize(v)
            }
        })
        .collect();
    let cluster = Normal::new(0.0, config.cluster_std.max(0.0)).expect("std >= 0");
    let embed = Normal::new(0.0, config.embed_noise.max(0.0)).expect("std >= 0");
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut out = Vec::with_capacity(p * config.samples_per_class);
    for (label, mean) in means.iter().enumerate() {
        let aligned = aligned_mask(config.samples_per_class, config.align_rate, &mut rng);
        for &is_aligned in &aligned {
            let bias = if is_aligned {
                label
            } else {
                let k = rng.gen_range(0..p - 1);
                if k >= label {
                    k + 1
                } else {
                    k
                }
            };
            let mut features: Vec<f64> =
                mean.iter().map(|m| m + cluster.sample(&mut rng)).collect();
            features.extend((0..p).map(|k| if k == bias { config.bias_strength } else { 0.0 }));
            let e: Vec<f64> = directions[bias]
                .iter()
                .map(|v| v + embed.sample(&mut rng))
                .collect();
            out.push(BiasedSample {
                features,
                label,
                bias_embedding: normalize(e),
                aligned: is_aligned,
                bias,
            });
        }
    }
    Ok(out)
}

fn normalize(v: Vec<f64>) -> Vec<f64> {
    let n = l2_norm(&v);
    if n == 0.0 {
        return v;
    }
    v.into_iter().map(|x| x / n).collect()
}

/// Ground-truth `(class, bias value)` group id: `label * num_bias + bias`.
pub fn ground_truth_groups(samples: &[BiasedSample], num_bias: usize) -> Vec<usize> {
    samples
        .iter()
        .map(|s| s.label * num_bias + s.bias)
        .collect()
}

/// Packs samples into a row-aligned training set.
pub fn to_training_set(samples: &[BiasedSample]) -> TrainingSet {
    let features = DenseMatrix::from_rows(
        &samples
            .iter()
            .map(|s| s.features.as_slice())
            .collect::<Vec<_>>(),
    )
    .expect("generator emits equal-length finite rows");
    let embeddings = DenseMatrix::from_rows(
        &samples
            .iter()
            .map(|s| s.bias_embedding.as_slice())
            .collect::<Vec<_>>(),
    )
    .expect("generator emits equal-length finite rows");
    TrainingSet {
        features,
        embeddings,
        labels: samples.iter().map(|s| s.label).collect(),
    }
}

/// Indices of aligned and of conflicting samples.
pub fn split_by_alignment(samples: &[BiasedSample]) -> (Vec<usize>, Vec<usize>) {
    let mut aligned = Vec::new();
    let mut conflicting = Vec::new();
    for (i, s) in samples.iter().enumerate() {
        if s.aligned {
            aligned.push(i);
        } else {
            conflicting.push(i);
        }
    }
    (aligned, conflicting)
}
