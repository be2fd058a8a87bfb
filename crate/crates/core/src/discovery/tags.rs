use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::DiscoveryError;

/// Lowercases, trims and deduplicates, keeping first occurrences in order.
/// Tags that are empty after trimming are dropped.
pub fn normalize_tags<S: AsRef<str>>(raw: &[S]) -> Vec<String> {
    let mut seen = HashSet::new();
    raw.iter()
        .map(|t| t.as_ref().trim().to_lowercase())
        .filter(|t| !t.is_empty() && seen.insert(t.clone()))
        .collect()
}

/// `tags` minus `relevant`, in the order of `tags`.
pub fn derive_irrelevant_tags(tags: &[String], relevant: &BTreeSet<String>) -> Vec<String> {
    tags.iter()
        .filter(|t| !relevant.contains(*t))
        .cloned()
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaggedSample {
    pub id: String,
    pub label: usize,
    pub tags: Vec<String>,
    pub irrelevant_tags: Option<Vec<String>>,
    pub bias_embedding: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagVocabulary {
    pub tags: Vec<String>,
    /// Size of the vocabulary this one was sampled from.
    pub source_size: usize,
}

impl TagVocabulary {
    pub fn new<S: AsRef<str>>(raw: &[S]) -> Self {
        let tags = normalize_tags(raw);
        let source_size = tags.len();
        Self { tags, source_size }
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }
}

/// Seeded uniform sample of `ceil(fraction * |vocab|)` tags, in vocabulary
/// order.
pub fn subset_vocabulary(
    vocab: &TagVocabulary,
    fraction: f64,
    seed: u64,
) -> Result<TagVocabulary, DiscoveryError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(DiscoveryError::Contract(format!(
            "vocabulary fraction must be in (0, 1], got {fraction}"
        )));
    }
    let n = vocab.tags.len();
    let k = ((fraction * n as f64).ceil() as usize).min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = sample(&mut rng, n, k).into_vec();
    idx.sort_unstable();
    Ok(TagVocabulary {
        tags: idx.into_iter().map(|i| vocab.tags[i].clone()).collect(),
        source_size: vocab.source_size,
    })
}

/// Human-labeled relevant tags per class name.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelevanceGroundTruth {
    pub classes: BTreeMap<String, BTreeSet<String>>,
}

impl RelevanceGroundTruth {
    /// Fails if a ground-truth tag is missing from `vocab`.
    pub fn validate(&self, vocab: &TagVocabulary) -> Result<(), DiscoveryError> {
        let known: HashSet<&str> = vocab.tags.iter().map(String::as_str).collect();
        for (class, tags) in &self.classes {
            if let Some(t) = tags.iter().find(|t| !known.contains(t.as_str())) {
                return Err(DiscoveryError::Contract(format!(
                    "ground-truth tag {t:?} of class {class:?} is not in the vocabulary"
                )));
            }
        }
        Ok(())
    }
}

/// Micro-averaged precision and recall. `None` where the denominator is 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterScore {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
}

/// Scores predicted relevant sets against the ground truth, pooling counts
/// over every class present in either map.
pub fn evaluate_filter(
    predictions: &BTreeMap<String, BTreeSet<String>>,
    truth: &RelevanceGroundTruth,
) -> FilterScore {
    let empty = BTreeSet::new();
    let classes: BTreeSet<&String> = predictions.keys().chain(truth.classes.keys()).collect();
    let (mut hit, mut predicted, mut actual) = (0usize, 0usize, 0usize);
    for c in classes {
        let p = predictions.get(c).unwrap_or(&empty);
        let t = truth.classes.get(c).unwrap_or(&empty);
        hit += p.intersection(t).count();
        predicted += p.len();
        actual += t.len();
    }
    FilterScore {
        precision: (predicted > 0).then(|| hit as f64 / predicted as f64),
        recall: (actual > 0).then(|| hit as f64 / actual as f64),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(v: &[&str]) -> BTreeSet<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_tags(&["Dog", " dog", "RED"]), ["dog", "red"]);
        assert!(normalize_tags::<&str>(&[]).is_empty());
        assert_eq!(
            normalize_tags(&["tree branch", "tree branch "]),
            ["tree branch"]
        );
    }

    #[test]
    fn irrelevant_is_set_difference() {
        let tags: Vec<String> = ["dog", "couch", "red"].map(String::from).to_vec();
        assert_eq!(
            derive_irrelevant_tags(&tags, &set(&["dog"])),
            ["couch", "red"]
        );
        assert!(derive_irrelevant_tags(&tags, &set(&["dog", "couch", "red"])).is_empty());
        assert_eq!(derive_irrelevant_tags(&tags, &BTreeSet::new()), tags);
    }

    #[test]
    fn subset_examples() {
        let v = TagVocabulary::new(&["a", "b", "c", "d", "e", "f", "g", "h", "i", "j"]);
        assert_eq!(subset_vocabulary(&v, 1.0, 3).unwrap(), v);
        let half = subset_vocabulary(&v, 0.5, 3).unwrap();
        assert_eq!(half.len(), 5);
        assert_eq!(half.source_size, 10);
        assert!(half.tags.iter().all(|t| v.tags.contains(t)));
        assert_eq!(half, subset_vocabulary(&v, 0.5, 3).unwrap());
        assert!(subset_vocabulary(&v, 0.0, 3).is_err());
        assert!(subset_vocabulary(&v, 1.5, 3).is_err());
    }

    #[test]
    fn filter_score_examples() {
        let mut pred = BTreeMap::new();
        pred.insert("c".to_string(), set(&["a", "b"]));
        let mut truth = RelevanceGroundTruth::default();
        truth.classes.insert("c".to_string(), set(&["a", "c"]));
        let s = evaluate_filter(&pred, &truth);
        assert_eq!((s.precision, s.recall), (Some(0.5), Some(0.5)));

        let same = evaluate_filter(&truth.classes, &truth);
        assert_eq!((same.precision, same.recall), (Some(1.0), Some(1.0)));

        let none = evaluate_filter(&BTreeMap::new(), &truth);
        assert_eq!((none.precision, none.recall), (None, Some(0.0)));
    }

    #[test]
    fn ground_truth_must_be_in_vocabulary() {
        let v = TagVocabulary::new(&["a", "b"]);
        let mut truth = RelevanceGroundTruth::default();
        truth.classes.insert("c".into(), set(&["a"]));
        assert!(truth.validate(&v).is_ok());
        truth.classes.insert("d".into(), set(&["z"]));
        assert!(truth.validate(&v).is_err());
    }
}
