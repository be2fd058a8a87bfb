use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    derive_irrelevant_tags, embed_irrelevant_tags, extract_tags, filter_relevant_tags,
    with_retries, AggregationMode, BatchFailure, DiscoveryError, EmbeddingClient, EmbeddingRecord,
    RelevanceClient, TagRecord, TaggerClient,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRef {
    pub id: String,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscoveryConfig {
    pub aggregation: AggregationMode,
    /// Upper bound on concurrent client calls.
    pub max_in_flight: usize,
    /// Extra attempts per failed call.
    pub retries: usize,
}

impl Default for DiscoveryConfig {
    fn default() -> Self {
        Self {
            aggregation: AggregationMode::Collectively,
            max_in_flight: 4,
            retries: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub class: String,
    /// Distinct tags over the class's samples.
    pub tags: usize,
    pub relevant: Vec<String>,
    pub llm_calls: usize,
    /// Batches that defaulted to relevant.
    pub failures: Vec<BatchFailure>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscoveryReport {
    pub samples: usize,
    /// Samples with no irrelevant tags, trained with a zero embedding.
    pub samples_without_bias: usize,
    pub aggregation: AggregationMode,
    pub llm_temperature: f64,
    pub classes: Vec<ClassReport>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscoveryOutput {
    pub records: Vec<TagRecord>,
    pub embeddings: Vec<EmbeddingRecord>,
    pub report: DiscoveryReport,
}

/// Tags every sample, filters each class's tag pool for relevance and embeds
/// each sample's irrelevant tags.
///
/// Output order follows `samples` regardless of how calls interleave.
pub fn run_discovery(
    samples: &[SampleRef],
    class_names: &[String],
    tagger: &dyn TaggerClient,
    relevance: &dyn RelevanceClient,
    embedder: &dyn EmbeddingClient,
    config: &DiscoveryConfig,
) -> Result<DiscoveryOutput, DiscoveryError> {
    if config.max_in_flight == 0 {
        return Err(DiscoveryError::Contract(
            "max_in_flight must be positive".into(),
        ));
    }
    let mut ids = HashSet::new();
    for s in samples {
        if s.label >= class_names.len() {
            return Err(DiscoveryError::Contract(format!(
                "sample {} has label {} but only {} classes are named",
                s.id,
                s.label,
                class_names.len()
            )));
        }
        if !ids.insert(s.id.as_str()) {
            return Err(DiscoveryError::Contract(format!(
                "duplicate sample id {}",
                s.id
            )));
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.max_in_flight)
        .build()
        .map_err(|e| DiscoveryError::Contract(e.to_string()))?;

    pool.install(|| {
        let tags: Vec<Vec<String>> = samples
            .par_iter()
            .map(|s| with_retries(config.retries, || extract_tags(&s.id, tagger)))
            .collect::<Result<_, _>>()?;

        let pools: Vec<Vec<String>> = (0..class_names.len())
            .map(|c| {
                let mut seen = HashSet::new();
                samples
                    .iter()
                    .zip(&tags)
                    .filter(|(s, _)| s.label == c)
                    .flat_map(|(_, t)| t.iter())
                    .filter(|t| seen.insert(t.as_str()))
                    .cloned()
                    .collect()
            })
            .collect();

        let filtered = class_names
            .par_iter()
            .zip(&pools)
            .map(|(name, pool)| filter_relevant_tags(name, pool, relevance, config.retries))
            .collect::<Result<Vec<_>, _>>()?;

        let records: Vec<TagRecord> = samples
            .iter()
            .zip(tags)
            .map(|(s, t)| {
                let irrelevant = derive_irrelevant_tags(&t, &filtered[s.label].relevant);
                TagRecord {
                    id: s.id.clone(),
                    label: s.label,
                    tags: t,
                    irrelevant_tags: Some(irrelevant),
                }
            })
            .collect();

        let embeddings: Vec<Option<EmbeddingRecord>> = records
            .par_iter()
            .map(|r| {
                let b = r.irrelevant_tags.as_deref().unwrap_or_default();
                if b.is_empty() {
                    return Ok(None);
                }
                let values = with_retries(config.retries, || {
                    embed_irrelevant_tags(b, config.aggregation, embedder)
                })?;
                Ok(Some(EmbeddingRecord {
                    id: r.id.clone(),
                    dim: values.len(),
                    values,
                }))
            })
            .collect::<Result<_, DiscoveryError>>()?;

        let samples_without_bias = embeddings.iter().filter(|e| e.is_none()).count();
        let classes = class_names
            .iter()
            .zip(pools)
            .zip(filtered)
            .map(|((name, pool), f)| ClassReport {
                class: name.clone(),
                tags: pool.len(),
                relevant: f.relevant.into_iter().collect(),
                llm_calls: f.calls,
                failures: f.failures,
            })
            .collect();
        Ok(DiscoveryOutput {
            records,
            embeddings: embeddings.into_iter().flatten().collect(),
            report: DiscoveryReport {
                samples: samples.len(),
                samples_without_bias,
                aggregation: config.aggregation,
                llm_temperature: 0.0,
                classes,
            },
        })
    })
}
