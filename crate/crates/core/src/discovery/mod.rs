//! Language-driven bias discovery: image tags, LLM relevance filtering and
//! embeddings of the irrelevant tags.

mod embedding;
mod pipeline;
mod records;
mod relevance;
mod tagger;
mod tags;

pub use embedding::{
    embed_irrelevant_tags, embedding_prompt, AggregationMode, EmbeddingClient, HttpEmbeddingClient,
    MockEmbeddingClient,
};
pub use pipeline::{
    run_discovery, ClassReport, DiscoveryConfig, DiscoveryOutput, DiscoveryReport, SampleRef,
};
pub use records::{read_jsonl, write_jsonl, EmbeddingRecord, TagRecord};
pub use relevance::{
    build_relevance_prompt, filter_relevant_tags, parse_relevant_tags, BatchFailure, ChatMessage,
    ChatRequest, FilterOutcome, HttpRelevanceClient, KeywordRelevanceClient, RelevanceClient,
    MAX_BATCH, SYSTEM_PROMPT,
};
pub use tagger::{extract_tags, FixtureTagger, HttpTagger, MockTagger, TaggerClient};
pub use tags::{
    derive_irrelevant_tags, evaluate_filter, normalize_tags, subset_vocabulary, FilterScore,
    RelevanceGroundTruth, TagVocabulary, TaggedSample,
};

#[derive(Debug, thiserror::Error)]
pub enum DiscoveryError {
    /// Network or server failure; worth retrying.
    #[error("transport error for {id}: {message}")]
    Transport { id: String, message: String },
    #[error("could not parse {context}: {message}; raw payload: {raw}")]
    Parse {
        context: String,
        message: String,
        raw: String,
    },
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("no irrelevant tags for {0}; use the zero-bias path")]
    EmptyBias(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl DiscoveryError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, DiscoveryError::Transport { .. })
    }
}

/// Runs `f` up to `1 + retries` times while it fails with a retryable error.
pub(crate) fn with_retries<T>(
    retries: usize,
    mut f: impl FnMut() -> Result<T, DiscoveryError>,
) -> Result<T, DiscoveryError> {
    let mut attempt = 0;
    loop {
        match f() {
            Err(e) if e.is_retryable() && attempt < retries => {
                log::warn!("retrying after: {e}");
                attempt += 1;
            }
            other => return other,
        }
    }
}

/// Maps a ureq failure to a discovery error.
pub(crate) fn transport_error(id: &str, err: ureq::Error) -> DiscoveryError {
    match err {
        ureq::Error::Status(code, resp) => {
            let body = resp.into_string().unwrap_or_default();
            DiscoveryError::Transport {
                id: id.to_string(),
                message: format!("HTTP {code}: {body}"),
            }
        }
        ureq::Error::Transport(t) => DiscoveryError::Transport {
            id: id.to_string(),
            message: t.to_string(),
        },
    }
}

/// Builds a blocking HTTP agent with a request timeout.
pub(crate) fn http_agent(timeout_secs: u64) -> ureq::Agent {
    ureq::AgentBuilder::new()
        .timeout(std::time::Duration::from_secs(timeout_secs))
        .build()
}
