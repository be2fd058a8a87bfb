use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::tagger::keyed_seed;
use super::{http_agent, transport_error, DiscoveryError};
use crate::autodiff::l2_norm;

/// How a sample's irrelevant tags become one embedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationMode {
    /// One prompt listing every tag.
    #[default]
    Collectively,
    /// One prompt per tag, embeddings averaged.
    Separately,
}

/// Text encoder returning one vector per input text.
pub trait EmbeddingClient: Sync {
    fn dim(&self) -> usize;
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, DiscoveryError>;
}

/// `"a photo of t1, t2, ..., tk"`.
pub fn embedding_prompt(tags: &[String]) -> String {
    format!("a photo of {}", tags.join(", "))
}

fn normalized(v: Vec<f64>, context: &str) -> Result<Vec<f64>, DiscoveryError> {
    let n = l2_norm(&v);
    if !(n.is_finite() && n > 0.0) {
        return Err(DiscoveryError::Parse {
            context: context.to_string(),
            message: format!("embedding has norm {n}"),
            raw: format!("{v:?}"),
        });
    }
    Ok(v.into_iter().map(|x| x / n).collect())
}

/// Unit-norm bias embedding of a sample's irrelevant tags.
pub fn embed_irrelevant_tags(
    irrelevant: &[String],
    mode: AggregationMode,
    client: &dyn EmbeddingClient,
) -> Result<Vec<f64>, DiscoveryError> {
    if irrelevant.is_empty() {
        return Err(DiscoveryError::EmptyBias("empty tag set".into()));
    }
    let prompts: Vec<String> = match mode {
        AggregationMode::Collectively => vec![embedding_prompt(irrelevant)],
        AggregationMode::Separately => irrelevant
            .iter()
            .map(|t| embedding_prompt(std::slice::from_ref(t)))
            .collect(),
    };
    let vectors = client.embed(&prompts)?;
    let d = client.dim();
    if vectors.len() != prompts.len() || vectors.iter().any(|v| v.len() != d) {
        return Err(DiscoveryError::Contract(format!(
            "embedding client returned {} vectors for {} prompts (dim {d})",
            vectors.len(),
            prompts.len()
        )));
    }
    let mut mean = vec![0.0; d];
    for v in &vectors {
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x / vectors.len() as f64;
        }
    }
    normalized(mean, &prompts[0])
}

/// Gaussian unit vector seeded by `(seed, text)`.
#[derive(Debug, Clone, Copy)]
pub struct MockEmbeddingClient {
    pub dim: usize,
    pub seed: u64,
}

impl EmbeddingClient for MockEmbeddingClient {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, DiscoveryError> {
        texts
            .iter()
            .map(|t| {
                let mut rng = ChaCha8Rng::from_seed(keyed_seed(self.seed, t));
                let v: Vec<f64> = (0..self.dim).map(|_| rng.sample(StandardNormal)).collect();
                normalized(v, t)
            })
            .collect()
    }
}

/// OpenAI-compatible embeddings endpoint (`POST {model, input: [..]}`).
pub struct HttpEmbeddingClient {
    /// Full URL, e.g. `https://host/v1/embeddings`.
    pub endpoint: String,
    pub model: String,
    pub api_key: Option<String>,
    pub dim: usize,
    agent: ureq::Agent,
}

impl HttpEmbeddingClient {
    pub fn new(
        endpoint: impl Into<String>,
        model: impl Into<String>,
        api_key: Option<String>,
        dim: usize,
        timeout_secs: u64,
    ) -> Self {
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key,
            dim,
            agent: http_agent(timeout_secs),
        }
    }
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    index: usize,
    embedding: Vec<f64>,
}

impl EmbeddingClient for HttpEmbeddingClient {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, DiscoveryError> {
        let id = texts.first().map(String::as_str).unwrap_or("");
        let mut req = self.agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            req = req.set("Authorization", &format!("Bearer {key}"));
        }
        let raw = req
            .send_json(serde_json::json!({ "model": self.model, "input": texts }))
            .map_err(|e| transport_error(id, e))?
            .into_string()
            .map_err(|e| DiscoveryError::Transport {
                id: id.to_string(),
                message: e.to_string(),
            })?;
        let parse_err = |message: String| DiscoveryError::Parse {
            context: format!("embeddings for {id:?}"),
            message,
            raw: raw.clone(),
        };
        let mut resp: EmbeddingResponse =
            serde_json::from_str(&raw).map_err(|e| parse_err(e.to_string()))?;
        resp.data.sort_by_key(|d| d.index);
        if resp.data.len() != texts.len() {
            return Err(parse_err(format!(
                "{} embeddings for {} inputs",
                resp.data.len(),
                texts.len()
            )));
        }
        resp.data
            .into_iter()
            .map(|d| {
                if d.embedding.len() != self.dim {
                    return Err(parse_err(format!(
                        "embedding of length {}, expected {}",
                        d.embedding.len(),
                        self.dim
                    )));
                }
                normalized(d.embedding, id)
            })
            .collect()
    }
}
