use std::collections::HashMap;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use sha2::{Digest, Sha256};

use super::{http_agent, normalize_tags, transport_error, DiscoveryError, TagVocabulary};

/// Produces raw tags for an image reference.
pub trait TaggerClient: Sync {
    fn raw_tags(&self, image_ref: &str) -> Result<Vec<String>, DiscoveryError>;
}

/// Normalized tags of one image.
pub fn extract_tags(
    image_ref: &str,
    client: &dyn TaggerClient,
) -> Result<Vec<String>, DiscoveryError> {
    Ok(normalize_tags(&client.raw_tags(image_ref)?))
}

/// 32-byte seed from `(seed, key)`, independent of call order.
pub(crate) fn keyed_seed(seed: u64, key: &str) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(key.as_bytes());
    h.finalize().into()
}

/// Draws between `min_tags` and `max_tags` vocabulary tags per id.
#[derive(Debug, Clone)]
pub struct MockTagger {
    pub vocabulary: TagVocabulary,
    pub seed: u64,
    pub min_tags: usize,
    pub max_tags: usize,
}

impl TaggerClient for MockTagger {
    fn raw_tags(&self, image_ref: &str) -> Result<Vec<String>, DiscoveryError> {
        let n = self.vocabulary.len();
        if n == 0 {
            return Ok(Vec::new());
        }
        let mut rng = ChaCha8Rng::from_seed(keyed_seed(self.seed, image_ref));
        let hi = self.max_tags.min(n);
        let lo = self.min_tags.min(hi);
        let k = rng.gen_range(lo..=hi);
        let mut idx = sample(&mut rng, n, k).into_vec();
        idx.sort_unstable();
        Ok(idx
            .into_iter()
            .map(|i| self.vocabulary.tags[i].clone())
            .collect())
    }
}

/// Fixed tags per id; unknown ids get no tags.
#[derive(Debug, Clone, Default)]
pub struct FixtureTagger {
    pub tags: HashMap<String, Vec<String>>,
}

impl FixtureTagger {
    /// The dog image of the method's worked example.
    pub fn worked_example() -> Self {
        let mut tags = HashMap::new();
        tags.insert(
            "dog_example".to_string(),
            [
                "armchair", "black", "chair", "couch", "dog", "neckband", "pillow", "red", "sit",
                "white",
            ]
            .map(String::from)
            .to_vec(),
        );
        Self { tags }
    }
}

impl TaggerClient for FixtureTagger {
    fn raw_tags(&self, image_ref: &str) -> Result<Vec<String>, DiscoveryError> {
        Ok(self.tags.get(image_ref).cloned().unwrap_or_default())
    }
}

/// Tagging service over HTTP: `POST {endpoint}` with `{"image": <ref>}`,
/// expecting `{"tags": [..]}`.
pub struct HttpTagger {
    pub endpoint: String,
    pub api_key: Option<String>,
    agent: ureq::Agent,
}

impl HttpTagger {
    pub fn new(endpoint: impl Into<String>, api_key: Option<String>, timeout_secs: u64) -> Self {
        Self {
            endpoint: endpoint.into(),
            api_key,
            agent: http_agent(timeout_secs),
        }
    }
}

#[derive(Deserialize)]
struct TagResponse {
    #[serde(default)]
    tags: Vec<String>,
}

impl TaggerClient for HttpTagger {
    fn raw_tags(&self, image_ref: &str) -> Result<Vec<String>, DiscoveryError> {
        let mut req = self.agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            req = req.set("Authorization", &format!("Bearer {key}"));
        }
        let resp = req
            .send_json(serde_json::json!({ "image": image_ref }))
            .map_err(|e| transport_error(image_ref, e))?;
        let raw = resp.into_string().map_err(|e| DiscoveryError::Transport {
            id: image_ref.to_string(),
            message: e.to_string(),
        })?;
        if raw.trim().is_empty() {
            return Ok(Vec::new());
        }
        serde_json::from_str::<TagResponse>(&raw)
            .map(|r| r.tags)
            .map_err(|e| DiscoveryError::Parse {
                context: format!("tagger response for {image_ref}"),
                message: e.to_string(),
                raw,
            })
    }
}

#[cfg(test)]
mod tests {
    use super::super::test_server::serve;
    use super::*;

    #[test]
    fn mock_is_deterministic_per_id_and_seed() {
        let vocab = TagVocabulary::new(&["a", "b", "c", "d", "e", "f"]);
        let t = MockTagger {
            vocabulary: vocab,
            seed: 7,
            min_tags: 2,
            max_tags: 4,
        };
        let first = extract_tags("a", &t).unwrap();
        assert_eq!(first, extract_tags("a", &t).unwrap());
        assert!((2..=4).contains(&first.len()));
        let other_seed = MockTagger {
            seed: 8,
            ..t.clone()
        };
        let differs = (0..20).any(|i| {
            let id = format!("img{i}");
            t.raw_tags(&id).unwrap() != other_seed.raw_tags(&id).unwrap()
        });
        assert!(differs);
    }

    #[test]
    fn worked_example_tags() {
        let tags = extract_tags("dog_example", &FixtureTagger::worked_example()).unwrap();
        for t in ["dog", "couch", "red", "armchair"] {
            assert!(tags.iter().any(|x| x == t), "{t}");
        }
    }

    #[test]
    fn http_tagger_parses_and_normalizes() {
        let (url, rx) = serve(vec![
            (200, r#"{"tags": ["Dog", " couch"]}"#.into()),
            (200, String::new()),
            (200, "not json".into()),
            (503, "busy".into()),
        ]);
        let t = HttpTagger::new(format!("{url}/tag"), None, 5);
        assert_eq!(extract_tags("x1", &t).unwrap(), ["dog", "couch"]);
        assert!(rx.recv().unwrap().contains("\"x1\""));
        assert!(extract_tags("x2", &t).unwrap().is_empty());
        match extract_tags("x3", &t) {
            Err(DiscoveryError::Parse { raw, .. }) => assert_eq!(raw, "not json"),
            other => panic!("{other:?}"),
        }
        match extract_tags("x4", &t) {
            Err(e @ DiscoveryError::Transport { .. }) => {
                assert!(e.is_retryable());
                assert!(e.to_string().contains("x4"));
            }
            other => panic!("{other:?}"),
        }
    }
}
