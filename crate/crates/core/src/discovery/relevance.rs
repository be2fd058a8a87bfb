use std::collections::{BTreeSet, HashMap};
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use super::{http_agent, transport_error, DiscoveryError};

/// System prompt sent with every relevance request.
pub const SYSTEM_PROMPT: &str = include_str!("../../resources/relevance_system_prompt.txt");

/// Tags per relevance request.
pub const MAX_BATCH: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub temperature: f64,
    pub messages: Vec<ChatMessage>,
}

const CLASS_PREFIX: &str = "Target class: ";
const TAGS_PREFIX: &str = "Tags: ";

/// System plus user message for one batch of at most [`MAX_BATCH`] tags.
pub fn build_relevance_prompt(
    class_name: &str,
    tag_batch: &[String],
) -> Result<ChatRequest, DiscoveryError> {
    if tag_batch.is_empty() || tag_batch.len() > MAX_BATCH {
        return Err(DiscoveryError::Contract(format!(
            "relevance batch must hold 1..={MAX_BATCH} tags, got {}",
            tag_batch.len()
        )));
    }
    let tags = serde_json::to_string(tag_batch).expect("strings serialize");
    let user = format!(
        "{CLASS_PREFIX}{class_name}\n{TAGS_PREFIX}{tags}\nAnswer with {{\"relevant_tags\": [...]}} only."
    );
    Ok(ChatRequest {
        temperature: 0.0,
        messages: vec![
            ChatMessage {
                role: "system".into(),
                content: SYSTEM_PROMPT.into(),
            },
            ChatMessage {
                role: "user".into(),
                content: user,
            },
        ],
    })
}

#[derive(Deserialize)]
struct RelevantTags {
    relevant_tags: Vec<String>,
}

/// Reads `{"relevant_tags": [...]}` from a model reply, tolerating prose or
/// code fences around the object.
pub fn parse_relevant_tags(raw: &str) -> Result<Vec<String>, DiscoveryError> {
    let err = |message: String| DiscoveryError::Parse {
        context: "relevance reply".into(),
        message,
        raw: raw.to_string(),
    };
    let start = raw.find('{').ok_or_else(|| err("no JSON object".into()))?;
    let end = raw.rfind('}').ok_or_else(|| err("no JSON object".into()))?;
    if end < start {
        return Err(err("no JSON object".into()));
    }
    serde_json::from_str::<RelevantTags>(&raw[start..=end])
        .map(|r| r.relevant_tags)
        .map_err(|e| err(e.to_string()))
}

/// Chat-completion backend. Returns the assistant's raw text.
pub trait RelevanceClient: Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String, DiscoveryError>;
}

/// A batch whose tags defaulted to relevant after all retries failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchFailure {
    pub batch_index: usize,
    pub tags: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutcome {
    pub relevant: BTreeSet<String>,
    pub calls: usize,
    pub failures: Vec<BatchFailure>,
}

/// Asks `client` which of `tags` are relevant to `class_name`, in batches
/// of [`MAX_BATCH`].
///
/// Replies are intersected with the batch. A batch that still fails after
/// `retries` extra attempts counts as entirely relevant and is listed in
/// `failures`.
pub fn filter_relevant_tags(
    class_name: &str,
    tags: &[String],
    client: &dyn RelevanceClient,
    retries: usize,
) -> Result<FilterOutcome, DiscoveryError> {
    let mut out = FilterOutcome {
        relevant: BTreeSet::new(),
        calls: 0,
        failures: Vec::new(),
    };
    for (batch_index, batch) in tags.chunks(MAX_BATCH).enumerate() {
        let request = build_relevance_prompt(class_name, batch)?;
        let mut attempt = 0;
        let reply = loop {
            out.calls += 1;
            let r = client
                .complete(&request)
                .and_then(|raw| parse_relevant_tags(&raw));
            match r {
                Ok(v) => break Ok(v),
                Err(e) if attempt < retries => {
                    log::warn!("{class_name} batch {batch_index}: {e}; retrying");
                    attempt += 1;
                }
                Err(e) => break Err(e),
            }
        };
        match reply {
            Ok(found) => {
                let found: BTreeSet<String> =
                    found.iter().map(|t| t.trim().to_lowercase()).collect();
                out.relevant
                    .extend(batch.iter().filter(|t| found.contains(*t)).cloned());
            }
            Err(e) => {
                log::warn!("{class_name} batch {batch_index} defaults to relevant: {e}");
                out.relevant.extend(batch.iter().cloned());
                out.failures.push(BatchFailure {
                    batch_index,
                    tags: batch.len(),
                    error: e.to_string(),
                });
            }
        }
    }
    Ok(out)
}

/// Offline relevance judge: a tag is relevant to a class if the tag, or
/// one of its words, is among the class's keywords. Classes missing from
/// the table use the words of their own name.
#[derive(Debug, Default)]
pub struct KeywordRelevanceClient {
    pub keywords: HashMap<String, BTreeSet<String>>,
    calls: AtomicUsize,
}

impl KeywordRelevanceClient {
    pub fn new(keywords: HashMap<String, BTreeSet<String>>) -> Self {
        Self {
            keywords,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    fn judge(&self, class: &str, tag: &str) -> bool {
        let own: BTreeSet<String>;
        let kw = match self.keywords.get(class) {
            Some(k) => k,
            None => {
                own = class.split_whitespace().map(str::to_lowercase).collect();
                &own
            }
        };
        kw.contains(tag) || tag.split_whitespace().any(|w| kw.contains(w))
    }
}

impl RelevanceClient for KeywordRelevanceClient {
    fn complete(&self, request: &ChatRequest) -> Result<String, DiscoveryError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let user = request
            .messages
            .iter()
            .find(|m| m.role == "user")
            .ok_or_else(|| DiscoveryError::Contract("request has no user message".into()))?;
        let mut class = None;
        let mut tags: Vec<String> = Vec::new();
        for line in user.content.lines() {
            if let Some(c) = line.strip_prefix(CLASS_PREFIX) {
                class = Some(c.to_string());
            } else if let Some(t) = line.strip_prefix(TAGS_PREFIX) {
                tags = serde_json::from_str(t).map_err(|e| DiscoveryError::Parse {
                    context: "tag list in user message".into(),
                    message: e.to_string(),
                    raw: t.to_string(),
                })?;
            }
        }
        let class = class.ok_or_else(|| DiscoveryError::Contract("no target class".into()))?;
        let relevant: Vec<&String> = tags.iter().filter(|t| self.judge(&class, t)).collect();
        Ok(serde_json::json!({ "relevant_tags": relevant }).to_string())
    }
}

/// OpenAI-compatible chat-completions endpoint.
pub struct HttpRelevanceClient {
    /// Full URL, e.g. `https://host/v1/chat/completions`.
    pub endpoint: String,
    pub model: String,
    pub api_key: Option<String>,
    agent: ureq::Agent,
}

impl HttpRelevanceClient {
    pub fn new(
        endpoint: impl Into<String>,
        model: impl Into<String>,
        api_key: Option<String>,
        timeout_secs: u64,
    ) -> Self {
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key,
            agent: http_agent(timeout_secs),
        }
    }
}

#[derive(Deserialize)]
struct Completion {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChatMessage,
}

impl RelevanceClient for HttpRelevanceClient {
    fn complete(&self, request: &ChatRequest) -> Result<String, DiscoveryError> {
        let body = serde_json::json!({
            "model": self.model,
            "temperature": request.temperature,
            "messages": request.messages,
        });
        let mut req = self.agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            req = req.set("Authorization", &format!("Bearer {key}"));
        }
        let raw = req
            .send_json(body)
            .map_err(|e| transport_error("chat completion", e))?
            .into_string()
            .map_err(|e| DiscoveryError::Transport {
                id: "chat completion".into(),
                message: e.to_string(),
            })?;
        let parsed: Completion = serde_json::from_str(&raw).map_err(|e| DiscoveryError::Parse {
            context: "chat completion".into(),
            message: e.to_string(),
            raw: raw.clone(),
        })?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| DiscoveryError::Parse {
                context: "chat completion".into(),
                message: "no choices".into(),
                raw,
            })
    }
}
