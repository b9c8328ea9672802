//! Scripted offline backend. A JSON script file maps endpoint ids to ordered
//! response rules plus a default reply, and supplies fixed embedding vectors
//! keyed by text (exact) or image path (suffix match, so scripts can use
//! manifest-relative paths). The backend logs every call with a timestamp
//! from the gateway's clock, which lets tests assert call budgets and
//! rate-limit schedules precisely.

use std::collections::HashMap;
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::clock::{Clock, SystemClock};
use super::{retryable_status, Backend, BackendError, ChatRequest, EmbedRequest, EndpointConfig, WireEmbedItem};
use crate::error::{QvixError, Result};
use crate::hash::sha256_hex;

/// Script key matched when an endpoint has no dedicated script.
pub const CATCH_ALL_ENDPOINT: &str = "*";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MockMatcher {
    /// Rule fires when the request text contains this substring.
    Substring(String),
    /// Rule fires when the sha-256 hex of the request text starts with this.
    PromptHash(String),
    Always,
}

impl MockMatcher {
    fn matches(&self, text: &str) -> bool {
        match self {
            Self::Substring(needle) => text.contains(needle),
            Self::PromptHash(prefix) => sha256_hex(text.as_bytes()).starts_with(prefix),
            Self::Always => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MockFailure {
    Status(u16),
    Timeout,
    Transport(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MockReply {
    /// Literal reply text; `{seed}` expands to the request's sampling seed.
    Text(String),
    Error(MockFailure),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockRule {
    pub when: MockMatcher,
    pub reply: MockReply,
    /// How many times this rule may fire; unlimited when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub times: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MockScript {
    #[serde(default)]
    pub rules: Vec<MockRule>,
    /// Reply when no rule matches (or all matching rules are exhausted).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default: Option<MockReply>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MockScriptFile {
    #[serde(default)]
    pub scripts: HashMap<String, MockScript>,
    #[serde(default)]
    pub embeddings: HashMap<String, Vec<f64>>,
}

impl MockScriptFile {
    pub fn from_json_str(json: &str) -> Result<Self> {
        let file: Self = serde_json::from_str(json)?;
        file.validate()?;
        Ok(file)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text)
    }

    fn validate(&self) -> Result<()> {
        for (key, vector) in &self.embeddings {
            if vector.is_empty() {
                return Err(QvixError::Config(format!(
                    "mock embedding `{key}` is empty"
                )));
            }
        }
        for rule in self.scripts.values().flat_map(|s| &s.rules) {
            if rule.times == Some(0) {
                return Err(QvixError::Config(
                    "mock rule with times: 0 can never fire".into(),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MockCallKind {
    Chat,
    Embed,
}

/// One recorded backend invocation.
#[derive(Debug, Clone)]
pub struct MockCall {
    pub endpoint_id: String,
    pub kind: MockCallKind,
    /// Joined text view of the request (chat) or item keys (embed).
    pub text: String,
    pub has_image: bool,
    pub seed: Option<u64>,
    pub at_ms: u64,
}

#[derive(Default)]
struct MockState {
    // (endpoint id, rule index) -> times fired.
    fired: HashMap<(String, usize), u32>,
    calls: Vec<MockCall>,
}

pub struct MockBackend {
    file: MockScriptFile,
    clock: Arc<dyn Clock>,
    state: Mutex<MockState>,
}

impl MockBackend {
    pub fn new(file: MockScriptFile) -> Self {
        Self {
            file,
            clock: Arc::new(SystemClock::new()),
            state: Mutex::new(MockState::default()),
        }
    }

    /// Share the gateway's clock so logged timestamps line up with the
    /// throttling schedule under test.
    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn calls(&self) -> Vec<MockCall> {
        self.state.lock().unwrap().calls.clone()
    }

    pub fn chat_call_count(&self, endpoint_id: &str) -> usize {
        self.count(endpoint_id, MockCallKind::Chat)
    }

    pub fn embed_call_count(&self, endpoint_id: &str) -> usize {
        self.count(endpoint_id, MockCallKind::Embed)
    }

    fn count(&self, endpoint_id: &str, kind: MockCallKind) -> usize {
        self.state
            .lock()
            .unwrap()
            .calls
            .iter()
            .filter(|c| c.endpoint_id == endpoint_id && c.kind == kind)
            .count()
    }

    fn script_for(&self, endpoint_id: &str) -> Option<(&str, &MockScript)> {
        self.file
            .scripts
            .get_key_value(endpoint_id)
            .or_else(|| self.file.scripts.get_key_value(CATCH_ALL_ENDPOINT))
            .map(|(k, v)| (k.as_str(), v))
    }

    fn reply_to_result(
        reply: &MockReply,
        seed: Option<u64>,
    ) -> std::result::Result<String, BackendError> {
        match reply {
            MockReply::Text(text) => {
                let seed_text = seed.map_or_else(|| "none".to_string(), |s| s.to_string());
                Ok(text.replace("{seed}", &seed_text))
            }
            MockReply::Error(MockFailure::Status(status)) => {
                let failure = BackendError {
                    message: format!("scripted status {status}"),
                    retryable: retryable_status(*status),
                };
                Err(failure)
            }
            MockReply::Error(MockFailure::Timeout) => {
                Err(BackendError::retryable("scripted timeout"))
            }
            MockReply::Error(MockFailure::Transport(message)) => {
                Err(BackendError::retryable(format!("scripted transport error: {message}")))
            }
        }
    }

    fn lookup_embedding(&self, key: &str) -> Option<Vec<f64>> {
        if let Some(vector) = self.file.embeddings.get(key) {
            return Some(vector.clone());
        }
        // Image paths get suffix matching on a path-component boundary, so
        // scripts can key vectors by manifest-relative paths while requests
        // carry absolute ones.
        self.file
            .embeddings
            .iter()
            .find(|(k, _)| {
                key.ends_with(k.as_str())
                    && key.len() > k.len()
                    && key.as_bytes()[key.len() - k.len() - 1] == b'/'
            })
            .map(|(_, v)| v.clone())
    }
}

impl Backend for MockBackend {
    fn chat(
        &self,
        endpoint: &EndpointConfig,
        request: &ChatRequest,
    ) -> std::result::Result<String, BackendError> {
        let text = request.text_view();
        let seed = request.sampling.seed;
        {
            let mut state = self.state.lock().unwrap();
            state.calls.push(MockCall {
                endpoint_id: endpoint.endpoint_id.clone(),
                kind: MockCallKind::Chat,
                text: text.clone(),
                has_image: request.has_image(),
                seed,
                at_ms: self.clock.now_ms(),
            });
        }
        let Some((script_key, script)) = self.script_for(&endpoint.endpoint_id) else {
            return Err(BackendError::fatal(format!(
                "no mock script for endpoint `{}`",
                endpoint.endpoint_id
            )));
        };
        let script_key = script_key.to_string();
        for (index, rule) in script.rules.iter().enumerate() {
            if !rule.when.matches(&text) {
                continue;
            }
            let mut state = self.state.lock().unwrap();
            let fired = state.fired.entry((script_key.clone(), index)).or_insert(0);
            if rule.times.is_some_and(|limit| *fired >= limit) {
                continue;
            }
            *fired += 1;
            drop(state);
            return Self::reply_to_result(&rule.reply, seed);
        }
        match &script.default {
            Some(reply) => Self::reply_to_result(reply, seed),
            None => Err(BackendError::fatal(format!(
                "mock script `{script_key}` has no matching rule and no default"
            ))),
        }
    }

    fn embed(
        &self,
        endpoint: &EndpointConfig,
        request: &EmbedRequest,
    ) -> std::result::Result<Vec<Vec<f64>>, BackendError> {
        {
            let mut state = self.state.lock().unwrap();
            state.calls.push(MockCall {
                endpoint_id: endpoint.endpoint_id.clone(),
                kind: MockCallKind::Embed,
                text: request.key_view(),
                has_image: request
                    .items
                    .iter()
                    .any(|i| matches!(i, WireEmbedItem::Image { .. })),
                seed: None,
                at_ms: self.clock.now_ms(),
            });
        }
        request
            .items
            .iter()
            .map(|item| {
                let key = match item {
                    WireEmbedItem::Text(t) => t.as_str(),
                    WireEmbedItem::Image { source_path, .. } => source_path.as_str(),
                };
                self.lookup_embedding(key).ok_or_else(|| {
                    BackendError::fatal(format!("mock has no embedding for `{key}`"))
                })
            })
            .collect()
    }
}
