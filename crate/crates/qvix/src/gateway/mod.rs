//! Model gateway: turns prompt bundles into backend requests and handles
//! everything operational on the way — request fingerprinting, response
//! caching, client-side throttling, and retries with capped backoff.
//!
//! Backends are pluggable: [`http::HttpBackend`] speaks the common
//! chat-completions wire format, [`mock::MockBackend`] replays a scripted
//! transcript for offline runs and tests.

pub mod cache;
pub mod clock;
pub mod http;
mod limiter;
pub mod mock;

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::{Arc, Mutex};

use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{QvixError, Result};
use crate::hash::{canonical_value_hash, sha256_hex};
use crate::model::{Part, PromptBundle, Role, Sampling};
use crate::rng::SplitMix64;

pub use cache::ResponseCache;
pub use clock::{Clock, ManualClock, SystemClock};

use limiter::{InFlightGate, RateLimiter};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndpointKind {
    #[default]
    Chat,
    Embed,
}

/// Client-side operational limits for one endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Limits {
    pub max_in_flight: usize,
    pub requests_per_minute: u32,
    /// Retries after the initial attempt.
    pub max_retries: u32,
    pub backoff_base_ms: u64,
    pub timeout_ms: u64,
}

impl Default for Limits {
    fn default() -> Self {
        Self {
            max_in_flight: 4,
            requests_per_minute: 60,
            max_retries: 3,
            backoff_base_ms: 500,
            timeout_ms: 60_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointConfig {
    pub endpoint_id: String,
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token. Only the
    /// variable name is stored and serialized; the key itself is read from
    /// the environment at request time and never written anywhere.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default)]
    pub kind: EndpointKind,
    #[serde(default)]
    pub limits: Limits,
}

impl EndpointConfig {
    pub fn validate(&self) -> Result<()> {
        if self.endpoint_id.trim().is_empty() {
            return Err(QvixError::Config("endpoint_id must be non-empty".into()));
        }
        if self.model.trim().is_empty() {
            return Err(QvixError::Config(format!(
                "endpoint `{}` has no model name",
                self.endpoint_id
            )));
        }
        Ok(())
    }
}

/// Backend failure plus whether the gateway may retry it.
#[derive(Debug, Clone)]
pub struct BackendError {
    pub message: String,
    pub retryable: bool,
}

impl BackendError {
    pub fn retryable(message: impl Into<String>) -> Self {
        Self {
            message: message.into(),
            retryable: true,
        }
    }

    pub fn fatal(message: impl Into<String>) -> Self {
        Self {
            message: message.into(),
            retryable: false,
        }
    }
}

/// Timeouts, rate limits, and server errors are worth retrying; other
/// client errors are not.
pub fn retryable_status(status: u16) -> bool {
    status == 408 || status == 429 || (500..600).contains(&status)
}

/// One resolved content part: text, or an image inlined as base64 with its
/// content hash (so fingerprints depend on bytes, not paths).
#[derive(Debug, Clone)]
pub enum WirePart {
    Text(String),
    Image {
        media_type: String,
        data_b64: String,
        content_sha256: String,
    },
}

#[derive(Debug, Clone)]
pub struct WireMessage {
    pub role: Role,
    pub parts: Vec<WirePart>,
}

#[derive(Debug, Clone)]
pub struct ChatRequest {
    pub messages: Vec<WireMessage>,
    pub sampling: Sampling,
    pub fingerprint: String,
}

impl ChatRequest {
    /// All text parts joined with blank lines — what a text-only backend
    /// sends, and what mock matchers inspect.
    pub fn text_view(&self) -> String {
        let blocks: Vec<&str> = self
            .messages
            .iter()
            .flat_map(|m| &m.parts)
            .filter_map(|p| match p {
                WirePart::Text(t) => Some(t.as_str()),
                WirePart::Image { .. } => None,
            })
            .collect();
        blocks.join("\n\n")
    }

    pub fn has_image(&self) -> bool {
        self.messages
            .iter()
            .flat_map(|m| &m.parts)
            .any(|p| matches!(p, WirePart::Image { .. }))
    }
}

/// Input to [`Gateway::embed`]: raw text or an image file.
#[derive(Debug, Clone)]
pub enum EmbedInput {
    Text(String),
    Image(std::path::PathBuf),
}

#[derive(Debug, Clone)]
pub enum WireEmbedItem {
    Text(String),
    Image {
        /// Path as supplied by the caller; mocks match scripted vectors
        /// against it, HTTP backends ignore it.
        source_path: String,
        media_type: String,
        data_b64: String,
        content_sha256: String,
    },
}

#[derive(Debug, Clone)]
pub struct EmbedRequest {
    pub items: Vec<WireEmbedItem>,
    pub fingerprint: String,
}

impl EmbedRequest {
    pub fn key_view(&self) -> String {
        let keys: Vec<&str> = self
            .items
            .iter()
            .map(|i| match i {
                WireEmbedItem::Text(t) => t.as_str(),
                WireEmbedItem::Image { source_path, .. } => source_path.as_str(),
            })
            .collect();
        keys.join("\n")
    }
}

pub trait Backend: Send + Sync {
    fn chat(
        &self,
        endpoint: &EndpointConfig,
        request: &ChatRequest,
    ) -> std::result::Result<String, BackendError>;

    fn embed(
        &self,
        endpoint: &EndpointConfig,
        request: &EmbedRequest,
    ) -> std::result::Result<Vec<Vec<f64>>, BackendError>;
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GatewayStats {
    /// Attempts handed to the backend, retries included.
    pub requests: u64,
    /// Retries after an initial attempt.
    pub retries: u64,
    /// Responses served from the cache without touching the backend.
    pub cache_hits: u64,
}

#[derive(Debug, Clone)]
pub struct CallOutcome {
    pub text: String,
    pub fingerprint: String,
}

pub const BACKOFF_CAP_MS: u64 = 30_000;

/// Exponential backoff with deterministic jitter: `base * 2^attempt` capped
/// at 30s, plus a jitter in `[0, base)` derived from the request fingerprint
/// so reruns sleep identically.
fn backoff_delay_ms(base_ms: u64, attempt: u32, fingerprint: &str) -> u64 {
    let base = base_ms.max(1);
    let raw = base.saturating_mul(1u64 << attempt.min(20));
    let seed_hex = &fingerprint[..fingerprint.len().min(16)];
    let seed = u64::from_str_radix(seed_hex, 16).unwrap_or(0) ^ u64::from(attempt);
    let jitter = SplitMix64::new(seed).next_below(base);
    raw.min(BACKOFF_CAP_MS).saturating_add(jitter).min(BACKOFF_CAP_MS)
}

fn media_type_for(path: &str) -> Result<&'static str> {
    let extension = Path::new(path)
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default();
    match extension.as_str() {
        "png" => Ok("image/png"),
        "jpg" | "jpeg" => Ok("image/jpeg"),
        "gif" => Ok("image/gif"),
        "webp" => Ok("image/webp"),
        "bmp" => Ok("image/bmp"),
        other => Err(QvixError::Image {
            path: path.to_string(),
            message: if other.is_empty() {
                "missing image extension".to_string()
            } else {
                format!("unsupported image extension `{other}`")
            },
        }),
    }
}

fn load_image(path: &str) -> Result<(String, String, String)> {
    let media_type = media_type_for(path)?.to_string();
    let bytes = std::fs::read(path).map_err(|e| QvixError::Image {
        path: path.to_string(),
        message: e.to_string(),
    })?;
    let content_sha256 = sha256_hex(&bytes);
    let data_b64 = base64::engine::general_purpose::STANDARD.encode(&bytes);
    Ok((media_type, data_b64, content_sha256))
}

fn role_name(role: Role) -> &'static str {
    match role {
        Role::System => "system",
        Role::User => "user",
    }
}

fn sampling_fingerprint(sampling: &Sampling) -> serde_json::Value {
    json!({
        "temperature": sampling.temperature,
        "max_tokens": sampling.max_tokens,
        "seed": sampling.seed,
    })
}

/// Resolve a bundle into a wire request, inlining image bytes and computing
/// the content-addressed fingerprint.
pub fn chat_request_for(endpoint: &EndpointConfig, bundle: &PromptBundle) -> Result<ChatRequest> {
    bundle.validate()?;
    let mut messages = Vec::with_capacity(bundle.segments.len());
    for segment in &bundle.segments {
        let mut parts = Vec::with_capacity(segment.parts.len());
        for part in &segment.parts {
            match part {
                Part::Text(text) => parts.push(WirePart::Text(text.clone())),
                Part::Image(path) => {
                    let (media_type, data_b64, content_sha256) = load_image(path)?;
                    parts.push(WirePart::Image {
                        media_type,
                        data_b64,
                        content_sha256,
                    });
                }
            }
        }
        messages.push(WireMessage {
            role: segment.role,
            parts,
        });
    }

    let message_view: Vec<serde_json::Value> = messages
        .iter()
        .map(|m| {
            let parts: Vec<serde_json::Value> = m
                .parts
                .iter()
                .map(|p| match p {
                    WirePart::Text(t) => json!({"text": t}),
                    WirePart::Image { content_sha256, .. } => json!({"image": content_sha256}),
                })
                .collect();
            json!({"role": role_name(m.role), "parts": parts})
        })
        .collect();
    let fingerprint = canonical_value_hash(&json!({
        "kind": "chat",
        "endpoint": endpoint.endpoint_id,
        "model": endpoint.model,
        "sampling": sampling_fingerprint(&bundle.sampling),
        "messages": message_view,
    }));

    Ok(ChatRequest {
        messages,
        sampling: bundle.sampling.clone(),
        fingerprint,
    })
}

struct EndpointGate {
    rate: RateLimiter,
    inflight: InFlightGate,
}

pub struct Gateway {
    endpoints: BTreeMap<String, EndpointConfig>,
    gates: BTreeMap<String, EndpointGate>,
    backend: Arc<dyn Backend>,
    clock: Arc<dyn Clock>,
    response_cache: Option<ResponseCache>,
    stats: Mutex<GatewayStats>,
}

impl Gateway {
    pub fn new(
        endpoints: impl IntoIterator<Item = EndpointConfig>,
        backend: Arc<dyn Backend>,
        clock: Arc<dyn Clock>,
    ) -> Result<Self> {
        let mut map = BTreeMap::new();
        let mut gates = BTreeMap::new();
        for endpoint in endpoints {
            endpoint.validate()?;
            let id = endpoint.endpoint_id.clone();
            gates.insert(
                id.clone(),
                EndpointGate {
                    rate: RateLimiter::new(endpoint.limits.requests_per_minute),
                    inflight: InFlightGate::new(endpoint.limits.max_in_flight),
                },
            );
            if map.insert(id.clone(), endpoint).is_some() {
                return Err(QvixError::Config(format!("duplicate endpoint id `{id}`")));
            }
        }
        Ok(Self {
            endpoints: map,
            gates,
            backend,
            clock,
            response_cache: None,
            stats: Mutex::new(GatewayStats::default()),
        })
    }

    /// Attach a response cache. Only greedy (temperature 0.0) chat calls are
    /// cached; stochastic generation must stay live.
    pub fn with_response_cache(mut self, cache: ResponseCache) -> Self {
        self.response_cache = Some(cache);
        self
    }

    pub fn stats(&self) -> GatewayStats {
        self.stats.lock().unwrap().clone()
    }

    fn endpoint(&self, endpoint_id: &str) -> Result<&EndpointConfig> {
        self.endpoints
            .get(endpoint_id)
            .ok_or_else(|| QvixError::Config(format!("unknown endpoint `{endpoint_id}`")))
    }

    /// Single-flight, content-addressed memoization of `compute` under `key`.
    /// Without an attached cache this degrades to calling `compute` directly.
    pub fn cached_call(
        &self,
        key: &str,
        compute: impl FnOnce() -> Result<String>,
    ) -> Result<String> {
        match &self.response_cache {
            Some(cache) => {
                if let Some(hit) = cache.lookup(key) {
                    self.stats.lock().unwrap().cache_hits += 1;
                    return Ok(hit);
                }
                cache.get_or_compute(key, compute)
            }
            None => compute(),
        }
    }

    /// Send a text-only prompt (no image) and return the reply text.
    pub fn complete_text(
        &self,
        endpoint_id: &str,
        prompt: &str,
        sampling: &Sampling,
    ) -> Result<CallOutcome> {
        let bundle = PromptBundle::user_turn(None, vec![prompt.to_string()], sampling.clone());
        self.complete_multimodal(endpoint_id, &bundle)
    }

    /// Send a composed bundle (image plus text blocks) and return the reply.
    pub fn complete_multimodal(
        &self,
        endpoint_id: &str,
        bundle: &PromptBundle,
    ) -> Result<CallOutcome> {
        let endpoint = self.endpoint(endpoint_id)?;
        if endpoint.kind != EndpointKind::Chat {
            return Err(QvixError::Config(format!(
                "endpoint `{endpoint_id}` is not a chat endpoint"
            )));
        }
        let request = chat_request_for(endpoint, bundle)?;
        let fingerprint = request.fingerprint.clone();
        let text = if bundle.sampling.temperature == 0.0 && self.response_cache.is_some() {
            self.cached_call(&fingerprint, || self.dispatch_chat(endpoint, &request))?
        } else {
            self.dispatch_chat(endpoint, &request)?
        };
        Ok(CallOutcome { text, fingerprint })
    }

    /// Embed a batch of texts and/or images; vectors come back unit-length,
    /// in input order.
    pub fn embed(&self, endpoint_id: &str, inputs: &[EmbedInput]) -> Result<Vec<Vec<f64>>> {
        if inputs.is_empty() {
            return Err(QvixError::Invalid("embed requires at least one input".into()));
        }
        let endpoint = self.endpoint(endpoint_id)?;
        if endpoint.kind != EndpointKind::Embed {
            return Err(QvixError::Config(format!(
                "endpoint `{endpoint_id}` is not an embedding endpoint"
            )));
        }
        let mut items = Vec::with_capacity(inputs.len());
        for input in inputs {
            match input {
                EmbedInput::Text(text) => items.push(WireEmbedItem::Text(text.clone())),
                EmbedInput::Image(path) => {
                    let path_str = path.to_string_lossy().into_owned();
                    let (media_type, data_b64, content_sha256) = load_image(&path_str)?;
                    items.push(WireEmbedItem::Image {
                        source_path: path_str,
                        media_type,
                        data_b64,
                        content_sha256,
                    });
                }
            }
        }
        let item_view: Vec<serde_json::Value> = items
            .iter()
            .map(|i| match i {
                WireEmbedItem::Text(t) => json!({"text": t}),
                WireEmbedItem::Image { content_sha256, .. } => json!({"image": content_sha256}),
            })
            .collect();
        let fingerprint = canonical_value_hash(&json!({
            "kind": "embed",
            "endpoint": endpoint.endpoint_id,
            "model": endpoint.model,
            "items": item_view,
        }));
        let request = EmbedRequest { items, fingerprint };

        let vectors = self.dispatch(endpoint, &request.fingerprint, || {
            self.backend.embed(endpoint, &request)
        })?;
        if vectors.len() != inputs.len() {
            return Err(QvixError::Endpoint {
                endpoint_id: endpoint_id.to_string(),
                message: format!(
                    "expected {} embedding vectors, got {}",
                    inputs.len(),
                    vectors.len()
                ),
            });
        }
        vectors.into_iter().map(|v| normalize_unit(&v)).collect()
    }

    fn dispatch_chat(&self, endpoint: &EndpointConfig, request: &ChatRequest) -> Result<String> {
        self.dispatch(endpoint, &request.fingerprint, || {
            self.backend.chat(endpoint, request)
        })
    }

    /// Shared retry loop: throttle, attempt, and on a retryable failure
    /// sleep with capped exponential backoff before trying again.
    fn dispatch<T>(
        &self,
        endpoint: &EndpointConfig,
        fingerprint: &str,
        attempt_once: impl Fn() -> std::result::Result<T, BackendError>,
    ) -> Result<T> {
        let gate = &self.gates[&endpoint.endpoint_id];
        let mut attempt: u32 = 0;
        loop {
            let outcome = {
                let _permit = gate.inflight.acquire();
                gate.rate.acquire(self.clock.as_ref());
                self.stats.lock().unwrap().requests += 1;
                attempt_once()
            };
            match outcome {
                Ok(value) => return Ok(value),
                Err(failure) if failure.retryable && attempt < endpoint.limits.max_retries => {
                    self.stats.lock().unwrap().retries += 1;
                    let delay =
                        backoff_delay_ms(endpoint.limits.backoff_base_ms, attempt, fingerprint);
                    self.clock.sleep_ms(delay);
                    attempt += 1;
                }
                Err(failure) => {
                    return Err(QvixError::Endpoint {
                        endpoint_id: endpoint.endpoint_id.clone(),
                        message: failure.message,
                    })
                }
            }
        }
    }
}

/// Scale to unit length; rejects zero or non-finite vectors.
pub fn normalize_unit(vector: &[f64]) -> Result<Vec<f64>> {
    let norm_sq: f64 = vector.iter().map(|x| x * x).sum();
    if !norm_sq.is_finite() || norm_sq == 0.0 {
        return Err(QvixError::Embedding(
            "cannot normalize a zero or non-finite vector".into(),
        ));
    }
    let norm = norm_sq.sqrt();
    Ok(vector.iter().map(|x| x / norm).collect())
}
