//! HTTP backend speaking the common chat-completions wire format:
//! `POST {base_url}/v1/chat/completions` with content-part arrays (images as
//! base64 data URLs) and `POST {base_url}/v1/embeddings` for vectors.

use std::time::Duration;

use serde_json::{json, Value};

use super::{
    retryable_status, Backend, BackendError, ChatRequest, EmbedRequest, EndpointConfig, WirePart,
    WireEmbedItem,
};
use crate::model::Role;

pub struct HttpBackend {
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    pub fn new() -> crate::error::Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .build()
            .map_err(|e| crate::error::QvixError::Config(format!("http client: {e}")))?;
        Ok(Self { client })
    }

    /// Bearer token, read from the environment at request time. Only the
    /// variable name ever appears in configs or error messages.
    fn api_key(endpoint: &EndpointConfig) -> Result<Option<String>, BackendError> {
        match &endpoint.api_key_env {
            None => Ok(None),
            Some(var) => std::env::var(var).map(Some).map_err(|_| {
                BackendError::fatal(format!(
                    "environment variable `{var}` for endpoint `{}` is not set",
                    endpoint.endpoint_id
                ))
            }),
        }
    }

    fn post(
        &self,
        endpoint: &EndpointConfig,
        path: &str,
        body: &Value,
    ) -> Result<Value, BackendError> {
        let url = format!("{}{path}", endpoint.base_url.trim_end_matches('/'));
        let mut request = self
            .client
            .post(url)
            .timeout(Duration::from_millis(endpoint.limits.timeout_ms))
            .json(body);
        if let Some(key) = Self::api_key(endpoint)? {
            request = request.bearer_auth(key);
        }
        let response = request.send().map_err(|e| BackendError {
            message: if e.is_timeout() {
                format!("request timed out after {}ms", endpoint.limits.timeout_ms)
            } else {
                format!("transport error: {e}")
            },
            retryable: true,
        })?;
        let status = response.status().as_u16();
        let text = response
            .text()
            .map_err(|e| BackendError::retryable(format!("reading response body: {e}")))?;
        if !(200..300).contains(&status) {
            let snippet: String = text.chars().take(200).collect();
            return Err(BackendError {
                message: format!("HTTP {status}: {snippet}"),
                retryable: retryable_status(status),
            });
        }
        serde_json::from_str(&text)
            .map_err(|e| BackendError::fatal(format!("malformed JSON response: {e}")))
    }
}

fn data_url(media_type: &str, data_b64: &str) -> String {
    format!("data:{media_type};base64,{data_b64}")
}

pub fn build_chat_body(endpoint: &EndpointConfig, request: &ChatRequest) -> Value {
    let messages: Vec<Value> = request
        .messages
        .iter()
        .map(|message| {
            let role = match message.role {
                Role::System => "system",
                Role::User => "user",
            };
            let content: Vec<Value> = message
                .parts
                .iter()
                .map(|part| match part {
                    WirePart::Text(text) => json!({"type": "text", "text": text}),
                    WirePart::Image {
                        media_type,
                        data_b64,
                        ..
                    } => json!({
                        "type": "image_url",
                        "image_url": {"url": data_url(media_type, data_b64)}
                    }),
                })
                .collect();
            json!({"role": role, "content": content})
        })
        .collect();
    let mut body = json!({
        "model": endpoint.model,
        "messages": messages,
        "temperature": request.sampling.temperature,
        "max_tokens": request.sampling.max_tokens,
    });
    if let Some(seed) = request.sampling.seed {
        body["seed"] = json!(seed);
    }
    body
}

pub fn parse_chat_response(value: &Value) -> Result<String, BackendError> {
    let content = value
        .pointer("/choices/0/message/content")
        .ok_or_else(|| BackendError::fatal("response has no choices[0].message.content"))?;
    match content {
        Value::String(text) => Ok(text.clone()),
        // Some servers return the content as typed parts.
        Value::Array(parts) => {
            let texts: Vec<&str> = parts
                .iter()
                .filter_map(|p| p.get("text").and_then(Value::as_str))
                .collect();
            if texts.is_empty() {
                Err(BackendError::fatal("response content parts carry no text"))
            } else {
                Ok(texts.join(""))
            }
        }
        _ => Err(BackendError::fatal("unexpected content type in response")),
    }
}

pub fn build_embed_body(endpoint: &EndpointConfig, request: &EmbedRequest) -> Value {
    let input: Vec<Value> = request
        .items
        .iter()
        .map(|item| match item {
            WireEmbedItem::Text(text) => json!(text),
            WireEmbedItem::Image {
                media_type,
                data_b64,
                ..
            } => json!(data_url(media_type, data_b64)),
        })
        .collect();
    json!({"model": endpoint.model, "input": input})
}

pub fn parse_embed_response(value: &Value) -> Result<Vec<Vec<f64>>, BackendError> {
    let data = value
        .get("data")
        .and_then(Value::as_array)
        .ok_or_else(|| BackendError::fatal("embedding response has no data array"))?;
    let mut rows: Vec<(usize, Vec<f64>)> = Vec::with_capacity(data.len());
    for (position, row) in data.iter().enumerate() {
        let index = row
            .get("index")
            .and_then(Value::as_u64)
            .map(|i| i as usize)
            .unwrap_or(position);
        let embedding = row
            .get("embedding")
            .and_then(Value::as_array)
            .ok_or_else(|| BackendError::fatal("embedding row has no vector"))?
            .iter()
            .map(|x| {
                x.as_f64()
                    .ok_or_else(|| BackendError::fatal("non-numeric embedding component"))
            })
            .collect::<Result<Vec<f64>, _>>()?;
        rows.push((index, embedding));
    }
    rows.sort_by_key(|(index, _)| *index);
    Ok(rows.into_iter().map(|(_, v)| v).collect())
}

impl Backend for HttpBackend {
    fn chat(
        &self,
        endpoint: &EndpointConfig,
        request: &ChatRequest,
    ) -> Result<String, BackendError> {
        let body = build_chat_body(endpoint, request);
        let response = self.post(endpoint, "/v1/chat/completions", &body)?;
        parse_chat_response(&response)
    }

    fn embed(
        &self,
        endpoint: &EndpointConfig,
        request: &EmbedRequest,
    ) -> Result<Vec<Vec<f64>>, BackendError> {
        let body = build_embed_body(endpoint, request);
        let response = self.post(endpoint, "/v1/embeddings", &body)?;
        parse_embed_response(&response)
    }
}
