//! HTTP backend speaking the OpenAI-style chat-completions wire protocol.
//!
//! POSTs to `endpoint + path` with optional bearer auth. Local image files
//! are base64-encoded into `data:` URLs at send time; image URLs pass
//! through untouched. `trace_key` never reaches the wire.

use std::path::Path;
use std::time::{Duration, Instant};

use base64::Engine as _;
use serde_json::{json, Value};

use super::{ChatBackend, ChatRequest, ChatResponse, ClientError, ContentPart, ImageRef, Usage};

pub const DEFAULT_COMPLETIONS_PATH: &str = "/v1/chat/completions";

#[derive(Debug)]
pub struct HttpBackend {
    url: String,
    bearer_token: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    pub fn new(endpoint: &str, path: &str, timeout: Duration) -> Result<HttpBackend, ClientError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| ClientError::Protocol(format!("building http client: {e}")))?;
        Ok(HttpBackend {
            url: format!("{}{}", endpoint.trim_end_matches('/'), path),
            bearer_token: None,
            client,
        })
    }

    pub fn with_bearer_token(mut self, token: impl Into<String>) -> HttpBackend {
        self.bearer_token = Some(token.into());
        self
    }

    pub fn url(&self) -> &str {
        &self.url
    }
}

fn mime_for(path: &Path) -> &'static str {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .as_deref()
    {
        Some("png") => "image/png",
        Some("jpg") | Some("jpeg") => "image/jpeg",
        Some("gif") => "image/gif",
        Some("webp") => "image/webp",
        Some("bmp") => "image/bmp",
        _ => "application/octet-stream",
    }
}

fn image_url(image: &ImageRef) -> Result<String, ClientError> {
    match image {
        ImageRef::Url(url) => Ok(url.clone()),
        ImageRef::Path(path) => {
            let bytes = std::fs::read(path).map_err(|e| {
                ClientError::InvalidRequest(format!("reading image {}: {e}", path.display()))
            })?;
            let encoded = base64::engine::general_purpose::STANDARD.encode(bytes);
            Ok(format!("data:{};base64,{encoded}", mime_for(path)))
        }
    }
}

/// Single text part serializes as a plain string; anything else becomes a
/// content-parts array, the vision convention.
fn message_content(parts: &[ContentPart]) -> Result<Value, ClientError> {
    if let [ContentPart::Text(text)] = parts {
        return Ok(Value::String(text.clone()));
    }
    let mut out = Vec::with_capacity(parts.len());
    for part in parts {
        out.push(match part {
            ContentPart::Text(text) => json!({"type": "text", "text": text}),
            ContentPart::Image(image) => {
                json!({"type": "image_url", "image_url": {"url": image_url(image)?}})
            }
        });
    }
    Ok(Value::Array(out))
}

fn wire_payload(request: &ChatRequest) -> Result<Value, ClientError> {
    let messages = request
        .messages
        .iter()
        .map(|m| {
            Ok(json!({
                "role": m.role.as_str(),
                "content": message_content(&m.parts)?,
            }))
        })
        .collect::<Result<Vec<_>, ClientError>>()?;
    Ok(json!({
        "model": request.model_name,
        "messages": messages,
        "temperature": request.temperature,
        "max_tokens": request.max_tokens,
    }))
}

fn parse_body(body: &str) -> Result<(String, String, Usage), ClientError> {
    let value: Value = serde_json::from_str(body)
        .map_err(|e| ClientError::Protocol(format!("response body is not JSON: {e}")))?;
    let choice = value
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| ClientError::Protocol("response has no choices".into()))?;
    let text = choice
        .pointer("/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| ClientError::Protocol("choice has no message content".into()))?
        .to_owned();
    let finish_reason = choice
        .get("finish_reason")
        .and_then(Value::as_str)
        .unwrap_or("unknown")
        .to_owned();
    let usage = Usage {
        prompt_tokens: value
            .pointer("/usage/prompt_tokens")
            .and_then(Value::as_u64)
            .unwrap_or(0) as u32,
        completion_tokens: value
            .pointer("/usage/completion_tokens")
            .and_then(Value::as_u64)
            .unwrap_or(0) as u32,
    };
    Ok((text, finish_reason, usage))
}

impl ChatBackend for HttpBackend {
    fn complete_once(&self, request: &ChatRequest) -> Result<ChatResponse, ClientError> {
        let payload = wire_payload(request)?;
        let started = Instant::now();
        let mut builder = self.client.post(&self.url).json(&payload);
        if let Some(token) = &self.bearer_token {
            builder = builder.bearer_auth(token);
        }
        let response = builder.send().map_err(|e| ClientError::Transport {
            attempts: 1,
            message: e.to_string(),
        })?;
        let status = response.status();
        let body = response.text().map_err(|e| ClientError::Transport {
            attempts: 1,
            message: format!("reading response body: {e}"),
        })?;
        let latency_ms = started.elapsed().as_millis() as u64;

        if status.as_u16() == 401 || status.as_u16() == 403 {
            return Err(ClientError::Auth(format!("{status}: {}", body.trim())));
        }
        if status.is_server_error() {
            return Err(ClientError::Transport {
                attempts: 1,
                message: format!("{status}: {}", body.trim()),
            });
        }
        if !status.is_success() {
            return Err(ClientError::Protocol(format!("{status}: {}", body.trim())));
        }

        let (text, finish_reason, usage) = parse_body(&body)?;
        Ok(ChatResponse {
            text,
            finish_reason,
            usage,
            latency_ms,
        })
    }
}
