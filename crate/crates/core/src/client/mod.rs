//! Chat-completion client: request/response types, the backend trait, and
//! retry handling. Two backends are provided: [`http::HttpBackend`] speaking
//! the OpenAI-style chat-completions wire protocol, and [`mock::MockBackend`]
//! replaying scripted fixtures for deterministic offline runs.

pub mod http;
pub mod mock;
pub mod template;

use std::path::PathBuf;
use std::time::Duration;

use serde::{Deserialize, Serialize};

pub use mock::MockBackend;
pub use template::{PromptTemplate, TemplateError, TemplateStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(&self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

/// Reference to an image, resolved into the wire payload at send time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageRef {
    Path(PathBuf),
    Url(String),
}

impl ImageRef {
    /// Manifest entries are URLs when they parse as http(s), paths otherwise.
    pub fn parse(s: &str) -> ImageRef {
        if s.starts_with("http://") || s.starts_with("https://") {
            ImageRef::Url(s.to_owned())
        } else {
            ImageRef::Path(PathBuf::from(s))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ContentPart {
    Text(String),
    Image(ImageRef),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub role: Role,
    pub parts: Vec<ContentPart>,
}

impl Message {
    pub fn text(role: Role, text: impl Into<String>) -> Message {
        Message {
            role,
            parts: vec![ContentPart::Text(text.into())],
        }
    }

    /// Concatenated text parts, used for token accounting in the mock backend.
    pub fn text_content(&self) -> String {
        let mut out = String::new();
        for part in &self.parts {
            if let ContentPart::Text(t) = part {
                if !out.is_empty() {
                    out.push('\n');
                }
                out.push_str(t);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub model_name: String,
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Caller-supplied semantic key (`stage:image_id:subtype`-style). The
    /// mock backend resolves fixtures by this key; the HTTP backend ignores
    /// it. Never part of the wire payload.
    pub trace_key: Option<String>,
}

impl ChatRequest {
    pub fn new(model_name: impl Into<String>, messages: Vec<Message>) -> ChatRequest {
        ChatRequest {
            model_name: model_name.into(),
            messages,
            temperature: 0.0,
            max_tokens: 1024,
            trace_key: None,
        }
    }

    pub fn with_model(mut self, model_name: impl Into<String>) -> Self {
        self.model_name = model_name.into();
        self
    }

    pub fn with_trace_key(mut self, key: impl Into<String>) -> Self {
        self.trace_key = Some(key.into());
        self
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn with_max_tokens(mut self, max_tokens: u32) -> Self {
        self.max_tokens = max_tokens;
        self
    }

    /// Attach an image to the last user message.
    pub fn with_image(mut self, image: ImageRef) -> Self {
        if let Some(msg) = self
            .messages
            .iter_mut()
            .rev()
            .find(|m| m.role == Role::User)
        {
            msg.parts.push(ContentPart::Image(image));
        }
        self
    }

    pub fn validate(&self) -> Result<(), ClientError> {
        if !self.messages.iter().any(|m| m.role == Role::User) {
            return Err(ClientError::InvalidRequest(
                "request must contain at least one user message".into(),
            ));
        }
        if self.temperature < 0.0 || !self.temperature.is_finite() {
            return Err(ClientError::InvalidRequest(format!(
                "temperature must be finite and >= 0, got {}",
                self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(ClientError::InvalidRequest("max_tokens must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u32,
    pub completion_tokens: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatResponse {
    /// Verbatim assistant message, untrimmed.
    pub text: String,
    pub finish_reason: String,
    pub usage: Usage,
    pub latency_ms: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("authentication rejected: {0}")]
    Auth(String),
    #[error("placeholder `{0}` is unbound")]
    UnboundPlaceholder(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

/// A vision-capable chat-completion backend. Implementations must be safe to
/// share across the pipeline's concurrent in-flight calls.
pub trait ChatBackend: Send + Sync {
    /// Issue one request. No retries at this level.
    fn complete_once(&self, request: &ChatRequest) -> Result<ChatResponse, ClientError>;
}

impl<B: ChatBackend + ?Sized> ChatBackend for &B {
    fn complete_once(&self, request: &ChatRequest) -> Result<ChatResponse, ClientError> {
        (**self).complete_once(request)
    }
}

/// Retry schedule for transport-level failures. The default waits
/// 1s/2s/4s between the up-to-three retries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub retries: u32,
    pub base_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            retries: 3,
            base_delay_ms: 1000,
        }
    }
}

impl RetryPolicy {
    /// No retries and no waiting, for tests and mock-backed runs.
    pub fn none() -> Self {
        RetryPolicy {
            retries: 0,
            base_delay_ms: 0,
        }
    }
}

/// Issue a request, retrying only transport failures. Protocol and auth
/// errors, and any well-formed model reply (refusals included), are returned
/// as-is on the first occurrence.
pub fn complete(
    backend: &dyn ChatBackend,
    request: &ChatRequest,
    retry: &RetryPolicy,
) -> Result<ChatResponse, ClientError> {
    request.validate()?;
    let mut last: Option<ClientError> = None;
    for attempt in 0..=retry.retries {
        if attempt > 0 {
            let delay = retry.base_delay_ms.saturating_mul(1u64 << (attempt - 1));
            if delay > 0 {
                std::thread::sleep(Duration::from_millis(delay));
            }
        }
        match backend.complete_once(request) {
            Ok(response) => return Ok(response),
            Err(ClientError::Transport { message, .. }) => {
                last = Some(ClientError::Transport {
                    attempts: attempt + 1,
                    message,
                });
            }
            Err(other) => return Err(other),
        }
    }
    Err(last.expect("at least one attempt was made"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicU32, Ordering};

    struct FlakyBackend {
        calls: AtomicU32,
        succeed_on: u32,
    }

    impl ChatBackend for FlakyBackend {
        fn complete_once(&self, _request: &ChatRequest) -> Result<ChatResponse, ClientError> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst) + 1;
            if n >= self.succeed_on {
                Ok(ChatResponse {
                    text: "ok".into(),
                    finish_reason: "stop".into(),
                    usage: Usage::default(),
                    latency_ms: 0,
                })
            } else {
                Err(ClientError::Transport {
                    attempts: 1,
                    message: "connection reset".into(),
                })
            }
        }
    }

    fn request() -> ChatRequest {
        ChatRequest {
            model_name: "test".into(),
            messages: vec![Message::text(Role::User, "hi")],
            temperature: 0.0,
            max_tokens: 16,
            trace_key: None,
        }
    }

    #[test]
    fn transport_failures_are_retried() {
        let backend = FlakyBackend {
            calls: AtomicU32::new(0),
            succeed_on: 3,
        };
        let retry = RetryPolicy {
            retries: 3,
            base_delay_ms: 0,
        };
        let response = complete(&backend, &request(), &retry).unwrap();
        assert_eq!(response.text, "ok");
        assert_eq!(backend.calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn retries_exhaust_into_transport_error() {
        let backend = FlakyBackend {
            calls: AtomicU32::new(0),
            succeed_on: u32::MAX,
        };
        let retry = RetryPolicy {
            retries: 2,
            base_delay_ms: 0,
        };
        let err = complete(&backend, &request(), &retry).unwrap_err();
        match err {
            ClientError::Transport { attempts, .. } => assert_eq!(attempts, 3),
            other => panic!("expected transport error, got {other:?}"),
        }
        assert_eq!(backend.calls.load(Ordering::SeqCst), 3);
    }

    struct AuthBackend {
        calls: AtomicU32,
    }

    impl ChatBackend for AuthBackend {
        fn complete_once(&self, _request: &ChatRequest) -> Result<ChatResponse, ClientError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            Err(ClientError::Auth("bad key".into()))
        }
    }

    #[test]
    fn non_transport_errors_are_not_retried() {
        let backend = AuthBackend {
            calls: AtomicU32::new(0),
        };
        let retry = RetryPolicy {
            retries: 3,
            base_delay_ms: 0,
        };
        let err = complete(&backend, &request(), &retry).unwrap_err();
        assert!(matches!(err, ClientError::Auth(_)));
        assert_eq!(backend.calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn request_without_user_message_is_rejected() {
        let mut req = request();
        req.messages = vec![Message::text(Role::System, "sys")];
        let err = complete(
            &AuthBackend {
                calls: AtomicU32::new(0),
            },
            &req,
            &RetryPolicy::none(),
        )
        .unwrap_err();
        assert!(matches!(err, ClientError::InvalidRequest(_)));
    }
}
