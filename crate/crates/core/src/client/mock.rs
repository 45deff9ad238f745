//! Deterministic scripted backend for tests and offline runs.
//!
//! Replies are keyed by the request's `trace_key` (semantic keys such as
//! `extract:img1:symbolic_meaning`), never by prompt text, so prompt wording
//! can change without invalidating fixtures. Identical (fixture set, request)
//! always yields an identical response.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;

use super::{ChatBackend, ChatRequest, ChatResponse, ClientError, Usage};

#[derive(Debug, Clone, PartialEq)]
pub enum MockReply {
    Text(String),
    /// Simulates a transport-level failure; `complete` retries these.
    TransportFailure(String),
}

#[derive(Debug, Default, Clone)]
pub struct MockBackend {
    replies: BTreeMap<String, MockReply>,
}

/// Fixture file entry: either a plain reply string or a scripted failure.
#[derive(Deserialize)]
#[serde(untagged)]
enum FixtureEntry {
    Text(String),
    Failure { transport_error: String },
}

impl MockBackend {
    pub fn new() -> MockBackend {
        MockBackend::default()
    }

    pub fn with_fixture(mut self, key: &str, text: &str) -> MockBackend {
        self.replies
            .insert(key.to_owned(), MockReply::Text(text.to_owned()));
        self
    }

    pub fn with_failure(mut self, key: &str, message: &str) -> MockBackend {
        self.replies.insert(
            key.to_owned(),
            MockReply::TransportFailure(message.to_owned()),
        );
        self
    }

    /// Loads a JSON fixture file: an object mapping key to reply string or
    /// to `{"transport_error": "..."}`.
    pub fn from_fixture_file(path: &Path) -> Result<MockBackend, ClientError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            ClientError::Protocol(format!("reading fixture file {}: {e}", path.display()))
        })?;
        let entries: BTreeMap<String, FixtureEntry> = serde_json::from_str(&text).map_err(|e| {
            ClientError::Protocol(format!("parsing fixture file {}: {e}", path.display()))
        })?;
        let replies = entries
            .into_iter()
            .map(|(key, entry)| {
                let reply = match entry {
                    FixtureEntry::Text(text) => MockReply::Text(text),
                    FixtureEntry::Failure { transport_error } => {
                        MockReply::TransportFailure(transport_error)
                    }
                };
                (key, reply)
            })
            .collect();
        Ok(MockBackend { replies })
    }

    pub fn len(&self) -> usize {
        self.replies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.replies.is_empty()
    }
}

fn whitespace_tokens(text: &str) -> u32 {
    text.split_whitespace().count() as u32
}

impl ChatBackend for MockBackend {
    fn complete_once(&self, request: &ChatRequest) -> Result<ChatResponse, ClientError> {
        let key = request.trace_key.as_deref().ok_or_else(|| {
            ClientError::Protocol("mock backend requires a trace key on every request".into())
        })?;
        match self.replies.get(key) {
            Some(MockReply::Text(text)) => Ok(ChatResponse {
                text: text.clone(),
                finish_reason: "stop".into(),
                usage: Usage {
                    prompt_tokens: request
                        .messages
                        .iter()
                        .map(|m| whitespace_tokens(&m.text_content()))
                        .sum(),
                    completion_tokens: whitespace_tokens(text),
                },
                latency_ms: 0,
            }),
            Some(MockReply::TransportFailure(message)) => Err(ClientError::Transport {
                attempts: 1,
                message: message.clone(),
            }),
            None => Err(ClientError::Protocol(format!(
                "no fixture for key `{key}`"
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::client::{complete, Message, RetryPolicy, Role};

    fn request(key: &str) -> ChatRequest {
        ChatRequest::new("mock-model", vec![Message::text(Role::User, "hi there")])
            .with_trace_key(key)
    }

    #[test]
    fn scripted_fixture_echoes() {
        let backend = MockBackend::new()
            .with_fixture("extract:img1:symbolic_meaning", "The hexagonal sign means stop.");
        let response = backend
            .complete_once(&request("extract:img1:symbolic_meaning"))
            .unwrap();
        assert_eq!(response.text, "The hexagonal sign means stop.");
        assert_eq!(response.usage.completion_tokens, 5);
        assert_eq!(response.latency_ms, 0);
    }

    #[test]
    fn unknown_key_is_protocol_error() {
        let backend = MockBackend::new();
        assert!(matches!(
            backend.complete_once(&request("missing")),
            Err(ClientError::Protocol(_))
        ));
    }

    #[test]
    fn missing_trace_key_is_protocol_error() {
        let backend = MockBackend::new().with_fixture("k", "v");
        let request = ChatRequest::new("m", vec![Message::text(Role::User, "hi")]);
        assert!(matches!(
            backend.complete_once(&request),
            Err(ClientError::Protocol(_))
        ));
    }

    #[test]
    fn bit_deterministic_across_calls() {
        let backend = MockBackend::new().with_fixture("k", "same reply");
        let a = backend.complete_once(&request("k")).unwrap();
        let b = backend.complete_once(&request("k")).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn scripted_failure_exhausts_retries() {
        let backend = MockBackend::new().with_failure("k", "connection reset");
        let err = complete(&backend, &request("k"), &RetryPolicy::none()).unwrap_err();
        assert!(matches!(err, ClientError::Transport { .. }));
    }

    #[test]
    fn fixture_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fixtures.json");
        std::fs::write(
            &path,
            r#"{"a:b:c": "reply text", "bad:key": {"transport_error": "boom"}}"#,
        )
        .unwrap();
        let backend = MockBackend::from_fixture_file(&path).unwrap();
        assert_eq!(backend.len(), 2);
        assert_eq!(
            backend.complete_once(&request("a:b:c")).unwrap().text,
            "reply text"
        );
        assert!(matches!(
            backend.complete_once(&request("bad:key")),
            Err(ClientError::Transport { message, .. }) if message == "boom"
        ));
    }
}
