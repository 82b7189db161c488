//! Provider-agnostic chat completion with deterministic offline fixtures.

pub mod http;
pub mod mock;
pub mod ratelimit;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use http::{HttpConfig, HttpProvider, HttpTransport, RetryPolicy, UreqTransport};
pub use mock::{FixtureEntry, Fixtures, FnProvider, MockProvider, RecordingProvider};
pub use ratelimit::RateLimiter;

/// Instruction appended after a completion that failed validation.
pub const CORRECTIVE_INSTRUCTION: &str = "Return only the requested structure.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResponseFormat {
    Text,
    Structured,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub temperature: f64,
    pub seed: Option<u64>,
    pub response_format: ResponseFormat,
    pub max_output: Option<u32>,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            seed: None,
            response_format: ResponseFormat::Text,
            max_output: None,
        }
    }
}

impl GenerationParams {
    pub fn structured(mut self) -> Self {
        self.response_format = ResponseFormat::Structured;
        self
    }

    pub fn text(mut self) -> Self {
        self.response_format = ResponseFormat::Text;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Completion {
    pub content: String,
    pub fingerprint: String,
}

/// One request/response pair, kept for traces.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exchange {
    pub messages: Vec<ChatMessage>,
    pub completion: Completion,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AttemptRecord {
    pub attempt: u32,
    pub outcome: String,
}

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("empty message list")]
    NoMessages,
    #[error("no fixture for request fingerprint {0}")]
    MissingFixture(String),
    #[error("request failed after {} attempt(s): {}", .attempts.len(), .attempts.last().map_or("", |a| a.outcome.as_str()))]
    Http { attempts: Vec<AttemptRecord> },
    #[error("unexpected response body: {0}")]
    BadResponse(String),
    #[error("invalid structured output after retry: {reason}")]
    InvalidStructure { reason: String, exchanges: Vec<Exchange> },
    #[error("fixture file {path}: {message}")]
    Fixture { path: String, message: String },
    #[error("provider configuration: {0}")]
    Config(String),
}

/// A chat-completion backend. Implementations must be shareable across
/// worker threads.
pub trait ChatProvider: Send + Sync {
    fn model(&self) -> &str;
    fn complete(&self, messages: &[ChatMessage], params: &GenerationParams) -> Result<Completion, LlmError>;
}

impl<T: ChatProvider + ?Sized> ChatProvider for &T {
    fn model(&self) -> &str {
        (**self).model()
    }

    fn complete(&self, messages: &[ChatMessage], params: &GenerationParams) -> Result<Completion, LlmError> {
        (**self).complete(messages, params)
    }
}

impl<T: ChatProvider + ?Sized> ChatProvider for Box<T> {
    fn model(&self) -> &str {
        (**self).model()
    }

    fn complete(&self, messages: &[ChatMessage], params: &GenerationParams) -> Result<Completion, LlmError> {
        (**self).complete(messages, params)
    }
}

#[derive(Serialize)]
struct FingerprintInput<'a> {
    model: &'a str,
    params: &'a GenerationParams,
    messages: &'a [ChatMessage],
}

/// SHA-256 over a canonical JSON encoding of (model, params, messages).
pub fn fingerprint(model: &str, messages: &[ChatMessage], params: &GenerationParams) -> String {
    let canonical = serde_json::to_vec(&FingerprintInput {
        model,
        params,
        messages,
    })
    .expect("fingerprint input always serializes");
    hex::encode(Sha256::digest(&canonical))
}

/// Result of a validated completion with every exchange it took.
#[derive(Debug, Clone)]
pub struct Structured<T> {
    pub value: T,
    pub exchanges: Vec<Exchange>,
}

/// Completes and validates. On a failed check the failed output is appended
/// as an assistant turn followed by a corrective user turn, and the request is
/// retried once.
pub fn complete_structured<T>(
    provider: &dyn ChatProvider,
    messages: &[ChatMessage],
    params: &GenerationParams,
    check: impl Fn(&str) -> Result<T, String>,
) -> Result<Structured<T>, LlmError> {
    if messages.is_empty() {
        return Err(LlmError::NoMessages);
    }
    let first = provider.complete(messages, params)?;
    let mut exchanges = vec![Exchange {
        messages: messages.to_vec(),
        completion: first.clone(),
    }];
    let first_reason = match check(&first.content) {
        Ok(value) => return Ok(Structured { value, exchanges }),
        Err(reason) => reason,
    };
    let mut retry = messages.to_vec();
    retry.push(ChatMessage::assistant(first.content));
    retry.push(ChatMessage::user(CORRECTIVE_INSTRUCTION));
    let second = provider.complete(&retry, params)?;
    exchanges.push(Exchange {
        messages: retry,
        completion: second.clone(),
    });
    match check(&second.content) {
        Ok(value) => Ok(Structured { value, exchanges }),
        Err(reason) => Err(LlmError::InvalidStructure {
            reason: format!("{first_reason}; then {reason}"),
            exchanges,
        }),
    }
}

/// Strict user/assistant alternation after an optional leading system turn,
/// ending in a user turn.
pub fn roles_alternate(messages: &[ChatMessage]) -> bool {
    let rest = match messages.first() {
        Some(m) if m.role == Role::System => &messages[1..],
        _ => messages,
    };
    !rest.is_empty()
        && rest.len() % 2 == 1
        && rest.iter().enumerate().all(|(i, m)| {
            m.role
                == if i % 2 == 0 {
                    Role::User
                } else {
                    Role::Assistant
                }
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn msgs() -> Vec<ChatMessage> {
        vec![ChatMessage::system("sys"), ChatMessage::user("question")]
    }

    fn list_check(s: &str) -> Result<Vec<String>, String> {
        serde_json::from_str(s).map_err(|e| e.to_string())
    }

    #[test]
    fn fingerprint_is_sensitive_to_every_input() {
        let p = GenerationParams::default();
        let base = fingerprint("m", &msgs(), &p);
        assert_eq!(base, fingerprint("m", &msgs(), &p));
        assert_ne!(base, fingerprint("m2", &msgs(), &p));
        let mut other = msgs();
        other[1].content.push('!');
        assert_ne!(base, fingerprint("m", &other, &p));
        let hot = GenerationParams {
            temperature: 0.5,
            ..p.clone()
        };
        assert_ne!(base, fingerprint("m", &msgs(), &hot));
        let seeded = GenerationParams {
            seed: Some(7),
            ..p.clone()
        };
        assert_ne!(base, fingerprint("m", &msgs(), &seeded));
        assert_ne!(base, fingerprint("m", &msgs(), &p.clone().structured()));
    }

    #[test]
    fn structured_first_try() {
        let provider = FnProvider::new("m", |_: &[ChatMessage]| r#"["a","b"]"#.to_string());
        let out = complete_structured(&provider, &msgs(), &GenerationParams::default(), list_check).unwrap();
        assert_eq!(out.value, vec!["a", "b"]);
        assert_eq!(out.exchanges.len(), 1);
    }

    #[test]
    fn structured_retry_path() {
        let provider = FnProvider::new("m", |m: &[ChatMessage]| {
            if m.last().unwrap().content == CORRECTIVE_INSTRUCTION {
                r#"["a"]"#.to_string()
            } else {
                "sure! [".to_string()
            }
        });
        let out = complete_structured(&provider, &msgs(), &GenerationParams::default(), list_check).unwrap();
        assert_eq!(out.value, vec!["a"]);
        let retry = &out.exchanges[1].messages;
        assert_eq!(retry.len(), 4);
        assert_eq!(retry[2], ChatMessage::assistant("sure! ["));
        assert!(roles_alternate(retry));
    }

    #[test]
    fn structured_double_failure() {
        let provider = FnProvider::new("m", |_: &[ChatMessage]| "nope".to_string());
        match complete_structured(&provider, &msgs(), &GenerationParams::default(), list_check) {
            Err(LlmError::InvalidStructure { exchanges, .. }) => {
                assert_eq!(exchanges.len(), 2);
                assert!(exchanges.iter().all(|e| e.completion.content == "nope"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn alternation() {
        assert!(roles_alternate(&msgs()));
        assert!(roles_alternate(&[ChatMessage::user("u")]));
        assert!(!roles_alternate(&[ChatMessage::system("s")]));
        assert!(!roles_alternate(&[ChatMessage::user("u"), ChatMessage::user("u")]));
        assert!(!roles_alternate(&[ChatMessage::user("u"), ChatMessage::assistant("a")]));
    }
}
