//! Pluggable chat interface.
//!
//! Two implementations share one trait: a live client speaking the
//! OpenAI-compatible chat-completions protocol, and a deterministic scripted
//! oracle that emulates the diagnosis protocol for reproducible runs.

pub mod latency;
mod live;
mod scripted;
pub mod templates;

pub use latency::{LatencyClass, SimulatedLatency};
pub use live::LiveBackend;
pub use scripted::{ScriptMove, ScriptTable, ScriptedBackend, CANONICAL_PROCEDURE};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Environment variable holding the live API credential.
pub const API_KEY_ENV: &str = "COGLOOP_API_KEY";

pub const DEFAULT_MODEL: &str = "deepseek-chat";
pub const DEFAULT_ENDPOINT: &str = "https://api.deepseek.com/chat/completions";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
    /// Id of the prompt template that produced this message, when known.
    /// Carried locally only; never sent over the wire.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub template_id: Option<String>,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>, template_id: &str) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
            template_id: Some(template_id.to_string()),
        }
    }

    pub fn user(content: impl Into<String>, template_id: &str) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
            template_id: Some(template_id.to_string()),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
            template_id: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Scripted,
    Live,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub endpoint: String,
    pub model: String,
    pub timeout_s: u64,
    pub max_retries: u32,
    /// Minimum spacing between requests, milliseconds. Applied inside the
    /// backends so call sites stay identical for scripted and live runs.
    pub pacing_ms: u64,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            kind: BackendKind::Scripted,
            endpoint: DEFAULT_ENDPOINT.to_string(),
            model: DEFAULT_MODEL.to_string(),
            timeout_s: 60,
            max_retries: 3,
            pacing_ms: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Usage {
    pub prompt_chars: usize,
    pub completion_chars: usize,
}

/// One assistant message plus usage metadata.
#[derive(Debug, Clone)]
pub struct BackendReply {
    pub message: ChatMessage,
    /// Latency population for simulated-runtime accounting. Scripted replies
    /// always carry one; live replies are timed on the wall clock instead.
    pub latency_class: Option<LatencyClass>,
    pub usage: Usage,
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("request timed out")]
    Timeout,
    #[error("rate limited by the service")]
    RateLimited,
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("backend failure: {0}")]
    Failure(String),
    #[error("unknown template id in request: {0}")]
    UnknownTemplate(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

/// A stateless chat completion endpoint. Each call receives the full message
/// history; no session state is held between calls, which is what makes
/// recorded episodes exactly replayable.
pub trait ChatBackend: Send + Sync {
    /// Complete the conversation with one assistant message.
    ///
    /// `messages` must be nonempty and start with a system message. A
    /// successful return corresponds to exactly one counted interaction;
    /// internal retries do not multiply the count.
    fn complete(&self, messages: &[ChatMessage]) -> Result<BackendReply, BackendError>;
}

pub(crate) fn validate_request(messages: &[ChatMessage]) -> Result<(), BackendError> {
    if messages.is_empty() {
        return Err(BackendError::InvalidRequest("empty message list".into()));
    }
    if messages[0].role != Role::System {
        return Err(BackendError::InvalidRequest(
            "first message must have the system role".into(),
        ));
    }
    if messages.iter().any(|m| m.content.is_empty()) {
        return Err(BackendError::InvalidRequest("empty message content".into()));
    }
    Ok(())
}
