//! Live OpenAI-compatible chat-completions client.
//!
//! Speaks the standard `/chat/completions` JSON protocol, so any compatible
//! endpoint works. Sampling temperature is pinned to 0 for reproducibility.
//! Retries transient failures with exponential backoff; a successful return
//! always corresponds to exactly one completed upstream call.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{
    validate_request, BackendConfig, BackendError, BackendReply, ChatBackend, ChatMessage, Role,
    Usage, API_KEY_ENV,
};

#[derive(Serialize)]
struct WireMessage<'a> {
    role: &'static str,
    content: &'a str,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: Vec<WireMessage<'a>>,
    temperature: f64,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireResponseMessage,
}

#[derive(Deserialize)]
struct WireResponseMessage {
    content: Option<String>,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
}

pub struct LiveBackend {
    config: BackendConfig,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl LiveBackend {
    pub fn new(config: BackendConfig) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_s))
            .build()
            .map_err(|e| BackendError::Failure(format!("client construction: {e}")))?;
        let api_key = std::env::var(API_KEY_ENV).ok();
        Ok(Self {
            config,
            api_key,
            client,
        })
    }

    fn backoff(attempt: u32) -> Duration {
        let ms = 100u64.saturating_mul(1 << attempt.min(6));
        Duration::from_millis(ms.min(2_000))
    }

    fn send_once(&self, messages: &[ChatMessage]) -> Result<String, BackendError> {
        let wire = WireRequest {
            model: &self.config.model,
            messages: messages
                .iter()
                .map(|m| WireMessage {
                    role: match m.role {
                        Role::System => "system",
                        Role::User => "user",
                        Role::Assistant => "assistant",
                    },
                    content: &m.content,
                })
                .collect(),
            temperature: 0.0,
        };
        let mut request = self.client.post(&self.config.endpoint).json(&wire);
        if let Some(key) = &self.api_key {
            request = request.bearer_auth(key);
        }
        let response = request.send().map_err(|e| {
            if e.is_timeout() {
                BackendError::Timeout
            } else {
                BackendError::Failure(format!("transport: {e}"))
            }
        })?;
        let status = response.status();
        if status.as_u16() == 429 {
            return Err(BackendError::RateLimited);
        }
        if status.is_server_error() {
            return Err(BackendError::Failure(format!("server status {status}")));
        }
        if !status.is_success() {
            return Err(BackendError::MalformedResponse(format!(
                "unexpected status {status}"
            )));
        }
        let body: WireResponse = response
            .json()
            .map_err(|e| BackendError::MalformedResponse(format!("body decode: {e}")))?;
        let content = body
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .filter(|c| !c.is_empty())
            .ok_or_else(|| BackendError::MalformedResponse("no assistant content".to_string()))?;
        Ok(content)
    }
}

impl ChatBackend for LiveBackend {
    fn complete(&self, messages: &[ChatMessage]) -> Result<BackendReply, BackendError> {
        validate_request(messages)?;
        if self.config.pacing_ms > 0 {
            std::thread::sleep(Duration::from_millis(self.config.pacing_ms));
        }
        let mut last_error = None;
        for attempt in 0..=self.config.max_retries {
            match self.send_once(messages) {
                Ok(content) => {
                    let prompt_chars = messages.iter().map(|m| m.content.len()).sum();
                    return Ok(BackendReply {
                        usage: Usage {
                            prompt_chars,
                            completion_chars: content.len(),
                        },
                        latency_class: None,
                        message: ChatMessage::assistant(content),
                    });
                }
                // Malformed bodies will not improve on retry.
                Err(e @ BackendError::MalformedResponse(_)) => return Err(e),
                Err(e) => {
                    log::warn!("chat call attempt {attempt} failed: {e}");
                    last_error = Some(e);
                    if attempt < self.config.max_retries {
                        std::thread::sleep(Self::backoff(attempt));
                    }
                }
            }
        }
        Err(BackendError::Failure(format!(
            "exhausted {} retries: {}",
            self.config.max_retries,
            last_error.expect("at least one attempt")
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::templates;

    #[test]
    fn unreachable_endpoint_fails_after_retries() {
        let config = BackendConfig {
            kind: crate::backend::BackendKind::Live,
            // Closed port on localhost: connection refused, fast.
            endpoint: "http://127.0.0.1:9/v1/chat/completions".to_string(),
            model: "test-model".to_string(),
            timeout_s: 2,
            max_retries: 1,
            pacing_ms: 0,
        };
        let backend = LiveBackend::new(config).unwrap();
        let messages = vec![
            ChatMessage::system("s", templates::SYSTEM_V1),
            ChatMessage::user("u", templates::TASK_BRIEF_V1),
        ];
        match backend.complete(&messages) {
            Err(BackendError::Failure(msg)) => assert!(msg.contains("exhausted")),
            other => panic!("expected failure after retries, got {other:?}"),
        }
    }

    #[test]
    fn request_preconditions_are_checked() {
        let backend = LiveBackend::new(BackendConfig::default()).unwrap();
        assert!(matches!(
            backend.complete(&[]),
            Err(BackendError::InvalidRequest(_))
        ));
        let no_system = vec![ChatMessage::user("u", templates::TASK_BRIEF_V1)];
        assert!(matches!(
            backend.complete(&no_system),
            Err(BackendError::InvalidRequest(_))
        ));
    }
}
