//! Deterministic scripted oracle backend.
//!
//! Stands in for a live model so that runs are exactly reproducible. The
//! response sequence is a table lookup keyed by the task-brief template of
//! the conversation and the number of assistant turns so far; the only
//! content-derived value is the concluded fault timestamp, which is read back
//! from the revealed health lines this backend itself asked for.

use std::collections::VecDeque;
use std::sync::Mutex;

use super::templates;
use super::{
    validate_request, BackendError, BackendReply, ChatMessage, LatencyClass, Role, Usage,
};

/// The procedure the scripted model proposes when asked for one.
pub const CANONICAL_PROCEDURE: &str = "scan asc over health; where health == bad; return index";

/// One scripted turn.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScriptMove {
    Acknowledge,
    RequestTemperatures,
    RequestHealth,
    RequestJoint,
    ConcludeFromHealth,
    EmitProcedure,
}

/// Response sequences per task-brief template.
///
/// The plain sequence mirrors a baseline diagnosis: acknowledge, fetch
/// temperatures, fetch health, conclude. The joint sequence is used when the
/// brief carries learned guidance: acknowledge, fetch both channels at once,
/// conclude. The procedure sequence proposes a local decision procedure
/// first and only falls back to the joint path if told the proposal was
/// rejected.
#[derive(Debug, Clone)]
pub struct ScriptTable {
    pub plain: Vec<ScriptMove>,
    pub joint: Vec<ScriptMove>,
    pub procedure: Vec<ScriptMove>,
}

impl Default for ScriptTable {
    fn default() -> Self {
        Self {
            plain: vec![
                ScriptMove::Acknowledge,
                ScriptMove::RequestTemperatures,
                ScriptMove::RequestHealth,
                ScriptMove::ConcludeFromHealth,
            ],
            joint: vec![
                ScriptMove::Acknowledge,
                ScriptMove::RequestJoint,
                ScriptMove::ConcludeFromHealth,
            ],
            procedure: vec![
                ScriptMove::EmitProcedure,
                ScriptMove::RequestJoint,
                ScriptMove::ConcludeFromHealth,
            ],
        }
    }
}

#[derive(Debug)]
pub struct ScriptedBackend {
    table: ScriptTable,
    procedure_text: String,
    pacing_ms: u64,
    /// Errors to return before resuming scripted behavior; test hook for
    /// failure paths. Breaks determinism only while nonempty.
    injected_failures: Mutex<VecDeque<BackendError>>,
}

impl Default for ScriptedBackend {
    fn default() -> Self {
        Self::new()
    }
}

impl ScriptedBackend {
    pub fn new() -> Self {
        Self {
            table: ScriptTable::default(),
            procedure_text: CANONICAL_PROCEDURE.to_string(),
            pacing_ms: 0,
            injected_failures: Mutex::new(VecDeque::new()),
        }
    }

    pub fn with_table(mut self, table: ScriptTable) -> Self {
        self.table = table;
        self
    }

    /// Override the proposed procedure text (e.g. to exercise the
    /// verification-failure fallback).
    pub fn with_procedure_text(mut self, text: impl Into<String>) -> Self {
        self.procedure_text = text.into();
        self
    }

    /// Real per-call pacing, used by wall-clock runs.
    pub fn with_pacing_ms(mut self, pacing_ms: u64) -> Self {
        self.pacing_ms = pacing_ms;
        self
    }

    /// Queue `n` failures of the given constructor to be returned first.
    pub fn inject_failures(&self, n: usize, make: impl Fn() -> BackendError) {
        let mut queue = self.injected_failures.lock().expect("failure queue lock");
        for _ in 0..n {
            queue.push_back(make());
        }
    }

    fn sequence_for(&self, brief_template: &str) -> Result<(&[ScriptMove], LatencyClass), BackendError> {
        match brief_template {
            templates::TASK_BRIEF_V1 => Ok((&self.table.plain, LatencyClass::PlainQuery)),
            templates::TASK_BRIEF_RULES_V1 => Ok((&self.table.joint, LatencyClass::JointQuery)),
            templates::TASK_BRIEF_PROC_V1 => {
                Ok((&self.table.procedure, LatencyClass::ProcedureGeneration))
            }
            other => Err(BackendError::UnknownTemplate(other.to_string())),
        }
    }

    fn respond(&self, messages: &[ChatMessage]) -> Result<(String, LatencyClass), BackendError> {
        let brief = messages
            .iter()
            .find(|m| m.role == Role::User)
            .and_then(|m| m.template_id.as_deref())
            .ok_or_else(|| BackendError::UnknownTemplate("<missing task brief>".to_string()))?;
        let (sequence, class) = self.sequence_for(brief)?;
        let turn = messages.iter().filter(|m| m.role == Role::Assistant).count();
        let mv = sequence.get(turn).ok_or_else(|| {
            BackendError::Failure(format!("script exhausted after {turn} turns for {brief}"))
        })?;
        let window = "1,2,3,4,5,6,7,8";
        let content = match mv {
            ScriptMove::Acknowledge => {
                "Acknowledged. I will inspect the window and request the data needed to locate the fault.".to_string()
            }
            ScriptMove::RequestTemperatures => format!("REQUEST temperature AT {window}"),
            ScriptMove::RequestHealth => format!("REQUEST health AT {window}"),
            ScriptMove::RequestJoint => format!("REQUEST temperature,health AT {window}"),
            ScriptMove::ConcludeFromHealth => {
                let k = first_bad_health(messages).ok_or_else(|| {
                    BackendError::Failure("no revealed health data to conclude from".to_string())
                })?;
                format!("CONCLUDE fault_at={k}")
            }
            ScriptMove::EmitProcedure => format!(
                "Based on the accumulated interaction records, a local decision \
procedure suffices:\n```procedure\n{}\n```",
                self.procedure_text
            ),
        };
        Ok((content, class))
    }
}

/// Scan the revealed data lines for the smallest timestamp flagged bad.
/// Lines follow the data template's fixed format, e.g. `health 5 = bad`.
fn first_bad_health(messages: &[ChatMessage]) -> Option<u8> {
    let mut first: Option<u8> = None;
    for message in messages.iter().filter(|m| m.role == Role::User) {
        for line in message.content.lines() {
            let Some(rest) = line.trim().strip_prefix("health ") else {
                continue;
            };
            let Some((t, value)) = rest.split_once(" = ") else {
                continue;
            };
            let Ok(t) = t.trim().parse::<u8>() else {
                continue;
            };
            if value.trim() == "bad" && first.map_or(true, |f| t < f) {
                first = Some(t);
            }
        }
    }
    first
}

impl super::ChatBackend for ScriptedBackend {
    fn complete(&self, messages: &[ChatMessage]) -> Result<BackendReply, BackendError> {
        validate_request(messages)?;
        {
            let mut queue = self.injected_failures.lock().expect("failure queue lock");
            if let Some(err) = queue.pop_front() {
                return Err(err);
            }
        }
        if self.pacing_ms > 0 {
            std::thread::sleep(std::time::Duration::from_millis(self.pacing_ms));
        }
        let (content, class) = self.respond(messages)?;
        let prompt_chars = messages.iter().map(|m| m.content.len()).sum();
        Ok(BackendReply {
            usage: Usage {
                prompt_chars,
                completion_chars: content.len(),
            },
            latency_class: Some(class),
            message: ChatMessage::assistant(content),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::super::ChatBackend;
    use super::*;

    fn base_messages(brief_template: &str) -> Vec<ChatMessage> {
        vec![
            ChatMessage::system("system prompt", templates::SYSTEM_V1),
            ChatMessage::user("the task brief", brief_template),
        ]
    }

    #[test]
    fn plain_sequence_requests_channels_separately() {
        let backend = ScriptedBackend::new();
        let mut messages = base_messages(templates::TASK_BRIEF_V1);
        let r1 = backend.complete(&messages).unwrap();
        assert!(r1.message.content.starts_with("Acknowledged"));
        assert_eq!(r1.latency_class, Some(LatencyClass::PlainQuery));

        messages.push(r1.message);
        messages.push(ChatMessage::user("Proceed.", templates::CONTINUE_V1));
        let r2 = backend.complete(&messages).unwrap();
        assert_eq!(r2.message.content, "REQUEST temperature AT 1,2,3,4,5,6,7,8");

        messages.push(r2.message);
        messages.push(ChatMessage::user(
            "temperature 1 = 3.5\ntemperature 2 = 4.0",
            templates::DATA_V1,
        ));
        let r3 = backend.complete(&messages).unwrap();
        assert_eq!(r3.message.content, "REQUEST health AT 1,2,3,4,5,6,7,8");

        messages.push(r3.message);
        messages.push(ChatMessage::user(
            "health 1 = ok\nhealth 2 = ok\nhealth 3 = bad\nhealth 4 = bad",
            templates::DATA_V1,
        ));
        let r4 = backend.complete(&messages).unwrap();
        assert_eq!(r4.message.content, "CONCLUDE fault_at=3");
    }

    #[test]
    fn joint_sequence_requests_both_channels_at_once() {
        let backend = ScriptedBackend::new();
        let mut messages = base_messages(templates::TASK_BRIEF_RULES_V1);
        let r1 = backend.complete(&messages).unwrap();
        assert_eq!(r1.latency_class, Some(LatencyClass::JointQuery));
        messages.push(r1.message);
        messages.push(ChatMessage::user("Proceed.", templates::CONTINUE_V1));
        let r2 = backend.complete(&messages).unwrap();
        assert_eq!(
            r2.message.content,
            "REQUEST temperature,health AT 1,2,3,4,5,6,7,8"
        );
    }

    #[test]
    fn procedure_sequence_emits_a_fenced_block_first() {
        let backend = ScriptedBackend::new();
        let messages = base_messages(templates::TASK_BRIEF_PROC_V1);
        let r = backend.complete(&messages).unwrap();
        assert_eq!(r.latency_class, Some(LatencyClass::ProcedureGeneration));
        assert!(r.message.content.contains("```procedure"));
        assert!(r.message.content.contains(CANONICAL_PROCEDURE));
    }

    #[test]
    fn identical_messages_yield_identical_responses() {
        let backend = ScriptedBackend::new();
        let messages = base_messages(templates::TASK_BRIEF_V1);
        let a = backend.complete(&messages).unwrap();
        let b = backend.complete(&messages).unwrap();
        assert_eq!(a.message, b.message);
    }

    #[test]
    fn unknown_brief_template_is_rejected() {
        let backend = ScriptedBackend::new();
        let messages = base_messages("task_brief.v9");
        match backend.complete(&messages) {
            Err(BackendError::UnknownTemplate(id)) => assert_eq!(id, "task_brief.v9"),
            other => panic!("expected UnknownTemplate, got {other:?}"),
        }
    }

    #[test]
    fn injected_failures_surface_then_clear() {
        let backend = ScriptedBackend::new();
        backend.inject_failures(2, || BackendError::RateLimited);
        let messages = base_messages(templates::TASK_BRIEF_V1);
        assert!(matches!(
            backend.complete(&messages),
            Err(BackendError::RateLimited)
        ));
        assert!(matches!(
            backend.complete(&messages),
            Err(BackendError::RateLimited)
        ));
        assert!(backend.complete(&messages).is_ok());
    }
}
