//! Versioned prompt templates.
//!
//! Every prompt sent to a chat backend is rendered from one of these
//! templates, so prompt construction is a pure function of the template id
//! and the render context. The scripted backend dispatches on template ids,
//! never on free text, which keeps scripted and live runs on the same call
//! sites.

use thiserror::Error;

pub const SYSTEM_V1: &str = "system.v1";
pub const TASK_BRIEF_V1: &str = "task_brief.v1";
pub const TASK_BRIEF_RULES_V1: &str = "task_brief_rules.v1";
pub const TASK_BRIEF_PROC_V1: &str = "task_brief_proc.v1";
pub const DATA_V1: &str = "data.v1";
pub const CONTINUE_V1: &str = "continue.v1";
pub const PROCEDURE_REJECTED_V1: &str = "procedure_rejected.v1";

#[derive(Debug, Error, PartialEq, Eq)]
#[error("unknown template id: {0}")]
pub struct UnknownTemplate(pub String);

/// Values substituted into a template's named placeholders. Unused fields are
/// simply not referenced by the template body.
#[derive(Debug, Clone, Default)]
pub struct RenderContext<'a> {
    pub task_goal: &'a str,
    /// Pre-rendered guidance lines from retrieved rules, one per line.
    pub rules: &'a str,
    /// Pre-rendered revealed sensor data, one value per line.
    pub revealed_data: &'a str,
}

const SYSTEM_BODY: &str = "\
You are the reasoning core of a sensor-diagnosis controller. You may answer \
with exactly one directive per message:
  REQUEST <channels> AT <timestamps>   (channels: temperature, health, or temperature,health; timestamps: comma-separated integers 1..8)
  CONCLUDE fault_at=<k>                (k in 1..8, the first faulty timestamp)
  a fenced code block labeled `procedure` containing a local decision procedure
Any other reply is treated as a request to continue.";

const TASK_BRIEF_BODY: &str = "\
Task: {task_goal}
A temperature sensor reports over timestamps 1..8. Healthy readings lie in \
[0, 20] degrees C; after an unknown fault timestamp the readings are \
unreliable and may lie in [-5, 25] degrees C. Temperature and health \
channels are hidden until requested. Identify the first faulty timestamp.";

const TASK_BRIEF_RULES_BODY: &str = "\
Task: {task_goal}
A temperature sensor reports over timestamps 1..8. Healthy readings lie in \
[0, 20] degrees C; after an unknown fault timestamp the readings are \
unreliable and may lie in [-5, 25] degrees C. Temperature and health \
channels are hidden until requested. Identify the first faulty timestamp.
Guidance learned from previous runs:
{rules}";

const TASK_BRIEF_PROC_BODY: &str = "\
Task: {task_goal}
A temperature sensor reports over timestamps 1..8. Healthy readings lie in \
[0, 20] degrees C; after an unknown fault timestamp the readings are \
unreliable and may lie in [-5, 25] degrees C. Temperature and health \
channels are hidden until requested.
Guidance learned from previous runs:
{rules}
Instead of requesting data step by step, you may propose a local decision \
procedure in a fenced `procedure` block using the grammar:
  scan (asc|desc) over (health|temperature); where (health == bad | temp < N | temp > N); return index
A validated procedure will be executed locally against the sensor.";

const DATA_BODY: &str = "\
Revealed sensor data:
{revealed_data}";

const CONTINUE_BODY: &str = "Proceed with the diagnosis.";

const PROCEDURE_REJECTED_BODY: &str = "\
The proposed procedure failed validation against controlled scenarios and \
was not installed. Continue the diagnosis by requesting data directly.";

fn body_for(template_id: &str) -> Option<&'static str> {
    match template_id {
        SYSTEM_V1 => Some(SYSTEM_BODY),
        TASK_BRIEF_V1 => Some(TASK_BRIEF_BODY),
        TASK_BRIEF_RULES_V1 => Some(TASK_BRIEF_RULES_BODY),
        TASK_BRIEF_PROC_V1 => Some(TASK_BRIEF_PROC_BODY),
        DATA_V1 => Some(DATA_BODY),
        CONTINUE_V1 => Some(CONTINUE_BODY),
        PROCEDURE_REJECTED_V1 => Some(PROCEDURE_REJECTED_BODY),
        _ => None,
    }
}

/// Render a template. Placeholders are `{task_goal}`, `{rules}` and
/// `{revealed_data}`.
pub fn render(template_id: &str, ctx: &RenderContext) -> Result<String, UnknownTemplate> {
    let body = body_for(template_id).ok_or_else(|| UnknownTemplate(template_id.to_string()))?;
    Ok(body
        .replace("{task_goal}", ctx.task_goal)
        .replace("{rules}", ctx.rules)
        .replace("{revealed_data}", ctx.revealed_data))
}
