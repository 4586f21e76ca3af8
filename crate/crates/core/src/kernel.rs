//! Sequential reason–act–reflect episode loop.
//!
//! An episode advances an explicit [`State`] value one action at a time
//! through [`transition`]; nothing is hidden in backend session state, so a
//! recorded episode can be re-executed step by step and checked against its
//! digests. Every applied step is handed to the trace recorder before the
//! next transition begins, and published to the learner bus without ever
//! blocking on it.

use std::time::{Instant, SystemTime};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::templates::{self, RenderContext};
use crate::backend::{BackendError, ChatBackend, ChatMessage, Role, SimulatedLatency};
use crate::digest;
use crate::procedure::{
    self, execute_procedure, parse_procedure, required_channels, validation_seeds, Detection,
    LearnedProcedure, ModuleRegistry, ProcedureError, Verdict, FAULT_DETECTOR,
    VALIDATION_SEED_BASE,
};
use crate::sensor::{full_window, Channel, Observation, SensorEnv, SensorError};
use crate::trace::{
    record_from_step, EpisodeEnvelope, FinalExtras, Outcome, StepBus, StepEvent, TraceError,
    TraceRecorder, Trajectory,
};

/// The goal text given to every episode; the prefix before `:` is the task
/// family tag used for rule retrieval.
pub const TASK_GOAL: &str = "sensor-fault-detection: identify the first timestamp at which the \
temperature sensor is faulty within the eight-step window";

/// Task family tag of a goal (everything before the first `:`).
pub fn task_family(goal: &str) -> &str {
    goal.split(':').next().unwrap_or(goal).trim()
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EpisodeId(pub String);

impl EpisodeId {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl std::fmt::Display for EpisodeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for EpisodeId {
    fn from(s: &str) -> Self {
        Self(s.to_string())
    }
}

/// The three compared scheduling methods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "notlearning")]
    NotLearning,
    #[serde(rename = "learning")]
    Learning,
    #[serde(rename = "nofixcode")]
    NoFixCodeByLearning,
}

impl Method {
    pub const ALL: [Method; 3] = [
        Method::NotLearning,
        Method::Learning,
        Method::NoFixCodeByLearning,
    ];

    pub fn token(self) -> &'static str {
        match self {
            Method::NotLearning => "notlearning",
            Method::Learning => "learning",
            Method::NoFixCodeByLearning => "nofixcode",
        }
    }

    pub fn from_token(token: &str) -> Option<Method> {
        match token {
            "notlearning" => Some(Method::NotLearning),
            "learning" => Some(Method::Learning),
            "nofixcode" => Some(Method::NoFixCodeByLearning),
            _ => None,
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.token())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ActivityKind {
    Think,
    Act,
    Reflect,
    Verify,
    Learn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Planning,
    Acting,
    Reflecting,
    Concluded,
}

/// A request for sensor data over one or both channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataRequest {
    pub channels: Vec<Channel>,
    pub timestamps: Vec<u8>,
}

impl DataRequest {
    pub fn directive_line(&self) -> String {
        let channels = self
            .channels
            .iter()
            .map(|c| match c {
                Channel::Temperature => "temperature",
                Channel::Health => "health",
            })
            .collect::<Vec<_>>()
            .join(",");
        let timestamps = self
            .timestamps
            .iter()
            .map(|t| t.to_string())
            .collect::<Vec<_>>()
            .join(",");
        format!("REQUEST {channels} AT {timestamps}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InconclusiveReason {
    StepBudgetExhausted,
    BackendCallBudgetExhausted,
    DetectionNotFound,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Conclusion {
    FaultAt { t: u8 },
    Inconclusive { reason: InconclusiveReason },
}

impl Conclusion {
    pub fn fault_at(t: u8) -> Self {
        Conclusion::FaultAt { t }
    }

    pub fn summary(&self) -> String {
        match self {
            Conclusion::FaultAt { t } => format!("fault_at={t}"),
            Conclusion::Inconclusive { reason } => format!("inconclusive ({reason:?})"),
        }
    }
}

/// What the backend's reply instructed the loop to do next.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Directive {
    Acknowledge,
    Request(DataRequest),
    Conclude(Conclusion),
    ProposeProcedure(String),
}

/// One reasoning turn: the prompt that was sent, the reply, and the parsed
/// directive. Carrying all three makes traces readable as thinking logs and
/// makes replayed transitions independent of the backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub template_id: String,
    pub prompt: String,
    pub reply: String,
    pub directive: Directive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReflectionNote {
    pub note: String,
}

/// Review outcome attached to a proposed procedure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReviewOutcome {
    Accepted {
        scenarios_tested: u32,
    },
    Rejected {
        scenarios_tested: u32,
        mismatches: u32,
    },
    ParseFailed {
        position: usize,
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcedureProposal {
    pub text: String,
    pub review: ReviewOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ActionPayload {
    Prompt(PromptSpec),
    Request(DataRequest),
    Conclude(Conclusion),
    Proposal(ProcedureProposal),
    Note(ReflectionNote),
}

impl ActionPayload {
    /// The activity kind a payload belongs to on the critical path.
    fn critical_kind(&self) -> ActivityKind {
        match self {
            ActionPayload::Prompt(_) => ActivityKind::Think,
            ActionPayload::Request(_) | ActionPayload::Conclude(_) => ActivityKind::Act,
            ActionPayload::Proposal(_) => ActivityKind::Verify,
            ActionPayload::Note(_) => ActivityKind::Reflect,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub kind: ActivityKind,
    pub payload: ActionPayload,
}

impl Action {
    pub fn think(spec: PromptSpec) -> Self {
        Self {
            kind: ActivityKind::Think,
            payload: ActionPayload::Prompt(spec),
        }
    }

    pub fn act(request: DataRequest) -> Self {
        Self {
            kind: ActivityKind::Act,
            payload: ActionPayload::Request(request),
        }
    }

    pub fn conclude(conclusion: Conclusion) -> Self {
        Self {
            kind: ActivityKind::Act,
            payload: ActionPayload::Conclude(conclusion),
        }
    }

    pub fn verify(proposal: ProcedureProposal) -> Self {
        Self {
            kind: ActivityKind::Verify,
            payload: ActionPayload::Proposal(proposal),
        }
    }

    pub fn reflect(note: ReflectionNote) -> Self {
        Self {
            kind: ActivityKind::Reflect,
            payload: ActionPayload::Note(note),
        }
    }

    /// Off-critical-path marker noting the trajectory was emitted to the
    /// learner. Never passed through [`transition`].
    pub fn learn_marker(note: ReflectionNote) -> Self {
        Self {
            kind: ActivityKind::Learn,
            payload: ActionPayload::Note(note),
        }
    }

    pub fn is_consistent(&self) -> bool {
        if self.kind == ActivityKind::Learn {
            matches!(self.payload, ActionPayload::Note(_))
        } else {
            self.kind == self.payload.critical_kind()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub episode_id: EpisodeId,
    pub step_index: u32,
    pub task_goal: String,
    pub observations: Vec<Observation>,
    pub pending_requests: Vec<DataRequest>,
    pub phase: Phase,
    pub conclusion: Option<Conclusion>,
}

impl State {
    pub fn initial(episode_id: EpisodeId, task_goal: &str) -> Self {
        Self {
            episode_id,
            step_index: 0,
            task_goal: task_goal.to_string(),
            observations: Vec::new(),
            pending_requests: Vec::new(),
            phase: Phase::Planning,
            conclusion: None,
        }
    }

    /// Stable 64-bit content digest of the canonical state encoding.
    pub fn digest(&self) -> u64 {
        digest::digest_json(self)
    }
}

/// One applied step. `wall_time` is diagnostic only: it is excluded from
/// equality and never serialized into trace records.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Step {
    pub state_before: u64,
    pub action: Action,
    pub observation: Option<Observation>,
    pub timestamp_ns: u64,
    pub wall_time: SystemTime,
}

impl PartialEq for Step {
    fn eq(&self, other: &Self) -> bool {
        self.state_before == other.state_before
            && self.action == other.action
            && self.observation == other.observation
            && self.timestamp_ns == other.timestamp_ns
    }
}

/// A rule injected into planning context: id plus the guidance text rendered
/// into the prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextRule {
    pub rule_id: String,
    pub guidance: String,
}

/// The parameters that decide which activity runs next.
#[derive(Debug, Clone, PartialEq)]
pub struct SchedulingPolicy {
    pub policy_id: String,
    pub method: Method,
    pub context_rules: Vec<ContextRule>,
    pub active_procedure: Option<LearnedProcedure>,
}

impl SchedulingPolicy {
    pub fn new(method: Method) -> Self {
        Self {
            policy_id: format!("policy-{}", method.token()),
            method,
            context_rules: Vec::new(),
            active_procedure: None,
        }
    }

    pub fn uses_memory(&self) -> bool {
        self.method != Method::NotLearning
    }

    pub fn proposes_procedure(&self) -> bool {
        self.method == Method::NoFixCodeByLearning
    }

    pub fn reflection_enabled(&self) -> bool {
        self.method != Method::NotLearning
    }

    pub fn validate(&self) -> Result<(), KernelError> {
        if self.method == Method::NotLearning
            && (!self.context_rules.is_empty() || self.active_procedure.is_some())
        {
            return Err(KernelError::InvalidPolicy(
                "a non-learning policy must carry no rules and no procedure".to_string(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpisodeLimits {
    pub max_steps: u32,
    pub max_backend_calls: u32,
}

impl Default for EpisodeLimits {
    fn default() -> Self {
        Self {
            max_steps: 32,
            max_backend_calls: 10,
        }
    }
}

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("transition attempted after the episode concluded")]
    TransitionAfterConclusion,
    #[error("environment handle is closed")]
    EnvironmentUnavailable,
    #[error("environment error: {0}")]
    Environment(SensorError),
    #[error("backend failure: {0}")]
    Backend(#[from] BackendError),
    #[error("learn activities are markers and never transition state")]
    LearnOnCriticalPath,
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
    #[error("malformed action: {0}")]
    MalformedAction(String),
    #[error("procedure error: {0}")]
    Procedure(#[from] ProcedureError),
    #[error("trace error: {0}")]
    Trace(#[from] TraceError),
    #[error("registry error: {0}")]
    Registry(#[from] procedure::RegistryError),
    #[error("replay divergence: {0}")]
    ReplayDivergence(String),
}

impl From<SensorError> for KernelError {
    fn from(e: SensorError) -> Self {
        match e {
            SensorError::EnvironmentUnavailable => KernelError::EnvironmentUnavailable,
            other => KernelError::Environment(other),
        }
    }
}

// ---------------------------------------------------------------------------
// Transition
// ---------------------------------------------------------------------------

/// Advance a state by one action with an already-obtained observation.
/// This is the environment-free core shared by live execution and replay.
pub fn advance(
    state: &State,
    action: &Action,
    observation: Option<&Observation>,
) -> Result<State, KernelError> {
    if state.phase == Phase::Concluded {
        return Err(KernelError::TransitionAfterConclusion);
    }
    if action.kind == ActivityKind::Learn {
        return Err(KernelError::LearnOnCriticalPath);
    }
    if !action.is_consistent() {
        return Err(KernelError::MalformedAction(format!(
            "kind {:?} does not fit its payload",
            action.kind
        )));
    }
    let mut next = state.clone();
    next.step_index += 1;
    match &action.payload {
        ActionPayload::Prompt(spec) => {
            next.phase = Phase::Planning;
            next.pending_requests = match &spec.directive {
                Directive::Request(r) => vec![r.clone()],
                _ => Vec::new(),
            };
        }
        ActionPayload::Request(_) => {
            let obs = observation.ok_or_else(|| {
                KernelError::MalformedAction("data request without an observation".to_string())
            })?;
            next.phase = Phase::Acting;
            next.observations.push(obs.clone());
            next.pending_requests.clear();
        }
        ActionPayload::Conclude(c) => {
            next.phase = Phase::Concluded;
            next.conclusion = Some(c.clone());
        }
        ActionPayload::Proposal(_) => {
            next.phase = Phase::Planning;
        }
        ActionPayload::Note(_) => {
            next.phase = Phase::Reflecting;
        }
    }
    Ok(next)
}

/// Environment-coupled transition: performs any data request against the
/// environment and returns the successor state plus the observation, if one
/// was produced.
pub fn transition(
    state: &State,
    action: &Action,
    env: &mut SensorEnv,
) -> Result<(State, Option<Observation>), KernelError> {
    if state.phase == Phase::Concluded {
        return Err(KernelError::TransitionAfterConclusion);
    }
    let observation = match &action.payload {
        ActionPayload::Request(request) => {
            let mut obs = Observation {
                temperatures: Vec::new(),
                health: Vec::new(),
            };
            for channel in &request.channels {
                match channel {
                    Channel::Temperature => {
                        obs.temperatures = env.query_temperature(&request.timestamps)?;
                    }
                    Channel::Health => {
                        obs.health = env.query_health(&request.timestamps)?;
                    }
                }
            }
            Some(obs)
        }
        _ => None,
    };
    let next = advance(state, action, observation.as_ref())?;
    Ok((next, observation))
}

// ---------------------------------------------------------------------------
// Directive parsing
// ---------------------------------------------------------------------------

/// Parse a backend reply into a directive. A reply that carries none of the
/// recognized forms is a continuation request.
pub fn parse_directive(content: &str) -> Directive {
    for line in content.lines() {
        let line = line.trim();
        if let Some(rest) = line.strip_prefix("CONCLUDE") {
            if let Some(t) = parse_conclude_args(rest) {
                return Directive::Conclude(Conclusion::fault_at(t));
            }
        }
        if let Some(rest) = line.strip_prefix("REQUEST ") {
            if let Some(request) = parse_request_args(rest) {
                return Directive::Request(request);
            }
        }
    }
    if let Some(text) = extract_procedure_block(content) {
        return Directive::ProposeProcedure(text);
    }
    Directive::Acknowledge
}

fn parse_conclude_args(rest: &str) -> Option<u8> {
    let rest = rest.trim();
    let value = rest.strip_prefix("fault_at")?.trim().strip_prefix('=')?;
    let t: u8 = value.trim().parse().ok()?;
    (1..=crate::sensor::WINDOW).contains(&t).then_some(t)
}

fn parse_request_args(rest: &str) -> Option<DataRequest> {
    let (channels_part, timestamps_part) = rest.split_once(" AT ")?;
    let mut channels = Vec::new();
    for token in channels_part.split(',') {
        let channel = match token.trim().to_ascii_lowercase().as_str() {
            "temperature" => Channel::Temperature,
            "health" => Channel::Health,
            _ => continue,
        };
        if !channels.contains(&channel) {
            channels.push(channel);
        }
    }
    let mut timestamps: Vec<u8> = Vec::new();
    for token in timestamps_part.split(',') {
        if let Ok(t) = token.trim().parse::<u8>() {
            if (1..=crate::sensor::WINDOW).contains(&t) && !timestamps.contains(&t) {
                timestamps.push(t);
            }
        }
    }
    if channels.is_empty() || timestamps.is_empty() {
        return None;
    }
    Some(DataRequest {
        channels,
        timestamps,
    })
}

/// Extract the body of a fenced block labeled `procedure`.
pub fn extract_procedure_block(content: &str) -> Option<String> {
    let start = content.find("```procedure")?;
    let after = &content[start + "```procedure".len()..];
    let after = after.strip_prefix('\n').unwrap_or(after);
    let end = after.find("```")?;
    let body = after[..end].trim();
    (!body.is_empty()).then(|| body.to_string())
}

// ---------------------------------------------------------------------------
// Episode clock
// ---------------------------------------------------------------------------

/// Monotonic per-episode clock. Virtual mode advances deterministically (one
/// microsecond per step plus any accounted backend latency), which is what
/// makes scripted trajectories byte-identical across runs; wall mode reads a
/// real monotonic clock.
#[derive(Debug)]
pub enum EpisodeClock {
    Virtual { now_ns: u64 },
    Wall { start: Instant, last_ns: u64 },
}

const STEP_QUANTUM_NS: u64 = 1_000;

impl EpisodeClock {
    pub fn virtual_clock() -> Self {
        EpisodeClock::Virtual { now_ns: 0 }
    }

    pub fn wall_clock() -> Self {
        EpisodeClock::Wall {
            start: Instant::now(),
            last_ns: 0,
        }
    }

    fn tick(&mut self) -> u64 {
        match self {
            EpisodeClock::Virtual { now_ns } => {
                *now_ns += STEP_QUANTUM_NS;
                *now_ns
            }
            EpisodeClock::Wall { start, last_ns } => {
                let raw = start.elapsed().as_nanos() as u64;
                let ns = raw.max(*last_ns + 1);
                *last_ns = ns;
                ns
            }
        }
    }

    fn add_latency(&mut self, seconds: f64) {
        if let EpisodeClock::Virtual { now_ns } = self {
            *now_ns += (seconds * 1e9).round() as u64;
        }
    }

    fn elapsed_s(&self) -> f64 {
        match self {
            EpisodeClock::Virtual { now_ns } => *now_ns as f64 / 1e9,
            EpisodeClock::Wall { start, .. } => start.elapsed().as_secs_f64(),
        }
    }
}

// ---------------------------------------------------------------------------
// Episode loop
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct ValidationConfig {
    pub minimum: usize,
    pub seed_base: u64,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        Self {
            minimum: procedure::DEFAULT_VALIDATION_MIN,
            seed_base: VALIDATION_SEED_BASE,
        }
    }
}

/// Everything an episode needs besides policy, environment and backend.
pub struct EpisodeContext<'a> {
    pub episode_id: EpisodeId,
    pub scenario_seed: u64,
    pub recorder: Option<&'a mut TraceRecorder>,
    pub bus: Option<&'a StepBus>,
    pub registry: Option<&'a mut ModuleRegistry>,
    pub validation: ValidationConfig,
    /// When set, backend calls advance a virtual clock by drawn latencies;
    /// when absent, runtime is wall time.
    pub simulated_latency: Option<SimulatedLatency>,
}

impl<'a> EpisodeContext<'a> {
    pub fn bare(episode_id: EpisodeId, scenario_seed: u64) -> Self {
        Self {
            episode_id,
            scenario_seed,
            recorder: None,
            bus: None,
            registry: None,
            validation: ValidationConfig::default(),
            simulated_latency: None,
        }
    }
}

#[derive(Debug)]
pub struct EpisodeRun {
    pub trajectory: Trajectory,
    pub conclusion: Conclusion,
    pub interactions: u32,
    pub runtime_s: f64,
    pub env_queries: u32,
}

struct Driver<'a, 'c> {
    policy: &'a SchedulingPolicy,
    env: &'a mut SensorEnv,
    limits: &'a EpisodeLimits,
    ctx: &'a mut EpisodeContext<'c>,
    state: State,
    steps: Vec<Step>,
    clock: EpisodeClock,
    envelope: EpisodeEnvelope,
    interactions: u32,
    outcome: Option<Outcome>,
}

impl<'a, 'c> Driver<'a, 'c> {
    /// Apply one critical-path action: transition, then record, then publish.
    fn step(&mut self, action: Action) -> Result<Option<Observation>, KernelError> {
        let state_before = self.state.digest();
        let (next, observation) = transition(&self.state, &action, self.env)?;
        let final_extras = match &action.payload {
            ActionPayload::Conclude(_) => {
                let outcome = self.outcome.clone().ok_or_else(|| {
                    KernelError::MalformedAction("conclusion without an outcome".to_string())
                })?;
                Some(FinalExtras {
                    outcome,
                    final_state: next.clone(),
                })
            }
            _ => None,
        };
        let step = Step {
            state_before,
            action,
            observation: observation.clone(),
            timestamp_ns: self.clock.tick(),
            wall_time: SystemTime::now(),
        };
        self.record(&step, final_extras.as_ref())?;
        self.steps.push(step);
        self.state = next;
        Ok(observation)
    }

    /// Append the off-path learner marker (no transition).
    fn learn_marker(&mut self) -> Result<(), KernelError> {
        let step = Step {
            state_before: self.state.digest(),
            action: Action::learn_marker(ReflectionNote {
                note: "trajectory emitted to learner".to_string(),
            }),
            observation: None,
            timestamp_ns: self.clock.tick(),
            wall_time: SystemTime::now(),
        };
        self.record(&step, None)?;
        self.steps.push(step);
        Ok(())
    }

    fn record(&mut self, step: &Step, extras: Option<&FinalExtras>) -> Result<(), KernelError> {
        let index = self.steps.len() as u32;
        let envelope = if index == 0 { Some(&self.envelope) } else { None };
        if let Some(recorder) = self.ctx.recorder.as_deref_mut() {
            let record = record_from_step(
                &self.envelope.initial_state.episode_id,
                index,
                step,
                envelope,
                extras,
            );
            recorder.record(&record)?;
        }
        if let Some(bus) = self.ctx.bus {
            bus.publish(StepEvent::Step {
                episode: self.envelope.initial_state.episode_id.clone(),
                index,
                kind: step.action.kind,
            });
        }
        Ok(())
    }

    fn over_step_budget(&self) -> bool {
        self.steps.len() as u32 >= self.limits.max_steps
    }

    /// Conclude the episode: optional reflection, graded conclusion step,
    /// learner marker for learning methods.
    fn finish(&mut self, conclusion: Conclusion) -> Result<(), KernelError> {
        if self.policy.reflection_enabled() {
            let note = format!(
                "episode review: {} backend interactions, {} environment queries, {}",
                self.interactions,
                self.env.queries(),
                conclusion.summary()
            );
            self.step(Action::reflect(ReflectionNote { note }))?;
        }
        let correct = match &conclusion {
            Conclusion::FaultAt { t } => *t == self.env.oracle(),
            Conclusion::Inconclusive { .. } => false,
        };
        self.outcome = Some(Outcome {
            conclusion: conclusion.clone(),
            correct,
        });
        self.step(Action::conclude(conclusion))?;
        if self.policy.uses_memory() {
            self.learn_marker()?;
        }
        Ok(())
    }

    /// Execute a learned procedure locally: fetch the channels it reads,
    /// run it over the revealed view, conclude. No backend involvement.
    fn detect_locally(&mut self, proc_: &LearnedProcedure) -> Result<(), KernelError> {
        let request = DataRequest {
            channels: required_channels(proc_),
            timestamps: full_window(),
        };
        self.step(Action::act(request))?;
        let detection = execute_procedure(proc_, self.env.view())?;
        match detection {
            Detection::FaultAt(t) => self.finish(Conclusion::fault_at(t)),
            Detection::NotFound => self.finish(Conclusion::Inconclusive {
                reason: InconclusiveReason::DetectionNotFound,
            }),
        }
    }

    /// Route a proposed procedure through parse, verification and promotion.
    /// Returns the promoted procedure, or None when the episode must fall
    /// back to direct data requests.
    fn route_proposal(&mut self, text: &str) -> Result<Option<LearnedProcedure>, KernelError> {
        let provenance = self.envelope.initial_state.episode_id.as_str().to_string();
        let (review, promoted) = match parse_procedure(text, &provenance) {
            Err(ProcedureError::Parse { position, message }) => (
                ReviewOutcome::ParseFailed { position, message },
                None,
            ),
            Err(other) => return Err(other.into()),
            Ok(mut proc_) => {
                let seeds =
                    validation_seeds(self.ctx.validation.seed_base, self.ctx.validation.minimum);
                let report =
                    procedure::verify_procedure(&mut proc_, &seeds, self.ctx.validation.minimum)?;
                if report.verdict == Verdict::Pass {
                    let registry = self
                        .ctx
                        .registry
                        .as_deref_mut()
                        .expect("proposal routing requires a registry");
                    registry.promote(FAULT_DETECTOR, proc_.clone())?;
                    proc_.status = procedure::ProcedureStatus::Promoted;
                    (
                        ReviewOutcome::Accepted {
                            scenarios_tested: report.scenarios_tested,
                        },
                        Some(proc_),
                    )
                } else {
                    (
                        ReviewOutcome::Rejected {
                            scenarios_tested: report.scenarios_tested,
                            mismatches: report.mismatches.len() as u32,
                        },
                        None,
                    )
                }
            }
        };
        self.step(Action::verify(ProcedureProposal {
            text: text.to_string(),
            review,
        }))?;
        Ok(promoted)
    }
}

/// Render the revealed values of an observation as data lines for the next
/// prompt, temperature first, then health, in timestamp order.
fn observation_lines(observation: &Observation) -> String {
    let mut lines = Vec::new();
    for (t, v) in &observation.temperatures {
        lines.push(format!("temperature {t} = {v}"));
    }
    for (t, h) in &observation.health {
        lines.push(format!("health {t} = {}", if *h { "ok" } else { "bad" }));
    }
    lines.join("\n")
}

fn render_rules(rules: &[ContextRule]) -> String {
    rules
        .iter()
        .map(|r| format!("- {} [{}]", r.guidance, r.rule_id))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Drive one full episode under the given policy.
///
/// The conclusion names a fault timestamp or reports why the episode was
/// inconclusive; exhausted budgets conclude gracefully rather than erroring.
pub fn run_episode(
    policy: &SchedulingPolicy,
    env: &mut SensorEnv,
    backend: &dyn ChatBackend,
    limits: &EpisodeLimits,
    ctx: &mut EpisodeContext,
) -> Result<EpisodeRun, KernelError> {
    policy.validate()?;
    if env.is_closed() {
        return Err(KernelError::EnvironmentUnavailable);
    }
    if limits.max_steps == 0 {
        return Err(KernelError::InvalidPolicy(
            "max_steps must be at least 1".to_string(),
        ));
    }

    let state = State::initial(ctx.episode_id.clone(), TASK_GOAL);
    let envelope = EpisodeEnvelope {
        method: policy.method,
        seed: ctx.scenario_seed,
        scenario_digest: env.scenario().digest(),
        task_goal: TASK_GOAL.to_string(),
        initial_state: state.clone(),
    };
    let clock = if ctx.simulated_latency.is_some() {
        EpisodeClock::virtual_clock()
    } else {
        EpisodeClock::wall_clock()
    };
    let mut driver = Driver {
        policy,
        env,
        limits,
        ctx,
        state,
        steps: Vec::new(),
        clock,
        envelope,
        interactions: 0,
        outcome: None,
    };

    if let Some(proc_) = &policy.active_procedure {
        // A promoted procedure handles the episode without any backend call.
        driver.detect_locally(proc_)?;
    } else {
        let system_text =
            templates::render(templates::SYSTEM_V1, &RenderContext::default()).expect("template");
        let rules_text = render_rules(&policy.context_rules);
        let brief_id = if policy.proposes_procedure() {
            templates::TASK_BRIEF_PROC_V1
        } else if !policy.context_rules.is_empty() {
            templates::TASK_BRIEF_RULES_V1
        } else {
            templates::TASK_BRIEF_V1
        };
        let brief = templates::render(
            brief_id,
            &RenderContext {
                task_goal: TASK_GOAL,
                rules: &rules_text,
                revealed_data: "",
            },
        )
        .expect("template");
        let mut messages = vec![
            ChatMessage::system(system_text, templates::SYSTEM_V1),
            ChatMessage::user(brief, brief_id),
        ];

        loop {
            if driver.over_step_budget() {
                driver.finish(Conclusion::Inconclusive {
                    reason: InconclusiveReason::StepBudgetExhausted,
                })?;
                break;
            }
            if driver.interactions >= limits.max_backend_calls {
                driver.finish(Conclusion::Inconclusive {
                    reason: InconclusiveReason::BackendCallBudgetExhausted,
                })?;
                break;
            }

            let reply = backend.complete(&messages)?;
            driver.interactions += 1;
            if let Some(class) = reply.latency_class {
                if let Some(sim) = driver.ctx.simulated_latency.as_mut() {
                    let drawn = sim.draw(class);
                    driver.clock.add_latency(drawn);
                }
            }

            let directive = parse_directive(&reply.message.content);
            let last_user = messages
                .iter()
                .rev()
                .find(|m| m.role == Role::User)
                .expect("conversation always holds a user message");
            let spec = PromptSpec {
                template_id: last_user.template_id.clone().unwrap_or_default(),
                prompt: last_user.content.clone(),
                reply: reply.message.content.clone(),
                directive: directive.clone(),
            };
            driver.step(Action::think(spec))?;
            messages.push(reply.message);

            match directive {
                Directive::Acknowledge => {
                    let text = templates::render(templates::CONTINUE_V1, &RenderContext::default())
                        .expect("template");
                    messages.push(ChatMessage::user(text, templates::CONTINUE_V1));
                }
                Directive::Request(request) => {
                    let observation = driver
                        .step(Action::act(request))?
                        .expect("data request produces an observation");
                    let lines = observation_lines(&observation);
                    let text = templates::render(
                        templates::DATA_V1,
                        &RenderContext {
                            task_goal: TASK_GOAL,
                            rules: "",
                            revealed_data: &lines,
                        },
                    )
                    .expect("template");
                    messages.push(ChatMessage::user(text, templates::DATA_V1));
                }
                Directive::Conclude(conclusion) => {
                    driver.finish(conclusion)?;
                    break;
                }
                Directive::ProposeProcedure(text) => {
                    if driver.policy.proposes_procedure() && driver.ctx.registry.is_some() {
                        match driver.route_proposal(&text)? {
                            Some(promoted) => {
                                driver.detect_locally(&promoted)?;
                                break;
                            }
                            None => {
                                // Verification failed: fall back to direct
                                // requests within the same run.
                                let text = templates::render(
                                    templates::PROCEDURE_REJECTED_V1,
                                    &RenderContext::default(),
                                )
                                .expect("template");
                                messages.push(ChatMessage::user(
                                    text,
                                    templates::PROCEDURE_REJECTED_V1,
                                ));
                            }
                        }
                    } else {
                        let text =
                            templates::render(templates::CONTINUE_V1, &RenderContext::default())
                                .expect("template");
                        messages.push(ChatMessage::user(text, templates::CONTINUE_V1));
                    }
                }
            }
        }
    }

    let outcome = driver.outcome.clone().expect("episode always concludes");
    let storage_warning = driver
        .ctx
        .recorder
        .as_deref()
        .map(|r| r.storage_warning())
        .unwrap_or(false);
    let trajectory = Trajectory {
        episode_id: driver.envelope.initial_state.episode_id.clone(),
        method: policy.method,
        scenario_seed: driver.ctx.scenario_seed,
        scenario_digest: driver.envelope.scenario_digest.clone(),
        task_goal: TASK_GOAL.to_string(),
        steps: driver.steps,
        outcome: Some(outcome.clone()),
        storage_warning,
    };
    if let Some(bus) = driver.ctx.bus {
        bus.publish(StepEvent::EpisodeComplete {
            trajectory: Box::new(trajectory.clone()),
        });
    }
    Ok(EpisodeRun {
        conclusion: outcome.conclusion,
        interactions: driver.interactions,
        runtime_s: driver.clock.elapsed_s(),
        env_queries: driver.env.queries(),
        trajectory,
    })
}

/// Re-execute a trajectory's recorded actions through [`transition`] against
/// a regenerated scenario and check that every state digest matches.
pub fn verify_reexecution(trajectory: &Trajectory) -> Result<(), KernelError> {
    let scenario = crate::sensor::generate_scenario(trajectory.scenario_seed);
    if scenario.digest() != trajectory.scenario_digest {
        return Err(KernelError::ReplayDivergence(
            "scenario digest does not match the recorded seed".to_string(),
        ));
    }
    let mut env = SensorEnv::new(scenario);
    let mut state = State::initial(trajectory.episode_id.clone(), &trajectory.task_goal);
    for (index, step) in trajectory.steps.iter().enumerate() {
        if state.digest() != step.state_before {
            return Err(KernelError::ReplayDivergence(format!(
                "state digest mismatch before step {index}"
            )));
        }
        if step.action.kind == ActivityKind::Learn {
            continue;
        }
        let (next, observation) = transition(&state, &step.action, &mut env)?;
        if observation != step.observation {
            return Err(KernelError::ReplayDivergence(format!(
                "observation mismatch at step {index}"
            )));
        }
        state = next;
    }
    Ok(())
}
