//! Time-ordered recording of episodes, their stable on-disk format, and
//! reconstruction of trajectories from that format.
//!
//! On-disk contract (`.trace.jsonl`): one UTF-8 JSON object per line, one
//! line per step, fields exactly `v` (schema version), `ep` (episode id),
//! `i` (step index), `ts` (monotonic ns), `kind` (Think|Act|Reflect|Verify|
//! Learn), `payload` (object), `obs` (object or null), `sd` (state digest,
//! 16 hex chars). Line-delimited text was chosen over a binary format so the
//! logs stay readable as learning material.
//!
//! Full states appear only in the first record's payload (the episode
//! envelope) and the concluding record's payload (outcome and final state);
//! every other record carries only the 64-bit digest of its pre-transition
//! state. `wall_time` is never written and never compared.

use std::collections::VecDeque;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Seek, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::SystemTime;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::digest;
use crate::kernel::{
    advance, Action, ActivityKind, Conclusion, DataRequest, EpisodeId, Method, ProcedureProposal,
    PromptSpec, ReflectionNote, State, Step,
};
use crate::sensor::Observation;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace sink is closed")]
    SinkClosed,
    #[error("record {found} found where step {expected} was expected")]
    GapDetected { expected: u32, found: u32 },
    #[error("unsupported schema version {found} (reader supports {SCHEMA_VERSION})")]
    SchemaMismatch { found: u32 },
    #[error("trajectory has no steps")]
    EmptyTrajectory,
    #[error("trajectory is incomplete: {0}")]
    Incomplete(String),
    #[error("corrupt trace: {0}")]
    Corrupt(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Flattened step record; field order is the wire order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub v: u32,
    pub ep: String,
    pub i: u32,
    pub ts: u64,
    pub kind: ActivityKind,
    pub payload: Value,
    pub obs: Option<Observation>,
    pub sd: String,
}

/// Episode conclusion graded against the environment oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub conclusion: Conclusion,
    pub correct: bool,
}

/// Episode-level metadata carried in the first record's payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeEnvelope {
    pub method: Method,
    pub seed: u64,
    pub scenario_digest: String,
    pub task_goal: String,
    pub initial_state: State,
}

/// Conclusion-record extras: the graded outcome and the full final state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalExtras {
    pub outcome: Outcome,
    pub final_state: State,
}

/// The full reasoning trajectory of one episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub episode_id: EpisodeId,
    pub method: Method,
    pub scenario_seed: u64,
    pub scenario_digest: String,
    pub task_goal: String,
    pub steps: Vec<Step>,
    pub outcome: Option<Outcome>,
    /// Set when recording fell back to memory after a storage failure.
    #[serde(default)]
    pub storage_warning: bool,
}

impl Trajectory {
    /// Backend interactions = reasoning turns (one per Think step).
    pub fn interactions(&self) -> u32 {
        self.steps
            .iter()
            .filter(|s| s.action.kind == ActivityKind::Think)
            .count() as u32
    }
}

// ---------------------------------------------------------------------------
// Step <-> record flattening
// ---------------------------------------------------------------------------

/// Flatten one step to its wire record. `envelope` rides the first record of
/// an episode, `extras` the concluding record.
pub fn record_from_step(
    episode_id: &EpisodeId,
    index: u32,
    step: &Step,
    envelope: Option<&EpisodeEnvelope>,
    extras: Option<&FinalExtras>,
) -> TraceRecord {
    let mut payload = match &step.action.payload {
        crate::kernel::ActionPayload::Prompt(spec) => json!({ "prompt": spec }),
        crate::kernel::ActionPayload::Request(request) => json!({ "request": request }),
        crate::kernel::ActionPayload::Conclude(conclusion) => json!({ "conclude": conclusion }),
        crate::kernel::ActionPayload::Proposal(proposal) => json!({ "proposal": proposal }),
        crate::kernel::ActionPayload::Note(note) => json!({ "note": note.note }),
    };
    let map = payload.as_object_mut().expect("payload is an object");
    if let Some(envelope) = envelope {
        map.insert(
            "episode".to_string(),
            serde_json::to_value(envelope).expect("envelope encodes"),
        );
    }
    if let Some(extras) = extras {
        map.insert(
            "outcome".to_string(),
            serde_json::to_value(&extras.outcome).expect("outcome encodes"),
        );
        map.insert(
            "final_state".to_string(),
            serde_json::to_value(&extras.final_state).expect("state encodes"),
        );
    }
    TraceRecord {
        v: SCHEMA_VERSION,
        ep: episode_id.as_str().to_string(),
        i: index,
        ts: step.timestamp_ns,
        kind: step.action.kind,
        payload,
        obs: step.observation.clone(),
        sd: digest::hex16(step.state_before),
    }
}

fn field<T: serde::de::DeserializeOwned>(payload: &Value, key: &str) -> Result<T, TraceError> {
    let value = payload
        .get(key)
        .ok_or_else(|| TraceError::Corrupt(format!("payload missing `{key}`")))?;
    serde_json::from_value(value.clone())
        .map_err(|e| TraceError::Corrupt(format!("payload field `{key}`: {e}")))
}

/// Rebuild a step (plus any envelope/extras) from its wire record.
pub fn step_from_record(
    record: &TraceRecord,
) -> Result<(Step, Option<EpisodeEnvelope>, Option<FinalExtras>), TraceError> {
    if record.v != SCHEMA_VERSION {
        return Err(TraceError::SchemaMismatch { found: record.v });
    }
    let action = match record.kind {
        ActivityKind::Think => Action::think(field::<PromptSpec>(&record.payload, "prompt")?),
        ActivityKind::Act => {
            if record.payload.get("request").is_some() {
                Action::act(field::<DataRequest>(&record.payload, "request")?)
            } else {
                Action::conclude(field::<Conclusion>(&record.payload, "conclude")?)
            }
        }
        ActivityKind::Verify => {
            Action::verify(field::<ProcedureProposal>(&record.payload, "proposal")?)
        }
        ActivityKind::Reflect => Action::reflect(ReflectionNote {
            note: field::<String>(&record.payload, "note")?,
        }),
        ActivityKind::Learn => Action::learn_marker(ReflectionNote {
            note: field::<String>(&record.payload, "note")?,
        }),
    };
    let state_before = u64::from_str_radix(&record.sd, 16)
        .map_err(|_| TraceError::Corrupt(format!("bad state digest `{}`", record.sd)))?;
    let envelope = match record.payload.get("episode") {
        Some(_) => Some(field::<EpisodeEnvelope>(&record.payload, "episode")?),
        None => None,
    };
    let extras = match record.payload.get("outcome") {
        Some(_) => Some(FinalExtras {
            outcome: field::<Outcome>(&record.payload, "outcome")?,
            final_state: field::<State>(&record.payload, "final_state")?,
        }),
        None => None,
    };
    Ok((
        Step {
            state_before,
            action,
            observation: record.obs.clone(),
            timestamp_ns: record.ts,
            wall_time: SystemTime::UNIX_EPOCH,
        },
        envelope,
        extras,
    ))
}

// ---------------------------------------------------------------------------
// Recorder
// ---------------------------------------------------------------------------

enum SinkState {
    File { writer: Box<dyn Write + Send> },
    Memory,
}

/// Single-writer, append-only step recorder. A record is durably appended
/// (written and flushed) before the call returns; if storage fails the
/// recorder flips to memory-only mode and raises its warning flag instead of
/// stopping the episode.
pub struct TraceRecorder {
    sink: SinkState,
    path: Option<PathBuf>,
    lines: Vec<String>,
    warning: bool,
    closed: bool,
}

impl TraceRecorder {
    pub fn file(path: &Path) -> std::io::Result<Self> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let writer = BufWriter::new(File::create(path)?);
        Ok(Self {
            sink: SinkState::File {
                writer: Box::new(writer),
            },
            path: Some(path.to_path_buf()),
            lines: Vec::new(),
            warning: false,
            closed: false,
        })
    }

    /// Record to an injected writer; lets tests exercise storage failures.
    pub fn with_writer(writer: Box<dyn Write + Send>) -> Self {
        Self {
            sink: SinkState::File { writer },
            path: None,
            lines: Vec::new(),
            warning: false,
            closed: false,
        }
    }

    pub fn memory() -> Self {
        Self {
            sink: SinkState::Memory,
            path: None,
            lines: Vec::new(),
            warning: false,
            closed: false,
        }
    }

    pub fn record(&mut self, record: &TraceRecord) -> Result<(), TraceError> {
        if self.closed {
            return Err(TraceError::SinkClosed);
        }
        let line = serde_json::to_string(record)
            .map_err(|e| TraceError::Corrupt(format!("record encode: {e}")))?;
        if let SinkState::File { writer } = &mut self.sink {
            let outcome = writer
                .write_all(line.as_bytes())
                .and_then(|_| writer.write_all(b"\n"))
                .and_then(|_| writer.flush());
            if let Err(e) = outcome {
                log::warn!("trace storage failed ({e}); continuing in memory only");
                self.warning = true;
                self.sink = SinkState::Memory;
            }
        }
        self.lines.push(line);
        Ok(())
    }

    pub fn close(&mut self) {
        self.closed = true;
    }

    pub fn storage_warning(&self) -> bool {
        self.warning
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    /// Everything recorded so far, in wire format.
    pub fn contents(&self) -> String {
        let mut out = self.lines.join("\n");
        if !out.is_empty() {
            out.push('\n');
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Serialize / parse / replay
// ---------------------------------------------------------------------------

fn rebuild_states(trajectory: &Trajectory) -> Result<(State, State), TraceError> {
    let initial = State::initial(trajectory.episode_id.clone(), &trajectory.task_goal);
    let mut state = initial.clone();
    for (index, step) in trajectory.steps.iter().enumerate() {
        if state.digest() != step.state_before {
            return Err(TraceError::Corrupt(format!(
                "state digest mismatch before step {index}"
            )));
        }
        if step.action.kind == ActivityKind::Learn {
            continue;
        }
        state = advance(&state, &step.action, step.observation.as_ref())
            .map_err(|e| TraceError::Corrupt(format!("step {index} does not apply: {e}")))?;
    }
    Ok((initial, state))
}

/// Deterministic byte encoding of a completed trajectory: identical
/// trajectories produce identical bytes, and the bytes equal what the live
/// recorder streamed during the episode.
pub fn serialize(trajectory: &Trajectory) -> Result<Vec<u8>, TraceError> {
    if trajectory.steps.is_empty() {
        return Err(TraceError::EmptyTrajectory);
    }
    let outcome = trajectory
        .outcome
        .clone()
        .ok_or_else(|| TraceError::Incomplete("outcome not set".to_string()))?;
    let conclude_index = trajectory
        .steps
        .iter()
        .position(|s| matches!(s.action.payload, crate::kernel::ActionPayload::Conclude(_)))
        .ok_or_else(|| TraceError::Incomplete("no concluding step".to_string()))?;
    let (initial_state, final_state) = rebuild_states(trajectory)?;
    let envelope = EpisodeEnvelope {
        method: trajectory.method,
        seed: trajectory.scenario_seed,
        scenario_digest: trajectory.scenario_digest.clone(),
        task_goal: trajectory.task_goal.clone(),
        initial_state,
    };
    let extras = FinalExtras {
        outcome,
        final_state,
    };
    let mut out = Vec::new();
    for (index, step) in trajectory.steps.iter().enumerate() {
        let record = record_from_step(
            &trajectory.episode_id,
            index as u32,
            step,
            (index == 0).then_some(&envelope),
            (index == conclude_index).then_some(&extras),
        );
        serde_json::to_writer(&mut out, &record)
            .map_err(|e| TraceError::Corrupt(format!("record encode: {e}")))?;
        out.push(b'\n');
    }
    Ok(out)
}

/// Parse wire bytes into records, rejecting unknown schema versions.
pub fn parse(bytes: &[u8]) -> Result<Vec<TraceRecord>, TraceError> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| TraceError::Corrupt(format!("not valid UTF-8: {e}")))?;
    let mut records = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(line)
            .map_err(|e| TraceError::Corrupt(format!("line {}: {e}", line_no + 1)))?;
        let v = value
            .get("v")
            .and_then(Value::as_u64)
            .ok_or_else(|| TraceError::Corrupt(format!("line {}: missing `v`", line_no + 1)))?;
        if v as u32 != SCHEMA_VERSION {
            return Err(TraceError::SchemaMismatch { found: v as u32 });
        }
        let record: TraceRecord = serde_json::from_value(value)
            .map_err(|e| TraceError::Corrupt(format!("line {}: {e}", line_no + 1)))?;
        records.push(record);
    }
    Ok(records)
}

/// A reconstructed episode: the trajectory plus the full boundary states.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayedEpisode {
    pub trajectory: Trajectory,
    pub initial_state: State,
    pub final_state: Option<State>,
}

/// Reconstruct a trajectory from contiguous, schema-compatible records.
pub fn replay(records: &[TraceRecord]) -> Result<ReplayedEpisode, TraceError> {
    if records.is_empty() {
        return Err(TraceError::EmptyTrajectory);
    }
    let mut steps = Vec::with_capacity(records.len());
    let mut envelope: Option<EpisodeEnvelope> = None;
    let mut extras: Option<FinalExtras> = None;
    let mut last_ts: Option<u64> = None;
    for (index, record) in records.iter().enumerate() {
        if record.i != index as u32 {
            return Err(TraceError::GapDetected {
                expected: index as u32,
                found: record.i,
            });
        }
        if let Some(previous) = last_ts {
            if record.ts <= previous {
                return Err(TraceError::Corrupt(format!(
                    "timestamps not strictly increasing at step {index}"
                )));
            }
        }
        last_ts = Some(record.ts);
        let (step, record_envelope, record_extras) = step_from_record(record)?;
        if let Some(e) = record_envelope {
            envelope = Some(e);
        }
        if let Some(x) = record_extras {
            extras = Some(x);
        }
        steps.push(step);
    }
    let envelope = envelope
        .ok_or_else(|| TraceError::Corrupt("first record carries no episode envelope".into()))?;
    let episode_id = EpisodeId(records[0].ep.clone());
    if records.iter().any(|r| r.ep != records[0].ep) {
        return Err(TraceError::Corrupt("records from multiple episodes".into()));
    }
    let trajectory = Trajectory {
        episode_id,
        method: envelope.method,
        scenario_seed: envelope.seed,
        scenario_digest: envelope.scenario_digest.clone(),
        task_goal: envelope.task_goal.clone(),
        steps,
        outcome: extras.as_ref().map(|x| x.outcome.clone()),
        storage_warning: false,
    };
    Ok(ReplayedEpisode {
        trajectory,
        initial_state: envelope.initial_state,
        final_state: extras.map(|x| x.final_state),
    })
}

// ---------------------------------------------------------------------------
// Step bus
// ---------------------------------------------------------------------------

/// Event stream from the episode loop to the learner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum StepEvent {
    Step {
        episode: EpisodeId,
        index: u32,
        kind: ActivityKind,
    },
    EpisodeComplete {
        trajectory: Box<Trajectory>,
    },
}

static SPILL_COUNTER: AtomicU64 = AtomicU64::new(0);

struct Spill {
    writer: BufWriter<File>,
    reader: BufReader<File>,
    pending: u64,
    path: PathBuf,
}

impl Spill {
    fn create() -> std::io::Result<Self> {
        let path = std::env::temp_dir().join(format!(
            "cogloop-bus-{}-{}.spill.jsonl",
            std::process::id(),
            SPILL_COUNTER.fetch_add(1, Ordering::Relaxed)
        ));
        let writer = BufWriter::new(File::create(&path)?);
        let mut reader_file = File::open(&path)?;
        reader_file.rewind()?;
        Ok(Self {
            writer,
            reader: BufReader::new(reader_file),
            pending: 0,
            path,
        })
    }
}

impl Drop for Spill {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

struct BusState {
    queue: VecDeque<StepEvent>,
    spill: Option<Spill>,
    closed: bool,
}

struct BusInner {
    capacity: usize,
    state: Mutex<BusState>,
    available: Condvar,
}

/// Append-only publication channel from the episode loop to the learner:
/// bounded in-memory buffer, overflow to disk, never drops and never blocks
/// the publisher on the consumer.
#[derive(Clone)]
pub struct StepBus {
    inner: Arc<BusInner>,
}

impl StepBus {
    pub fn new(capacity: usize) -> Self {
        Self {
            inner: Arc::new(BusInner {
                capacity: capacity.max(1),
                state: Mutex::new(BusState {
                    queue: VecDeque::new(),
                    spill: None,
                    closed: false,
                }),
                available: Condvar::new(),
            }),
        }
    }

    /// Publish without waiting. Events beyond the buffer capacity go to the
    /// spill file so order is preserved and nothing is dropped.
    pub fn publish(&self, event: StepEvent) {
        let mut state = self.inner.state.lock().expect("bus lock");
        let must_spill = state
            .spill
            .as_ref()
            .map(|s| s.pending > 0)
            .unwrap_or(false)
            || state.queue.len() >= self.inner.capacity;
        if must_spill {
            if state.spill.is_none() {
                match Spill::create() {
                    Ok(spill) => state.spill = Some(spill),
                    Err(e) => {
                        // Spill storage unavailable: grow the in-memory queue
                        // rather than drop or block.
                        log::warn!("bus spill unavailable ({e}); buffering in memory");
                        state.queue.push_back(event);
                        drop(state);
                        self.inner.available.notify_one();
                        return;
                    }
                }
            }
            let spill = state.spill.as_mut().expect("spill present");
            let line = serde_json::to_string(&event).expect("event encodes");
            let written = spill
                .writer
                .write_all(line.as_bytes())
                .and_then(|_| spill.writer.write_all(b"\n"))
                .and_then(|_| spill.writer.flush());
            match written {
                Ok(()) => spill.pending += 1,
                Err(e) => {
                    log::warn!("bus spill write failed ({e}); buffering in memory");
                    state.queue.push_back(event);
                }
            }
        } else {
            state.queue.push_back(event);
        }
        drop(state);
        self.inner.available.notify_one();
    }

    /// Blocking receive in publication order; `None` once closed and fully
    /// drained.
    pub fn recv(&self) -> Option<StepEvent> {
        let mut state = self.inner.state.lock().expect("bus lock");
        loop {
            if let Some(event) = state.queue.pop_front() {
                return Some(event);
            }
            let spilled = state
                .spill
                .as_ref()
                .map(|s| s.pending > 0)
                .unwrap_or(false);
            if spilled {
                let spill = state.spill.as_mut().expect("spill present");
                let mut line = String::new();
                match spill.reader.read_line(&mut line) {
                    Ok(n) if n > 0 => {
                        spill.pending -= 1;
                        match serde_json::from_str(line.trim_end()) {
                            Ok(event) => return Some(event),
                            Err(e) => {
                                log::error!("bus spill decode failed: {e}");
                                continue;
                            }
                        }
                    }
                    _ => {
                        log::error!("bus spill read failed; {} events lost", spill.pending);
                        spill.pending = 0;
                        continue;
                    }
                }
            }
            if state.closed {
                return None;
            }
            state = self.inner.available.wait(state).expect("bus lock");
        }
    }

    /// Non-blocking receive.
    pub fn try_recv(&self) -> Option<StepEvent> {
        let mut state = self.inner.state.lock().expect("bus lock");
        if let Some(event) = state.queue.pop_front() {
            return Some(event);
        }
        let spilled = state
            .spill
            .as_ref()
            .map(|s| s.pending > 0)
            .unwrap_or(false);
        if spilled {
            let spill = state.spill.as_mut().expect("spill present");
            let mut line = String::new();
            if let Ok(n) = spill.reader.read_line(&mut line) {
                if n > 0 {
                    spill.pending -= 1;
                    return serde_json::from_str(line.trim_end()).ok();
                }
            }
        }
        None
    }

    pub fn close(&self) {
        let mut state = self.inner.state.lock().expect("bus lock");
        state.closed = true;
        drop(state);
        self.inner.available.notify_all();
    }
}
