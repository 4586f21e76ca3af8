//! Learned decision procedures: a closed mini-language, its verification
//! gate, and the capability registry that swaps verified procedures in for
//! fixed logic (and back out again).
//!
//! The language is deliberately total and tiny so the gate can be decided by
//! exhaustive checking against the simulator; nothing in it can loop, alias
//! or escape:
//!
//! ```text
//! scan (asc|desc) over (health|temperature) ;
//! where (health == bad | temp < NUM | temp > NUM) ;
//! return index
//! ```
//!
//! Keywords are case-insensitive, whitespace is free, and NUM is a decimal
//! in [-100, 100].

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::digest;
use crate::sensor::{generate_scenario, oracle_detect, Channel, SensorView, WINDOW};

/// Capability name under which a fault-detection procedure can replace the
/// fixed chat-driven detector.
pub const FAULT_DETECTOR: &str = "fault_detector";

/// Minimum validation scenarios before a verdict may pass.
pub const DEFAULT_VALIDATION_MIN: usize = 100;

/// Default base seed of the validation scenario population.
pub const VALIDATION_SEED_BASE: u64 = 0x5eed_0001;

/// The validation seed list for a given base and count.
pub fn validation_seeds(base: u64, count: usize) -> Vec<u64> {
    (0..count as u64).map(|i| base.wrapping_add(i)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScanDirection {
    Asc,
    Desc,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WherePredicate {
    HealthBad,
    TempBelow(f64),
    TempAbove(f64),
}

impl WherePredicate {
    fn channel(&self) -> Channel {
        match self {
            WherePredicate::HealthBad => Channel::Health,
            WherePredicate::TempBelow(_) | WherePredicate::TempAbove(_) => Channel::Temperature,
        }
    }
}

/// One program instruction. A well-formed program is exactly one `Scan`, one
/// `Where`, one `ReturnIndex`, in that order; the parser only ever produces
/// that shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProcedureOp {
    Scan {
        direction: ScanDirection,
        over: Channel,
    },
    Where(WherePredicate),
    ReturnIndex,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProcedureStatus {
    Proposed,
    Verified,
    Promoted,
    RolledBack,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnedProcedure {
    pub proc_id: String,
    /// The program exactly as proposed.
    pub source_text: String,
    pub ops: Vec<ProcedureOp>,
    /// Episode that proposed it.
    pub provenance: String,
    pub status: ProcedureStatus,
}

#[derive(Debug, Error, PartialEq)]
pub enum ProcedureError {
    #[error("parse error at character {position}: {message}")]
    Parse { position: usize, message: String },
    #[error("view is missing {channel:?} at timestamp {timestamp}")]
    MissingView { channel: Channel, timestamp: u8 },
    #[error("{given} validation scenarios given, {minimum} required")]
    InsufficientScenarios { given: usize, minimum: usize },
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RegistryError {
    #[error("procedure {0} is not verified; promotion refused")]
    NotVerified(String),
    #[error("capability {0} has no learned implementation to roll back")]
    NothingToRollBack(String),
    #[error("unknown capability {0}")]
    UnknownCapability(String),
}

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Word(String),
    Number(f64),
    Semicolon,
    Less,
    Greater,
    EqEq,
}

struct Lexer {
    tokens: Vec<(Token, usize)>, // (token, 1-based char position of its start)
    cursor: usize,
    end_pos: usize,
}

fn lex(text: &str) -> Result<Lexer, ProcedureError> {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let mut i = 0usize;
    while i < chars.len() {
        let c = chars[i];
        let pos = i + 1;
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            let word: String = chars[start..i].iter().collect();
            tokens.push((Token::Word(word.to_ascii_lowercase()), pos));
        } else if c.is_ascii_digit() || c == '-' || c == '+' || c == '.' {
            let start = i;
            i += 1;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            let raw: String = chars[start..i].iter().collect();
            let value: f64 = raw.parse().map_err(|_| ProcedureError::Parse {
                position: pos,
                message: format!("invalid number `{raw}`"),
            })?;
            tokens.push((Token::Number(value), pos));
        } else if c == ';' {
            tokens.push((Token::Semicolon, pos));
            i += 1;
        } else if c == '<' {
            tokens.push((Token::Less, pos));
            i += 1;
        } else if c == '>' {
            tokens.push((Token::Greater, pos));
            i += 1;
        } else if c == '=' {
            if chars.get(i + 1) == Some(&'=') {
                tokens.push((Token::EqEq, pos));
                i += 2;
            } else {
                return Err(ProcedureError::Parse {
                    position: pos,
                    message: "expected `==`".to_string(),
                });
            }
        } else {
            return Err(ProcedureError::Parse {
                position: pos,
                message: format!("unexpected character `{c}`"),
            });
        }
    }
    Ok(Lexer {
        tokens,
        cursor: 0,
        end_pos: chars.len() + 1,
    })
}

impl Lexer {
    fn peek(&self) -> Option<&(Token, usize)> {
        self.tokens.get(self.cursor)
    }

    fn next(&mut self) -> Option<(Token, usize)> {
        let t = self.tokens.get(self.cursor).cloned();
        if t.is_some() {
            self.cursor += 1;
        }
        t
    }

    fn here(&self) -> usize {
        self.peek().map(|(_, p)| *p).unwrap_or(self.end_pos)
    }

    fn expect_word(&mut self, expected: &str) -> Result<(), ProcedureError> {
        let pos = self.here();
        match self.next() {
            Some((Token::Word(w), _)) if w == expected => Ok(()),
            _ => Err(ProcedureError::Parse {
                position: pos,
                message: format!("expected keyword `{expected}`"),
            }),
        }
    }

    fn expect_semicolon(&mut self) -> Result<(), ProcedureError> {
        let pos = self.here();
        match self.next() {
            Some((Token::Semicolon, _)) => Ok(()),
            _ => Err(ProcedureError::Parse {
                position: pos,
                message: "expected `;`".to_string(),
            }),
        }
    }

    fn word_choice(&mut self, choices: &[&str]) -> Result<String, ProcedureError> {
        let pos = self.here();
        match self.next() {
            Some((Token::Word(w), _)) if choices.contains(&w.as_str()) => Ok(w),
            _ => Err(ProcedureError::Parse {
                position: pos,
                message: format!("expected one of {}", choices.join(", ")),
            }),
        }
    }

    fn number(&mut self) -> Result<(f64, usize), ProcedureError> {
        let pos = self.here();
        match self.next() {
            Some((Token::Number(n), p)) => Ok((n, p)),
            _ => Err(ProcedureError::Parse {
                position: pos,
                message: "expected a number".to_string(),
            }),
        }
    }
}

/// Parse a proposed program. `provenance` names the proposing episode.
pub fn parse_procedure(text: &str, provenance: &str) -> Result<LearnedProcedure, ProcedureError> {
    let mut lx = lex(text)?;

    lx.expect_word("scan")?;
    let direction = match lx.word_choice(&["asc", "desc"])?.as_str() {
        "asc" => ScanDirection::Asc,
        _ => ScanDirection::Desc,
    };
    lx.expect_word("over")?;
    let over = match lx.word_choice(&["health", "temperature"])?.as_str() {
        "health" => Channel::Health,
        _ => Channel::Temperature,
    };
    lx.expect_semicolon()?;

    lx.expect_word("where")?;
    let predicate = {
        let pos = lx.here();
        match lx.next() {
            Some((Token::Word(w), _)) if w == "health" => {
                let eq_pos = lx.here();
                match lx.next() {
                    Some((Token::EqEq, _)) => {}
                    _ => {
                        return Err(ProcedureError::Parse {
                            position: eq_pos,
                            message: "expected `==`".to_string(),
                        })
                    }
                }
                lx.expect_word("bad")?;
                WherePredicate::HealthBad
            }
            Some((Token::Word(w), _)) if w == "temp" => {
                let op_pos = lx.here();
                let op = lx.next();
                let (value, num_pos) = lx.number()?;
                if !(-100.0..=100.0).contains(&value) {
                    return Err(ProcedureError::Parse {
                        position: num_pos,
                        message: format!("threshold {value} outside [-100, 100]"),
                    });
                }
                match op {
                    Some((Token::Less, _)) => WherePredicate::TempBelow(value),
                    Some((Token::Greater, _)) => WherePredicate::TempAbove(value),
                    _ => {
                        return Err(ProcedureError::Parse {
                            position: op_pos,
                            message: "expected `<` or `>`".to_string(),
                        })
                    }
                }
            }
            _ => {
                return Err(ProcedureError::Parse {
                    position: pos,
                    message: "expected `health == bad`, `temp < NUM` or `temp > NUM`".to_string(),
                })
            }
        }
    };
    lx.expect_semicolon()?;

    lx.expect_word("return")?;
    lx.expect_word("index")?;

    if let Some((_, pos)) = lx.peek() {
        return Err(ProcedureError::Parse {
            position: *pos,
            message: "trailing input after `return index`".to_string(),
        });
    }

    let ops = vec![
        ProcedureOp::Scan { direction, over },
        ProcedureOp::Where(predicate),
        ProcedureOp::ReturnIndex,
    ];
    let canonical = canonical_text(&ops);
    Ok(LearnedProcedure {
        proc_id: format!("proc-{}", digest::hex16(digest::fnv1a64(canonical.as_bytes()))),
        source_text: text.to_string(),
        ops,
        provenance: provenance.to_string(),
        status: ProcedureStatus::Proposed,
    })
}

/// Canonical rendering; `parse -> print -> parse` is a fixed point.
pub fn canonical_text(ops: &[ProcedureOp]) -> String {
    let mut parts = Vec::with_capacity(3);
    for op in ops {
        match op {
            ProcedureOp::Scan { direction, over } => {
                let dir = match direction {
                    ScanDirection::Asc => "asc",
                    ScanDirection::Desc => "desc",
                };
                let chan = match over {
                    Channel::Health => "health",
                    Channel::Temperature => "temperature",
                };
                parts.push(format!("scan {dir} over {chan}"));
            }
            ProcedureOp::Where(pred) => {
                let clause = match pred {
                    WherePredicate::HealthBad => "health == bad".to_string(),
                    WherePredicate::TempBelow(x) => format!("temp < {x}"),
                    WherePredicate::TempAbove(x) => format!("temp > {x}"),
                };
                parts.push(format!("where {clause}"));
            }
            ProcedureOp::ReturnIndex => parts.push("return index".to_string()),
        }
    }
    parts.join("; ")
}

// ---------------------------------------------------------------------------
// Execution
// ---------------------------------------------------------------------------

/// Local detection result.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Detection {
    FaultAt(u8),
    NotFound,
}

impl fmt::Display for Detection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Detection::FaultAt(k) => write!(f, "fault_at={k}"),
            Detection::NotFound => write!(f, "not_found"),
        }
    }
}

/// Channels a program reads: the scanned channel plus the predicate channel.
pub fn required_channels(proc_: &LearnedProcedure) -> Vec<Channel> {
    let mut channels = Vec::new();
    for op in &proc_.ops {
        let c = match op {
            ProcedureOp::Scan { over, .. } => Some(*over),
            ProcedureOp::Where(p) => Some(p.channel()),
            ProcedureOp::ReturnIndex => None,
        };
        if let Some(c) = c {
            if !channels.contains(&c) {
                channels.push(c);
            }
        }
    }
    channels
}

/// Run a parsed program against a revealed view. Returns the first index in
/// scan order whose predicate holds, or `NotFound`. Never touches a chat
/// backend. The view must contain every channel value the program visits.
pub fn execute_procedure(
    proc_: &LearnedProcedure,
    view: &SensorView,
) -> Result<Detection, ProcedureError> {
    let mut direction = ScanDirection::Asc;
    let mut scan_channel = Channel::Health;
    let mut predicate = WherePredicate::HealthBad;
    for op in &proc_.ops {
        match op {
            ProcedureOp::Scan {
                direction: d,
                over,
            } => {
                direction = *d;
                scan_channel = *over;
            }
            ProcedureOp::Where(p) => predicate = *p,
            ProcedureOp::ReturnIndex => {}
        }
    }

    let order: Vec<u8> = match direction {
        ScanDirection::Asc => (1..=WINDOW).collect(),
        ScanDirection::Desc => (1..=WINDOW).rev().collect(),
    };
    for t in order {
        // The scanned channel must be visible at every visited index even
        // when the predicate reads the other channel.
        match scan_channel {
            Channel::Health if !view.revealed_health.contains_key(&t) => {
                return Err(ProcedureError::MissingView {
                    channel: Channel::Health,
                    timestamp: t,
                })
            }
            Channel::Temperature if !view.revealed_temperatures.contains_key(&t) => {
                return Err(ProcedureError::MissingView {
                    channel: Channel::Temperature,
                    timestamp: t,
                })
            }
            _ => {}
        }
        let holds = match predicate {
            WherePredicate::HealthBad => {
                let h = view
                    .revealed_health
                    .get(&t)
                    .ok_or(ProcedureError::MissingView {
                        channel: Channel::Health,
                        timestamp: t,
                    })?;
                !h
            }
            WherePredicate::TempBelow(x) => {
                let v = view
                    .revealed_temperatures
                    .get(&t)
                    .ok_or(ProcedureError::MissingView {
                        channel: Channel::Temperature,
                        timestamp: t,
                    })?;
                *v < x
            }
            WherePredicate::TempAbove(x) => {
                let v = view
                    .revealed_temperatures
                    .get(&t)
                    .ok_or(ProcedureError::MissingView {
                        channel: Channel::Temperature,
                        timestamp: t,
                    })?;
                *v > x
            }
        };
        if holds {
            return Ok(Detection::FaultAt(t));
        }
    }
    Ok(Detection::NotFound)
}

// ---------------------------------------------------------------------------
// Verification
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mismatch {
    pub seed: u64,
    pub expected: u8,
    pub produced: Option<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub proc_id: String,
    pub scenarios_tested: u32,
    pub matches: u32,
    pub mismatches: Vec<Mismatch>,
    pub verdict: Verdict,
}

/// Check a procedure against generated scenarios and a ground-truth detector.
/// The verdict passes only when every scenario matches and at least
/// `minimum` scenarios were tested; a pass records `Verified` status on the
/// procedure. Custom scenario and oracle functions keep the gate testable
/// against alternative populations.
pub fn verify_procedure_with(
    proc_: &mut LearnedProcedure,
    seeds: &[u64],
    minimum: usize,
    scenario_of: impl Fn(u64) -> crate::sensor::SensorScenario,
    oracle_of: impl Fn(&crate::sensor::SensorScenario) -> u8,
) -> Result<VerificationReport, ProcedureError> {
    if seeds.len() < minimum {
        return Err(ProcedureError::InsufficientScenarios {
            given: seeds.len(),
            minimum,
        });
    }
    let mut mismatches = Vec::new();
    for &seed in seeds {
        let scenario = scenario_of(seed);
        let view = SensorView::full(&scenario);
        let expected = oracle_of(&scenario);
        let produced = match execute_procedure(proc_, &view)? {
            Detection::FaultAt(k) => Some(k),
            Detection::NotFound => None,
        };
        if produced != Some(expected) {
            mismatches.push(Mismatch {
                seed,
                expected,
                produced,
            });
        }
    }
    let tested = seeds.len() as u32;
    let verdict = if mismatches.is_empty() {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    if verdict == Verdict::Pass && proc_.status == ProcedureStatus::Proposed {
        proc_.status = ProcedureStatus::Verified;
    }
    Ok(VerificationReport {
        proc_id: proc_.proc_id.clone(),
        scenarios_tested: tested,
        matches: tested - mismatches.len() as u32,
        mismatches,
        verdict,
    })
}

/// Verification against the simulator and its exhaustive-scan detector.
pub fn verify_procedure(
    proc_: &mut LearnedProcedure,
    seeds: &[u64],
    minimum: usize,
) -> Result<VerificationReport, ProcedureError> {
    verify_procedure_with(proc_, seeds, minimum, generate_scenario, oracle_detect)
}

// ---------------------------------------------------------------------------
// Registry
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ActiveImpl {
    Fixed,
    Learned(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegistryAction {
    Promote,
    Rollback,
    Reset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistryEvent {
    pub seq: u64,
    pub action: RegistryAction,
    pub capability: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub proc_id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub reason: Option<String>,
}

/// Maps capability names to their active implementation. The fixed
/// implementation of every capability is a unit value here (the caller's own
/// built-in logic), so a fallback is reachable no matter what sequence of
/// promotions and rollbacks happened.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModuleRegistry {
    active: BTreeMap<String, ActiveImpl>,
    procedures: BTreeMap<String, LearnedProcedure>,
    history: Vec<RegistryEvent>,
}

impl Default for ModuleRegistry {
    fn default() -> Self {
        Self::new()
    }
}

impl ModuleRegistry {
    pub fn new() -> Self {
        let mut active = BTreeMap::new();
        active.insert(FAULT_DETECTOR.to_string(), ActiveImpl::Fixed);
        Self {
            active,
            procedures: BTreeMap::new(),
            history: Vec::new(),
        }
    }

    pub fn active(&self, capability: &str) -> ActiveImpl {
        self.active
            .get(capability)
            .cloned()
            .unwrap_or(ActiveImpl::Fixed)
    }

    /// The currently promoted procedure for a capability, if any.
    pub fn promoted_procedure(&self, capability: &str) -> Option<&LearnedProcedure> {
        match self.active.get(capability)? {
            ActiveImpl::Fixed => None,
            ActiveImpl::Learned(id) => self.procedures.get(id),
        }
    }

    /// Any procedure ever seen by this registry, active or not.
    pub fn procedure(&self, proc_id: &str) -> Option<&LearnedProcedure> {
        self.procedures.get(proc_id)
    }

    pub fn history(&self) -> &[RegistryEvent] {
        &self.history
    }

    fn push_event(
        &mut self,
        action: RegistryAction,
        capability: &str,
        proc_id: Option<String>,
        reason: Option<String>,
    ) {
        let seq = self.history.len() as u64;
        self.history.push(RegistryEvent {
            seq,
            action,
            capability: capability.to_string(),
            proc_id,
            reason,
        });
    }

    /// Install a verified procedure as the active implementation. The fixed
    /// fallback stays reachable; a previously promoted procedure is retained
    /// in history and demoted to `Verified`.
    pub fn promote(
        &mut self,
        capability: &str,
        mut proc_: LearnedProcedure,
    ) -> Result<(), RegistryError> {
        if proc_.status != ProcedureStatus::Verified {
            return Err(RegistryError::NotVerified(proc_.proc_id));
        }
        if let Some(ActiveImpl::Learned(old_id)) = self.active.get(capability).cloned() {
            if let Some(old) = self.procedures.get_mut(&old_id) {
                old.status = ProcedureStatus::Verified;
            }
        }
        proc_.status = ProcedureStatus::Promoted;
        let proc_id = proc_.proc_id.clone();
        self.procedures.insert(proc_id.clone(), proc_);
        self.active
            .insert(capability.to_string(), ActiveImpl::Learned(proc_id.clone()));
        self.push_event(RegistryAction::Promote, capability, Some(proc_id), None);
        Ok(())
    }

    /// Revert a capability to its fixed implementation.
    pub fn rollback(&mut self, capability: &str, reason: &str) -> Result<(), RegistryError> {
        match self.active.get(capability) {
            None => Err(RegistryError::UnknownCapability(capability.to_string())),
            Some(ActiveImpl::Fixed) => {
                Err(RegistryError::NothingToRollBack(capability.to_string()))
            }
            Some(ActiveImpl::Learned(id)) => {
                let id = id.clone();
                if let Some(p) = self.procedures.get_mut(&id) {
                    p.status = ProcedureStatus::RolledBack;
                }
                self.active
                    .insert(capability.to_string(), ActiveImpl::Fixed);
                self.push_event(
                    RegistryAction::Rollback,
                    capability,
                    Some(id),
                    Some(reason.to_string()),
                );
                Ok(())
            }
        }
    }

    /// Full reset: every capability back to fixed, verified-but-unpromoted
    /// procedures expire back to proposed.
    pub fn reset(&mut self) {
        let capabilities: Vec<String> = self.active.keys().cloned().collect();
        for cap in capabilities {
            self.active.insert(cap.clone(), ActiveImpl::Fixed);
            self.push_event(RegistryAction::Reset, &cap, None, None);
        }
        for proc_ in self.procedures.values_mut() {
            if matches!(
                proc_.status,
                ProcedureStatus::Verified | ProcedureStatus::Promoted
            ) {
                proc_.status = ProcedureStatus::Proposed;
            }
        }
    }

    /// Persist as line-delimited records with the full event history.
    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        #[derive(Serialize)]
        #[serde(tag = "kind", rename_all = "snake_case")]
        enum Line<'a> {
            Capability {
                v: u32,
                name: &'a str,
                active: &'a ActiveImpl,
            },
            Procedure {
                v: u32,
                proc_: &'a LearnedProcedure,
            },
            Event {
                v: u32,
                event: &'a RegistryEvent,
            },
        }
        let mut out = std::io::BufWriter::new(fs::File::create(path)?);
        for (name, active) in &self.active {
            serde_json::to_writer(&mut out, &Line::Capability { v: 1, name, active })?;
            out.write_all(b"\n")?;
        }
        for proc_ in self.procedures.values() {
            serde_json::to_writer(&mut out, &Line::Procedure { v: 1, proc_ })?;
            out.write_all(b"\n")?;
        }
        for event in &self.history {
            serde_json::to_writer(&mut out, &Line::Event { v: 1, event })?;
            out.write_all(b"\n")?;
        }
        out.flush()
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        #[derive(Deserialize)]
        #[serde(tag = "kind", rename_all = "snake_case")]
        enum Line {
            Capability {
                #[allow(dead_code)]
                v: u32,
                name: String,
                active: ActiveImpl,
            },
            Procedure {
                #[allow(dead_code)]
                v: u32,
                proc_: LearnedProcedure,
            },
            Event {
                #[allow(dead_code)]
                v: u32,
                event: RegistryEvent,
            },
        }
        let reader = BufReader::new(fs::File::open(path)?);
        let mut registry = ModuleRegistry {
            active: BTreeMap::new(),
            procedures: BTreeMap::new(),
            history: Vec::new(),
        };
        for line in reader.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: Line = serde_json::from_str(&line)
                .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
            match parsed {
                Line::Capability { name, active, .. } => {
                    registry.active.insert(name, active);
                }
                Line::Procedure { proc_, .. } => {
                    registry.procedures.insert(proc_.proc_id.clone(), proc_);
                }
                Line::Event { event, .. } => registry.history.push(event),
            }
        }
        if registry.active.is_empty() {
            registry
                .active
                .insert(FAULT_DETECTOR.to_string(), ActiveImpl::Fixed);
        }
        Ok(registry)
    }
}
