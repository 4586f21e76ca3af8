//! Experience memory: trajectories become learning materials, materials
//! become generalized rules, and later episodes retrieve those rules as
//! planning context.
//!
//! Updates are pure: `learn` returns a new memory value and never mutates
//! its input, so concurrent readers of the previous value always see a
//! consistent snapshot. The learner thread applies updates by whole-value
//! swap.

use std::collections::VecDeque;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::{Arc, RwLock};
use std::thread::JoinHandle;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernel::{task_family, ActivityKind, ActionPayload, EpisodeId};
use crate::trace::{StepBus, StepEvent, Trajectory};

pub const DEFAULT_CAPACITY: usize = 256;

/// Rule id of the joint-request pattern.
pub const RULE_JOINT_REQUEST: &str = "joint-temperature-health-request";

#[derive(Debug, Error, PartialEq)]
pub enum MemoryError {
    #[error("trajectory {0} has no outcome; cannot extract materials")]
    IncompleteTrajectory(String),
    #[error("memory file is corrupt: {0}")]
    Corrupt(String),
}

/// One step of a trajectory condensed for learning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Excerpt {
    pub kind: ActivityKind,
    pub summary: String,
    pub annotation: String,
}

/// What one episode taught: ordered excerpts plus whether the conclusion
/// matched the oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningMaterial {
    pub source_episode: EpisodeId,
    pub excerpts: Vec<Excerpt>,
    pub success: bool,
}

/// Reusable guidance mined from materials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneralizedRule {
    pub rule_id: String,
    /// Exact task-family tag this rule applies to.
    pub trigger: String,
    pub guidance: String,
    pub support_count: u32,
    pub last_validated: EpisodeId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperienceMemory {
    rules: Vec<GeneralizedRule>,
    materials: VecDeque<LearningMaterial>,
    capacity: usize,
}

impl Default for ExperienceMemory {
    fn default() -> Self {
        Self::with_capacity(DEFAULT_CAPACITY)
    }
}

impl ExperienceMemory {
    pub fn with_capacity(capacity: usize) -> Self {
        Self {
            rules: Vec::new(),
            materials: VecDeque::new(),
            capacity: capacity.max(1),
        }
    }

    pub fn rules(&self) -> &[GeneralizedRule] {
        &self.rules
    }

    pub fn materials(&self) -> impl Iterator<Item = &LearningMaterial> {
        self.materials.iter()
    }

    pub fn material_count(&self) -> usize {
        self.materials.len()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }
}

/// Condense a completed trajectory into one material. Learn markers are
/// bookkeeping, not reasoning, and are excluded from the excerpts. The
/// episode's reflection note (when present) becomes the annotation on every
/// excerpt.
pub fn extract_materials(trajectory: &Trajectory) -> Result<LearningMaterial, MemoryError> {
    let outcome = trajectory.outcome.as_ref().ok_or_else(|| {
        MemoryError::IncompleteTrajectory(trajectory.episode_id.as_str().to_string())
    })?;
    let annotation = trajectory
        .steps
        .iter()
        .rev()
        .find_map(|s| match (&s.action.kind, &s.action.payload) {
            (ActivityKind::Reflect, ActionPayload::Note(n)) => Some(n.note.clone()),
            _ => None,
        })
        .unwrap_or_default();
    let excerpts = trajectory
        .steps
        .iter()
        .filter(|s| s.action.kind != ActivityKind::Learn)
        .map(|s| {
            let summary = match &s.action.payload {
                ActionPayload::Prompt(spec) => spec.reply.clone(),
                ActionPayload::Request(request) => request.directive_line(),
                ActionPayload::Conclude(conclusion) => conclusion.summary(),
                ActionPayload::Proposal(p) => format!("PROPOSE procedure: {}", p.text),
                ActionPayload::Note(n) => n.note.clone(),
            };
            Excerpt {
                kind: s.action.kind,
                summary,
                annotation: annotation.clone(),
            }
        })
        .collect();
    Ok(LearningMaterial {
        source_episode: trajectory.episode_id.clone(),
        excerpts,
        success: outcome.correct,
    })
}

fn has_separate_channel_requests(material: &LearningMaterial) -> bool {
    let mut saw_temperature_only = false;
    for excerpt in &material.excerpts {
        if excerpt.kind != ActivityKind::Act {
            continue;
        }
        if excerpt.summary.starts_with("REQUEST temperature AT") {
            saw_temperature_only = true;
        } else if saw_temperature_only && excerpt.summary.starts_with("REQUEST health AT") {
            return true;
        }
    }
    false
}

/// Mine reusable rules from materials. Only successful materials contribute;
/// with none, the result is empty (logged, not an error). Stateless over its
/// input: the same list always produces the same rules, with support equal
/// to the number of matching materials.
pub fn generalize(materials: &[LearningMaterial]) -> Vec<GeneralizedRule> {
    let successful: Vec<&LearningMaterial> =
        materials.iter().filter(|m| m.success).collect();
    if successful.is_empty() {
        log::info!("no successful material; no rules generalized");
        return Vec::new();
    }
    let mut rules = Vec::new();
    let matching: Vec<&&LearningMaterial> = successful
        .iter()
        .filter(|m| has_separate_channel_requests(m))
        .collect();
    if let Some(last) = matching.last() {
        rules.push(GeneralizedRule {
            rule_id: RULE_JOINT_REQUEST.to_string(),
            trigger: task_family(crate::kernel::TASK_GOAL).to_string(),
            guidance: "request temperature and health in one interaction".to_string(),
            support_count: matching.len() as u32,
            last_validated: last.source_episode.clone(),
        });
    }
    rules.sort_by(|a, b| a.rule_id.cmp(&b.rule_id));
    rules
}

/// Fold one completed trajectory into memory, returning the new value. The
/// input is untouched; rule support only ever grows, and the material
/// archive is capped with oldest-first eviction.
pub fn learn(
    memory: &ExperienceMemory,
    trajectory: &Trajectory,
) -> Result<ExperienceMemory, MemoryError> {
    let material = extract_materials(trajectory)?;
    let mut next = memory.clone();
    let new_rules = generalize(std::slice::from_ref(&material));
    for rule in new_rules {
        match next.rules.iter_mut().find(|r| r.rule_id == rule.rule_id) {
            Some(existing) => {
                existing.support_count += rule.support_count;
                existing.last_validated = rule.last_validated;
            }
            None => next.rules.push(rule),
        }
    }
    next.materials.push_back(material);
    while next.materials.len() > next.capacity {
        next.materials.pop_front();
    }
    Ok(next)
}

/// Rules whose trigger matches the goal's task family, ordered by support
/// descending with rule-id ties broken lexicographically. Rules without
/// successful support are never returned.
pub fn retrieve_context(memory: &ExperienceMemory, task_goal: &str) -> Vec<GeneralizedRule> {
    let family = task_family(task_goal);
    let mut matched: Vec<GeneralizedRule> = memory
        .rules
        .iter()
        .filter(|r| r.trigger == family && r.support_count >= 1)
        .cloned()
        .collect();
    matched.sort_by(|a, b| {
        b.support_count
            .cmp(&a.support_count)
            .then_with(|| a.rule_id.cmp(&b.rule_id))
    });
    matched
}

// ---------------------------------------------------------------------------
// Persistence (.memory.jsonl)
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum MemoryLine {
    Meta {
        v: u32,
        capacity: usize,
    },
    Rule {
        v: u32,
        rule: GeneralizedRule,
    },
    Material {
        v: u32,
        material: LearningMaterial,
    },
}

pub fn save_memory(memory: &ExperienceMemory, path: &Path) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut out = BufWriter::new(File::create(path)?);
    let mut write_line = |line: &MemoryLine| -> std::io::Result<()> {
        serde_json::to_writer(&mut out, line)?;
        out.write_all(b"\n")
    };
    write_line(&MemoryLine::Meta {
        v: 1,
        capacity: memory.capacity,
    })?;
    for rule in &memory.rules {
        write_line(&MemoryLine::Rule {
            v: 1,
            rule: rule.clone(),
        })?;
    }
    for material in &memory.materials {
        write_line(&MemoryLine::Material {
            v: 1,
            material: material.clone(),
        })?;
    }
    out.flush()
}

pub fn load_memory(path: &Path) -> Result<ExperienceMemory, MemoryError> {
    let file = File::open(path).map_err(|e| MemoryError::Corrupt(format!("open: {e}")))?;
    let mut memory = ExperienceMemory::default();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| MemoryError::Corrupt(format!("read: {e}")))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: MemoryLine =
            serde_json::from_str(&line).map_err(|e| MemoryError::Corrupt(e.to_string()))?;
        match parsed {
            MemoryLine::Meta { capacity, .. } => memory.capacity = capacity.max(1),
            MemoryLine::Rule { rule, .. } => memory.rules.push(rule),
            MemoryLine::Material { material, .. } => memory.materials.push_back(material),
        }
    }
    Ok(memory)
}

// ---------------------------------------------------------------------------
// Learner thread
// ---------------------------------------------------------------------------

/// Background learner consuming the step bus. Step events cost
/// `step_delay` each (zero by default; tests use it to model a slow
/// learner); completed trajectories are folded into the memory snapshot by
/// atomic whole-value swap.
pub struct LearnerHandle {
    thread: JoinHandle<()>,
    snapshot: Arc<RwLock<Arc<ExperienceMemory>>>,
    bus: StepBus,
}

pub fn spawn_learner(
    bus: StepBus,
    initial: ExperienceMemory,
    step_delay: Duration,
) -> LearnerHandle {
    let snapshot = Arc::new(RwLock::new(Arc::new(initial)));
    let worker_snapshot = Arc::clone(&snapshot);
    let worker_bus = bus.clone();
    let thread = std::thread::spawn(move || {
        while let Some(event) = worker_bus.recv() {
            match event {
                StepEvent::Step { .. } => {
                    if !step_delay.is_zero() {
                        std::thread::sleep(step_delay);
                    }
                }
                StepEvent::EpisodeComplete { trajectory } => {
                    let current = worker_snapshot.read().expect("memory lock").clone();
                    match learn(&current, &trajectory) {
                        Ok(updated) => {
                            *worker_snapshot.write().expect("memory lock") = Arc::new(updated);
                        }
                        Err(e) => log::warn!("learner skipped trajectory: {e}"),
                    }
                }
            }
        }
    });
    LearnerHandle {
        thread,
        snapshot,
        bus,
    }
}

impl LearnerHandle {
    /// Consistent snapshot of the current memory.
    pub fn snapshot(&self) -> Arc<ExperienceMemory> {
        self.snapshot.read().expect("memory lock").clone()
    }

    /// Close the bus, drain everything, and return the final memory.
    pub fn finish(self) -> ExperienceMemory {
        self.bus.close();
        let _ = self.thread.join();
        let snapshot = self.snapshot.read().expect("memory lock").clone();
        (*snapshot).clone()
    }

    /// Close the bus and detach without waiting for the backlog; used when a
    /// deliberately delayed learner would take long to drain.
    pub fn abandon(self) {
        self.bus.close();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn material(episode: &str, success: bool, summaries: &[(ActivityKind, &str)]) -> LearningMaterial {
        LearningMaterial {
            source_episode: EpisodeId::from(episode),
            excerpts: summaries
                .iter()
                .map(|(kind, s)| Excerpt {
                    kind: *kind,
                    summary: s.to_string(),
                    annotation: String::new(),
                })
                .collect(),
            success,
        }
    }

    fn separate_request_material(episode: &str, success: bool) -> LearningMaterial {
        material(
            episode,
            success,
            &[
                (ActivityKind::Think, "Acknowledged."),
                (ActivityKind::Act, "REQUEST temperature AT 1,2,3,4,5,6,7,8"),
                (ActivityKind::Act, "REQUEST health AT 1,2,3,4,5,6,7,8"),
                (ActivityKind::Act, "fault_at=5"),
            ],
        )
    }

    #[test]
    fn separate_requests_yield_the_joint_rule() {
        let rules = generalize(&[separate_request_material("ep-1", true)]);
        assert_eq!(rules.len(), 1);
        assert_eq!(rules[0].rule_id, RULE_JOINT_REQUEST);
        assert_eq!(rules[0].support_count, 1);
        assert_eq!(rules[0].trigger, "sensor-fault-detection");
    }

    #[test]
    fn same_material_twice_doubles_support_without_duplicates() {
        let m = separate_request_material("ep-1", true);
        let rules = generalize(&[m.clone(), m]);
        assert_eq!(rules.len(), 1);
        assert_eq!(rules[0].support_count, 2);
    }

    #[test]
    fn failed_materials_yield_nothing() {
        let rules = generalize(&[separate_request_material("ep-1", false)]);
        assert!(rules.is_empty());
    }

    #[test]
    fn joint_requests_do_not_match_the_pattern() {
        let m = material(
            "ep-2",
            true,
            &[
                (ActivityKind::Act, "REQUEST temperature,health AT 1,2,3"),
                (ActivityKind::Act, "fault_at=3"),
            ],
        );
        assert!(generalize(&[m]).is_empty());
    }

    #[test]
    fn retrieval_filters_by_family_and_orders_by_support() {
        let mut memory = ExperienceMemory::default();
        memory.rules = vec![
            GeneralizedRule {
                rule_id: "b-rule".into(),
                trigger: "sensor-fault-detection".into(),
                guidance: "g".into(),
                support_count: 3,
                last_validated: EpisodeId::from("ep"),
            },
            GeneralizedRule {
                rule_id: "a-rule".into(),
                trigger: "sensor-fault-detection".into(),
                guidance: "g".into(),
                support_count: 5,
                last_validated: EpisodeId::from("ep"),
            },
            GeneralizedRule {
                rule_id: "other-task".into(),
                trigger: "different-family".into(),
                guidance: "g".into(),
                support_count: 9,
                last_validated: EpisodeId::from("ep"),
            },
        ];
        let out = retrieve_context(&memory, crate::kernel::TASK_GOAL);
        assert_eq!(
            out.iter().map(|r| r.rule_id.as_str()).collect::<Vec<_>>(),
            vec!["a-rule", "b-rule"]
        );
        assert!(retrieve_context(&ExperienceMemory::default(), "anything").is_empty());
    }

    #[test]
    fn tie_breaking_is_lexicographic() {
        let mut memory = ExperienceMemory::default();
        for id in ["zeta", "alpha"] {
            memory.rules.push(GeneralizedRule {
                rule_id: id.into(),
                trigger: "sensor-fault-detection".into(),
                guidance: "g".into(),
                support_count: 4,
                last_validated: EpisodeId::from("ep"),
            });
        }
        let out = retrieve_context(&memory, crate::kernel::TASK_GOAL);
        assert_eq!(
            out.iter().map(|r| r.rule_id.as_str()).collect::<Vec<_>>(),
            vec!["alpha", "zeta"]
        );
    }

    #[test]
    fn memory_round_trips_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("state.memory.jsonl");
        let mut memory = ExperienceMemory::with_capacity(8);
        memory.rules = generalize(&[separate_request_material("ep-1", true)]);
        memory
            .materials
            .push_back(separate_request_material("ep-1", true));
        save_memory(&memory, &path).unwrap();
        let loaded = load_memory(&path).unwrap();
        assert_eq!(loaded, memory);
    }
}
