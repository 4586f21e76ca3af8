//! The three compared scheduling strategies, expressed as policy
//! configurations over one shared episode loop.
//!
//! - `notlearning`: every run is independent; memory is neither read nor
//!   written and the planning prompt carries no learned guidance.
//! - `learning`: retrieved rules are injected into planning and the finished
//!   trajectory is folded back into memory; execution logic stays fixed.
//! - `nofixcode`: additionally routes a proposed decision procedure through
//!   parse, verification and promotion, then detects locally; a run that
//!   starts with an already-promoted procedure needs no backend call at all,
//!   and a failed verification falls back to direct requests within the run.

use std::path::PathBuf;

use thiserror::Error;

use crate::backend::ChatBackend;
use crate::harness::RunResult;
use crate::kernel::{
    run_episode, ContextRule, EpisodeContext, EpisodeId, EpisodeLimits, KernelError, Method,
    SchedulingPolicy, ValidationConfig, TASK_GOAL,
};
use crate::memory::{learn, retrieve_context, ExperienceMemory, MemoryError};
use crate::procedure::{ModuleRegistry, FAULT_DETECTOR};
use crate::sensor::SensorEnv;
use crate::trace::{StepBus, TraceRecorder, Trajectory};

/// How a method uses memory and procedures; the invariants are fixed per
/// method and hold by construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MethodSpec {
    pub method: Method,
    pub uses_memory: bool,
    pub proposes_procedure: bool,
    pub reflection_enabled: bool,
}

impl MethodSpec {
    pub fn for_method(method: Method) -> Self {
        match method {
            Method::NotLearning => Self {
                method,
                uses_memory: false,
                proposes_procedure: false,
                reflection_enabled: false,
            },
            Method::Learning => Self {
                method,
                uses_memory: true,
                proposes_procedure: false,
                reflection_enabled: true,
            },
            Method::NoFixCodeByLearning => Self {
                method,
                uses_memory: true,
                proposes_procedure: true,
                reflection_enabled: true,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LatencyMode {
    Simulated,
    Wall,
}

pub struct RunOptions<'a> {
    pub seed: u64,
    pub limits: EpisodeLimits,
    pub latency: LatencyMode,
    pub trace_path: Option<PathBuf>,
    pub bus: Option<&'a StepBus>,
    pub validation: ValidationConfig,
    /// Fold the finished trajectory into memory before returning (the
    /// retrospective learning mode). Off when a background learner consumes
    /// the bus instead.
    pub learn_inline: bool,
    /// Suffix distinguishing special episodes (e.g. warm-up) in ids/paths.
    pub episode_tag: Option<&'a str>,
}

impl<'a> RunOptions<'a> {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            limits: EpisodeLimits::default(),
            latency: LatencyMode::Simulated,
            trace_path: None,
            bus: None,
            validation: ValidationConfig::default(),
            learn_inline: true,
            episode_tag: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum StrategyError {
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error("trace io: {0}")]
    Io(#[from] std::io::Error),
}

impl StrategyError {
    /// True when the root cause is a chat-backend failure (the retryable
    /// class the harness counts toward aborting a method).
    pub fn is_backend_failure(&self) -> bool {
        matches!(
            self,
            StrategyError::Kernel(KernelError::Backend(_))
        )
    }
}

#[derive(Debug)]
pub struct MethodRun {
    pub trajectory: Trajectory,
    pub result: RunResult,
}

/// Deterministic episode id for a (method, seed) pair.
pub fn episode_id(method: Method, seed: u64, tag: Option<&str>) -> EpisodeId {
    let base = format!("{}-{seed:016x}", method.token());
    match tag {
        Some(tag) => EpisodeId(format!("{base}-{tag}")),
        None => EpisodeId(base),
    }
}

/// Execute one run of a method against a fresh environment.
pub fn run_method(
    spec: &MethodSpec,
    memory: &mut ExperienceMemory,
    registry: &mut ModuleRegistry,
    env: &mut SensorEnv,
    backend: &dyn ChatBackend,
    opts: &RunOptions,
) -> Result<MethodRun, StrategyError> {
    let mut policy = SchedulingPolicy::new(spec.method);
    if spec.uses_memory {
        policy.context_rules = retrieve_context(memory, TASK_GOAL)
            .into_iter()
            .map(|r| ContextRule {
                rule_id: r.rule_id,
                guidance: r.guidance,
            })
            .collect();
    }
    if spec.proposes_procedure {
        policy.active_procedure = registry.promoted_procedure(FAULT_DETECTOR).cloned();
    }

    let mut recorder = match &opts.trace_path {
        Some(path) => Some(TraceRecorder::file(path)?),
        None => None,
    };
    let mut ctx = EpisodeContext {
        episode_id: episode_id(spec.method, opts.seed, opts.episode_tag),
        scenario_seed: opts.seed,
        recorder: recorder.as_mut(),
        bus: opts.bus,
        registry: spec.proposes_procedure.then_some(&mut *registry),
        validation: opts.validation,
        simulated_latency: match opts.latency {
            LatencyMode::Simulated => Some(crate::backend::SimulatedLatency::new(opts.seed)),
            LatencyMode::Wall => None,
        },
    };

    let run = run_episode(&policy, env, backend, &opts.limits, &mut ctx)?;

    if spec.uses_memory && opts.learn_inline {
        *memory = learn(memory, &run.trajectory)?;
    }

    let correct = run
        .trajectory
        .outcome
        .as_ref()
        .map(|o| o.correct)
        .unwrap_or(false);
    let result = RunResult {
        method: spec.method,
        seed: opts.seed,
        runtime_s: run.runtime_s,
        interactions: run.interactions,
        correct,
        trace_path: opts.trace_path.clone(),
    };
    Ok(MethodRun {
        trajectory: run.trajectory,
        result,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_specs_fix_their_invariants() {
        let not = MethodSpec::for_method(Method::NotLearning);
        assert!(!not.uses_memory && !not.proposes_procedure);
        let learning = MethodSpec::for_method(Method::Learning);
        assert!(learning.uses_memory && !learning.proposes_procedure);
        let nofix = MethodSpec::for_method(Method::NoFixCodeByLearning);
        assert!(nofix.uses_memory && nofix.proposes_procedure);
    }

    #[test]
    fn episode_ids_are_deterministic_and_tagged() {
        assert_eq!(
            episode_id(Method::Learning, 7, None).as_str(),
            "learning-0000000000000007"
        );
        assert_eq!(
            episode_id(Method::Learning, 7, Some("warmup")).as_str(),
            "learning-0000000000000007-warmup"
        );
    }
}
