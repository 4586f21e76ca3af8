//! Experiment orchestration: warm-up, measured runs over a shared seed set,
//! aggregation, pairwise significance testing, and artifact emission.

mod report;
pub mod stats;

pub use report::emit_report;
pub use stats::{evaluate_hypotheses, welch_t_test, PairTest, StatsError, WelchResult, ALPHA};

use std::path::PathBuf;

use thiserror::Error;

use crate::backend::{BackendConfig, BackendKind, ChatBackend, LiveBackend, ScriptedBackend};
use crate::digest;
use crate::kernel::{EpisodeLimits, Method, ValidationConfig};
use crate::memory::{load_memory, save_memory, ExperienceMemory};
use crate::procedure::ModuleRegistry;
use crate::sensor::SensorEnv;
use crate::strategies::{run_method, LatencyMode, MethodSpec, RunOptions, StrategyError};

/// Consecutive backend failures after which a method is abandoned.
const MAX_CONSECUTIVE_BACKEND_FAILURES: u32 = 3;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Strategy(#[from] StrategyError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("memory file: {0}")]
    Memory(#[from] crate::memory::MemoryError),
    #[error("backend: {0}")]
    Backend(#[from] crate::backend::BackendError),
}

/// One measured run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub method: Method,
    pub seed: u64,
    pub runtime_s: f64,
    pub interactions: u32,
    pub correct: bool,
    pub trace_path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodAggregate {
    pub method: Method,
    pub runs: u32,
    pub runtime_mean_s: f64,
    pub runtime_std_s: f64,
    pub interactions_mean: f64,
    pub interactions_std: f64,
    pub correct_runs: u32,
    /// True when the method was aborted early on repeated backend failures.
    pub partial: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub aggregates: Vec<MethodAggregate>,
    pub pairs: Vec<PairTest>,
    pub run_count: u32,
    pub config_digest: String,
    pub alpha: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub methods: Vec<Method>,
    pub runs: u32,
    pub seed_base: u64,
    pub backend: BackendConfig,
    pub latency: LatencyMode,
    pub warm_memory: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub limits: EpisodeLimits,
    pub validation: ValidationConfig,
    /// Write per-episode trace files under `out_dir/traces`.
    pub write_traces: bool,
    /// Persist final memory and the registry journal under `out_dir`.
    pub persist_state: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            methods: Method::ALL.to_vec(),
            runs: 20,
            seed_base: 0,
            backend: BackendConfig::default(),
            latency: LatencyMode::Simulated,
            warm_memory: None,
            out_dir: PathBuf::from("out"),
            limits: EpisodeLimits::default(),
            validation: ValidationConfig::default(),
            write_traces: true,
            persist_state: true,
        }
    }
}

impl ExperimentConfig {
    /// Stable digest over everything that shapes the measurements.
    pub fn digest(&self) -> String {
        let canonical = format!(
            "methods={};runs={};seed={};backend={:?}/{}/{};latency={:?};limits={}/{};validation={}/{}",
            self.methods
                .iter()
                .map(|m| m.token())
                .collect::<Vec<_>>()
                .join("+"),
            self.runs,
            self.seed_base,
            self.backend.kind,
            self.backend.model,
            self.backend.endpoint,
            self.latency,
            self.limits.max_steps,
            self.limits.max_backend_calls,
            self.validation.minimum,
            self.validation.seed_base,
        );
        digest::hex16(digest::fnv1a64(canonical.as_bytes()))
    }

    fn validate(&self) -> Result<(), HarnessError> {
        if self.runs == 0 {
            return Err(HarnessError::Config(
                "run count must be at least 1".to_string(),
            ));
        }
        if self.methods.is_empty() {
            return Err(HarnessError::Config("no methods selected".to_string()));
        }
        Ok(())
    }
}

fn make_backend(config: &BackendConfig) -> Result<Box<dyn ChatBackend>, HarnessError> {
    Ok(match config.kind {
        BackendKind::Scripted => {
            Box::new(ScriptedBackend::new().with_pacing_ms(config.pacing_ms))
        }
        BackendKind::Live => Box::new(LiveBackend::new(config.clone())?),
    })
}

fn aggregate(method: Method, results: &[RunResult], partial: bool) -> MethodAggregate {
    let runtimes: Vec<f64> = results.iter().map(|r| r.runtime_s).collect();
    let interactions: Vec<f64> = results.iter().map(|r| r.interactions as f64).collect();
    let std_or_zero = |v: &[f64]| if v.len() > 1 { stats::sample_std(v) } else { 0.0 };
    MethodAggregate {
        method,
        runs: results.len() as u32,
        runtime_mean_s: if runtimes.is_empty() { 0.0 } else { stats::mean(&runtimes) },
        runtime_std_s: std_or_zero(&runtimes),
        interactions_mean: if interactions.is_empty() { 0.0 } else { stats::mean(&interactions) },
        interactions_std: std_or_zero(&interactions),
        correct_runs: results.iter().filter(|r| r.correct).count() as u32,
        partial,
    }
}

/// Run the configured experiment: per method, one unmeasured warm-up episode
/// when the method learns, then `runs` measured episodes on the shared seed
/// set `seed_base..seed_base+runs`. Methods are measured sequentially; every
/// method sees exactly the same scenario seeds.
pub fn run_experiment(
    config: &ExperimentConfig,
) -> Result<(Vec<RunResult>, ExperimentReport), HarnessError> {
    config.validate()?;
    let backend = make_backend(&config.backend)?;
    let base_memory = match &config.warm_memory {
        Some(path) => load_memory(path)?,
        None => ExperienceMemory::default(),
    };

    // Methods in canonical order, deduplicated.
    let mut methods: Vec<Method> = Vec::new();
    for m in Method::ALL {
        if config.methods.contains(&m) && !methods.contains(&m) {
            methods.push(m);
        }
    }

    let mut all_results: Vec<RunResult> = Vec::new();
    let mut partial_methods: Vec<Method> = Vec::new();
    let mut registry_journal: Vec<String> = Vec::new();

    for method in &methods {
        let spec = MethodSpec::for_method(*method);
        let mut memory = base_memory.clone();

        if spec.uses_memory {
            // Unmeasured warm-up so that records from previous runs exist.
            let warm_seed = config.seed_base.wrapping_sub(1);
            let mut registry = ModuleRegistry::new();
            let mut env = SensorEnv::from_seed(warm_seed);
            let mut opts = RunOptions::new(warm_seed);
            opts.latency = config.latency;
            opts.limits = config.limits;
            opts.validation = config.validation;
            opts.episode_tag = Some("warmup");
            match run_method(&spec, &mut memory, &mut registry, &mut env, backend.as_ref(), &opts)
            {
                Ok(_) => {}
                Err(e) if e.is_backend_failure() => {
                    log::warn!("{method} warm-up failed on the backend: {e}");
                }
                Err(e) => return Err(e.into()),
            }
        }

        let mut consecutive_failures = 0u32;
        let mut partial = false;
        for i in 0..config.runs {
            let seed = config.seed_base.wrapping_add(i as u64);
            let mut registry = ModuleRegistry::new();
            let mut env = SensorEnv::from_seed(seed);
            let mut opts = RunOptions::new(seed);
            opts.latency = config.latency;
            opts.limits = config.limits;
            opts.validation = config.validation;
            if config.write_traces {
                opts.trace_path = Some(
                    config
                        .out_dir
                        .join("traces")
                        .join(format!("{}-{seed:016x}.trace.jsonl", method.token())),
                );
            }
            match run_method(&spec, &mut memory, &mut registry, &mut env, backend.as_ref(), &opts)
            {
                Ok(run) => {
                    consecutive_failures = 0;
                    all_results.push(run.result);
                    for event in registry.history() {
                        let line = serde_json::json!({
                            "v": 1,
                            "seed": seed,
                            "method": method.token(),
                            "event": event,
                        });
                        registry_journal.push(line.to_string());
                    }
                }
                Err(e) if e.is_backend_failure() => {
                    consecutive_failures += 1;
                    log::warn!("{method} seed {seed} failed on the backend: {e}");
                    if consecutive_failures >= MAX_CONSECUTIVE_BACKEND_FAILURES {
                        log::error!(
                            "{method} aborted after {consecutive_failures} consecutive backend failures"
                        );
                        partial = true;
                        break;
                    }
                }
                Err(e) => return Err(e.into()),
            }
        }
        if partial {
            partial_methods.push(*method);
        }

        if config.persist_state && spec.uses_memory {
            let path = config
                .out_dir
                .join(format!("{}.memory.jsonl", method.token()));
            save_memory(&memory, &path)?;
        }
    }

    if config.persist_state && !registry_journal.is_empty() {
        std::fs::create_dir_all(&config.out_dir)?;
        std::fs::write(
            config.out_dir.join("registry.jsonl"),
            registry_journal.join("\n") + "\n",
        )?;
    }

    let aggregates: Vec<MethodAggregate> = methods
        .iter()
        .map(|m| {
            let rows: Vec<RunResult> = all_results
                .iter()
                .filter(|r| r.method == *m)
                .cloned()
                .collect();
            aggregate(*m, &rows, partial_methods.contains(m))
        })
        .collect();

    let have_all = Method::ALL
        .iter()
        .all(|m| aggregates.iter().any(|a| a.method == *m && a.runs >= 2));
    let pairs = if have_all {
        let samples: Vec<(Method, Vec<f64>)> = Method::ALL
            .iter()
            .map(|m| {
                (
                    *m,
                    all_results
                        .iter()
                        .filter(|r| r.method == *m)
                        .map(|r| r.runtime_s)
                        .collect(),
                )
            })
            .collect();
        evaluate_hypotheses(&samples)?
    } else {
        Vec::new()
    };

    let report = ExperimentReport {
        aggregates,
        pairs,
        run_count: config.runs,
        config_digest: config.digest(),
        alpha: ALPHA,
    };
    Ok((all_results, report))
}
