//! Continual-learning agent runtime and experiment harness.
//!
//! A sequential reason–act–reflect loop drives a chat backend against a
//! simulated temperature sensor, recording every internal step to a
//! replayable trace. A parallel learner folds finished trajectories into an
//! experience memory of generalized rules; a verification gate lets proposed
//! decision procedures replace the fixed detection logic with a retained
//! fallback. The harness measures three scheduling strategies over shared
//! seeds and compares their runtimes with Welch's t-test.
//!
//! Modules follow the pipeline:
//!
//! - [`sensor`]: the seeded fault simulation and its ground-truth detector
//! - [`backend`]: chat backends (live wire client + deterministic script)
//! - [`kernel`]: state transitions and the episode loop
//! - [`trace`]: step records, serialization, replay, and the learner bus
//! - [`memory`]: learning materials, generalized rules, retrieval
//! - [`procedure`]: the decision-procedure DSL, verification and registry
//! - [`strategies`]: the three policy configurations
//! - [`harness`]: experiment orchestration, statistics, reports

pub mod backend;
pub mod digest;
pub mod harness;
pub mod kernel;
pub mod memory;
pub mod procedure;
pub mod rng;
pub mod sensor;
pub mod strategies;
pub mod trace;

pub use harness::{run_experiment, ExperimentConfig, ExperimentReport, RunResult};
pub use kernel::{Method, TASK_GOAL};
