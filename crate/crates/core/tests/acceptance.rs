//! Acceptance suite: one test per criterion, each printing a PASS line once
//! its assertions hold. Tolerances and budgets are pinned in the constants
//! below.

mod common;

use std::time::{Duration, Instant};

use cogloop::backend::ScriptedBackend;
use cogloop::harness::{run_experiment, welch_t_test, ExperimentConfig, ALPHA};
use cogloop::kernel::{verify_reexecution, Method};
use cogloop::memory::{learn, retrieve_context, spawn_learner, ExperienceMemory};
use cogloop::procedure::{
    parse_procedure, validation_seeds, verify_procedure, ActiveImpl, ModuleRegistry,
    ProcedureStatus, Verdict, DEFAULT_VALIDATION_MIN, FAULT_DETECTOR, VALIDATION_SEED_BASE,
};
use cogloop::rng::Xoshiro256StarStar;
use cogloop::sensor::{oracle_detect, SensorEnv};
use cogloop::strategies::{run_method, LatencyMode, MethodSpec, RunOptions};
use cogloop::trace::{parse, replay, serialize, StepBus};
use cogloop::TASK_GOAL;

use common::{p_value_oracle, run_scripted, warmed_memory};

/// Reference per-method mean runtimes (seconds) under the calibrated
/// simulated-latency model, and the allowed relative deviation.
const RUNTIME_TARGETS: [(Method, f64); 3] = [
    (Method::NotLearning, 32.42),
    (Method::Learning, 26.16),
    (Method::NoFixCodeByLearning, 28.37),
];
const RUNTIME_TOLERANCE: f64 = 0.10;

fn experiment_config(seed_base: u64, runs: u32, out: &std::path::Path) -> ExperimentConfig {
    ExperimentConfig {
        runs,
        seed_base,
        out_dir: out.to_path_buf(),
        write_traces: false,
        persist_state: false,
        ..ExperimentConfig::default()
    }
}

#[test]
fn acceptance_1_interaction_counts() {
    let started = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let config = experiment_config(0, 20, dir.path());
    let (results, report) = run_experiment(&config).unwrap();
    assert_eq!(results.len(), 60);

    for (method, expected) in [
        (Method::NotLearning, 4.0),
        (Method::Learning, 3.0),
    ] {
        let agg = report
            .aggregates
            .iter()
            .find(|a| a.method == method)
            .unwrap();
        assert_eq!(
            agg.interactions_mean, expected,
            "{method} mean interactions"
        );
    }
    let nofix = report
        .aggregates
        .iter()
        .find(|a| a.method == Method::NoFixCodeByLearning)
        .unwrap();
    assert!(
        nofix.interactions_mean <= 1.0,
        "nofixcode mean interactions {} must be <= 1.0",
        nofix.interactions_mean
    );

    let elapsed = started.elapsed();
    assert!(elapsed < Duration::from_secs(10), "budget: {elapsed:?}");
    println!(
        "acceptance 1 (interaction counts 4.0/3.0/<=1.0): PASS in {:.2}s",
        elapsed.as_secs_f64()
    );
}

#[test]
fn acceptance_2_detection_correctness_and_calibrated_runtime() {
    let started = Instant::now();

    // Every scripted episode of every method concludes at the oracle's
    // fault timestamp, over 1,000 scenarios, with no tolerance.
    let scenarios = 1_000u64;
    let mut checked = 0u64;

    let mut baseline_memory = ExperienceMemory::default();
    let mut learning_memory = warmed_memory();
    let mut nofix_memory = warmed_memory();
    for seed in 0..scenarios {
        let expected = oracle_detect(SensorEnv::from_seed(seed).scenario());
        for method in Method::ALL {
            let memory = match method {
                Method::NotLearning => &mut baseline_memory,
                Method::Learning => &mut learning_memory,
                Method::NoFixCodeByLearning => &mut nofix_memory,
            };
            let mut registry = ModuleRegistry::new();
            let run = run_scripted(method, seed, memory, &mut registry);
            assert!(run.result.correct, "{method} seed {seed}");
            let outcome = run.trajectory.outcome.as_ref().unwrap();
            assert_eq!(
                outcome.conclusion,
                cogloop::kernel::Conclusion::fault_at(expected),
                "{method} seed {seed}"
            );
            checked += 1;
        }
    }
    assert_eq!(checked, 3 * scenarios);

    // Simulated-latency runtime means, calibration-by-construction, within
    // +-10% of the reference means over 20 runs.
    let dir = tempfile::tempdir().unwrap();
    let config = experiment_config(0, 20, dir.path());
    let (_, report) = run_experiment(&config).unwrap();
    for (method, target) in RUNTIME_TARGETS {
        let agg = report
            .aggregates
            .iter()
            .find(|a| a.method == method)
            .unwrap();
        let deviation = (agg.runtime_mean_s - target).abs() / target;
        assert!(
            deviation <= RUNTIME_TOLERANCE,
            "{method} mean runtime {:.3}s deviates {:.1}% from {target}s",
            agg.runtime_mean_s,
            100.0 * deviation
        );
    }

    let elapsed = started.elapsed();
    assert!(elapsed < Duration::from_secs(60), "budget: {elapsed:?}");
    println!(
        "acceptance 2 (oracle-equivalent conclusions on 3000 episodes; runtime means within 10%): PASS in {:.2}s",
        elapsed.as_secs_f64()
    );
}

#[test]
fn acceptance_3_statistical_pattern() {
    let started = Instant::now();
    let replications = 100u64;
    let mut pattern_count = 0u32;
    let mut fixtures: Vec<(f64, f64, f64)> = Vec::new();

    for r in 0..replications {
        let dir = tempfile::tempdir().unwrap();
        let config = experiment_config(r * 1_000, 20, dir.path());
        let (_, report) = run_experiment(&config).unwrap();
        let find = |a: Method, b: Method| {
            report
                .pairs
                .iter()
                .find(|p| p.a == a && p.b == b)
                .expect("pair present")
        };
        let learning_vs_base = find(Method::Learning, Method::NotLearning);
        let nofix_vs_base = find(Method::NoFixCodeByLearning, Method::NotLearning);
        let learning_vs_nofix = find(Method::Learning, Method::NoFixCodeByLearning);
        if learning_vs_base.significant
            && nofix_vs_base.significant
            && !learning_vs_nofix.significant
        {
            pattern_count += 1;
        }
        for pair in &report.pairs {
            fixtures.push((pair.t, pair.dof, pair.p));
        }
    }
    assert!(
        pattern_count >= 95,
        "pattern held in only {pattern_count}/100 replications"
    );

    // The implementation's p-values match the independent quadrature oracle
    // to 1e-9 on the derived fixtures.
    assert!(fixtures.len() >= 20);
    for &(t, dof, p) in &fixtures {
        let reference = p_value_oracle(t, dof);
        assert!(
            (p - reference).abs() < 1e-9,
            "p mismatch at t={t} dof={dof}: {p} vs {reference}"
        );
    }

    // And on a direct fixture from plain sample data.
    let direct = welch_t_test(&[10.0, 11.0, 12.0, 13.0], &[20.0, 21.0, 22.0, 23.0]).unwrap();
    assert!((direct.p - p_value_oracle(direct.t, direct.dof)).abs() < 1e-9);

    let elapsed = started.elapsed();
    println!(
        "acceptance 3 (significance pattern in {pattern_count}/100 replications at alpha={ALPHA}; {} p-value fixtures within 1e-9): PASS in {:.2}s",
        fixtures.len(),
        elapsed.as_secs_f64()
    );
}

#[test]
fn acceptance_4_trace_fidelity() {
    let started = Instant::now();
    let episodes = 500u64;
    let mut learning_memory = warmed_memory();
    let mut nofix_memory = warmed_memory();
    let mut baseline_memory = ExperienceMemory::default();

    for i in 0..episodes {
        let seed = 10_000 + i;
        let method = Method::ALL[(i % 3) as usize];
        let memory = match method {
            Method::NotLearning => &mut baseline_memory,
            Method::Learning => &mut learning_memory,
            Method::NoFixCodeByLearning => &mut nofix_memory,
        };
        let mut registry = ModuleRegistry::new();
        let run = run_scripted(method, seed, memory, &mut registry);

        let bytes = serialize(&run.trajectory).unwrap();
        let replayed = replay(&parse(&bytes).unwrap()).unwrap();
        assert_eq!(replayed.trajectory, run.trajectory, "{method} seed {seed}");
        verify_reexecution(&replayed.trajectory).unwrap();
    }

    let elapsed = started.elapsed();
    assert!(elapsed < Duration::from_secs(30), "budget: {elapsed:?}");
    println!(
        "acceptance 4 (round-trip + re-execution fidelity over {episodes} episodes): PASS in {:.2}s",
        elapsed.as_secs_f64()
    );
}

/// Uniformly sample a syntactically valid program, with randomized casing
/// and spacing.
fn random_program(rng: &mut Xoshiro256StarStar) -> String {
    let direction = if rng.next_bool() { "asc" } else { "desc" };
    let over = if rng.next_bool() { "health" } else { "temperature" };
    let predicate = match rng.index(3) {
        0 => "health == bad".to_string(),
        1 => format!("temp < {:.2}", rng.range_f64(-100.0, 100.0)),
        _ => format!("temp > {:.2}", rng.range_f64(-100.0, 100.0)),
    };
    let text = format!("scan {direction} over {over}; where {predicate}; return index");
    // Random keyword casing keeps the sample broad without leaving the
    // grammar.
    if rng.next_bool() {
        text.to_ascii_uppercase()
    } else {
        text
    }
}

#[test]
fn acceptance_5_replacement_gate_soundness() {
    let started = Instant::now();
    let seeds = validation_seeds(VALIDATION_SEED_BASE, DEFAULT_VALIDATION_MIN);
    let mut rng = Xoshiro256StarStar::from_seed(0xfa57_9a7e);
    let mut passed = 0u32;
    let mut rejected = 0u32;

    for _ in 0..1_000 {
        let text = random_program(&mut rng);
        let mut proc_ = parse_procedure(&text, "fuzz").expect("generated programs are valid");

        // Promotion before verification is always refused.
        let mut registry = ModuleRegistry::new();
        assert!(registry.promote(FAULT_DETECTOR, proc_.clone()).is_err());
        assert_eq!(registry.active(FAULT_DETECTOR), ActiveImpl::Fixed);

        let report = verify_procedure(&mut proc_, &seeds, DEFAULT_VALIDATION_MIN).unwrap();
        if report.verdict == Verdict::Pass {
            assert!(report.mismatches.is_empty());
            assert_eq!(proc_.status, ProcedureStatus::Verified);
            registry.promote(FAULT_DETECTOR, proc_).unwrap();
            passed += 1;
        } else {
            // Any mismatch: promotion must remain impossible.
            assert!(!report.mismatches.is_empty());
            assert_eq!(proc_.status, ProcedureStatus::Proposed);
            let err = registry.promote(FAULT_DETECTOR, proc_).unwrap_err();
            assert!(matches!(
                err,
                cogloop::procedure::RegistryError::NotVerified(_)
            ));
            assert_eq!(registry.active(FAULT_DETECTOR), ActiveImpl::Fixed);
            rejected += 1;
        }
    }
    assert_eq!(passed + rejected, 1_000);
    assert!(passed >= 1, "the exact detector family must pass");
    assert!(rejected >= 1, "mismatching programs must be exercised");

    // Rollback exactness: after promote + rollback, runs are byte-identical
    // to never-promoted control runs on identical seeds.
    for seed in [300u64, 301, 302] {
        let mut control_memory = warmed_memory();
        let mut control_registry = ModuleRegistry::new();
        let control = run_scripted(
            Method::NoFixCodeByLearning,
            seed,
            &mut control_memory,
            &mut control_registry,
        );

        let mut memory = warmed_memory();
        let mut registry = ModuleRegistry::new();
        // Promote via an unmeasured run, then roll back.
        run_scripted(
            Method::NoFixCodeByLearning,
            seed.wrapping_add(5_000_000),
            &mut memory,
            &mut registry,
        );
        assert!(matches!(
            registry.active(FAULT_DETECTOR),
            ActiveImpl::Learned(_)
        ));
        registry.rollback(FAULT_DETECTOR, "drill").unwrap();
        assert_eq!(registry.active(FAULT_DETECTOR), ActiveImpl::Fixed);

        // Memory also absorbed the promotion run; rebuild a clean warmed
        // memory so the control and post-rollback runs share rule context.
        let mut memory = warmed_memory();
        let after = run_scripted(Method::NoFixCodeByLearning, seed, &mut memory, &mut registry);
        assert_eq!(
            serialize(&after.trajectory).unwrap(),
            serialize(&control.trajectory).unwrap(),
            "seed {seed}"
        );
    }

    let elapsed = started.elapsed();
    assert!(elapsed < Duration::from_secs(60), "budget: {elapsed:?}");
    println!(
        "acceptance 5 (gate soundness over 1000 programs, {passed} promoted / {rejected} refused; rollback byte-exact): PASS in {:.2}s",
        elapsed.as_secs_f64()
    );
}

/// Critical-path duration of `episodes` scripted learning episodes with a
/// learner consuming the bus at the given per-step delay.
fn critical_path_with_learner(episodes: u64, step_delay: Duration) -> Duration {
    let backend = ScriptedBackend::new().with_pacing_ms(2);
    let spec = MethodSpec::for_method(Method::Learning);
    let bus = StepBus::new(65_536);
    let learner = spawn_learner(bus.clone(), ExperienceMemory::default(), step_delay);
    let mut memory = warmed_memory();
    let mut registry = ModuleRegistry::new();

    let started = Instant::now();
    for i in 0..episodes {
        let seed = 40_000 + i;
        let mut env = SensorEnv::from_seed(seed);
        let mut opts = RunOptions::new(seed);
        opts.latency = LatencyMode::Wall;
        opts.learn_inline = false;
        opts.bus = Some(&bus);
        run_method(&spec, &mut memory, &mut registry, &mut env, &backend, &opts).unwrap();
    }
    let elapsed = started.elapsed();
    // Do not wait for the delayed learner's backlog; the episode loop never
    // did either.
    learner.abandon();
    elapsed
}

#[test]
fn acceptance_6_parallel_learning_noninterference() {
    let episodes = 100u64;
    let delay = Duration::from_millis(50);
    // Min-of-3 on each side to suppress scheduler noise.
    let undelayed = (0..3)
        .map(|_| critical_path_with_learner(episodes, Duration::ZERO))
        .min()
        .unwrap();
    let delayed = (0..3)
        .map(|_| critical_path_with_learner(episodes, delay))
        .min()
        .unwrap();

    let limit = undelayed.mul_f64(1.05);
    assert!(
        delayed < limit,
        "critical path grew from {undelayed:?} to {delayed:?} (> +5%) under a {delay:?}/step learner"
    );
    println!(
        "acceptance 6 (50ms/step learner: critical path {:.3}s vs {:.3}s undelayed, < +5%): PASS",
        delayed.as_secs_f64(),
        undelayed.as_secs_f64()
    );
}

#[test]
fn acceptance_7_memory_semantics() {
    let started = Instant::now();
    let mut rng = Xoshiro256StarStar::from_seed(0x7e57_3_14);

    for batch in 0..12u32 {
        let mut memory = ExperienceMemory::default();
        let mut support_floor: std::collections::BTreeMap<String, u32> = Default::default();
        let mut all_failed = true;
        let batch_len = 1 + rng.index(8);
        for _ in 0..batch_len {
            let seed = rng.index(5_000);
            let fail = rng.next_bool();
            all_failed &= fail;

            let mut scratch = ExperienceMemory::default();
            let mut registry = ModuleRegistry::new();
            let run = run_scripted(Method::Learning, seed, &mut scratch, &mut registry);
            let mut trajectory = run.trajectory;
            if fail {
                trajectory.outcome.as_mut().unwrap().correct = false;
            }

            // Purity: learn returns a new value, input untouched.
            let before = memory.clone();
            let next = learn(&memory, &trajectory).unwrap();
            assert_eq!(memory, before, "batch {batch}: learn mutated its input");
            memory = next;

            // Monotone support.
            for rule in memory.rules() {
                let floor = support_floor.get(&rule.rule_id).copied().unwrap_or(0);
                assert!(
                    rule.support_count >= floor,
                    "batch {batch}: support decreased for {}",
                    rule.rule_id
                );
                support_floor.insert(rule.rule_id.clone(), rule.support_count);
            }
        }
        // Retrieval safety: failure-only batches retrieve nothing.
        if all_failed {
            assert!(
                retrieve_context(&memory, TASK_GOAL).is_empty(),
                "batch {batch}: failure-only rules retrieved"
            );
        }
        for rule in retrieve_context(&memory, TASK_GOAL) {
            assert!(rule.support_count >= 1);
        }
    }

    let elapsed = started.elapsed();
    println!(
        "acceptance 7 (learn purity, monotone support, failure-only retrieval safety): PASS in {:.2}s",
        elapsed.as_secs_f64()
    );
}
