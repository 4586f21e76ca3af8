//! Simulated temperature sensor with a single hidden fault point.
//!
//! A scenario covers a fixed window of eight timestamps (1..=8). The sensor
//! is healthy strictly before the fault timestamp and unhealthy from it
//! onward. Healthy readings lie in [0, 20] °C; post-fault readings come from
//! the wider [-5, 25] °C band, so an abnormal reading can still look normal
//! and temperature alone cannot decide the fault point.
//!
//! Neither channel is observable until explicitly queried through a
//! [`SensorEnv`], which tracks what has been revealed and how many queries
//! were made.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::digest;
use crate::rng::Xoshiro256StarStar;

/// Number of timestamps in the observation window.
pub const WINDOW: u8 = 8;

/// Which sensor channel a query or a scan touches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Temperature,
    Health,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SensorError {
    #[error("timestamp {0} outside the observation window 1..={WINDOW}")]
    OutOfWindow(u8),
    #[error("environment handle is closed")]
    EnvironmentUnavailable,
}

/// Ground-truth instance: the hidden fault point plus both full channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorScenario {
    pub seed: u64,
    /// Fault timestamp k* in 1..=8. Health is false for t >= k*.
    pub fault_at: u8,
    /// Temperatures for t = 1..=8, quantized to 0.01 °C.
    pub readings: [f64; WINDOW as usize],
    /// Health flags for t = 1..=8 (true = healthy).
    pub health: [bool; WINDOW as usize],
}

/// Quantize to 0.01 °C so readings render identically in prompts and traces.
fn quantize(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

/// Deterministic scenario construction from a 64-bit seed.
///
/// Draw order (fixed contract): fault_at first (one draw, uniform over 1..=8,
/// exact since 8 divides 2^64), then one draw per reading for t = 1..=8.
/// Pre-fault readings are uniform on [0, 20], post-fault on [-5, 25].
pub fn generate_scenario(seed: u64) -> SensorScenario {
    let mut rng = Xoshiro256StarStar::from_seed(seed);
    let fault_at = (rng.index(WINDOW as u64) + 1) as u8;
    let mut readings = [0.0; WINDOW as usize];
    let mut health = [true; WINDOW as usize];
    for t in 1..=WINDOW {
        let idx = (t - 1) as usize;
        if t < fault_at {
            readings[idx] = quantize(rng.range_f64(0.0, 20.0));
        } else {
            readings[idx] = quantize(rng.range_f64(-5.0, 25.0));
            health[idx] = false;
        }
    }
    SensorScenario {
        seed,
        fault_at,
        readings,
        health,
    }
}

impl SensorScenario {
    /// Stable content digest of the ground truth, stored on trajectories.
    pub fn digest(&self) -> String {
        digest::hex16(digest::digest_json(self))
    }
}

/// Ground-truth reference detector: exhaustive ascending scan for the first
/// unhealthy timestamp. Equals `fault_at` by construction; kept as an
/// independent code path so learned detectors are graded against a scan, not
/// against the generator's bookkeeping.
pub fn oracle_detect(scenario: &SensorScenario) -> u8 {
    for t in 1..=WINDOW {
        if !scenario.health[(t - 1) as usize] {
            return t;
        }
    }
    // Unreachable for generated scenarios: one fault always exists.
    unreachable!("scenario without a fault timestamp")
}

/// What an agent has actually learned about a scenario: only values that were
/// explicitly queried.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SensorView {
    pub revealed_temperatures: BTreeMap<u8, f64>,
    pub revealed_health: BTreeMap<u8, bool>,
}

impl SensorView {
    /// A fully revealed view of a scenario, used by verification sweeps where
    /// the harness has controlled access to ground truth.
    pub fn full(scenario: &SensorScenario) -> Self {
        let mut view = SensorView::default();
        for t in 1..=WINDOW {
            let idx = (t - 1) as usize;
            view.revealed_temperatures.insert(t, scenario.readings[idx]);
            view.revealed_health.insert(t, scenario.health[idx]);
        }
        view
    }
}

/// One observation returned by the environment for a single query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub temperatures: Vec<(u8, f64)>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub health: Vec<(u8, bool)>,
}

impl Observation {
    pub fn is_empty(&self) -> bool {
        self.temperatures.is_empty() && self.health.is_empty()
    }
}

/// Live environment handle for one episode: owns the scenario, the revealed
/// view, and the environment-query counter. Queries never mutate the
/// scenario itself.
#[derive(Debug, Clone)]
pub struct SensorEnv {
    scenario: SensorScenario,
    view: SensorView,
    queries: u32,
    closed: bool,
}

impl SensorEnv {
    pub fn new(scenario: SensorScenario) -> Self {
        Self {
            scenario,
            view: SensorView::default(),
            queries: 0,
            closed: false,
        }
    }

    pub fn from_seed(seed: u64) -> Self {
        Self::new(generate_scenario(seed))
    }

    pub fn scenario(&self) -> &SensorScenario {
        &self.scenario
    }

    pub fn view(&self) -> &SensorView {
        &self.view
    }

    pub fn queries(&self) -> u32 {
        self.queries
    }

    pub fn close(&mut self) {
        self.closed = true;
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    fn check_open(&self) -> Result<(), SensorError> {
        if self.closed {
            Err(SensorError::EnvironmentUnavailable)
        } else {
            Ok(())
        }
    }

    fn check_window(timestamps: &[u8]) -> Result<(), SensorError> {
        match timestamps.iter().find(|&&t| t < 1 || t > WINDOW) {
            Some(&t) => Err(SensorError::OutOfWindow(t)),
            None => Ok(()),
        }
    }

    /// Reveal readings at the given timestamps. Counts as one query.
    pub fn query_temperature(&mut self, timestamps: &[u8]) -> Result<Vec<(u8, f64)>, SensorError> {
        self.check_open()?;
        Self::check_window(timestamps)?;
        self.queries += 1;
        let out: Vec<(u8, f64)> = timestamps
            .iter()
            .map(|&t| (t, self.scenario.readings[(t - 1) as usize]))
            .collect();
        for &(t, v) in &out {
            self.view.revealed_temperatures.insert(t, v);
        }
        Ok(out)
    }

    /// Reveal health flags at the given timestamps. Counts as one query.
    pub fn query_health(&mut self, timestamps: &[u8]) -> Result<Vec<(u8, bool)>, SensorError> {
        self.check_open()?;
        Self::check_window(timestamps)?;
        self.queries += 1;
        let out: Vec<(u8, bool)> = timestamps
            .iter()
            .map(|&t| (t, self.scenario.health[(t - 1) as usize]))
            .collect();
        for &(t, h) in &out {
            self.view.revealed_health.insert(t, h);
        }
        Ok(out)
    }

    /// Ground-truth grading hook, used only when an episode concludes.
    pub fn oracle(&self) -> u8 {
        oracle_detect(&self.scenario)
    }
}

/// All timestamps in the window, convenience for full-window requests.
pub fn full_window() -> Vec<u8> {
    (1..=WINDOW).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_scenario() {
        let a = generate_scenario(0xfeed);
        let b = generate_scenario(0xfeed);
        assert_eq!(a, b);
        assert_ne!(generate_scenario(1), generate_scenario(2));
    }

    #[test]
    fn ranges_hold_for_many_seeds() {
        for seed in 0..2_000u64 {
            let s = generate_scenario(seed);
            for t in 1..=WINDOW {
                let idx = (t - 1) as usize;
                let v = s.readings[idx];
                assert!((-5.0..=25.0).contains(&v), "seed {seed} t {t}: {v}");
                if t < s.fault_at {
                    assert!((0.0..=20.0).contains(&v), "pre-fault seed {seed} t {t}: {v}");
                }
            }
        }
    }

    #[test]
    fn health_is_a_single_transition() {
        for seed in 0..2_000u64 {
            let s = generate_scenario(seed);
            for t in 1..=WINDOW {
                let expect = t < s.fault_at;
                assert_eq!(s.health[(t - 1) as usize], expect, "seed {seed} t {t}");
            }
        }
    }

    #[test]
    fn fault_position_frequencies_are_uniform() {
        // 10,000 seeds; each position should occur with frequency 0.125 +- 0.02.
        let mut counts = [0u32; WINDOW as usize];
        let n = 10_000u64;
        for seed in 0..n {
            counts[(generate_scenario(seed).fault_at - 1) as usize] += 1;
        }
        for (i, &c) in counts.iter().enumerate() {
            let freq = c as f64 / n as f64;
            assert!(
                (freq - 0.125).abs() <= 0.02,
                "fault_at={} frequency {freq}",
                i + 1
            );
        }
    }

    #[test]
    fn oracle_matches_fault_point_on_population() {
        for seed in 0..10_000u64 {
            let s = generate_scenario(seed);
            assert_eq!(oracle_detect(&s), s.fault_at);
        }
    }

    #[test]
    fn oracle_boundaries() {
        // Find seeds with boundary fault positions and check them.
        let mut seen_first = false;
        let mut seen_last = false;
        for seed in 0..5_000u64 {
            let s = generate_scenario(seed);
            if s.fault_at == 1 {
                assert_eq!(oracle_detect(&s), 1);
                assert!(!s.health[0]);
                seen_first = true;
            }
            if s.fault_at == 8 {
                assert_eq!(oracle_detect(&s), 8);
                assert!(s.health[..7].iter().all(|&h| h));
                seen_last = true;
            }
        }
        assert!(seen_first && seen_last);
    }

    #[test]
    fn queries_reveal_and_count() {
        let mut env = SensorEnv::from_seed(7);
        let temps = env.query_temperature(&full_window()).unwrap();
        assert_eq!(temps.len(), 8);
        assert_eq!(env.queries(), 1);
        let h = env.query_health(&[3]).unwrap();
        assert_eq!(h.len(), 1);
        assert_eq!(env.queries(), 2);
        assert_eq!(env.view().revealed_temperatures.len(), 8);
        assert_eq!(env.view().revealed_health.len(), 1);
    }

    #[test]
    fn repeat_queries_are_stable() {
        let mut env = SensorEnv::from_seed(11);
        let a = env.query_temperature(&[3]).unwrap();
        let b = env.query_temperature(&[3]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn out_of_window_rejected() {
        let mut env = SensorEnv::from_seed(7);
        assert_eq!(
            env.query_temperature(&[9]).unwrap_err(),
            SensorError::OutOfWindow(9)
        );
        assert_eq!(
            env.query_health(&[0]).unwrap_err(),
            SensorError::OutOfWindow(0)
        );
    }

    #[test]
    fn closed_env_is_unavailable() {
        let mut env = SensorEnv::from_seed(7);
        env.close();
        assert_eq!(
            env.query_temperature(&[1]).unwrap_err(),
            SensorError::EnvironmentUnavailable
        );
    }

    #[test]
    fn temperature_alone_can_be_uninformative() {
        // There exist scenarios whose post-fault readings all fall inside the
        // healthy band; a temperature-only observer cannot separate them.
        let mut found: Vec<SensorScenario> = Vec::new();
        for seed in 0..50_000u64 {
            let s = generate_scenario(seed);
            let all_in_band = s.readings.iter().all(|&v| (0.0..=20.0).contains(&v));
            if all_in_band {
                found.push(s);
            }
            if found.len() >= 2 && found[0].fault_at != found[found.len() - 1].fault_at {
                break;
            }
        }
        assert!(
            found.len() >= 2,
            "expected in-band scenarios within the search budget"
        );
        let a = &found[0];
        let b = found.iter().rev().find(|s| s.fault_at != a.fault_at).unwrap();
        for s in [a, b] {
            assert!(s.readings.iter().all(|&v| (0.0..=20.0).contains(&v)));
        }
        assert_ne!(a.fault_at, b.fault_at);
    }
}
