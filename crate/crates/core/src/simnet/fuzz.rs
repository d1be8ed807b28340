//! Seed fuzzing for the safety suite.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::engine::{run_with, RunOptions, RunStats, SimError};
use super::monitor::Violation;
use super::{FaultSpec, Scenario, Strategy};
use crate::error::ConfigError;
use crate::replica::{leader_of, INITIAL_VIEW};
use crate::types::Time;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FuzzVerdict {
    pub round: u32,
    pub seed: u64,
    /// Strategy names of the faulty replicas, by replica.
    pub faults: Vec<(u32, &'static str)>,
    pub gst_ms: u64,
    #[serde(skip)]
    pub violation: Option<(Violation, Time)>,
    pub stats: Option<RunStats>,
}

impl FuzzVerdict {
    pub fn is_safe(&self) -> bool {
        self.violation.is_none()
    }
}

/// Seed of the `round`-th case derived from `base`.
pub fn fuzz_seed(base: u64, round: u32) -> u64 {
    // SplitMix64 step, so neighbouring rounds get unrelated streams.
    let mut z = base.wrapping_add((round as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// The scenario fuzzed for `seed`: `base` with a random gst in the first
/// quarter of the run and, when `base` has no faults, between one and `f`
/// faulty replicas with strategies drawn from the adversary catalog.
pub fn fuzz_case(base: &Scenario, seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xF022);
    let mut sc = base.clone();
    sc.seed = seed;
    sc.gst_ms = rng.gen_range(0..=base.duration_ms / 4);
    if base.faults.is_empty() {
        let n = base.params.n as u32;
        let count = rng.gen_range(1..=base.params.f);
        let leader = leader_of(INITIAL_VIEW, n as usize).0;
        let mut ids: Vec<u32> = (0..n).collect();
        ids.shuffle(&mut rng);
        // Keep the first leader in play half the time so leader strategies bite.
        if rng.gen_bool(0.5) {
            ids.retain(|i| *i != leader);
            ids.insert(0, leader);
        }
        for &replica in &ids[..count] {
            let strategy = match rng.gen_range(0..5) {
                0 => Strategy::SelectiveDissemination { s: None },
                1 => Strategy::SilentLeader {
                    from_ms: rng.gen_range(0..=base.duration_ms / 4),
                },
                2 => Strategy::EquivocatingLeader,
                3 => Strategy::FakeReadyWithholdData,
                _ => Strategy::FloodDatablocks {
                    multiplier: rng.gen_range(2..=4),
                },
            };
            sc.faults.push(FaultSpec { replica, strategy });
        }
    }
    sc
}

/// Runs `rounds` fuzzed cases of `base` in parallel, in round order.
pub fn schedule_fuzz(base: &Scenario, rounds: u32) -> Result<Vec<FuzzVerdict>, ConfigError> {
    schedule_fuzz_with(base, rounds, &RunOptions::default())
}

pub fn schedule_fuzz_with(base: &Scenario, rounds: u32, opts: &RunOptions) -> Result<Vec<FuzzVerdict>, ConfigError> {
    if rounds == 0 {
        return Err(ConfigError::invalid("rounds", "must be at least 1"));
    }
    base.validate()?;
    let threads = std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(rounds as usize);
    let mut slots: Vec<Option<Result<FuzzVerdict, ConfigError>>> = vec![None; rounds as usize];
    std::thread::scope(|s| {
        let chunks: Vec<_> = slots.chunks_mut(rounds.div_ceil(threads as u32) as usize).collect();
        let mut offset = 0u32;
        for chunk in chunks {
            let start = offset;
            offset += chunk.len() as u32;
            s.spawn(move || {
                for (i, slot) in chunk.iter_mut().enumerate() {
                    *slot = Some(fuzz_round_with(base, start + i as u32, opts));
                }
            });
        }
    });
    slots.into_iter().map(|v| v.expect("every round ran")).collect()
}

/// Runs one round; replaying a reported round reproduces its verdict.
pub fn fuzz_round(base: &Scenario, round: u32) -> Result<FuzzVerdict, ConfigError> {
    fuzz_round_with(base, round, &RunOptions::default())
}

pub fn fuzz_round_with(base: &Scenario, round: u32, opts: &RunOptions) -> Result<FuzzVerdict, ConfigError> {
    let seed = fuzz_seed(base.seed, round);
    let sc = fuzz_case(base, seed);
    let faults = sc.faults.iter().map(|f| (f.replica, f.strategy.name())).collect();
    let mut verdict = FuzzVerdict {
        round,
        seed,
        faults,
        gst_ms: sc.gst_ms,
        violation: None,
        stats: None,
    };
    match run_with(&sc, opts) {
        Ok(out) => verdict.stats = Some(out.stats),
        Err(SimError::SafetyViolation { violation, time, .. }) => verdict.violation = Some((violation, time)),
        Err(SimError::Config(e)) => return Err(e),
    }
    Ok(verdict)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> Scenario {
        let mut sc = Scenario::honest(1, 40, 11);
        sc.duration_ms = 20_000;
        sc
    }

    #[test]
    fn zero_rounds_rejected() {
        assert_eq!(schedule_fuzz(&base(), 0).unwrap_err().path, "rounds");
    }

    #[test]
    fn cases_stay_within_the_fault_budget() {
        for round in 0..50 {
            let sc = fuzz_case(&base(), fuzz_seed(3, round));
            sc.validate().unwrap();
            assert!(!sc.faults.is_empty());
            assert!(sc.gst_ms <= sc.duration_ms / 4);
        }
    }

    #[test]
    fn replayed_round_gives_the_same_verdict() {
        let v = schedule_fuzz(&base(), 3).unwrap();
        assert_eq!(v.len(), 3);
        for (i, verdict) in v.iter().enumerate() {
            assert!(verdict.is_safe(), "{verdict:?}");
            assert_eq!(fuzz_round(&base(), i as u32).unwrap(), *verdict);
        }
    }
}
