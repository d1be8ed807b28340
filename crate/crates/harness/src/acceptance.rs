//! The acceptance suite: ten criteria, each run at its stated tolerance.

use std::fmt;
use std::fs;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use anyhow::{bail, ensure, Context, Result};
use leopard_core::crypto::erasure::{decode, encode, encode_authenticated};
use leopard_core::crypto::hash::{hash, Digest};
use leopard_core::crypto::merkle::{self, Side};
use leopard_core::crypto::threshold::ThresholdKeySet;
use leopard_core::error::CryptoError;
use leopard_core::metrics::{measured_costs, Direction, MeasuredCosts};
use leopard_core::replica::{leader_of, INITIAL_VIEW};
use leopard_core::simnet::{
    fuzz_case, fuzz_seed, retrieval_probe, run, run_with, schedule_fuzz_with, FaultSpec, RunOptions, RunOutput,
    Scenario, SimError, Strategy,
};
use leopard_core::{Category, ReplicaId};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::report::{observed_inputs, CostSummary};
use crate::run::{cmd_run, RunArgs, Verdict};
use crate::workload::{saturating_load, steady_load};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CriterionResult {
    pub id: u8,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl fmt::Display for CriterionResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "C{:<2} {:<28} {} ({:.1}s) {}",
            self.id,
            self.name,
            if self.passed { "PASS" } else { "FAIL" },
            self.seconds,
            self.detail
        )
    }
}

fn timed(id: u8, name: &'static str, body: impl FnOnce() -> Result<(bool, String)>) -> CriterionResult {
    let start = Instant::now();
    let (passed, detail) = body().unwrap_or_else(|e| (false, format!("error: {e:#}")));
    CriterionResult {
        id,
        name,
        passed,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn within(value: f64, target: f64, tol: f64) -> bool {
    (value / target - 1.0).abs() <= tol
}

/// 500 fuzzed seeds, half at n=4 and half at n=7.
pub fn c1_safety_campaign(opts: &RunOptions) -> CriterionResult {
    timed(1, "safety campaign", || {
        let start = Instant::now();
        let (mut runs, mut unsafe_runs, mut first_bad) = (0, 0, None);
        for f in [1, 2] {
            let mut base = Scenario::honest(f, 100, 2024);
            base.duration_ms = 20_000;
            base.clients.rate_per_s = Some(20.0);
            for v in schedule_fuzz_with(&base, 250, opts)? {
                runs += 1;
                if let Some((violation, time)) = &v.violation {
                    unsafe_runs += 1;
                    first_bad.get_or_insert(format!("n={} seed {} at {time}us: {violation}", 3 * f + 1, v.seed));
                }
            }
        }
        let elapsed = start.elapsed();
        let mut detail = format!("{runs} seeds, {unsafe_runs} violations");
        if let Some(bad) = first_bad {
            detail += &format!(", first: {bad}");
        }
        Ok((unsafe_runs == 0 && elapsed < Duration::from_secs(600), detail))
    })
}

fn liveness_case(f: usize, kind: u64, seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed * 31 + kind);
    let mut sc = Scenario::honest(f, 200, seed);
    sc.duration_ms = 30_000;
    sc.gst_ms = rng.gen_range(0..=5_000);
    sc.clients.rate_per_s = Some(20.0);
    let n = sc.params.n as u32;
    let leader = leader_of(INITIAL_VIEW, n as usize).0;
    let mut ids: Vec<u32> = (0..n).collect();
    ids.shuffle(&mut rng);
    if rng.gen_bool(0.5) {
        ids.retain(|i| *i != leader);
        ids.insert(0, leader);
    }
    for &replica in &ids[..f] {
        let strategy = match kind {
            0 => Strategy::SelectiveDissemination { s: None },
            1 => Strategy::SilentLeader {
                from_ms: rng.gen_range(0..=10_000),
            },
            2 => Strategy::EquivocatingLeader,
            3 => Strategy::FakeReadyWithholdData,
            4 => Strategy::FloodDatablocks {
                multiplier: rng.gen_range(2..=4),
            },
            _ => Strategy::CrashAt {
                at_ms: rng.gen_range(0..=10_000),
            },
        };
        sc.faults.push(FaultSpec { replica, strategy });
    }
    sc
}

/// Every catalog adversary on f replicas: 100 seeds at n=4, 20 at n=7.
pub fn c2_liveness() -> CriterionResult {
    timed(2, "liveness", || {
        let (mut runs, mut misses) = (0, Vec::new());
        for (f, seeds) in [(1usize, 100u64), (2, 20)] {
            for kind in 0..6 {
                for seed in 0..seeds {
                    let sc = liveness_case(f, kind, seed);
                    let out = run(&sc)?;
                    runs += 1;
                    if out.stats.late_requests > 0 {
                        misses.push(format!(
                            "n={} {} seed {seed}: {} late",
                            sc.params.n,
                            sc.faults[0].strategy.name(),
                            out.stats.late_requests
                        ));
                    }
                }
            }
        }
        let mut detail = format!("{runs} runs, {} with late requests", misses.len());
        if let Some(m) = misses.first() {
            detail += &format!(", first: {m}");
        }
        Ok((misses.is_empty(), detail))
    })
}

/// An honest steady-state run with datablocks of `batch` requests.
fn steady_run(f: usize, batch: usize, payload: usize, rounds: u64) -> Result<(RunOutput, MeasuredCosts, CostSummary)> {
    let mut sc = Scenario::honest(f, 0, 1);
    sc.params.datablock_batch = batch;
    sc.params.payload = payload;
    sc.params.tau = 2;
    steady_load(&mut sc, rounds, 250);
    let out = run(&sc)?;
    ensure!(
        out.stats.completed,
        "n={} run did not complete: {:?}",
        sc.params.n,
        out.stats
    );
    let costs = measured_costs(&out.ledger)?;
    let replica = out.honest_replicas().next().context("no honest replica")?;
    let inputs = observed_inputs(replica, sc.params.request_size()).context("nothing linked")?;
    let summary = CostSummary::new(&costs, &inputs);
    Ok((out, costs, summary))
}

/// Leader and every non-leader within 5% of the analytic costs.
pub fn c3_cost_model() -> CriterionResult {
    timed(3, "cost-model equivalence", || {
        let mut ok = true;
        let mut parts = Vec::new();
        for f in [1, 5, 21] {
            let (_, costs, s) = steady_run(f, 256, 2048, 40)?;
            let n = 3 * f + 1;
            let leader = leader_of(INITIAL_VIEW, n);
            let worst_replica = costs
                .replicas
                .iter()
                .filter(|r| r.replica != leader.0)
                .map(|r| r.cost / s.replica.analytic - 1.0)
                .fold(0.0f64, |a, d| if d.abs() > a.abs() { d } else { a });
            ok &= s.window_blocks >= 50 && s.leader.delta.abs() <= 0.05 && worst_replica.abs() <= 0.05;
            parts.push(format!(
                "n={n}: {} blocks, leader {:.4} vs {:.4} ({:+.1}%), worst replica {:+.1}% vs {:.4}",
                s.window_blocks,
                s.leader.measured,
                s.leader.analytic,
                100.0 * s.leader.delta,
                100.0 * worst_replica,
                s.replica.analytic
            ));
        }
        Ok((ok, parts.join("; ")))
    })
}

/// Batch grows as 4(n-1); the largest per-replica cost stays put.
pub fn c4_sf_constancy() -> CriterionResult {
    timed(4, "SF constancy", || {
        let mut costs = Vec::new();
        for f in [1, 5, 21] {
            let n = 3 * f + 1;
            let (_, _, s) = steady_run(f, 4 * (n - 1), 2048, 40)?;
            costs.push((n, s.max_cost));
        }
        let max = costs.iter().map(|c| c.1).fold(f64::MIN, f64::max);
        let min = costs.iter().map(|c| c.1).fold(f64::MAX, f64::min);
        let spread = max / min - 1.0;
        let listed: Vec<String> = costs.iter().map(|(n, c)| format!("n={n}: {c:.4}")).collect();
        Ok((
            spread < 0.10,
            format!("{}, spread {:.1}%", listed.join(", "), 100.0 * spread),
        ))
    })
}

fn capped_throughput(f: usize, capacity: u64) -> Result<f64> {
    let mut sc = Scenario::honest(f, 0, 1);
    sc.params.datablock_batch = 256;
    sc.params.payload = 1024;
    sc.params.tau = 2;
    sc.params.datablock_flush_ms = 1000;
    sc.capacity_bytes_per_s = Some(capacity);
    saturating_load(&mut sc, 120_000, 600);
    let out = run(&sc)?;
    ensure!(out.stats.completed, "capacity {capacity} run did not complete");
    Ok(measured_costs(&out.ledger)?.throughput)
}

/// Doubling the per-replica capacity C at n=16 adds C/2 of throughput.
pub fn c5_scale_up() -> CriterionResult {
    timed(5, "scale-up ratio", || {
        const C: u64 = 2_000_000;
        let t1 = capped_throughput(5, C)?;
        let t2 = capped_throughput(5, 2 * C)?;
        let gain = t2 - t1;
        let target = 0.5 * C as f64;
        Ok((
            within(gain, target, 0.15),
            format!(
                "T(C)={t1:.0} B/s, T(2C)={t2:.0} B/s, gain {gain:.0} vs {target:.0} ({:+.1}%)",
                100.0 * (gain / target - 1.0)
            ),
        ))
    })
}

/// One 2000-request datablock of 128-byte requests, retrieved at n=4 and n=127.
pub fn c6_retrieval_cost() -> CriterionResult {
    timed(6, "retrieval cost", || {
        let small = retrieval_probe(4, 2000, 128, 1)?;
        let large = retrieval_probe(127, 2000, 128, 1)?;
        let band = |r: usize, paper: f64| (r as f64) >= 0.8 * paper && (r as f64) <= 1.4 * paper;
        let ok = band(small.received_bytes, 325_000.0)
            && band(large.received_bytes, 356_000.0)
            && (4_000..=12_000).contains(&large.per_responder_bytes);
        Ok((
            ok,
            format!(
                "n=4 received {} B, n=127 received {} B, per responder {} B",
                small.received_bytes, large.received_bytes, large.per_responder_bytes
            ),
        ))
    })
}

/// Saturated n=32 run: datablocks dominate what the leader receives.
pub fn c7_breakdown() -> CriterionResult {
    timed(7, "breakdown", || {
        let mut sc = Scenario::honest(10, 0, 1);
        sc.params.datablock_batch = 2000;
        sc.params.payload = 128;
        sc.params.tau = 2;
        sc.params.datablock_flush_ms = 1000;
        sc.capacity_bytes_per_s = Some(10_000_000);
        saturating_load(&mut sc, 248_000, 4000);
        let out = run(&sc)?;
        ensure!(out.stats.completed, "run did not complete");
        let costs = measured_costs(&out.ledger)?;
        let leader = costs.replica(leader_of(INITIAL_VIEW, sc.params.n));
        let share = leader.share(Direction::Received, Category::Datablock);
        Ok((share >= 0.90, format!("leader Datablock share {:.2}%", 100.0 * share)))
    })
}

/// Blocks notarized before the first view change keep their slot and
/// content in every honest log.
pub fn c8_view_change() -> CriterionResult {
    timed(8, "view-change correctness", || {
        let (mut checked, mut moved, mut problems) = (0, 0, Vec::new());
        for f in [1usize, 2] {
            for seed in 0..50u64 {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut sc = Scenario::honest(f, 300, seed);
                sc.duration_ms = 60_000;
                sc.clients.rate_per_s = Some(100.0);
                for replica in 1..=f as u32 {
                    sc.faults.push(FaultSpec {
                        replica,
                        strategy: Strategy::SilentLeader {
                            from_ms: rng.gen_range(0..=2500),
                        },
                    });
                }
                let out = run(&sc)?;
                let n = sc.params.n;
                if !out.stats.completed || out.stats.max_consecutive_view_changes > f as u64 {
                    problems.push(format!(
                        "n={n} seed {seed}: completed {}, consecutive view changes {}",
                        out.stats.completed, out.stats.max_consecutive_view_changes
                    ));
                }
                let Some(vc) = out.first_view_change else {
                    problems.push(format!("n={n} seed {seed}: no view change"));
                    continue;
                };
                let logs: Vec<_> = out.honest_replicas().map(|r| r.log()).collect();
                // Re-proposals carry the new view, so compare what the slot holds.
                for rec in out.notarized.iter().filter(|r| r.first < vc) {
                    checked += 1;
                    let want = (&rec.block.content, rec.block.dummy);
                    if !logs
                        .iter()
                        .all(|l| l.block(rec.block.serial).is_some_and(|b| (&b.content, b.dummy) == want))
                    {
                        moved += 1;
                    }
                }
            }
        }
        let mut detail = format!("100 runs, {checked} pre-view-change notarizations, {moved} lost or moved");
        if let Some(p) = problems.first() {
            detail += &format!(", {} other problems, first: {p}", problems.len());
        }
        Ok((checked > 0 && moved == 0 && problems.is_empty(), detail))
    })
}

fn subsets(n: usize, k: usize) -> impl Iterator<Item = Vec<usize>> {
    (0u32..1 << n)
        .filter(move |m| m.count_ones() as usize == k)
        .map(move |m| (0..n).filter(|i| m >> i & 1 == 1).collect())
}

fn erasure_exhaustive() -> Result<usize> {
    let mut decodes = 0;
    for n in 4..=7 {
        let f = (n - 1) / 3;
        for len in [0usize, 1, 31, 1000] {
            let data: Vec<u8> = (0..len).map(|i| (i * 7 + n) as u8).collect();
            let chunks = encode(&data, f, n)?;
            for set in subsets(n, f + 1) {
                let picked: Vec<(u32, &[u8])> = set.iter().map(|&i| (i as u32, chunks[i].as_slice())).collect();
                ensure!(
                    decode(&picked, f, n)? == data,
                    "n={n} len={len} subset {set:?} decoded wrongly"
                );
                decodes += 1;
            }
        }
    }
    Ok(decodes)
}

fn combine_rejection() -> Result<usize> {
    let mut rejected = 0;
    for n in [4, 7, 10] {
        let f = (n - 1) / 3;
        let keys = ThresholdKeySet::generate(n, f, n as u64)?;
        let digest = hash(b"block");
        let shares: Vec<_> = (0..n as u32).map(|i| keys.sign_share(ReplicaId(i), &digest)).collect();
        for set in subsets(n, 2 * f) {
            let mut picked: Vec<_> = set.iter().map(|&i| shares[i]).collect();
            // A repeated share must not count twice.
            picked.push(picked[0]);
            match keys.combine(&picked) {
                Err(CryptoError::InsufficientShares { .. }) => rejected += 1,
                other => bail!("n={n} combined {} shares from {set:?}: {other:?}", 2 * f),
            }
        }
        ensure!(
            keys.combine(&shares[..2 * f + 1]).is_ok(),
            "n={n}: 2f+1 shares failed to combine"
        );
    }
    Ok(rejected)
}

fn merkle_tamper_matrix() -> Result<usize> {
    let mut rejected = 0;
    for n in [4, 7, 10, 13] {
        let f = (n - 1) / 3;
        let data: Vec<u8> = (0..4096u32).map(|i| (i % 251) as u8).collect();
        let chunks = encode_authenticated(&data, f, n)?;
        for c in &chunks {
            ensure!(c.verify(), "n={n}: untouched chunk {} rejected", c.index);
            let mut cases: Vec<(String, Digest, Vec<u8>, u32, merkle::MerkleProof)> = Vec::new();
            for at in [0, c.data.len() / 2, c.data.len() - 1] {
                let mut d = c.data.clone();
                d[at] ^= 1;
                cases.push((format!("data byte {at}"), c.root, d, c.index, c.proof.clone()));
            }
            let mut longer = c.data.clone();
            longer.push(0);
            cases.push(("appended byte".into(), c.root, longer, c.index, c.proof.clone()));
            for other in (0..n as u32).filter(|&i| i != c.index) {
                cases.push((format!("index {other}"), c.root, c.data.clone(), other, c.proof.clone()));
            }
            for level in 0..c.proof.path.len() {
                let mut p = c.proof.clone();
                p.path[level].0 .0[0] ^= 1;
                cases.push((format!("sibling {level}"), c.root, c.data.clone(), c.index, p));
                let mut p = c.proof.clone();
                p.path[level].1 = match p.path[level].1 {
                    Side::Left => Side::Right,
                    Side::Right => Side::Left,
                };
                cases.push((format!("side {level}"), c.root, c.data.clone(), c.index, p));
            }
            let mut p = c.proof.clone();
            p.path.pop();
            cases.push(("truncated proof".into(), c.root, c.data.clone(), c.index, p));
            let mut p = c.proof.clone();
            p.path.push((c.root, Side::Left));
            cases.push(("extended proof".into(), c.root, c.data.clone(), c.index, p));
            let mut root = c.root;
            root.0[31] ^= 0x80;
            cases.push(("root".into(), root, c.data.clone(), c.index, c.proof.clone()));
            for (what, root, leaf, index, proof) in cases {
                ensure!(
                    !merkle::verify(&root, &leaf, index, &proof),
                    "n={n} chunk {}: tampered {what} accepted",
                    c.index
                );
                rejected += 1;
            }
        }
    }
    Ok(rejected)
}

pub fn c9_crypto() -> CriterionResult {
    timed(9, "crypto properties", || {
        let decodes = erasure_exhaustive()?;
        let rejected = combine_rejection()?;
        let tampered = merkle_tamper_matrix()?;
        Ok((
            true,
            format!("{decodes} subset decodes, {rejected} 2f-share sets rejected, {tampered} tampered proofs rejected"),
        ))
    })
}

struct TempDir(PathBuf);

impl TempDir {
    fn new(tag: &str) -> Result<Self> {
        let dir = std::env::temp_dir().join(format!("leopard-{tag}-{}", std::process::id()));
        fs::create_dir_all(&dir)?;
        Ok(TempDir(dir))
    }
}

impl Drop for TempDir {
    fn drop(&mut self) {
        let _ = fs::remove_dir_all(&self.0);
    }
}

/// Replays a failing seed and a fuzzed seed, then runs a scenario file twice.
///
/// `mutation` should make honest replicas unsafe (a fault-injection build
/// sets `skip_vote_once`); with default options the failing replay is
/// replaced by a note in the detail.
pub fn c10_determinism(mutation: &RunOptions) -> CriterionResult {
    timed(10, "determinism", || {
        let opts = RunOptions {
            capture_trace: true,
            ..mutation.clone()
        };
        let mut notes = Vec::new();

        let mut failing = Scenario::honest(1, 100, 7);
        failing.faults.push(FaultSpec {
            replica: leader_of(INITIAL_VIEW, 4).0,
            strategy: Strategy::EquivocatingLeader,
        });
        let violating_trace = |sc: &Scenario| match run_with(sc, &opts) {
            Err(SimError::SafetyViolation { trace, .. }) => Some(trace.to_ndjson()),
            _ => None,
        };
        match (violating_trace(&failing), violating_trace(&failing)) {
            (Some(a), Some(b)) => {
                ensure!(a == b, "failing seed replayed to a different trace");
                notes.push(format!("failing seed replayed ({} bytes)", a.len()));
            }
            (None, None) => notes.push("no mutation, failing replay skipped".to_string()),
            _ => bail!("the failing seed failed only once"),
        }

        let mut base = Scenario::honest(2, 100, 2024);
        base.duration_ms = 20_000;
        let fuzzed = fuzz_case(&base, fuzz_seed(base.seed, 0));
        let traced = |sc: &Scenario| -> Result<String> {
            Ok(run_with(
                sc,
                &RunOptions {
                    capture_trace: true,
                    ..RunOptions::default()
                },
            )?
            .trace
            .to_ndjson())
        };
        ensure!(
            traced(&fuzzed)? == traced(&fuzzed)?,
            "fuzzed seed replayed to a different trace"
        );
        notes.push("fuzzed seed replayed".to_string());

        let dir = TempDir::new("c10")?;
        let scenario = dir.0.join("scenario.json");
        fs::write(&scenario, fuzzed.to_json())?;
        let mut csvs = Vec::new();
        for i in 0..2 {
            let args = RunArgs {
                scenario: scenario.clone(),
                seed: None,
                trace: None,
                metrics: Some(dir.0.join(format!("metrics{i}.csv"))),
                summary: Some(dir.0.join(format!("summary{i}.json"))),
            };
            ensure!(cmd_run(&args)? != Verdict::SafetyViolation, "scenario run was unsafe");
            csvs.push(fs::read(args.metrics.as_ref().expect("set above"))?);
        }
        ensure!(
            !csvs[0].is_empty() && csvs[0] == csvs[1],
            "metrics CSVs differ between runs"
        );
        notes.push(format!("CSV identical ({} bytes)", csvs[0].len()));
        Ok((true, notes.join(", ")))
    })
}

/// Every criterion in order. `opts` reach the safety campaign and the
/// failing-seed replay.
pub fn run_all(opts: &RunOptions) -> Vec<CriterionResult> {
    vec![
        c1_safety_campaign(opts),
        c2_liveness(),
        c3_cost_model(),
        c4_sf_constancy(),
        c5_scale_up(),
        c6_retrieval_cost(),
        c7_breakdown(),
        c8_view_change(),
        c9_crypto(),
        c10_determinism(opts),
    ]
}
