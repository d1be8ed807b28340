use leopard_core::metrics::{measured_costs, retrieval_cost_bounds, Attack, CostModelInputs, Direction};
use leopard_core::simnet::{run, run_with, EventRecord, FaultSpec, RunOptions, Scenario, Strategy, Trace};
use leopard_core::{Category, ReplicaId};

fn traced(sc: &Scenario) -> leopard_core::simnet::RunOutput {
    run_with(
        sc,
        &RunOptions {
            capture_trace: true,
            ..RunOptions::default()
        },
    )
    .unwrap()
}

fn count_kind(trace: &Trace, kind: &str) -> usize {
    trace
        .records
        .iter()
        .flat_map(|r| &r.sends)
        .filter(|s| s.kind == kind)
        .count()
}

#[test]
fn honest_run_acks_everything_without_view_changes() {
    let out = run(&Scenario::honest(1, 100, 1)).unwrap();
    assert!(out.stats.completed, "{:?}", out.stats);
    assert_eq!(out.stats.acked, 100);
    assert_eq!(out.stats.min_honest_executed, 100);
    assert_eq!(out.stats.view_changes, 0);
    assert!(out.trace.view_events.is_empty());
    assert_eq!(out.ledger.confirmed_requests, 100);
    assert_eq!(out.ledger.latencies.len(), 100);
}

#[test]
fn same_seed_same_trace() {
    let sc = Scenario::honest(1, 60, 5);
    let a = traced(&sc).trace.to_ndjson();
    let b = traced(&sc).trace.to_ndjson();
    assert!(!a.is_empty());
    assert_eq!(a, b);
    let mut other = sc.clone();
    other.seed = 6;
    assert_ne!(traced(&other).trace.to_ndjson(), a);
}

#[test]
fn traces_are_causal_and_bytes_conserved() {
    let mut sc = Scenario::honest(2, 150, 3);
    sc.gst_ms = 500;
    let out = traced(&sc);
    assert!(out.trace.is_causal());
    assert_eq!(out.stats.in_flight, 0);
    let (sent, received) = out.ledger.replica_traffic();
    assert_eq!(sent, received);
}

#[test]
fn post_gst_delays_stay_within_delta() {
    let mut sc = Scenario::honest(1, 200, 9);
    sc.gst_ms = 300;
    let out = traced(&sc);
    let delta = sc.params.delta();
    let gst = sc.gst();
    let mut before = 0;
    for r in &out.trace.records {
        if let EventRecord::Deliver { sent_at, .. } = r.event {
            let delay = r.time - sent_at;
            if sent_at >= gst {
                assert!(delay <= delta, "delay {delay} at {}", r.time);
            } else {
                before += 1;
                assert!(r.time <= gst + delta);
            }
        }
    }
    assert!(before > 0);
}

#[test]
fn selective_dissemination_recovers_through_retrieval() {
    let mut sc = Scenario::honest(2, 120, 4);
    for replica in [2, 5] {
        sc.faults.push(FaultSpec {
            replica,
            strategy: Strategy::SelectiveDissemination { s: Some(6) },
        });
    }
    let out = traced(&sc);
    assert!(out.stats.completed, "{:?}", out.stats);
    assert_eq!(out.stats.acked, 120);
    assert!(count_kind(&out.trace, "Query") > 0);
    assert!(count_kind(&out.trace, "Response") > 0);
}

#[test]
fn equivocating_leader_is_safe_and_replaced() {
    let mut sc = Scenario::honest(1, 80, 2);
    sc.faults.push(FaultSpec {
        replica: 1,
        strategy: Strategy::EquivocatingLeader,
    });
    let out = traced(&sc);
    assert!(out.stats.view_changes >= 1, "{:?}", out.stats);
    assert!(out.honest_replicas().all(|r| r.view() > 1));
    assert!(out.stats.completed, "{:?}", out.stats);
}

#[test]
fn silent_leader_is_replaced_and_work_completes() {
    let mut sc = Scenario::honest(1, 80, 8);
    sc.faults.push(FaultSpec {
        replica: 1,
        strategy: Strategy::SilentLeader { from_ms: 200 },
    });
    let out = run(&sc).unwrap();
    assert!(out.stats.completed, "{:?}", out.stats);
    assert!(out.stats.view_changes >= 1);
    assert!(out.stats.max_consecutive_view_changes <= 1);
}

#[test]
fn other_adversaries_do_not_block_progress() {
    for (i, strategy) in [
        Strategy::FloodDatablocks { multiplier: 3 },
        Strategy::FakeReadyWithholdData,
        Strategy::CrashAt { at_ms: 100 },
    ]
    .into_iter()
    .enumerate()
    {
        let mut sc = Scenario::honest(1, 80, 20 + i as u64);
        sc.faults.push(FaultSpec { replica: 2, strategy });
        let out = run(&sc).unwrap();
        assert!(out.stats.completed, "{:?}: {:?}", sc.faults, out.stats);
    }
}

#[test]
fn honest_logs_agree() {
    let out = run(&Scenario::honest(2, 200, 12)).unwrap();
    let logs: Vec<Vec<_>> = out
        .honest_replicas()
        .map(|r| r.log().entries().map(|(s, b)| (s, b.digest())).collect())
        .collect();
    assert!(logs.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn measured_costs_cover_the_leader() {
    let out = run(&Scenario::honest(1, 400, 13)).unwrap();
    let costs = measured_costs(&out.ledger).unwrap();
    let leader = costs.replica(ReplicaId(1));
    assert!(leader.bytes(leopard_core::metrics::Direction::Received, Category::Datablock) > 0);
    assert!(costs.throughput > 0.0);
}

#[test]
fn selective_attack_traffic_stays_under_the_retrieval_bound() {
    for seed in 0..5 {
        let mut sc = Scenario::honest(2, 300, 40 + seed);
        sc.params.datablock_batch = 20;
        for replica in [0, 4] {
            sc.faults.push(FaultSpec {
                replica,
                strategy: Strategy::SelectiveDissemination { s: None },
            });
        }
        let out = run(&sc).unwrap();
        assert!(out.stats.completed, "{:?}", out.stats);
        let bound = retrieval_cost_bounds(&CostModelInputs::from_params(&sc.params), Attack::Selective).total();
        let queried: u64 = out
            .ledger
            .replicas
            .iter()
            .map(|l| l.get(Direction::Sent, Category::Query).bytes)
            .sum();
        assert!(queried > 0);
        let payload = (out.ledger.confirmed_requests * sc.params.request_size() as u64) as f64;
        for r in (0..sc.params.n as u32).filter(|r| !sc.is_faulty(ReplicaId(*r))) {
            let extra: u64 = [Category::Ready, Category::Query, Category::Resp]
                .into_iter()
                .flat_map(|c| {
                    [Direction::Sent, Direction::Received].map(|d| out.ledger.replicas[r as usize].get(d, c).bytes)
                })
                .sum();
            let cost = extra as f64 / payload;
            assert!(cost <= bound, "seed {seed} r{r}: {cost} > {bound}");
        }
    }
}
