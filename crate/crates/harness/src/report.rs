//! Metrics CSV and run summaries.

use std::io::Write;

use anyhow::Result;
use leopard_core::metrics::{
    analytic_leader_cost, analytic_replica_cost, measured_costs, scaling_factor, CostModelInputs, MeasuredCosts,
    MetricsLedger,
};
use leopard_core::replica::{leader_of, Replica, INITIAL_VIEW};
use leopard_core::simnet::{RunOutput, RunStats, Scenario};
use serde::Serialize;

/// Writes one row per (replica, category, direction) with traffic.
pub fn write_metrics_csv<W: Write>(ledger: &MetricsLedger, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for row in ledger.rows() {
        out.serialize(row)?;
    }
    out.flush()?;
    Ok(())
}

/// Model inputs observed in a replica's log: bytes of request per linked
/// datablock and datablocks per non-dummy block.
pub fn observed_inputs(replica: &Replica, request_size: usize) -> Option<CostModelInputs> {
    let (mut blocks, mut datablocks) = (0usize, 0usize);
    for (_, b) in replica.log().entries() {
        if !b.dummy {
            blocks += 1;
            datablocks += b.content.len();
        }
    }
    if datablocks == 0 {
        return None;
    }
    let alpha = replica.executed_count() as f64 * request_size as f64 / datablocks as f64;
    Some(CostModelInputs::new(
        replica.n(),
        alpha,
        datablocks as f64 / blocks as f64,
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CostCheck {
    pub measured: f64,
    pub analytic: f64,
    /// `measured / analytic - 1`.
    pub delta: f64,
}

impl CostCheck {
    fn new(measured: f64, analytic: f64) -> Self {
        CostCheck {
            measured,
            analytic,
            delta: measured / analytic - 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CostSummary {
    pub alpha: f64,
    pub tau: f64,
    pub window_blocks: usize,
    /// Confirmed payload bytes per second inside the window.
    pub throughput: f64,
    pub leader: CostCheck,
    /// Mean over the non-leaders.
    pub replica: CostCheck,
    pub max_cost: f64,
    pub scaling_factor: f64,
}

impl CostSummary {
    pub fn new(costs: &MeasuredCosts, inputs: &CostModelInputs) -> Self {
        let leader = leader_of(INITIAL_VIEW, inputs.n);
        let others: Vec<f64> = costs
            .replicas
            .iter()
            .filter(|r| r.replica != leader.0)
            .map(|r| r.cost)
            .collect();
        let mean = others.iter().sum::<f64>() / others.len() as f64;
        CostSummary {
            alpha: inputs.alpha,
            tau: inputs.tau,
            window_blocks: costs.window.blocks,
            throughput: costs.throughput,
            leader: CostCheck::new(costs.replica(leader).cost, analytic_leader_cost(inputs)),
            replica: CostCheck::new(mean, analytic_replica_cost(inputs)),
            max_cost: costs.max_cost(),
            scaling_factor: scaling_factor(inputs),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Latency {
    pub p50_us: u64,
    pub p90_us: u64,
    pub p99_us: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub n: usize,
    pub f: usize,
    pub stats: RunStats,
    pub ack_rate: f64,
    pub latency: Option<Latency>,
    /// Absent when nothing was confirmed.
    pub costs: Option<CostSummary>,
}

impl Summary {
    pub fn new(sc: &Scenario, out: &RunOutput) -> Self {
        let ledger = &out.ledger;
        let latency = ledger.latency_quantile(0.5).map(|p50| Latency {
            p50_us: p50,
            p90_us: ledger.latency_quantile(0.9).unwrap_or(p50),
            p99_us: ledger.latency_quantile(0.99).unwrap_or(p50),
        });
        let costs = measured_costs(ledger).ok().and_then(|c| {
            let inputs = observed_inputs(out.honest_replicas().next()?, sc.params.request_size())?;
            Some(CostSummary::new(&c, &inputs))
        });
        Summary {
            n: sc.params.n,
            f: sc.params.f,
            ack_rate: out.stats.acked as f64 / out.stats.issued.max(1) as f64,
            stats: out.stats.clone(),
            latency,
            costs,
        }
    }

    /// A liveness miss: something submitted in time is not executed by every
    /// honest replica.
    pub fn missed_deadline(&self) -> bool {
        self.stats.late_requests > 0
    }
}
