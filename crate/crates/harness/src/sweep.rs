//! Parameter sweeps: one summary row per (axis value, seed).

use std::io::Write;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use leopard_core::error::ConfigError;
use leopard_core::metrics::{measured_costs, scaling_factor, CostModelInputs};
use leopard_core::simnet::{run, Scenario, SimError};
use serde::{Deserialize, Serialize};

use crate::report::{observed_inputs, CostSummary};
use crate::workload::steady_load;

pub const SWEEP_SCHEMA: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    N,
    /// Requests per datablock.
    Alpha,
    Tau,
    /// Bytes per simulated second per replica.
    Capacity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Steady {
    pub rounds: u64,
    pub fill_ms: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub schema: u32,
    pub base: Scenario,
    pub axis: Axis,
    pub values: Vec<u64>,
    /// Seeds per point, counting up from the base seed.
    #[serde(default = "one")]
    pub seeds: u32,
    /// When set, every point uses `lambda * (n - 1)` requests per datablock.
    #[serde(default)]
    pub lambda: Option<usize>,
    /// When set, replaces the base client load with a steady open loop.
    #[serde(default)]
    pub steady: Option<Steady>,
}

fn one() -> u32 {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub axis: Axis,
    pub value: u64,
    pub seed: u64,
    pub n: usize,
    pub batch: usize,
    pub tau: usize,
    pub capacity: Option<u64>,
    pub completed: bool,
    pub acked: u64,
    pub view_changes: u64,
    pub throughput: Option<f64>,
    pub max_cost: Option<f64>,
    pub leader_cost: Option<f64>,
    pub replica_cost: Option<f64>,
    /// From observed α and τ when costs were measured, else configured ones.
    pub sf_analytic: f64,
    pub latency_p50_us: Option<u64>,
    pub latency_p99_us: Option<u64>,
}

impl SweepSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: SweepSpec = serde_json::from_str(text)
            .map_err(|e| ConfigError::invalid(format!("line {} column {}", e.line(), e.column()), e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.schema != SWEEP_SCHEMA {
            return Err(ConfigError::invalid(
                "schema",
                format!("unsupported schema {} (expected {SWEEP_SCHEMA})", self.schema),
            ));
        }
        if self.values.is_empty() {
            return Err(ConfigError::invalid("values", "must not be empty"));
        }
        if self.seeds == 0 {
            return Err(ConfigError::invalid("seeds", "must be at least 1"));
        }
        if let Some(s) = &self.steady {
            if s.rounds == 0 || s.fill_ms == 0 {
                return Err(ConfigError::invalid("steady", "rounds and fill_ms must be positive"));
            }
        }
        for (i, &v) in self.values.iter().enumerate() {
            self.point(v, self.base.seed)
                .validate()
                .map_err(|e| ConfigError::invalid(format!("values[{i}] -> {}", e.path), e.message))?;
        }
        Ok(())
    }

    /// The scenario run for one axis value and seed.
    pub fn point(&self, value: u64, seed: u64) -> Scenario {
        let mut sc = self.base.clone();
        sc.seed = seed;
        let p = &mut sc.params;
        match self.axis {
            Axis::N => {
                p.n = value as usize;
                p.f = (p.n.saturating_sub(1)) / 3;
            }
            Axis::Alpha => p.datablock_batch = value as usize,
            Axis::Tau => p.tau = value as usize,
            Axis::Capacity => sc.capacity_bytes_per_s = Some(value),
        }
        if let Some(lambda) = self.lambda {
            sc.params.datablock_batch = lambda * (sc.params.n - 1).max(1);
        }
        if let Some(s) = &self.steady {
            steady_load(&mut sc, s.rounds, s.fill_ms);
        }
        // Faults named for a larger configuration do not carry over.
        let n = sc.params.n as u32;
        sc.faults.retain(|f| f.replica < n);
        sc
    }
}

fn run_point(spec: &SweepSpec, value: u64, seed: u64) -> Result<SweepRow> {
    let sc = spec.point(value, seed);
    let out = match run(&sc) {
        Ok(out) => out,
        Err(SimError::SafetyViolation { violation, time, .. }) => {
            bail!(
                "{:?}={value} seed {seed}: safety violation at t={time}us: {violation}",
                spec.axis
            )
        }
        Err(e) => return Err(anyhow!(e)),
    };
    let costs = measured_costs(&out.ledger)
        .ok()
        .zip(
            out.honest_replicas()
                .next()
                .and_then(|r| observed_inputs(r, sc.params.request_size())),
        )
        .map(|(c, inputs)| CostSummary::new(&c, &inputs));
    Ok(SweepRow {
        axis: spec.axis,
        value,
        seed,
        n: sc.params.n,
        batch: sc.params.datablock_batch,
        tau: sc.params.tau,
        capacity: sc.capacity_bytes_per_s,
        completed: out.stats.completed,
        acked: out.stats.acked,
        view_changes: out.stats.view_changes,
        throughput: costs.as_ref().map(|c| c.throughput),
        max_cost: costs.as_ref().map(|c| c.max_cost),
        leader_cost: costs.as_ref().map(|c| c.leader.measured),
        replica_cost: costs.as_ref().map(|c| c.replica.measured),
        sf_analytic: costs.as_ref().map_or_else(
            || scaling_factor(&CostModelInputs::from_params(&sc.params)),
            |c| c.scaling_factor,
        ),
        latency_p50_us: out.ledger.latency_quantile(0.5),
        latency_p99_us: out.ledger.latency_quantile(0.99),
    })
}

/// Runs every point, spread over the available cores, rows in spec order.
pub fn sweep(spec: &SweepSpec) -> Result<Vec<SweepRow>> {
    spec.validate()?;
    let points: Vec<(u64, u64)> = spec
        .values
        .iter()
        .flat_map(|&v| (0..spec.seeds as u64).map(move |s| (v, spec.base.seed + s)))
        .collect();
    let threads = std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(points.len());
    let mut slots: Vec<Option<Result<SweepRow>>> = (0..points.len()).map(|_| None).collect();
    std::thread::scope(|s| {
        let size = points.len().div_ceil(threads);
        for (chunk, pts) in slots.chunks_mut(size).zip(points.chunks(size)) {
            s.spawn(move || {
                for (slot, &(v, seed)) in chunk.iter_mut().zip(pts) {
                    *slot = Some(run_point(spec, v, seed));
                }
            });
        }
    });
    slots.into_iter().map(|r| r.expect("every point ran")).collect()
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for row in rows {
        out.serialize(row)?;
    }
    out.flush()?;
    Ok(())
}

pub fn cmd_sweep(path: &Path, out: Option<&Path>) -> Result<Vec<SweepRow>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read sweep {}", path.display()))?;
    let spec = SweepSpec::from_json(&text).with_context(|| format!("invalid sweep {}", path.display()))?;
    let rows = sweep(&spec)?;
    match out {
        Some(p) => {
            let file = std::fs::File::create(p).with_context(|| format!("cannot create {}", p.display()))?;
            write_sweep_csv(&rows, std::io::BufWriter::new(file))?;
        }
        None => write_sweep_csv(&rows, std::io::stdout().lock())?,
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(axis: Axis, values: Vec<u64>) -> SweepSpec {
        SweepSpec {
            schema: SWEEP_SCHEMA,
            base: Scenario::honest(1, 60, 3),
            axis,
            values,
            seeds: 1,
            lambda: None,
            steady: None,
        }
    }

    #[test]
    fn n_axis_must_be_three_f_plus_one() {
        let err = spec(Axis::N, vec![4, 5]).validate().unwrap_err();
        assert!(err.path.starts_with("values[1]"), "{err}");
        assert!(err.message.contains("3f+1"), "{err}");
    }

    #[test]
    fn lambda_scales_batch_with_n() {
        let mut s = spec(Axis::N, vec![4, 7]);
        s.lambda = Some(5);
        assert_eq!(s.point(7, 1).params.datablock_batch, 30);
        assert_eq!(s.point(4, 1).params.datablock_batch, 15);
    }

    #[test]
    fn rows_follow_spec_order() {
        let mut s = spec(Axis::Tau, vec![1, 10]);
        s.seeds = 2;
        let rows = sweep(&s).unwrap();
        let keys: Vec<(u64, u64)> = rows.iter().map(|r| (r.value, r.seed)).collect();
        assert_eq!(keys, vec![(1, 3), (1, 4), (10, 3), (10, 4)]);
        assert!(rows.iter().all(|r| r.completed && r.acked == 60));
    }
}
