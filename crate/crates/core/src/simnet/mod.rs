//! Discrete-event simulation of a replica group under partial synchrony.
//!
//! One global event queue drives every replica, the network and the
//! clients on a virtual microsecond clock. Before GST each message takes a
//! uniform delay in `[0, 10Δ]` (but arrives by `GST + Δ` at the latest);
//! from GST on, the link model's delay, which never exceeds Δ. An optional
//! per-replica bandwidth cap serializes all of a replica's sent and received
//! bytes through one FIFO link.

mod adversary;
mod engine;
mod fuzz;
mod monitor;
mod probe;
mod trace;

use serde::{Deserialize, Serialize};

use crate::crypto::Provider;
use crate::error::ConfigError;
use crate::params::{ProtocolParams, MS};
use crate::replica::{assign_replica, leader_of};
use crate::types::{ReplicaId, RequestId, Time};

pub use engine::{run, run_with, NotarizedRecord, RunOptions, RunOutput, RunStats, SimError};
pub use fuzz::{fuzz_case, fuzz_round, fuzz_round_with, fuzz_seed, schedule_fuzz, schedule_fuzz_with, FuzzVerdict};
pub use monitor::{monitor_safety, SafetyMonitor, Violation};
pub use probe::{retrieval_probe, ProbeResult};
pub use trace::{Endpoint, EventRecord, SentRecord, Trace, TraceRecord, ViewEvent};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema: u32,
    #[serde(default)]
    pub params: ProtocolParams,
    #[serde(default)]
    pub seed: u64,
    pub duration_ms: u64,
    #[serde(default)]
    pub gst_ms: u64,
    #[serde(default)]
    pub faults: Vec<FaultSpec>,
    #[serde(default)]
    pub clients: ClientLoad,
    #[serde(default)]
    pub link: LinkModel,
    /// Bytes per simulated second each replica can move, sent and received
    /// combined.
    #[serde(default)]
    pub capacity_bytes_per_s: Option<u64>,
    /// End the run once every request is acknowledged and executed by every
    /// honest replica, after delivering the messages still in flight.
    #[serde(default = "default_true")]
    pub stop_when_done: bool,
    #[serde(default)]
    pub crypto: Provider,
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultSpec {
    pub replica: u32,
    pub strategy: Strategy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
pub enum Strategy {
    Honest,
    /// Own datablocks reach only the leader and `n - s - 1` honest
    /// replicas; datablocks from honest replicas are ignored; fellow faulty
    /// replicas vouch for each other's datablocks with Ready messages.
    SelectiveDissemination {
        #[serde(default)]
        s: Option<usize>,
    },
    /// Stops sending anything from `from_ms` on.
    SilentLeader {
        from_ms: u64,
    },
    /// As leader, sends conflicting blocks for every serial to two halves of
    /// the replicas.
    EquivocatingLeader,
    CrashAt {
        at_ms: u64,
    },
    /// Sends `multiplier - 1` extra datablocks with fresh counters and the
    /// same requests for each datablock it generates.
    FloodDatablocks {
        multiplier: u32,
    },
    /// Own datablocks go to the leader only; Ready messages are duplicated
    /// and padded with Readys for data that does not exist; retrieval
    /// responses are withheld.
    FakeReadyWithholdData,
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Honest => "Honest",
            Strategy::SelectiveDissemination { .. } => "SelectiveDissemination",
            Strategy::SilentLeader { .. } => "SilentLeader",
            Strategy::EquivocatingLeader => "EquivocatingLeader",
            Strategy::CrashAt { .. } => "CrashAt",
            Strategy::FloodDatablocks { .. } => "FloodDatablocks",
            Strategy::FakeReadyWithholdData => "FakeReadyWithholdData",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClientLoad {
    pub clients: u32,
    /// Requests issued over the whole run.
    pub requests: u64,
    /// Closed loop: requests each client keeps in flight.
    pub outstanding: u32,
    /// Open loop: aggregate requests per simulated second. Overrides
    /// `outstanding`.
    pub rate_per_s: Option<f64>,
}

impl Default for ClientLoad {
    fn default() -> Self {
        ClientLoad {
            clients: 4,
            requests: 100,
            outstanding: 50,
            rate_per_s: None,
        }
    }
}

/// Post-GST one-way delays, uniform in `[min_ms, max_ms]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkModel {
    pub min_ms: u64,
    /// Defaults to Δ.
    pub max_ms: Option<u64>,
}

impl Default for LinkModel {
    fn default() -> Self {
        LinkModel {
            min_ms: 5,
            max_ms: None,
        }
    }
}

impl Scenario {
    /// A scenario with default parameters for `f` faults and no adversary.
    pub fn honest(f: usize, requests: u64, seed: u64) -> Self {
        Scenario {
            schema: SCHEMA_VERSION,
            params: ProtocolParams::for_faults(f),
            seed,
            duration_ms: 60_000,
            gst_ms: 0,
            faults: Vec::new(),
            clients: ClientLoad {
                requests,
                ..ClientLoad::default()
            },
            link: LinkModel::default(),
            capacity_bytes_per_s: None,
            stop_when_done: true,
            crypto: Provider::Mock,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let sc: Scenario = serde_json::from_str(text)
            .map_err(|e| ConfigError::invalid(format!("line {} column {}", e.line(), e.column()), e.to_string()))?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.schema != SCHEMA_VERSION {
            return Err(ConfigError::invalid(
                "schema",
                format!("unsupported schema {} (expected {SCHEMA_VERSION})", self.schema),
            ));
        }
        self.params.validate()?;
        if self.crypto != Provider::Mock {
            return Err(ConfigError::invalid(
                "crypto",
                "only the mock threshold provider is available",
            ));
        }
        let p = &self.params;
        if self.duration_ms == 0 {
            return Err(ConfigError::invalid("duration_ms", "must be positive"));
        }
        if self.gst_ms > self.duration_ms {
            return Err(ConfigError::invalid("gst_ms", "must not exceed duration_ms"));
        }
        let faulty: Vec<&FaultSpec> = self.faults.iter().filter(|f| f.strategy != Strategy::Honest).collect();
        if faulty.len() > p.f {
            return Err(ConfigError::invalid(
                "faults",
                format!("{} faulty replicas exceed f={}", faulty.len(), p.f),
            ));
        }
        for (i, fs) in self.faults.iter().enumerate() {
            let path = |field: &str| format!("faults[{i}].{field}");
            if fs.replica as usize >= p.n {
                return Err(ConfigError::invalid(
                    path("replica"),
                    format!("must be below n={}", p.n),
                ));
            }
            if self.faults[..i].iter().any(|o| o.replica == fs.replica) {
                return Err(ConfigError::invalid(path("replica"), "listed twice"));
            }
            match fs.strategy {
                Strategy::SelectiveDissemination { s: Some(s) } if s == 0 || s >= p.n => {
                    return Err(ConfigError::invalid(
                        path("strategy.s"),
                        format!("must be in 1..{}", p.n),
                    ));
                }
                Strategy::FloodDatablocks { multiplier: 0 } => {
                    return Err(ConfigError::invalid(path("strategy.multiplier"), "must be at least 1"));
                }
                _ => {}
            }
        }
        let c = &self.clients;
        if c.clients == 0 {
            return Err(ConfigError::invalid("clients.clients", "must be positive"));
        }
        if c.requests == 0 {
            return Err(ConfigError::invalid("clients.requests", "must be positive"));
        }
        match c.rate_per_s {
            Some(r) if !(r.is_finite() && r > 0.0) => {
                return Err(ConfigError::invalid("clients.rate_per_s", "must be positive"));
            }
            None if c.outstanding == 0 => {
                return Err(ConfigError::invalid("clients.outstanding", "must be positive"));
            }
            _ => {}
        }
        let max = self.link.max_ms.unwrap_or(p.delta_ms);
        if max > p.delta_ms {
            return Err(ConfigError::invalid("link.max_ms", "must not exceed params.delta_ms"));
        }
        if self.link.min_ms > max {
            return Err(ConfigError::invalid("link.min_ms", "must not exceed link.max_ms"));
        }
        if self.capacity_bytes_per_s == Some(0) {
            return Err(ConfigError::invalid("capacity_bytes_per_s", "must be positive"));
        }
        Ok(())
    }

    pub fn strategy_of(&self, r: ReplicaId) -> Option<&Strategy> {
        self.faults
            .iter()
            .find(|f| f.replica == r.0 && f.strategy != Strategy::Honest)
            .map(|f| &f.strategy)
    }

    pub fn is_faulty(&self, r: ReplicaId) -> bool {
        self.strategy_of(r).is_some()
    }

    pub fn duration(&self) -> Time {
        self.duration_ms * MS
    }

    pub fn gst(&self) -> Time {
        self.gst_ms * MS
    }
}

/// Replica a client uses for the `attempt`-th submission of `id` (0 for the
/// first) when it believes `view` is current: the assigned non-leader, then
/// the following non-leaders in turn.
pub fn submission_target(id: &RequestId, attempt: u32, n: usize, view: u64) -> ReplicaId {
    let first = assign_replica(id, n, view);
    let leader = leader_of(view, n);
    let others = n - 1;
    let pos = if first.0 > leader.0 { first.0 - 1 } else { first.0 } as usize;
    let slot = ((pos + attempt as usize) % others) as u32;
    if slot >= leader.0 {
        ReplicaId(slot + 1)
    } else {
        ReplicaId(slot)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenario_json_round_trip() {
        let mut sc = Scenario::honest(1, 100, 7);
        sc.faults.push(FaultSpec {
            replica: 1,
            strategy: Strategy::SelectiveDissemination { s: Some(2) },
        });
        let back = Scenario::from_json(&sc.to_json()).unwrap();
        assert_eq!(back, sc);
    }

    #[test]
    fn minimal_json_gets_defaults() {
        let sc = Scenario::from_json(r#"{"schema": 1, "duration_ms": 1000}"#).unwrap();
        assert_eq!(sc.params, ProtocolParams::default());
        assert!(sc.stop_when_done);
        assert_eq!(sc.clients.requests, 100);
    }

    #[test]
    fn bad_n_names_the_rule() {
        let err = Scenario::from_json(r#"{"schema": 1, "duration_ms": 1000, "params": {"n": 5, "f": 1}}"#).unwrap_err();
        assert_eq!(err.path, "params.n");
        assert!(err.message.contains("3f+1"), "{err}");
    }

    #[test]
    fn validation_errors_carry_field_paths() {
        let cases = [
            (r#"{"schema": 2, "duration_ms": 1}"#, "schema"),
            (r#"{"schema": 1, "duration_ms": 10, "gst_ms": 11}"#, "gst_ms"),
            (
                r#"{"schema": 1, "duration_ms": 10, "faults": [{"replica": 0, "strategy": {"kind": "EquivocatingLeader"}}, {"replica": 1, "strategy": {"kind": "EquivocatingLeader"}}]}"#,
                "faults",
            ),
            (
                r#"{"schema": 1, "duration_ms": 10, "faults": [{"replica": 9, "strategy": {"kind": "EquivocatingLeader"}}]}"#,
                "faults[0].replica",
            ),
            (
                r#"{"schema": 1, "duration_ms": 10, "link": {"max_ms": 500}}"#,
                "link.max_ms",
            ),
            (
                r#"{"schema": 1, "duration_ms": 10, "clients": {"requests": 0}}"#,
                "clients.requests",
            ),
            (r#"{"schema": 1, "duration_ms": 10, "crypto": "real"}"#, "crypto"),
            (r#"{"schema": 1, "duration_ms": 10, "params": {"k": 3}}"#, "params.k"),
        ];
        for (text, path) in cases {
            let err = Scenario::from_json(text).unwrap_err();
            assert_eq!(err.path, path, "{text}: {err}");
        }
    }

    #[test]
    fn unknown_fields_rejected() {
        assert!(Scenario::from_json(r#"{"schema": 1, "duration_ms": 10, "bogus": 1}"#).is_err());
    }

    #[test]
    fn submission_targets_rotate_over_non_leaders() {
        for n in [4usize, 7, 10] {
            for view in 1..=n as u64 {
                let id = RequestId { client: 3, seq: 11 };
                let targets: Vec<ReplicaId> = (0..(n - 1) as u32)
                    .map(|a| submission_target(&id, a, n, view))
                    .collect();
                assert_eq!(targets[0], assign_replica(&id, n, view));
                let mut sorted = targets.clone();
                sorted.sort();
                sorted.dedup();
                assert_eq!(sorted.len(), n - 1);
                assert!(!targets.contains(&leader_of(view, n)));
            }
        }
    }
}
