//! Running one scenario file.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use leopard_core::simnet::{run_with, RunOptions, Scenario, SimError, Trace};
use serde::Serialize;

use crate::report::{write_metrics_csv, Summary};

#[derive(Clone, Debug, Default)]
pub struct RunArgs {
    pub scenario: PathBuf,
    pub seed: Option<u64>,
    pub trace: Option<PathBuf>,
    pub metrics: Option<PathBuf>,
    /// Summary JSON destination; stdout when absent.
    pub summary: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Verdict {
    Clean,
    SafetyViolation,
    LivenessMiss,
}

impl Verdict {
    pub fn exit_code(self) -> u8 {
        match self {
            Verdict::Clean => 0,
            Verdict::SafetyViolation => 2,
            Verdict::LivenessMiss => 3,
        }
    }
}

/// Reads and validates a scenario, applying a seed override.
pub fn load_scenario(path: &Path, seed: Option<u64>) -> Result<Scenario> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read scenario {}", path.display()))?;
    let mut sc = Scenario::from_json(&text).with_context(|| format!("invalid scenario {}", path.display()))?;
    if let Some(seed) = seed {
        sc.seed = seed;
    }
    Ok(sc)
}

fn write_trace(trace: &Trace, path: &Path) -> Result<()> {
    let file = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    trace.write_ndjson(BufWriter::new(file))?;
    Ok(())
}

#[derive(Serialize)]
struct ViolationReport<'a> {
    seed: u64,
    time_us: u64,
    violation: String,
    verdict: &'a Verdict,
}

fn emit_json<T: Serialize>(value: &T, path: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match path {
        Some(p) => fs::write(p, text + "\n").with_context(|| format!("cannot write {}", p.display()))?,
        None => println!("{text}"),
    }
    Ok(())
}

pub fn cmd_run(args: &RunArgs) -> Result<Verdict> {
    let sc = load_scenario(&args.scenario, args.seed)?;
    let opts = RunOptions {
        capture_trace: args.trace.is_some(),
        ..RunOptions::default()
    };
    match run_with(&sc, &opts) {
        Ok(out) => {
            if let Some(path) = &args.trace {
                write_trace(&out.trace, path)?;
            }
            if let Some(path) = &args.metrics {
                let file = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
                write_metrics_csv(&out.ledger, BufWriter::new(file))?;
            }
            let summary = Summary::new(&sc, &out);
            emit_json(&summary, args.summary.as_deref())?;
            Ok(if summary.missed_deadline() {
                Verdict::LivenessMiss
            } else {
                Verdict::Clean
            })
        }
        Err(SimError::SafetyViolation {
            violation,
            time,
            seed,
            trace,
        }) => {
            if let Some(path) = &args.trace {
                write_trace(&trace, path)?;
            }
            let verdict = Verdict::SafetyViolation;
            emit_json(
                &ViolationReport {
                    seed,
                    time_us: time,
                    violation: violation.to_string(),
                    verdict: &verdict,
                },
                args.summary.as_deref(),
            )?;
            eprintln!("safety violation at t={time}us: {violation} (replay with --seed {seed})");
            Ok(verdict)
        }
        Err(SimError::Config(e)) => Err(e).with_context(|| format!("invalid scenario {}", args.scenario.display())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn verdicts_map_to_distinct_exit_codes() {
        let codes: Vec<u8> = [Verdict::Clean, Verdict::SafetyViolation, Verdict::LivenessMiss]
            .iter()
            .map(|v| v.exit_code())
            .collect();
        assert_eq!(codes, vec![0, 2, 3]);
    }

    #[test]
    fn seed_override_applies() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.json");
        fs::write(&path, Scenario::honest(1, 10, 3).to_json()).unwrap();
        assert_eq!(load_scenario(&path, None).unwrap().seed, 3);
        assert_eq!(load_scenario(&path, Some(9)).unwrap().seed, 9);
    }

    #[test]
    fn equivocation_run_writes_its_trace() {
        let dir = tempfile::tempdir().unwrap();
        let mut sc = Scenario::honest(1, 50, 4);
        sc.faults.push(leopard_core::simnet::FaultSpec {
            replica: 1,
            strategy: leopard_core::simnet::Strategy::EquivocatingLeader,
        });
        let path = dir.path().join("s.json");
        fs::write(&path, sc.to_json()).unwrap();
        let args = RunArgs {
            scenario: path,
            trace: Some(dir.path().join("t.ndjson")),
            summary: Some(dir.path().join("s.out.json")),
            ..RunArgs::default()
        };
        // Honest replicas keep their vote-once guard, so this run is clean.
        assert_eq!(cmd_run(&args).unwrap(), Verdict::Clean);
        assert!(fs::metadata(args.trace.as_ref().unwrap()).unwrap().len() > 0);
    }
}
