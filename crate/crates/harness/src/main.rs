use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::Parser;
use leopard_core::simnet::RunOptions;
use leopard_harness::acceptance::run_all;
use leopard_harness::localnet::{cmd_localnet, replica_main, LocalnetArgs};
use leopard_harness::run::{cmd_run, RunArgs};
use leopard_harness::sweep::cmd_sweep;

/// Run Leopard BFT scenarios in the simulator or over loopback sockets.
#[derive(Parser, Debug)]
#[command(name = "leopard", version)]
struct Cli {
    /// Scenario JSON to run.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// NDJSON event trace destination.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Metrics CSV destination; for --sweep, the row CSV (stdout otherwise).
    #[arg(long)]
    metrics: Option<PathBuf>,
    /// Summary JSON destination (stdout otherwise).
    #[arg(long)]
    summary: Option<PathBuf>,
    /// Sweep JSON to run instead of a single scenario.
    #[arg(long, conflicts_with_all = ["scenario", "check"])]
    sweep: Option<PathBuf>,
    /// Run the scenario as real processes on localhost.
    #[arg(long, requires = "scenario")]
    localnet: bool,
    /// Wall seconds per protocol second under --localnet.
    #[arg(long, default_value_t = 1.0)]
    scale_time: f64,
    /// Run the acceptance suite.
    #[arg(long)]
    check: bool,
    #[arg(long, hide = true, requires = "scenario")]
    localnet_replica: Option<u32>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(cli: &Cli) -> Result<u8> {
    if let Some(id) = cli.localnet_replica {
        let scenario = cli.scenario.as_deref().expect("required by clap");
        replica_main(id, scenario, cli.seed, cli.scale_time)?;
        return Ok(0);
    }
    if cli.check {
        let results = run_all(&RunOptions::default());
        for r in &results {
            println!("{r}");
        }
        let failed = results.iter().filter(|r| !r.passed).count();
        println!("acceptance: {} passed, {failed} failed", results.len() - failed);
        return Ok(u8::from(failed > 0));
    }
    if let Some(sweep) = &cli.sweep {
        cmd_sweep(sweep, cli.metrics.as_deref())?;
        return Ok(0);
    }
    let Some(scenario) = cli.scenario.clone() else {
        bail!("nothing to do: pass --scenario, --sweep or --check (see --help)");
    };
    if cli.localnet {
        if cli.trace.is_some() {
            bail!("--trace is simulator-only");
        }
        let args = LocalnetArgs {
            exe: std::env::current_exe()?,
            scenario,
            seed: cli.seed,
            scale_time: cli.scale_time,
            metrics: cli.metrics.clone(),
            summary: cli.summary.clone(),
        };
        let (verdict, _) = cmd_localnet(&args)?;
        return Ok(verdict.exit_code());
    }
    let args = RunArgs {
        scenario,
        seed: cli.seed,
        trace: cli.trace.clone(),
        metrics: cli.metrics.clone(),
        summary: cli.summary.clone(),
    };
    Ok(cmd_run(&args)?.exit_code())
}
