use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use leopard_harness::localnet::{cmd_localnet, LocalnetArgs};
use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_leopard");

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name)
}

fn leopard(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn summary_of(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "summary is not JSON ({e}): {}{}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        )
    })
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn honest_run_exits_clean_with_every_request_acked() {
    let out = leopard(&["--scenario", path_str(&fixture("honest.json"))]);
    assert_eq!(out.status.code(), Some(0));
    let s = summary_of(&out);
    assert_eq!(s["ack_rate"], 1.0);
    assert_eq!(s["stats"]["completed"], true);
    assert_eq!(s["stats"]["view_changes"], 0);
}

#[test]
fn n5_is_rejected_naming_the_replica_rule() {
    let out = leopard(&["--scenario", path_str(&fixture("invalid_n5.json"))]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("params.n") && err.contains("3f+1"), "{err}");
}

#[test]
fn equivocating_leader_is_survived_with_a_view_change() {
    let out = leopard(&["--scenario", path_str(&fixture("equivocating_leader.json"))]);
    assert_eq!(out.status.code(), Some(0));
    let s = summary_of(&out);
    assert!(s["stats"]["view_changes"].as_u64().unwrap() >= 1, "{s}");
    assert_eq!(s["ack_rate"], 1.0);
}

#[test]
fn same_inputs_give_identical_csv_and_trace() {
    let dir = tempfile::tempdir().unwrap();
    let run = |tag: &str| {
        let csv = dir.path().join(format!("{tag}.csv"));
        let trace = dir.path().join(format!("{tag}.ndjson"));
        let out = leopard(&[
            "--scenario",
            path_str(&fixture("adversarial_n7.json")),
            "--metrics",
            path_str(&csv),
            "--trace",
            path_str(&trace),
            "--summary",
            path_str(&dir.path().join(format!("{tag}.json"))),
        ]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        (std::fs::read(csv).unwrap(), std::fs::read(trace).unwrap())
    };
    let (csv_a, trace_a) = run("a");
    let (csv_b, trace_b) = run("b");
    assert!(csv_a.starts_with(b"replica,category,direction,bytes,count"));
    assert_eq!(csv_a, csv_b);
    assert!(!trace_a.is_empty());
    assert_eq!(trace_a, trace_b);
}

#[test]
fn seed_override_changes_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let trace = |seed: &str| {
        let p = dir.path().join(format!("{seed}.ndjson"));
        let out = leopard(&[
            "--scenario",
            path_str(&fixture("honest.json")),
            "--seed",
            seed,
            "--trace",
            path_str(&p),
        ]);
        assert_eq!(out.status.code(), Some(0));
        std::fs::read(p).unwrap()
    };
    assert_ne!(trace("5"), trace("6"));
}

#[test]
fn sweep_writes_one_row_per_point_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    let base: Value = serde_json::from_str(&std::fs::read_to_string(fixture("honest.json")).unwrap()).unwrap();
    let spec = serde_json::json!({"schema": 1, "base": base, "axis": "tau", "values": [1, 4], "seeds": 2});
    let spec_path = dir.path().join("sweep.json");
    std::fs::write(&spec_path, spec.to_string()).unwrap();
    let csv = dir.path().join("rows.csv");
    let out = leopard(&["--sweep", path_str(&spec_path), "--metrics", path_str(&csv)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let mut reader = csv::Reader::from_path(&csv).unwrap();
    let headers = reader.headers().unwrap().clone();
    assert!(headers.iter().any(|h| h == "sf_analytic"));
    assert_eq!(reader.records().count(), 4);
}

#[test]
fn bad_sweep_axis_value_is_reported_with_its_position() {
    let dir = tempfile::tempdir().unwrap();
    let base: Value = serde_json::from_str(&std::fs::read_to_string(fixture("honest.json")).unwrap()).unwrap();
    let spec = serde_json::json!({"schema": 1, "base": base, "axis": "n", "values": [4, 8]});
    let spec_path = dir.path().join("sweep.json");
    std::fs::write(&spec_path, spec.to_string()).unwrap();
    let out = leopard(&["--sweep", path_str(&spec_path)]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("values[1]"), "{err}");
}

#[test]
fn missing_scenario_file_is_an_actionable_error() {
    let out = leopard(&["--scenario", "/nonexistent/scenario.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("cannot read scenario /nonexistent/scenario.json"));
    let out = leopard(&[]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn localnet_honest_run_acks_all_and_logs_agree() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("m.csv");
    let out = leopard(&[
        "--localnet",
        "--scenario",
        path_str(&fixture("localnet_honest.json")),
        "--metrics",
        path_str(&csv),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let s = summary_of(&out);
    assert_eq!(s["acked"], 1000);
    assert_eq!(s["logs_agree"], true);
    assert!(s["executed"].as_array().unwrap().iter().all(|e| e == 1000));
    let text = std::fs::read_to_string(csv).unwrap();
    assert!(text.lines().any(|l| l.starts_with("1,Datablock,received")), "{text}");

    // The simulator executes the same request set on the same scenario.
    let sim = leopard(&["--scenario", path_str(&fixture("localnet_honest.json"))]);
    assert_eq!(sim.status.code(), Some(0));
    assert_eq!(summary_of(&sim)["stats"]["min_honest_executed"], 1000);
}

#[test]
fn localnet_survives_a_crashed_leader() {
    let out = leopard(&[
        "--localnet",
        "--scale-time",
        "0.5",
        "--scenario",
        path_str(&fixture("localnet_crash_leader.json")),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let s = summary_of(&out);
    assert_eq!(s["crashed"], serde_json::json!([1]));
    assert!(s["final_view"].as_u64().unwrap() >= 2, "{s}");
    assert_eq!(s["ack_rate"], 1.0);
    assert_eq!(s["logs_agree"], true);
}

#[test]
fn localnet_refuses_byzantine_strategies() {
    let out = leopard(&[
        "--localnet",
        "--scenario",
        path_str(&fixture("equivocating_leader.json")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("simulator-only"));
}

#[test]
fn localnet_startup_failures_are_clean_errors() {
    let args = |exe: &str| LocalnetArgs {
        exe: exe.into(),
        scenario: fixture("localnet_honest.json"),
        seed: None,
        scale_time: 1.0,
        metrics: None,
        summary: None,
    };
    let err = cmd_localnet(&args("/nonexistent/leopard")).unwrap_err();
    assert!(format!("{err:#}").contains("spawning replica 0"), "{err:#}");
    // A child that dies before binding aborts setup; the rest are reaped.
    let err = cmd_localnet(&args("/bin/true")).unwrap_err();
    assert!(format!("{err:#}").contains("exited during setup"), "{err:#}");
}
