//! End-to-end checks of the command-line surface through the same entry
//! point the binary uses.

use introsect::directory::serialize_consensus;
use introsect::harness::{cli, synthesize_snapshot};

fn run(args: &[&str]) -> i32 {
    let mut argv = vec!["introsect".to_string()];
    argv.extend(args.iter().map(|s| s.to_string()));
    cli::run(argv)
}

#[test]
fn simulate_writes_reports_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("config.json");
    std::fs::write(
        &config_path,
        r#"{"network":{"relay_count":40,"circuit_population":200},"scenario":{}}"#,
    )
    .unwrap();
    let out = dir.path().join("report");
    let status = run(&[
        "simulate",
        "--config",
        config_path.to_str().unwrap(),
        "--seed",
        "1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(status, 0);
    for file in ["trials_per_hop.csv", "trace.csv", "summary.json"] {
        assert!(out.join(file).exists(), "{file} missing");
    }
    let table = std::fs::read_to_string(out.join("trials_per_hop.csv")).unwrap();
    assert!(table.starts_with("node,stage,trials,consensus_weight,status\n"));
}

#[test]
fn concentration_reports_masses() {
    let dir = tempfile::tempdir().unwrap();
    let snapshot_path = dir.path().join("snapshot.json");
    std::fs::write(&snapshot_path, serialize_consensus(&synthesize_snapshot(80, 3))).unwrap();
    let out = dir.path().join("conc");
    let status = run(&[
        "concentration",
        "--snapshot",
        snapshot_path.to_str().unwrap(),
        "--set",
        "fourteen_eyes",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(status, 0);
    let csv = std::fs::read_to_string(out.join("concentration.csv")).unwrap();
    assert!(csv.starts_with("country,relay_count,guard_mass,middle_mass,in_fourteen_eyes\n"));
}

#[test]
fn concentration_rejects_unknown_set() {
    let dir = tempfile::tempdir().unwrap();
    let snapshot_path = dir.path().join("snapshot.json");
    std::fs::write(&snapshot_path, serialize_consensus(&synthesize_snapshot(20, 3))).unwrap();
    let status = run(&[
        "concentration",
        "--snapshot",
        snapshot_path.to_str().unwrap(),
        "--set",
        "three_eyes",
    ]);
    assert_eq!(status, 1);
}

#[test]
fn validate_accepts_good_trace_and_rejects_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.csv");
    std::fs::write(
        &good,
        "stage,trial,anonymity_set_size,intersection_size,status,virtual_time\n\
         4,1,5,5,running,1.0\n\
         4,2,6,3,running,32.0\n\
         4,3,4,1,converged,63.0\n",
    )
    .unwrap();
    assert_eq!(run(&["validate", "--trace", good.to_str().unwrap()]), 0);

    let bad = dir.path().join("bad.csv");
    std::fs::write(
        &bad,
        "stage,trial,anonymity_set_size,intersection_size,status,virtual_time\n\
         4,1,5,3,running,1.0\n\
         4,2,6,4,running,32.0\n",
    )
    .unwrap();
    assert_eq!(run(&["validate", "--trace", bad.to_str().unwrap()]), 1);
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    assert_eq!(run(&["frobnicate"]), 2);
    assert_eq!(run(&["simulate", "--bogus-flag"]), 2);
}

#[test]
fn sweep_runs_and_writes_aggregates() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("config.json");
    std::fs::write(
        &config_path,
        r#"{"network":{"relay_count":40,"circuit_population":150}}"#,
    )
    .unwrap();
    let out = dir.path().join("sweep");
    let status = run(&[
        "sweep",
        "--config",
        config_path.to_str().unwrap(),
        "--axis",
        "time_of_day",
        "--values",
        "2,10,18",
        "--seeds",
        "1,2",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(status, 0);
    let rows = std::fs::read_to_string(out.join("sweep_rows.csv")).unwrap();
    // Three values x two seeds x four stages.
    assert_eq!(rows.lines().count(), 1 + 3 * 2 * 4);
    assert!(out.join("sweep_groups.csv").exists());
}
