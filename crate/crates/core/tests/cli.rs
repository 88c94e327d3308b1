use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output};

use fedcrop::data::{synthetic_crop_dataset, Dataset};
use fedcrop::orchestration::{ExperimentReport, SERIES_COLUMNS};
use fedcrop::topology::{NodeAddress, TopologyFile, TopologyKind};

const SMALL: [&str; 8] = ["--epochs", "2", "--hidden", "6", "--dense", "8", "--stop-delta", "0"];

fn fedcrop() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_fedcrop"));
    cmd.env("FEDCROP_LOG", "warn");
    cmd
}

fn run(args: &[&str]) -> Output {
    fedcrop().args(args).output().unwrap()
}

fn succeed(args: &[&str]) {
    let out = run(args);
    assert!(out.status.success(), "fedcrop {args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn crop_csv(dir: &Path, per_class: usize) -> PathBuf {
    let path = dir.join("crop.csv");
    synthetic_crop_dataset(2, per_class).write_csv(&path).unwrap();
    path
}

fn free_port() -> u16 {
    std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

fn wait_ok(child: Child) {
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn usage_errors_exit_with_code_2() {
    assert_eq!(run(&["simulate", "--nodes", "3"]).status.code(), Some(2));
    assert_eq!(run(&["no-such-command"]).status.code(), Some(2));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn unreadable_dataset_exits_with_data_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["simulate", "--topology", "star", "--nodes", "2", "--dataset", s(&dir.path().join("missing.csv"))]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn synth_writes_the_full_table() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("synth.csv");
    succeed(&["--seed", "1", "synth", "--output", s(&path)]);
    let data = Dataset::load_csv(&path).unwrap();
    assert_eq!((data.len(), data.num_classes(), data.num_features()), (2200, 22, 7));
    assert_eq!(data.class_counts(), vec![100; 22]);
}

#[test]
fn split_writes_stratified_shards() {
    let dir = tempfile::tempdir().unwrap();
    let csv = crop_csv(dir.path(), 100);
    let whole = dir.path().join("whole");
    succeed(&["split", "--input", s(&csv), "--shards", "5", "--stratified", "--eval-fraction", "0", "--out-dir", s(&whole)]);
    for i in 1..=5 {
        let shard = Dataset::load_csv(whole.join(format!("shard_{i}.csv"))).unwrap();
        assert_eq!(shard.len(), 440);
        assert_eq!(shard.class_counts(), vec![20; 22]);
    }
    assert!(!whole.join("eval.csv").exists());

    let held = dir.path().join("held");
    succeed(&["split", "--input", s(&csv), "--shards", "5", "--out-dir", s(&held)]);
    let eval = Dataset::load_csv(held.join("eval.csv")).unwrap();
    assert_eq!(eval.len(), 440);
    let rows: usize = (1..=5).map(|i| Dataset::load_csv(held.join(format!("shard_{i}.csv"))).unwrap().len()).sum();
    assert_eq!(rows, 1760);

    let one = dir.path().join("one");
    succeed(&["split", "--input", s(&csv), "--shards", "1", "--eval-fraction", "0", "--out-dir", s(&one)]);
    assert_eq!(Dataset::load_csv(one.join("shard_1.csv")).unwrap().len(), 2200);
}

#[test]
fn simulate_writes_report_and_series() {
    let dir = tempfile::tempdir().unwrap();
    let csv = crop_csv(dir.path(), 20);
    let out = dir.path().join("ring");
    let mut args = vec!["--out", s(&out), "simulate", "--topology", "ring", "--nodes", "3", "--dataset", s(&csv), "--rounds", "2"];
    args.extend(SMALL);
    succeed(&args);
    let report = ExperimentReport::from_json(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report.topology, Some(TopologyKind::Ring));
    assert_eq!(report.executed_rounds(), 2);
    let series = std::fs::read_to_string(out.join("series.csv")).unwrap();
    let mut lines = series.lines();
    assert_eq!(lines.next().unwrap(), SERIES_COLUMNS.join(","));
    assert_eq!(lines.count(), 2);
}

#[test]
fn config_file_supplies_settings() {
    let dir = tempfile::tempdir().unwrap();
    let csv = crop_csv(dir.path(), 20);
    let config = dir.path().join("run.json");
    std::fs::write(&config, r#"{"rounds": 1, "stop_delta": 0, "learner": {"epochs": 1, "hidden_size": 4, "dense_sizes": [4]}}"#).unwrap();
    let out = dir.path().join("out");
    succeed(&["--config", s(&config), "--out", s(&out), "simulate", "--topology", "star", "--nodes", "2", "--dataset", s(&csv)]);
    let report = ExperimentReport::from_json(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report.executed_rounds(), 1);
    assert_eq!(report.config.learner.hidden_size, 4);
}

#[test]
fn cfl_server_and_clients_as_processes() {
    let dir = tempfile::tempdir().unwrap();
    let csv = crop_csv(dir.path(), 20);
    let parts = dir.path().join("parts");
    succeed(&["split", "--input", s(&csv), "--shards", "2", "--out-dir", s(&parts)]);
    let address = format!("127.0.0.1:{}", free_port());

    let server_out = dir.path().join("server");
    let mut server_args = vec!["--out", s(&server_out), "cfl-server", "--bind", &address, "--clients", "2", "--rounds", "2"];
    let eval = parts.join("eval.csv");
    server_args.extend(["--eval", s(&eval), "--timeout", "60"]);
    server_args.extend(SMALL);
    let server = fedcrop().args(&server_args).spawn().unwrap();

    let shards: Vec<PathBuf> = (1..=2).map(|i| parts.join(format!("shard_{i}.csv"))).collect();
    let client_outs: Vec<PathBuf> = (1..=2).map(|i| dir.path().join(format!("client{i}"))).collect();
    let clients: Vec<Child> = (0..2)
        .map(|i| {
            let id = (i + 1).to_string();
            let mut args = vec!["--out", s(&client_outs[i]), "cfl-client", "--server", &address, "--data", s(&shards[i]), "--id", &id];
            args.extend(SMALL);
            fedcrop().args(&args).spawn().unwrap()
        })
        .collect();
    wait_ok(server);
    clients.into_iter().for_each(wait_ok);

    let report = ExperimentReport::from_json(&std::fs::read_to_string(server_out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report.executed_rounds(), 2);
    assert!(report.rounds.iter().all(|r| r.participants == vec![1, 2]));
    for out in &client_outs {
        let model: fedcrop::ParameterSet = serde_json::from_str(&std::fs::read_to_string(out.join("model.json")).unwrap()).unwrap();
        assert!(model.is_finite());
        assert!(out.join("report.json").exists());
    }
}

#[test]
fn dfl_nodes_as_processes() {
    let dir = tempfile::tempdir().unwrap();
    let csv = crop_csv(dir.path(), 20);
    let parts = dir.path().join("parts");
    succeed(&["split", "--input", s(&csv), "--shards", "3", "--eval-fraction", "0", "--out-dir", s(&parts)]);
    let file = TopologyFile {
        kind: TopologyKind::Mesh,
        nodes: (0..3).map(|id| NodeAddress { id, address: "127.0.0.1".into(), port: free_port() }).collect(),
    };
    let topology = dir.path().join("topology.json");
    std::fs::write(&topology, serde_json::to_string(&file).unwrap()).unwrap();

    let outs: Vec<PathBuf> = (0..3).map(|i| dir.path().join(format!("node{i}"))).collect();
    let shards: Vec<PathBuf> = (1..=3).map(|i| parts.join(format!("shard_{i}.csv"))).collect();
    let nodes: Vec<Child> = (0..3)
        .map(|i| {
            let id = i.to_string();
            let mut args = vec!["--out", s(&outs[i]), "dfl-node", "--id", &id, "--topology", s(&topology), "--kind", "ring"];
            args.extend(["--data", s(&shards[i]), "--rounds", "2", "--timeout", "60"]);
            args.extend(SMALL);
            fedcrop().args(&args).spawn().unwrap()
        })
        .collect();
    nodes.into_iter().for_each(wait_ok);
    for out in &outs {
        let report = ExperimentReport::from_json(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
        assert_eq!(report.topology, Some(TopologyKind::Ring));
        assert_eq!(report.executed_rounds(), 2);
        assert_eq!(report.node_reports[0].neighbors.len(), 2);
        assert!(out.join("model.json").exists() && out.join("series.csv").exists());
    }
}

#[test]
fn local_only_baseline_records_loss_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let csv = crop_csv(dir.path(), 20);
    let out = dir.path().join("local");
    let mut args = vec!["--out", s(&out), "baseline", "--mode", "local-only", "--dataset", s(&csv)];
    args.extend(SMALL);
    succeed(&args);
    let report = ExperimentReport::from_json(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report.loss_trajectory.len(), 2);
    assert_eq!(report.scenario, "local-only");
}
