//! End-to-end runs of the command layer and the binary on small fleets.

use std::fs;
use std::path::Path;
use std::process::Command;

use nodewatch::commands::{self, model_path};
use nodewatch::RunConfig;
use nodewatch_core::autoencoder::TrainConfig;
use nodewatch_core::synthgen::FleetMix;

fn small(out: &Path) -> RunConfig {
    RunConfig {
        seed: 5,
        nodes: 2,
        horizon: 2_000,
        train: TrainConfig {
            epochs: 3,
            ..Default::default()
        },
        workers: 1,
        out: out.to_path_buf(),
        ..Default::default()
    }
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = v.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn synth_train_eval_writes_consistent_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path());
    let manifest = commands::synth(&cfg).unwrap();
    assert_eq!(manifest.nodes.len(), 2);
    let trained = commands::train(&cfg).unwrap();
    assert_eq!(trained.len(), 2);
    for t in &trained {
        assert!(model_path(&cfg, &t.node_id).exists());
        assert!(t.train_mae > 0.0);
    }
    let report = commands::eval(&cfg).unwrap();

    let avg = &report.averages;
    assert_eq!(avg.node_count, 2);
    let f_n = mean(report.nodes.iter().map(|n| n.f_normal.unwrap()));
    assert!((avg.f_normal.unwrap() - f_n).abs() < 1e-12);
    let f_a = mean(report.nodes.iter().map(|n| n.f_anomaly.unwrap()));
    assert!((avg.f_anomaly.unwrap() - f_a).abs() < 1e-12);
    let total: usize = report.nodes.iter().map(|n| n.confusion.total()).sum();
    assert_eq!(avg.confusion.total(), total);
    for n in &report.nodes {
        assert!((90..=99).contains(&n.threshold.percentile_n));
        assert_eq!(n.normalized.train.unwrap().mae, 1.0);
    }

    let report_dir = cfg.report_dir();
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(report_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(json["metadata"]["config_hash"], cfg.hash());
    assert_eq!(json["metadata"]["protocol"], "held-out");
    let table1 = fs::read_to_string(report_dir.join("table1.csv")).unwrap();
    assert_eq!(table1.lines().count(), 1 + 2 + 1, "{table1}");
    assert!(table1.lines().last().unwrap().starts_with("average"));
    for id in ["node01", "node02"] {
        assert!(report_dir.join("trend").join(format!("{id}.csv")).exists());
        let hist =
            fs::read_to_string(report_dir.join("histogram").join(format!("{id}.csv"))).unwrap();
        assert_eq!(hist.lines().count(), 1 + cfg.histogram_bins);
    }
}

#[test]
fn all_normal_fleet_falls_back_with_warnings() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        nodes: 1,
        mix: FleetMix::all_normal(),
        ..small(dir.path())
    };
    commands::synth(&cfg).unwrap();
    commands::train(&cfg).unwrap();
    let report = commands::eval(&cfg).unwrap();
    let node = &report.nodes[0];
    assert_eq!(node.threshold.percentile_n, 99);
    assert!(node.search.is_none());
    assert!(!node.warnings.is_empty());
    assert_eq!(node.confusion.tp + node.confusion.fn_, 0);
}

#[test]
fn eval_without_models_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path());
    commands::synth(&cfg).unwrap();
    let err = commands::eval(&cfg).unwrap_err();
    assert_eq!(commands::exit_code(&err), 3);
}

fn nodewatch(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_nodewatch"))
        .args(args)
        .output()
        .unwrap()
}

#[test]
fn binary_run_and_score() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let run = nodewatch(&[
        "run",
        "--seed",
        "3",
        "--nodes",
        "1",
        "--horizon",
        "1500",
        "--epochs",
        "2",
        "--workers",
        "1",
        "--out",
        out,
    ]);
    assert!(
        run.status.success(),
        "{}",
        String::from_utf8_lossy(&run.stderr)
    );
    let saved: RunConfig =
        serde_json::from_str(&fs::read_to_string(dir.path().join("run_config.json")).unwrap())
            .unwrap();
    assert_eq!(
        (saved.seed, saved.nodes, saved.horizon, saved.train.epochs),
        (3, 1, 1500, 2)
    );

    let model = dir.path().join("models/node01.model.json");
    let input = dir.path().join("data/node01.csv");
    let scored = nodewatch(&[
        "score",
        "--model",
        model.to_str().unwrap(),
        "--input",
        input.to_str().unwrap(),
        "--threshold",
        "0.05",
    ]);
    assert!(
        scored.status.success(),
        "{}",
        String::from_utf8_lossy(&scored.stderr)
    );
    let text = String::from_utf8(scored.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "timestamp,node_id,idle,label,error,decision"
    );
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 1500);
    for row in rows {
        let cols: Vec<&str> = row.split(',').collect();
        let error: f64 = cols[4].parse().unwrap();
        let expected = if error > 0.05 { "anomaly" } else { "normal" };
        assert_eq!(cols[5], expected);
    }
}

#[test]
fn bad_configuration_exits_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    fs::write(&path, r#"{"train": {"epochs": 0}}"#).unwrap();
    let out = nodewatch(&[
        "synth",
        "--config",
        path.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(
        out.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    fs::write(&path, r#"{"sed": 1}"#).unwrap();
    let out = nodewatch(&["synth", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}
