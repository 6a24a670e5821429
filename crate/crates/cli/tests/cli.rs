use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tweakscale_core::synth::{random_dataset, social_schema};
use tweakscale_core::{LinearJoinMatrix, TableSizes, TargetSet};

fn sizes(scale: u64) -> TableSizes {
    [("U", 20), ("P", 40), ("R", 100), ("L", 60), ("S", 40), ("A", 50)].iter().map(|(k, v)| (k.to_string(), v * scale)).collect()
}

/// schema.json, input/ and sizes.json (twice the input) under `dir`.
fn fixture(dir: &Path) {
    let ds = random_dataset(&social_schema(), &sizes(1), 1, 1.0);
    fs::write(dir.join("schema.json"), ds.schema().to_json()).unwrap();
    ds.write(&dir.join("input")).unwrap();
    fs::write(dir.join("sizes.json"), serde_json::to_string(&sizes(2)).unwrap()).unwrap();
}

fn tweakscale(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tweakscale")).current_dir(dir).args(args).output().unwrap()
}

fn stdout_json(o: &Output) -> Value {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_slice(&o.stdout).unwrap()
}

fn stderr_json(o: &Output) -> Value {
    serde_json::from_slice(o.stderr.trim_ascii()).unwrap_or_else(|_| panic!("stderr: {}", String::from_utf8_lossy(&o.stderr)))
}

const BASE: [&str; 6] = ["--schema", "schema.json", "--data", "input", "--sizes", "sizes.json"];

#[test]
fn scale_writes_target_sizes() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path());
    let v = stdout_json(&tweakscale(dir.path(), &[&["scale"], &BASE[..], &["--out", "scaled", "--seed", "3"]].concat()));
    assert_eq!(v["sizes"]["R"], 200);
    let lines = fs::read_to_string(dir.path().join("scaled/R.csv")).unwrap().lines().count();
    assert_eq!(lines, 201);
}

#[test]
fn run_then_measure_and_overlap() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path());
    let args = [&["run"], &BASE[..], &["--order", "L-C-P", "--iterations", "2", "--out", "out", "--journal", "j.ndjson"]].concat();
    let v = stdout_json(&tweakscale(dir.path(), &args));
    assert_eq!(v["order"], "L-C-P");
    assert_eq!(v["pairwiseMean"], 0.0);
    assert_eq!(fs::read(dir.path().join("j.ndjson")).unwrap(), fs::read(dir.path().join("out/journal.ndjson")).unwrap());

    let m = stdout_json(&tweakscale(dir.path(), &["measure", "--schema", "schema.json", "--data", "out/data", "--targets", "out/targets.json"]));
    assert_eq!(m["pairwiseMean"], v["pairwiseMean"]);
    assert_eq!(m["linearMean"], v["linearMean"]);

    let g = stdout_json(&tweakscale(dir.path(), &["analyze-overlap", "--journal", "j.ndjson"]));
    let nodes = g["nodes"].as_array().unwrap();
    assert!(!nodes.is_empty());
    assert!(!g["independentSet"].as_array().unwrap().is_empty());
}

#[test]
fn bad_order_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path());
    let o = tweakscale(dir.path(), &[&["run"], &BASE[..], &["--order", "L-L"]].concat());
    assert_eq!(o.status.code(), Some(2));
    let e = stderr_json(&o);
    assert_eq!(e["exitCode"], 2);
    assert_eq!(e["error"], "config");

    let o = tweakscale(dir.path(), &["run", "--schema", "missing.json"]);
    assert_eq!(o.status.code(), Some(2));
    let o = tweakscale(dir.path(), &["tweak", "--schema", "schema.json", "--data", "input"]);
    assert_eq!(o.status.code(), Some(2));
}

fn broken_targets(dir: &Path) {
    // more roots than the referenced table has tuples
    let h = LinearJoinMatrix::from_rows(&["U", "P", "R"], vec![vec![0], vec![500, 0], vec![1, 1, 0]]);
    let set = TargetSet { linear: vec![h], ..Default::default() };
    fs::write(dir.join("bad.json"), set.to_json()).unwrap();
}

#[test]
fn infeasible_targets_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path());
    broken_targets(dir.path());
    let o = tweakscale(dir.path(), &["validate-target", "--schema", "schema.json", "--sizes", "sizes.json", "--targets", "bad.json"]);
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(stderr_json(&o)["error"], "infeasibleTarget");

    let o = tweakscale(dir.path(), &["validate-target", "--sizes", "sizes.json", "--targets", "bad.json", "--repair", "--out", "fixed"]);
    let v = stdout_json(&o);
    assert!(!v["violations"].as_array().unwrap().is_empty());
    let o = tweakscale(dir.path(), &["validate-target", "--sizes", "sizes.json", "--targets", "fixed/targets.json"]);
    assert!(o.status.success());

    let o = tweakscale(dir.path(), &["tweak", "--schema", "schema.json", "--data", "input", "--targets", "bad.json", "--order", "L", "--no-repair"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn tweak_starts_from_the_given_data() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path());
    broken_targets(dir.path());
    let args = ["tweak", "--schema", "schema.json", "--data", "input", "--targets", "bad.json", "--order", "L", "--out", "out"];
    let v = stdout_json(&tweakscale(dir.path(), &args));
    assert_eq!(v["linearMean"], 0.0);
    for t in ["U", "P", "R", "A"] {
        let f = format!("{t}.csv");
        assert_eq!(fs::read(dir.path().join("input").join(&f)).unwrap(), fs::read(dir.path().join("out/scaled").join(&f)).unwrap(), "{t}");
    }
    let targets = TargetSet::load(&dir.path().join("out/targets.json")).unwrap();
    assert_eq!(targets.linear.len(), 1);
    assert_eq!(targets.linear[0].chain, vec!["U", "P", "R"]);
}

#[test]
fn exhausted_coordinator_exits_four() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path());
    fs::write(dir.path().join("cfg.toml"), "order = \"C-L-P\"\nmaxRelaxationRounds = 0\neThreshold = 0.0\n").unwrap();
    let o = tweakscale(dir.path(), &[&["run", "--config", "cfg.toml"], &BASE[..]].concat());
    assert_eq!(o.status.code(), Some(4), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stderr_json(&o)["error"], "coordinatorExhausted");
}

#[test]
fn config_file_with_flag_overrides() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path());
    let cfg = r#"{"schemaPath": "schema.json", "dataDir": "input", "sizeTargetPath": "sizes.json", "order": "P", "outputDir": "from-config"}"#;
    fs::write(dir.path().join("cfg.json"), cfg).unwrap();
    let v = stdout_json(&tweakscale(dir.path(), &["run", "--config", "cfg.json", "--order", "L", "--out", "flag-out"]));
    assert_eq!(v["order"], "L");
    assert!(dir.path().join("flag-out/report.json").is_file());
    assert!(!dir.path().join("from-config").exists());

    fs::write(dir.path().join("bad.toml"), "iterations = \"many\"").unwrap();
    assert_eq!(tweakscale(dir.path(), &["run", "--config", "bad.toml"]).status.code(), Some(2));
}

#[test]
fn sweep_runs_every_permutation() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path());
    let v = stdout_json(&tweakscale(dir.path(), &[&["sweep"], &BASE[..], &["--order", "L-P", "--out", "sweep"]].concat()));
    let runs = v["runs"].as_array().unwrap();
    let orders: Vec<&str> = runs.iter().map(|r| r["order"].as_str().unwrap()).collect();
    assert_eq!(orders, vec!["L-P", "P-L"]);
    assert!(runs.iter().all(|r| r["exitCode"] == 0));
    assert!(dir.path().join("sweep/P-L/report.json").is_file());
    assert!(dir.path().join("sweep/sweep.json").is_file());
}
