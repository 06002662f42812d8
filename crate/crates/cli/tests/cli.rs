use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn gnnbench(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gnnbench"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn tiny_config(dir: &Path, defenses: &str) -> String {
    let text = format!(
        r#"architectures = ["gcn-2l"]
defenses = [{defenses}]
iterations = 1
nodes_per_iteration = 3
runs_per_node = 2
epochs = 30
learning_rate = 0.01
seed = 11

[dataset]
name = "tiny"
[dataset.synthetic]
num_nodes = 40
num_classes = 2
feature_dim = 8
homophily = 0.9
seed = 2
"#
    );
    let path = dir.join("tiny.toml");
    fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn run_then_metrics_only_reproduces_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), r#""none", "jaccard""#);
    let out = dir.path().join("out");
    let out_s = out.to_string_lossy().into_owned();
    let run = gnnbench(&["run", "--config", &cfg, "--out", &out_s]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let results = fs::read_to_string(out.join("results.jsonl")).unwrap();
    assert_eq!(results.lines().count(), 2);
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert!(summary.starts_with("metric,architecture,JD,Unprotected"), "{summary}");
    assert!(summary.contains(" ± "));
    assert!(out.join("charts/stability.svg").exists());
    assert!(out.join("checkpoints/it00_gcn-2l_none_gnnexplainer.json").exists());

    let again = gnnbench(&["metrics-only", "--config", &cfg, "--out", &out_s]);
    assert!(again.status.success(), "{}", String::from_utf8_lossy(&again.stderr));
    assert_eq!(fs::read_to_string(out.join("metrics_only.jsonl")).unwrap(), results);

    let resumed = gnnbench(&["run", "--config", &cfg, "--out", &out_s, "--resume"]);
    assert!(resumed.status.success());
    assert_eq!(fs::read_to_string(out.join("results.jsonl")).unwrap(), results);
}

#[test]
fn seed_flag_overrides_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), r#""none""#);
    let read_seed = |out: &Path| -> u64 {
        let line = fs::read_to_string(out.join("results.jsonl")).unwrap();
        let v: serde_json::Value = serde_json::from_str(line.lines().next().unwrap()).unwrap();
        v["protocol"]["master_seed"].as_u64().unwrap()
    };
    let out = dir.path().join("seeded");
    let status = gnnbench(&["run", "--config", &cfg, "--out", out.to_str().unwrap(), "--seed", "99"]);
    assert!(status.status.success());
    assert_eq!(read_seed(&out), 99);
}

#[test]
fn validate_config_names_an_unknown_defense() {
    let dir = tempfile::tempdir().unwrap();
    let ok = tiny_config(dir.path(), r#""none""#);
    assert!(gnnbench(&["validate-config", "--config", &ok]).status.success());
    let bad = tiny_config(dir.path(), r#""none", "moat""#);
    let out = gnnbench(&["validate-config", "--config", &bad]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("moat"));
}

#[test]
fn unknown_flags_are_usage_errors() {
    let out = gnnbench(&["run", "--config", "x.toml", "--frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!gnnbench(&["dance"]).status.success());
}

#[test]
fn convert_then_explain_one() {
    let dir = tempfile::tempdir().unwrap();
    let content = dir.path().join("toy.content");
    let cites = dir.path().join("toy.cites");
    fs::write(&content, "a\t1\t0\t1\tx\nb\t0\t1\t1\ty\nc\t1\t1\t0\tx\nd\t0\t0\t1\ty\n").unwrap();
    fs::write(&cites, "a\tb\nb\tc\nc\td\nd\ta\nz\ta\n").unwrap();
    let bundle = dir.path().join("toy");
    let conv = gnnbench(&[
        "convert-dataset",
        "--format",
        "linqs",
        "--content",
        content.to_str().unwrap(),
        "--cites",
        cites.to_str().unwrap(),
        "--out",
        bundle.to_str().unwrap(),
    ]);
    assert!(conv.status.success(), "{}", String::from_utf8_lossy(&conv.stderr));
    assert!(String::from_utf8_lossy(&conv.stdout).contains("4 nodes, 4 edges"));

    let cfg = format!(
        "architectures = [\"gcn-2l\"]\ndefenses = [\"none\"]\niterations = 1\nnodes_per_iteration = 1\nruns_per_node = 2\nepochs = 5\n[dataset]\npath = {:?}\n",
        bundle.to_str().unwrap()
    );
    let cfg_path = dir.path().join("toy.toml");
    fs::write(&cfg_path, cfg).unwrap();
    let out = dir.path().join("out");
    let run = gnnbench(&["run", "--config", cfg_path.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));

    let ckpt = out.join("checkpoints/it00_gcn-2l_none_gnnexplainer.json");
    let one = gnnbench(&[
        "explain-one",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--dataset",
        bundle.to_str().unwrap(),
        "--node",
        "2",
        "--seed",
        "5",
    ]);
    assert!(one.status.success(), "{}", String::from_utf8_lossy(&one.stderr));
    let mask: serde_json::Value = serde_json::from_slice(&one.stdout).unwrap();
    assert_eq!(mask["target"], 2);
    assert_eq!(mask["explainer"], "gnnexplainer");
    assert_eq!(mask["cols"], 3);

    let missing = gnnbench(&["explain-one", "--checkpoint", ckpt.to_str().unwrap(), "--dataset", "/nope", "--node", "0"]);
    assert!(!missing.status.success());
}
