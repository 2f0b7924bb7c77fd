use std::path::Path;
use std::process::{Command, Output};

use webexpert::canonicalize::write_jsonl;
use webexpert::config::PipelineConfig;
use webexpert::fixtures::diversification_tuples;
use webexpert::remote::{ENV_EMBEDDER, ENV_PLANNER, ENV_SUMMARIZER};
use webexpert::simeval::{Benchmark, Variant};

fn webexpert(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_webexpert"))
        .args(args)
        .env_remove(ENV_EMBEDDER)
        .env_remove(ENV_SUMMARIZER)
        .env_remove(ENV_PLANNER)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, cfg: &PipelineConfig) -> String {
    let path = dir.join("config.json");
    std::fs::write(&path, cfg.canonical_json()).unwrap();
    path.to_str().unwrap().to_string()
}

fn error_kind(out: &Output) -> String {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().last().expect("stderr has an error line");
    let v: serde_json::Value = serde_json::from_str(line).expect("structured error");
    v["error"]["kind"].as_str().unwrap().to_string()
}

#[test]
fn eval_matches_library_report() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = PipelineConfig::default();
    cfg.sim.n_topics = 10;
    cfg.sim.questions_per_topic = 5;
    cfg.sim.n_pages = 140;
    let path = write_config(dir.path(), &cfg);
    let out = webexpert(&["--config", &path, "eval"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let expected = Benchmark::new(cfg).unwrap().run(Variant::Full).unwrap().to_json() + "\n";
    assert_eq!(String::from_utf8(out.stdout).unwrap(), expected);
}

#[test]
fn invalid_theta_is_a_structured_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = PipelineConfig::default();
    cfg.gate.theta = 1.1;
    let path = write_config(dir.path(), &cfg);
    let out = webexpert(&["--config", &path, "eval"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(out.stdout.is_empty());
    assert_eq!(error_kind(&out), "InvalidConfig");
}

#[test]
fn build_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("tuples.jsonl");
    let mut buf = Vec::new();
    write_jsonl(&mut buf, &diversification_tuples()).unwrap();
    std::fs::write(&data, buf).unwrap();

    let mut rules = Vec::new();
    for name in ["a", "b"] {
        let out_dir = dir.path().join(name);
        let out = webexpert(&["build", "--dataset", data.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        rules.push(std::fs::read(out_dir.join("rules-1.jsonl")).unwrap());
    }
    assert!(!rules[0].is_empty());
    assert_eq!(rules[0], rules[1]);

    let store = dir.path().join("a");
    let out = webexpert(&["plan", "--store", store.to_str().unwrap(), "--question", "What is the capital requirement for banks?"]);
    assert!(out.status.success());
    let plan: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(!plan["queries"].as_array().unwrap().is_empty());
}

#[test]
fn empty_dataset_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("empty.jsonl");
    std::fs::write(&data, "").unwrap();
    let out_dir = dir.path().join("out");
    let out = webexpert(&["build", "--dataset", data.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_kind(&out), "EmptyCorpus");
}

#[test]
fn unknown_subcommand_is_usage() {
    let out = webexpert(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_kind(&out), "Usage");
}
