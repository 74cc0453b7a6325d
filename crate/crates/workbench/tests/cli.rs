// SPDX-License-Identifier: MIT OR Apache-2.0

use std::path::Path;
use std::process::{Command, Output};

const CONFIG: &str = r#"
seed = 5
[prompts]
entities = 30
[evaluation]
entities = 3
"#;

fn steerprobe(dir: &Path, args: &[&str]) -> Output {
    let config = dir.join("experiment.toml");
    std::fs::write(&config, CONFIG).unwrap();
    Command::new(env!("CARGO_BIN_EXE_steerprobe"))
        .arg("--config")
        .arg(&config)
        .arg("--out")
        .arg(dir.join("out"))
        .args(args)
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn extract_then_probe_writes_the_store_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let extract = steerprobe(dir.path(), &["extract"]);
    assert_eq!(extract.status.code(), Some(0), "{}", stderr(&extract));
    let probe = steerprobe(dir.path(), &["probe"]);
    assert_eq!(probe.status.code(), Some(0), "{}", stderr(&probe));
    let out = dir.path().join("out");
    assert!(out.join("dump/manifest.json").exists());
    assert!(out.join("probes.json").exists());
    let layers = std::fs::read_to_string(out.join("report/vinfo_layers.csv")).unwrap();
    assert_eq!(layers.lines().count(), 1 + 8);
}

#[test]
fn eval_with_the_lexicon_judge_reports_every_direction() {
    let dir = tempfile::tempdir().unwrap();
    for cmd in ["extract", "probe"] {
        assert_eq!(steerprobe(dir.path(), &[cmd]).status.code(), Some(0));
    }
    let eval = steerprobe(dir.path(), &["--judge", "lexicon", "eval"]);
    assert_eq!(eval.status.code(), Some(0), "{}", stderr(&eval));
    let csv = std::fs::read_to_string(dir.path().join("out/report/directions.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 7);
    assert!(rows[6].to_lowercase().starts_with("average"), "{}", rows[6]);
}

#[test]
fn steer_appends_a_trace() {
    let dir = tempfile::tempdir().unwrap();
    for cmd in ["extract", "probe"] {
        assert_eq!(steerprobe(dir.path(), &[cmd]).status.code(), Some(0));
    }
    let steer = steerprobe(dir.path(), &["steer", "--source", "E", "--target", "N"]);
    assert_eq!(steer.status.code(), Some(0), "{}", stderr(&steer));
    let traces = std::fs::read_to_string(dir.path().join("out/traces.jsonl")).unwrap();
    assert_eq!(traces.lines().count(), 1);
    let trace: serde_json::Value = serde_json::from_str(traces.lines().next().unwrap()).unwrap();
    assert!(trace["edits"].as_array().is_some_and(|e| !e.is_empty()));
}

#[test]
fn out_of_range_confidence_is_a_usage_failure() {
    let dir = tempfile::tempdir().unwrap();
    let o = steerprobe(dir.path(), &["--p-hat", "1.5", "steer", "--source", "E", "--target", "N"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("1.5"), "{}", stderr(&o));
}

#[test]
fn unknown_flag_exits_with_usage_code() {
    let dir = tempfile::tempdir().unwrap();
    let o = steerprobe(dir.path(), &["probe", "--no-such-flag"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn conformance_passes_on_the_synthetic_runtime() {
    let dir = tempfile::tempdir().unwrap();
    let o = steerprobe(dir.path(), &["conformance"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
}
