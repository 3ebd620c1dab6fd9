//! Drives the built binary end to end in scratch directories.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sinr-mst")).args(args).output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_spec(dir: &Path, seeds: &[u64]) -> std::path::PathBuf {
    let path = dir.join("spec.json");
    let json = serde_json::json!({"generator": "uniform-square", "n": 20, "seeds": seeds});
    fs::write(&path, json.to_string()).unwrap();
    path
}

/// Generates one instance and runs it, leaving the artifacts in `dir/run`.
fn prepare(dir: &Path) -> std::path::PathBuf {
    let spec = write_spec(dir, &[4]);
    let gen = bin(&["gen", "--config", s(&spec), "--out", s(dir)]);
    assert!(gen.status.success(), "{}", String::from_utf8_lossy(&gen.stderr));
    let inst = dir.join("instance-4.json");
    let run = bin(&["run", "--config", s(&inst), "--out", s(&dir.join("run"))]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    inst
}

#[test]
fn gen_writes_one_file_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), &[1, 2, 3]);
    let out = bin(&["gen", "--config", s(&spec), "--out", s(dir.path())]);
    assert!(out.status.success());
    for seed in 1..=3 {
        let text = fs::read_to_string(dir.path().join(format!("instance-{seed}.json"))).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["nodes"].as_array().unwrap().len(), 20);
    }
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 3);
}

#[test]
fn run_on_instance_writes_artifacts_and_row() {
    let dir = tempfile::tempdir().unwrap();
    prepare(dir.path());
    let run = dir.path().join("run");
    for name in ["tree.json", "audit.json", "schedule.json", "trace.ndjson"] {
        assert!(run.join(name).is_file(), "{name} missing");
    }
    let audit: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("audit.json")).unwrap()).unwrap();
    assert_eq!(audit["sinr_violations"], 0);
}

#[test]
fn run_on_spec_prints_csv_and_is_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), &[1, 2]);
    let a = bin(&["run", "--config", s(&spec)]);
    let b = bin(&["run", "--config", s(&spec)]);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    let csv = String::from_utf8(a.stdout.clone()).unwrap();
    assert!(csv.starts_with("seed,n,"));
    assert_eq!(csv.lines().count(), 3);
    assert_eq!(a.stdout, b.stdout);

    let one = bin(&["run", "--config", s(&spec), "--seed", "2"]);
    let row = String::from_utf8(one.stdout).unwrap();
    assert_eq!(row.lines().nth(1), csv.lines().nth(2));
}

#[test]
fn audit_accepts_genuine_trace_and_rejects_tampered_one() {
    let dir = tempfile::tempdir().unwrap();
    let inst = prepare(dir.path());
    let run = dir.path().join("run");
    let trace = run.join("trace.ndjson");
    let tree = run.join("tree.json");
    let ok = bin(&["audit", "--config", s(&inst), "--trace", s(&trace), "--tree", s(&tree)]);
    assert!(ok.status.success(), "{}", String::from_utf8_lossy(&ok.stdout));

    // Credit every delivery to the wrong sender.
    let text = fs::read_to_string(&trace).unwrap();
    let mut tampered = String::new();
    let mut changed = false;
    for line in text.lines() {
        let mut v: serde_json::Value = serde_json::from_str(line).unwrap();
        if let Some(ds) = v.get_mut("deliveries").and_then(|d| d.as_array_mut()) {
            for d in ds {
                d["sender"] = serde_json::json!((d["sender"].as_u64().unwrap() + 1) % 20);
                changed = true;
            }
        }
        tampered.push_str(&v.to_string());
        tampered.push('\n');
    }
    assert!(changed);
    let bad = dir.path().join("bad.ndjson");
    fs::write(&bad, tampered).unwrap();
    let out = bin(&["audit", "--config", s(&inst), "--trace", s(&bad)]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn sched_writes_schedule_and_audit() {
    let dir = tempfile::tempdir().unwrap();
    let inst = prepare(dir.path());
    let tree = dir.path().join("run/tree.json");
    let out_dir = dir.path().join("sched");
    let out = bin(&["sched", "--config", s(&inst), "--tree", s(&tree), "--out", s(&out_dir)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8(out.stdout).unwrap().starts_with("links 19 "));
    assert!(out_dir.join("schedule.json").is_file());
    assert!(out_dir.join("schedule-audit.json").is_file());
}

#[test]
fn missing_input_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin(&["run", "--config", s(&dir.path().join("nope.json"))]);
    assert_eq!(out.status.code(), Some(2));
    let gen = bin(&["gen", "--config", s(&write_spec(dir.path(), &[1]))]);
    assert_eq!(gen.status.code(), Some(2));
    assert_eq!(bin(&["frobnicate"]).status.code(), Some(2));
}
