//! File formats and batch output: round-trips, byte-stable reruns and
//! per-seed isolation.

use std::fs;
use std::io::Cursor;

use sinr_mst::experiment::{generate, run_experiment, run_instance, ExperimentSpec};
use sinr_mst::{audit_trace, InstanceFile, RunConfig, Trace, TreeResult};

fn small_spec(seeds: Vec<u64>) -> ExperimentSpec {
    let mut spec = ExperimentSpec::uniform(24, seeds);
    spec.write_traces = true;
    spec
}

#[test]
fn instance_file_round_trips() {
    let file = generate(&small_spec(vec![3]), 3).unwrap();
    let back = InstanceFile::from_json(&file.to_json()).unwrap();
    assert_eq!(back, file);
    assert_eq!(back.content_hash(), file.content_hash());
    assert_eq!(back.to_instance().unwrap(), file.to_instance().unwrap());
}

#[test]
fn tree_and_trace_round_trip() {
    let file = generate(&small_spec(vec![8]), 8).unwrap();
    let out = run_instance(&file, &RunConfig::default()).unwrap();
    let tree = TreeResult::from_json(&out.run.tree.to_json()).unwrap();
    assert_eq!(tree.pairs(), out.run.tree.pairs());
    assert_eq!(tree.cost, out.run.tree.cost);

    let mut buf = Vec::new();
    out.run.trace.write_ndjson(&mut buf).unwrap();
    let trace = Trace::read_ndjson(Cursor::new(&buf)).unwrap();
    assert_eq!(trace.len(), out.run.trace.len());
    assert_eq!(trace.digest(), out.run.trace.digest());
    let inst = file.to_instance().unwrap();
    assert!(audit_trace(&trace, &inst).passed());
}

#[test]
fn truncated_trace_is_rejected() {
    let file = generate(&small_spec(vec![2]), 2).unwrap();
    let out = run_instance(&file, &RunConfig::default()).unwrap();
    let mut buf = Vec::new();
    out.run.trace.write_ndjson(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let cut = &text[..text.len() / 2];
    assert!(Trace::read_ndjson(Cursor::new(cut)).is_err());
}

#[test]
fn reruns_write_identical_files() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        let mut spec = small_spec(vec![1, 2, 3]);
        spec.outputs = Some(dir.path().to_path_buf());
        assert!(run_experiment(&spec).unwrap().success());
    }
    let mut names: Vec<String> =
        fs::read_dir(a.path()).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    let mut expected = vec!["metrics.csv".to_string(), "metrics.json".into(), "plot.json".into()];
    for seed in 1..=3 {
        for stem in ["instance", "tree", "audit", "schedule"] {
            expected.push(format!("{stem}-{seed}.json"));
        }
        expected.push(format!("trace-{seed}.ndjson"));
    }
    expected.sort();
    assert_eq!(names, expected);
    for name in &names {
        let x = fs::read(a.path().join(name)).unwrap();
        let y = fs::read(b.path().join(name)).unwrap();
        assert!(x == y, "{name} differs between runs");
    }
    let csv = fs::read_to_string(a.path().join("metrics.csv")).unwrap();
    assert!(csv.starts_with("seed,n,"));
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn failing_seed_does_not_stop_the_batch() {
    // Fixed power reaching three units: some draws are too spread out to
    // be connected at the working range.
    let mut spec = ExperimentSpec::uniform(8, (0..40).collect());
    spec.auto_power = false;
    let report = run_experiment(&spec).unwrap();
    assert_eq!(report.rows.len() + report.failures.len(), 40);
    assert!(!report.rows.is_empty());
    assert!(!report.failures.is_empty());
    let alone = |seed| generate(&spec, seed).and_then(|f| run_instance(&f, &spec.run));
    for f in &report.failures {
        assert!(alone(f.seed).is_err(), "seed {}: {}", f.seed, f.reason);
    }
    for r in &report.rows {
        assert_eq!(&alone(r.seed).unwrap().row, r);
    }
    assert!(!report.success());
}

#[test]
fn spec_json_fills_defaults() {
    assert!(ExperimentSpec::from_json("{\"n\": 4}").is_err());
    let spec = ExperimentSpec::from_json(r#"{"generator": "uniform-square", "n": 16, "seeds": [1, 2]}"#).unwrap();
    assert_eq!(spec.n, 16);
    assert!(spec.auto_power);
    assert_eq!(spec.run, RunConfig::default());
}
