use std::path::Path;
use std::process::{Command, Output};

use mmb_core::cli::{RunManifest, BENCH_CSV_HEADER, BISECT_TRACE_CSV_HEADER};
use serde_json::Value;

fn mmb(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mmb"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn generate(dir: &Path) {
    let out = mmb(dir, &["generate", "-m", "2", "-n", "2", "-k", "2", "--seed", "4", "--out", "s.json"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn invalid_input_exits_two_with_message() {
    let tmp = tempfile::tempdir().unwrap();
    let out = mmb(tmp.path(), &["generate", "-m", "2", "-n", "2", "-k", "0", "--out", "s.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("num_users"));

    let out = mmb(tmp.path(), &["check", "--scenario", "missing.json", "--rate", "1"]);
    assert_eq!(out.status.code(), Some(2));

    let out = mmb(tmp.path(), &["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn check_exit_code_follows_verdict() {
    let tmp = tempfile::tempdir().unwrap();
    generate(tmp.path());
    let low = mmb(tmp.path(), &["check", "--scenario", "s.json", "--rate", "0.001", "--out", "low.json"]);
    assert_eq!(low.status.code(), Some(0));
    assert_eq!(json(&tmp.path().join("low.json"))["verdict"], "feasible");
    let high = mmb(tmp.path(), &["check", "--scenario", "s.json", "--rate", "9", "--out", "high.json"]);
    assert!(matches!(high.status.code(), Some(1) | Some(3)));
    assert_ne!(json(&tmp.path().join("high.json"))["verdict"], "feasible");
}

#[test]
fn bisect_writes_result_trace_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    generate(dir);
    let out = mmb(dir, &["bisect", "--scenario", "s.json", "--s-max", "4", "--s-ter", "0.25", "--trace", "t.csv", "--out", "r.json"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let r = json(&dir.join("r.json"));
    assert_eq!(r["checks_performed"], 4);
    let rate = r["certified_rate"].as_f64().unwrap();
    assert!((0.0..4.0).contains(&rate));
    let trace = std::fs::read_to_string(dir.join("t.csv")).unwrap();
    assert_eq!(trace.lines().next().unwrap(), BISECT_TRACE_CSV_HEADER);
    assert!(trace.lines().count() > 4);

    let m = RunManifest::load(&dir.join("r.json.manifest.json")).unwrap();
    assert_eq!(m.command, "bisect");
    assert_eq!(m.exit_code, 0);
    assert_eq!(m.outputs.len(), 2);
    assert!(m.outputs.iter().all(|o| o.sha256.len() == 64));
}

#[test]
fn replay_detects_a_changed_output_digest() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    generate(dir);
    let manifest_path = dir.join("s.json.manifest.json");
    let ok = mmb(dir, &["replay", "s.json.manifest.json", "--out-dir", "again"]);
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stdout));
    assert_eq!(std::fs::read(dir.join("s.json")).unwrap(), std::fs::read(dir.join("again/s.json")).unwrap());

    let mut m = RunManifest::load(&manifest_path).unwrap();
    m.outputs[0].sha256_without_timings = "0".repeat(64);
    std::fs::write(dir.join("bad.manifest.json"), serde_json::to_string(&m).unwrap()).unwrap();
    let bad = mmb(dir, &["replay", "bad.manifest.json", "--out-dir", "again2"]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn qos_and_bench_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    generate(dir);
    let q = mmb(dir, &["qos", "--scenario", "s.json", "--rate", "0.5", "--out", "q.json"]);
    assert_eq!(q.status.code(), Some(0), "{}", String::from_utf8_lossy(&q.stderr));
    let r = json(&dir.join("q.json"));
    assert!(r["total_power"].as_f64().unwrap() > 0.0);
    assert!(r["per_user_rates"].as_array().unwrap().iter().all(|v| v.as_f64().unwrap() >= 0.5 - 1e-9));

    let b = mmb(dir, &[
        "bench", "--aps", "2", "--antennas", "1", "--users", "2", "--alphas", "0.5,1.0", "--seeds", "2",
        "--s-max", "4", "--s-ter", "0.5", "--out", "b.csv",
    ]);
    assert_eq!(b.status.code(), Some(0), "{}", String::from_utf8_lossy(&b.stderr));
    let csv = std::fs::read_to_string(dir.join("b.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), BENCH_CSV_HEADER);
    // two seeds x (one standard row + two randomized rows)
    assert_eq!(lines.count(), 6);
}
