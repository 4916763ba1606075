//! Black-box checks of the agora binary: exit codes, the two output
//! files, and bit-for-bit reproducibility across identical invocations.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scenario(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn workdir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("agora-cli-{}-{tag}", std::process::id()));
    std::fs::create_dir_all(&dir).expect("temp workdir");
    dir
}

fn agora(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_agora"))
        .args(args)
        .output()
        .expect("binary spawns")
}

fn run_with_outputs(scenario_path: &Path, seed: &str, dir: &Path, tag: &str) -> (Output, String, String) {
    let report = dir.join(format!("report-{tag}.json"));
    let trace = dir.join(format!("trace-{tag}.jsonl"));
    let out = agora(&[
        "run",
        scenario_path.to_str().unwrap(),
        "--seed",
        seed,
        "--report",
        report.to_str().unwrap(),
        "--trace",
        trace.to_str().unwrap(),
    ]);
    let report = std::fs::read_to_string(&report).expect("report written");
    let trace = std::fs::read_to_string(&trace).expect("trace written");
    (out, report, trace)
}

#[test]
fn run_writes_report_and_trace() {
    let dir = workdir("outputs");
    let (out, report, trace) = run_with_outputs(&scenario("happy_small.json"), "11", &dir, "a");
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("invariants: ok"), "stdout: {stdout}");

    let parsed: serde_json::Value = serde_json::from_str(&report).expect("report is JSON");
    assert_eq!(parsed["scenario"], "happy_small");
    assert_eq!(parsed["invariants_ok"], true);
    assert!(parsed["payments"].as_array().is_some_and(|p| !p.is_empty()));
    for line in trace.lines() {
        let v: serde_json::Value = serde_json::from_str(line).expect("trace line is JSON");
        assert!(v.is_object());
    }
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn same_seed_reproduces_bytes() {
    let dir = workdir("repro");
    let path = scenario("happy_small.json");
    let (out1, report1, trace1) = run_with_outputs(&path, "5", &dir, "one");
    let (out2, report2, trace2) = run_with_outputs(&path, "5", &dir, "two");
    assert!(out1.status.success() && out2.status.success());
    assert_eq!(out1.stdout, out2.stdout, "stdout differs between identical runs");
    assert_eq!(report1, report2, "report bytes differ between identical runs");
    assert_eq!(trace1, trace2, "trace bytes differ between identical runs");
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn verify_accepts_every_bundled_scenario() {
    let dir = scenario("").canonicalize().expect("scenario dir");
    let mut count = 0;
    for entry in std::fs::read_dir(dir).expect("listing") {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "json") {
            let out = agora(&["verify", path.to_str().unwrap()]);
            assert!(
                out.status.success(),
                "{}: {}",
                path.display(),
                String::from_utf8_lossy(&out.stderr)
            );
            count += 1;
        }
    }
    assert_eq!(count, 8, "expected 8 bundled scenarios");
}

#[test]
fn verify_rejects_bad_input() {
    let dir = workdir("reject");
    let bad = dir.join("bad.json");
    std::fs::write(&bad, r#"{ "format_version": 1, "name": "x", "seed": 1, "run_blocks": 10, "surprise": true }"#)
        .unwrap();
    let out = agora(&["verify", bad.to_str().unwrap()]);
    assert!(!out.status.success(), "unknown field must be rejected");
    assert!(!out.stderr.is_empty(), "rejection must explain itself");

    let out = agora(&["run", dir.join("missing.json").to_str().unwrap()]);
    assert!(!out.status.success(), "missing file must fail");
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn matrix_scenario_runs_to_completion() {
    let dir = workdir("matrix");
    let report = dir.join("matrix.json");
    let out = agora(&[
        "run",
        scenario("challenge_matrix.json").to_str().unwrap(),
        "--report",
        report.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let parsed: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).expect("report is JSON");
    assert!(parsed["cases"].as_u64().is_some_and(|c| c > 100_000));
    assert_eq!(parsed["failures"].as_array().map(Vec::len), Some(0));
    let _ = std::fs::remove_dir_all(&dir);
}
