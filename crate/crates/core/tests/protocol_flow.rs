//! Protocol runs under imperfect transport. The bundled scenarios all use
//! instant lossless delivery; these tests rerun the small happy path with
//! delays and drops to pin down that settlement survives latency and that
//! conservation holds even when messages go missing.

use agora_core::scenario::ScenarioFile;
use serde_json::Value;

fn happy_small(patch: impl FnOnce(&mut Value)) -> ScenarioFile {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../scenarios/happy_small.json");
    let mut v: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    patch(&mut v);
    ScenarioFile::from_slice(v.to_string().as_bytes()).expect("patched scenario stays valid")
}

#[test]
fn delayed_transport_still_settles() {
    let spec = happy_small(|v| {
        v["transport"] = serde_json::json!({ "delay_blocks": 2, "drop_rate": 0.0 });
        v["run_blocks"] = 120.into();
        v["orders"][0]["response_window_blocks"] = 16.into();
    });
    for seed in 1..=5u64 {
        let (report, _) = spec.run_protocol(Some(seed)).expect("run");
        assert!(report.invariants_ok, "seed {seed}: {:?}", report.invariant_failures);
        assert!(
            report.payments.iter().any(|p| p.unlocked),
            "seed {seed}: nothing was paid under a 2-block delay"
        );
        let recovered = report.actors["acme"]["orders"]["0"]["recovered"]
            .as_object()
            .map(|m| m.len())
            .unwrap_or(0);
        assert!(recovered > 0, "seed {seed}: buyer recovered nothing");
    }
}

#[test]
fn lossy_transport_conserves_tokens() {
    // A quarter of all messages vanish. Orders may stall, but every applied
    // transaction must still conserve the supply and the run must end
    // without wedging.
    let spec = happy_small(|v| {
        v["transport"] = serde_json::json!({ "delay_blocks": 0, "drop_rate": 0.25 });
        v["run_blocks"] = 120.into();
    });
    let mut dropped_total = 0usize;
    for seed in 1..=20u64 {
        let (report, _) = spec.run_protocol(Some(seed)).expect("run");
        assert!(report.invariants_ok, "seed {seed}: {:?}", report.invariant_failures);
        dropped_total += report.dropped_messages;
    }
    assert!(dropped_total > 0, "drop rate 0.25 never dropped a message");
}

#[test]
fn trace_records_every_wire_message() {
    let spec = happy_small(|_| {});
    let (report, trace) = spec.run_protocol(Some(3)).expect("run");
    let mut kinds = std::collections::BTreeMap::<String, usize>::new();
    for line in trace.lines() {
        let v: Value = serde_json::from_str(line).expect("trace line is JSON");
        let obj = v.as_object().expect("trace line is an object");
        assert_eq!(obj.len(), 1, "one tagged record per line: {line}");
        *kinds.entry(obj.keys().next().unwrap().clone()).or_default() += 1;
    }
    for required in ["block", "tx", "wire"] {
        assert!(kinds.contains_key(required), "no {required} records in {kinds:?}");
    }
    assert_eq!(
        kinds["wire"], report.wire_messages,
        "wire records and counted messages disagree"
    );
}
