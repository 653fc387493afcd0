use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn stgkit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stgkit"))
        .args(args)
        .output()
        .expect("run stgkit")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn eval_stvg_perfect_and_partial() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("r.json");
    let out = stgkit(&[
        "eval-stvg",
        "--gt", path(&fixture("stvg_gt.jsonl")),
        "--pred", path(&fixture("stvg_pred_perfect.jsonl")),
        "--out", path(&report),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let r = read_json(&report);
    assert_eq!(r["m_tIoU"], 100.0);
    assert_eq!(r["m_vIoU"], 100.0);
    assert_eq!(r["vIoU_at"]["0.3"], 100.0);
    assert_eq!(r["vIoU_at"]["0.5"], 100.0);

    let out = stgkit(&[
        "eval-stvg",
        "--gt", path(&fixture("stvg_gt_single.jsonl")),
        "--pred", path(&fixture("stvg_pred_third.jsonl")),
        "--out", path(&report),
        "--thresholds", "0.3,0.5",
    ]);
    assert_eq!(code(&out), 0);
    let r = read_json(&report);
    assert_eq!(r["m_vIoU"], 33.3);
    assert_eq!(r["m_tIoU"], 20.0);
    assert_eq!(r["vIoU_at"]["0.3"], 100.0);
    assert_eq!(r["vIoU_at"]["0.5"], 0.0);
    assert!(String::from_utf8_lossy(&out.stdout).contains("33.3"));
}

#[test]
fn eval_schema_and_id_errors() {
    let out = stgkit(&[
        "eval-stvg",
        "--gt", path(&fixture("stvg_gt.jsonl")),
        "--pred", path(&fixture("stvg_pred_malformed.jsonl")),
    ]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains(":2:"));

    let out = stgkit(&[
        "eval-stvg",
        "--gt", path(&fixture("stvg_gt.jsonl")),
        "--pred", path(&fixture("stvg_pred_unknown_id.jsonl")),
    ]);
    assert_eq!(code(&out), 3);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("v3") && err.contains("v9"), "{err}");
}

#[test]
fn eval_vtg_and_rec() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("r.json");
    let out = stgkit(&[
        "eval-vtg",
        "--gt", path(&fixture("vtg_gt.jsonl")),
        "--pred", path(&fixture("vtg_pred.jsonl")),
        "--out", path(&report),
    ]);
    assert_eq!(code(&out), 0);
    let r = read_json(&report);
    assert_eq!(r["R@1"]["0.5"], 66.7);
    assert_eq!(r["R@1"]["0.7"], 33.3);
    assert_eq!(r["m_tIoU"], 53.3);

    let out = stgkit(&[
        "eval-rec",
        "--gt", path(&fixture("rec_gt.jsonl")),
        "--pred", path(&fixture("rec_pred.jsonl")),
        "--out", path(&report),
    ]);
    assert_eq!(code(&out), 0);
    assert_eq!(read_json(&report)["accuracy"], 66.7);

    let out = stgkit(&[
        "eval-rec",
        "--gt", path(&fixture("rec_gt.jsonl")),
        "--pred", path(&fixture("vtg_pred.jsonl")),
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn synth_mock_run() {
    let dir = tempfile::tempdir().unwrap();
    let records = dir.path().join("out.jsonl");
    let stats = dir.path().join("stats.json");
    let out = stgkit(&[
        "synth",
        "--corpus", path(&fixture("synth_corpus.jsonl")),
        "--config", path(&fixture("synth_config.json")),
        "--out", path(&records),
        "--stats", path(&stats),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let s = read_json(&stats);
    assert_eq!(s["rejection_rate"], 0.4);
    assert_eq!(s["emitted"], 6);
    let lines = std::fs::read_to_string(&records).unwrap();
    assert_eq!(lines.lines().count(), 6);
    let first: Value = serde_json::from_str(lines.lines().next().unwrap()).unwrap();
    let keys: Vec<&str> = first.as_object().unwrap().keys().map(String::as_str).collect();
    for k in ["id", "video_ref", "duration_s", "caption", "span", "tube", "instruction"] {
        assert!(keys.contains(&k), "{keys:?}");
    }
}

#[test]
fn synth_service_failures() {
    let dir = tempfile::tempdir().unwrap();
    let records = dir.path().join("out.jsonl");
    let stats = dir.path().join("stats.json");
    let out = stgkit(&[
        "synth",
        "--corpus", path(&fixture("synth_corpus.jsonl")),
        "--config", path(&fixture("synth_config.json")),
        "--mock-fixtures", path(&dir.path().join("missing.json")),
        "--out", path(&records),
        "--stats", path(&stats),
    ]);
    assert_eq!(code(&out), 4);

    let empty = dir.path().join("empty.json");
    std::fs::write(&empty, r#"{"entries": []}"#).unwrap();
    let out = stgkit(&[
        "synth",
        "--corpus", path(&fixture("synth_corpus.jsonl")),
        "--config", path(&fixture("synth_config.json")),
        "--mock-fixtures", path(&empty),
        "--out", path(&records),
        "--stats", path(&stats),
    ]);
    assert_eq!(code(&out), 4);
}

#[test]
fn decode_demo_outputs() {
    let out = stgkit(&["decode-demo", "--seed", "5", "--frames", "10", "--duration", "10", "--span", "from 2s to 5s"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["frame_range"], serde_json::json!([2, 5]));
    assert_eq!(v["tube"]["boxes"].as_array().unwrap().len(), 4);

    assert_eq!(code(&stgkit(&["decode-demo", "--span", "garbage"])), 5);
    assert_eq!(code(&stgkit(&["decode-demo", "--span", "from 5s to 2s"])), 5);
}

#[test]
fn gradcheck_exit_codes() {
    assert_eq!(code(&stgkit(&["gradcheck", "--cases", "5"])), 0);
    let out = stgkit(&["gradcheck", "--cases", "5", "--tolerance", "1e-12"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("worst"));
    assert_eq!(code(&stgkit(&["gradcheck", "--cases", "5", "--corrupt-gradient"])), 1);
    assert_eq!(code(&stgkit(&["gradcheck", "--tolerance", "0"])), 2);
}
