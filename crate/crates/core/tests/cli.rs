mod common;

use std::process::Command;

use common::{fixture, golden, run_case, GOLDEN_CASES};

const BIN: &str = env!("CARGO_BIN_EXE_fcl");

fn fcl(args: &[&str]) -> std::process::Output {
    Command::new(BIN).args(args).output().unwrap()
}

#[test]
fn golden_files_match() {
    let dir = tempfile::tempdir().unwrap();
    let update = std::env::var_os("FCL_UPDATE_GOLDEN").is_some();
    for (name, args) in GOLDEN_CASES {
        let (code, bytes) = run_case(BIN, args, dir.path(), name);
        assert_eq!(code, 0, "{name}: exit code {code}");
        if update {
            std::fs::write(golden(name), &bytes).unwrap();
            continue;
        }
        let expected = std::fs::read(golden(name)).unwrap();
        assert!(expected == bytes, "{name} differs from its golden file");
    }
}

#[test]
fn repeated_runs_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for (name, args) in GOLDEN_CASES {
        assert_eq!(run_case(BIN, args, a.path(), name), run_case(BIN, args, b.path(), name), "{name}");
    }
}

#[test]
fn sigma_root_linear_case() {
    let out = fcl(&["sigma-root", "--gamma", "0", "--lambda", "1"]);
    assert!(out.status.success());
    assert_eq!(String::from_utf8(out.stdout).unwrap(), "0.5\n");
}

#[test]
fn prints_resolved_config() {
    let out = fcl(&["sigma-root"]);
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains(r#""gamma":3.0"#) && err.contains(r#""lambda":0.5"#), "{err}");
}

#[test]
fn unknown_flag_is_rejected() {
    let out = fcl(&["metrics", "--input", "x.jsonl", "--binz", "3"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
}

#[test]
fn validation_errors_exit_one() {
    let missing = fcl(&["metrics", "--input", "/nonexistent/p.jsonl"]);
    assert_eq!(missing.status.code(), Some(1));
    let bad_eta = fcl(&["minimize", "--eta", "0.5,0.6"]);
    assert_eq!(bad_eta.status.code(), Some(1));
    let nonconvex = fcl(&["pgap", "--input", fixture("binary.jsonl").to_str().unwrap(), "--loss", "flsd53"]);
    assert_eq!(nonconvex.status.code(), Some(1));
    let multiclass = fcl(&["pgap", "--input", fixture("probs.jsonl").to_str().unwrap()]);
    assert_eq!(multiclass.status.code(), Some(1));
}

#[test]
fn divergence_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("m.json");
    let out = fcl(&[
        "train",
        "--data",
        fixture("points.csv").to_str().unwrap(),
        "--loss",
        "ce",
        "--lr",
        "1e300",
        "--epochs",
        "50",
        "--out-model",
        model.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!model.exists());
}

#[test]
fn perfect_predictions_have_zero_ece() {
    let out = fcl(&["metrics", "--input", fixture("perfect.jsonl").to_str().unwrap(), "--bins", "15"]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["ece"], 0.0);
}

#[test]
fn doubled_logits_recover_temperature_two() {
    let out = fcl(&[
        "temp-scale",
        "--val",
        fixture("val_doubled.jsonl").to_str().unwrap(),
        "--test",
        fixture("test_doubled.jsonl").to_str().unwrap(),
    ]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["best_t"], 2.0);
    assert!(v["test_post_ece"].as_f64().unwrap() < 1e-12);
}

#[test]
fn logits_and_softmaxed_probs_give_identical_reports() {
    let dir = tempfile::tempdir().unwrap();
    let set = fcl_core::data::load_predictions(
        &fixture("logits.csv"),
        fcl_core::data::RowFormat::RowsCsv,
        fcl_core::data::InputKind::Logits,
    )
    .unwrap();
    let probs = dir.path().join("p.jsonl");
    std::fs::write(&probs, set.to_rows_json(fcl_core::data::InputKind::Probs).unwrap()).unwrap();
    let a = fcl(&["metrics", "--input", fixture("logits.csv").to_str().unwrap(), "--input-kind", "logits"]);
    let b = fcl(&["metrics", "--input", probs.to_str().unwrap()]);
    assert!(a.status.success() && b.status.success());
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn help_documents_flags() {
    let out = fcl(&["temp-scale", "--help"]);
    let text = String::from_utf8(out.stdout).unwrap();
    for flag in ["--val", "--test", "--bins", "--t-min", "--t-max", "--t-step", "--out"] {
        assert!(text.contains(flag), "missing {flag}");
    }
}
