use std::fs;
use std::process::Command;

use serde_json::Value;

fn lab() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fgle-lab"))
}

fn template(study: &str) -> Value {
    let out = lab().args(["template", "--study", study]).output().unwrap();
    assert!(out.status.success());
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn template_round_trips_through_run() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = template("strong");
    cfg["fine_n"] = 64.into();
    cfg["ratios"] = serde_json::json!([2, 4, 8]);
    cfg["model"]["drift"] = serde_json::json!({ "kind": "zero" });
    let path = dir.path().join("c.json");
    fs::write(&path, cfg.to_string()).unwrap();
    let out_dir = dir.path().join("out");
    let out = lab()
        .args(["run", "--config", path.to_str().unwrap(), "--paths", "150", "--seed", "7", "--out", out_dir.to_str().unwrap()])
        .env("FGLE_THREADS", "2")
        .output()
        .unwrap();
    // zero drift makes every level exact, which only a flat drift may do
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let written: Value = serde_json::from_str(&fs::read_to_string(out_dir.join("config.json")).unwrap()).unwrap();
    assert_eq!(written["paths"], 150);
    assert_eq!(written["seed"], 7);
    for f in ["levels.csv", "summary.json", "timing.json"] {
        assert!(out_dir.join(f).exists(), "{f}");
    }
}

#[test]
fn failing_study_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = template("strong");
    cfg["fine_n"] = 64.into();
    cfg["ratios"] = serde_json::json!([2, 4, 8]);
    cfg["expected_slope"] = 5.0.into();
    cfg["tolerance"] = 0.1.into();
    let path = dir.path().join("c.json");
    fs::write(&path, cfg.to_string()).unwrap();
    let out = lab()
        .args(["run", "--config", path.to_str().unwrap(), "--paths", "100", "--out", dir.path().join("o").to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL slope"));
}

#[test]
fn bad_input_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.json");
    let mut cfg = template("density");
    cfg["fine_n"] = 100.into();
    fs::write(&path, cfg.to_string()).unwrap();
    let out = lab().args(["run", "--config", path.to_str().unwrap()]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let missing = lab().args(["run", "--config", "/nonexistent.json"]).output().unwrap();
    assert_eq!(missing.status.code(), Some(2));
    let threads = lab().args(["run", "--config", path.to_str().unwrap()]).env("FGLE_THREADS", "many").output().unwrap();
    assert_eq!(threads.status.code(), Some(2));
}

#[test]
fn presets_lists_drifts() {
    let out = lab().arg("presets").output().unwrap();
    let text = String::from_utf8(out.stdout).unwrap();
    for name in ["zero", "cos", "sin"] {
        assert!(text.lines().any(|l| l.starts_with(name)), "{text}");
    }
}
