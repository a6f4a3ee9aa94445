use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn medts(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_medts"))
        .args(args)
        .current_dir(cwd)
        .env_remove("MEDTS_OUTPUT_ROOT")
        .output()
        .expect("binary runs")
}

fn static_config(data: &str, extra: &str) -> String {
    format!(
        r#"{{
  "data": {{"path": "{data}", "id_col": "PATIENT_ID", "time_col": "RE_DATE", "label_col": "outcome"}},
  "pipeline": "static",
  "model": {{"type": "GBDT", "config": {{"n_estimators": 20}}}}{extra}
}}"#
    )
}

#[test]
fn synth_then_run_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let out = medts(&["synth", "covid", "--out", "covid.csv", "--entities", "60"], dir.path());
    assert!(out.status.success());
    fs::write(dir.path().join("run.json"), static_config("covid.csv", r#", "output_dir": "res""#)).unwrap();

    let out = medts(&["run", "run.json"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("--- GBDT Classification Report ---"));
    assert!(dir.path().join("res/manifest.json").is_file());

    let out = medts(&["run", "run.json", "--out", "elsewhere"], dir.path());
    assert!(out.status.success());
    assert!(dir.path().join("elsewhere/report.txt").is_file());
}

#[test]
fn validate_reports_both_fields_with_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = static_config("absent.csv", "").replace("\"GBDT\"", "\"Transformer\"");
    fs::write(dir.path().join("bad.json"), cfg).unwrap();
    for sub in ["validate", "run"] {
        let out = medts(&[sub, "bad.json"], dir.path());
        assert_eq!(out.status.code(), Some(2));
        let err = String::from_utf8_lossy(&out.stderr);
        assert!(err.contains("model.type") && err.contains("pipeline"), "{err}");
    }
    let out = medts(&["validate", "missing.json"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn data_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.json"), static_config("absent.csv", "")).unwrap();
    let out = medts(&["run", "run.json"], dir.path());
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("ingest:"));
}

#[test]
fn training_failures_exit_4() {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = String::from("PATIENT_ID,RE_DATE,outcome,x\n");
    for p in 0..10 {
        csv.push_str(&format!("{p},1,0,{}\n{p},2,0,{}\n", p as f64, p as f64 + 0.5));
    }
    fs::write(dir.path().join("one_class.csv"), csv).unwrap();
    fs::write(dir.path().join("run.json"), static_config("one_class.csv", "")).unwrap();
    let out = medts(&["run", "run.json"], dir.path());
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn output_root_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    medts(&["synth", "covid", "--out", "covid.csv", "--entities", "40"], dir.path());
    fs::write(dir.path().join("exp1.json"), static_config("covid.csv", "")).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_medts"))
        .args(["run", "exp1.json"])
        .current_dir(dir.path())
        .env("MEDTS_OUTPUT_ROOT", dir.path().join("root"))
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(dir.path().join("root/exp1/metrics.json").is_file());
}

#[test]
fn inspect_summarizes_without_training() {
    let dir = tempfile::tempdir().unwrap();
    medts(&["synth", "sepsis", "--out", "icu", "--entities", "6"], dir.path());
    fs::write(
        dir.path().join("seq.json"),
        r#"{"data": {"path": "icu", "time_col": "ICULOS", "label_col": "SepsisLabel", "label_type": "temporal"},
            "pipeline": "temporal", "model": {"type": "Transformer"}}"#,
    )
    .unwrap();
    let out = medts(&["inspect", "seq.json"], dir.path());
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("entities: 6"));
    assert!(text.contains("labels (temporal)"));
    assert!(!dir.path().join("runs").exists());

    let out = medts(&["inspect", "seq.json", "--json"], dir.path());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["entities"], 6);
}
