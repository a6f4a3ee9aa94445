use std::fs;
use std::path::Path;

use medts_core::metrics::MetricsDocument;
use medts_core::pipeline::{run_pipeline, PipelineError, RunOptions};
use medts_core::synth;
use serde_json::{json, Value};

fn write_config(dir: &Path, name: &str, config: &Value) -> std::path::PathBuf {
    let path = dir.join(name);
    fs::write(&path, serde_json::to_string_pretty(config).unwrap()).unwrap();
    path
}

fn covid_config() -> Value {
    json!({
        "data": {"path": "covid.csv", "layout": "wide", "id_col": "PATIENT_ID",
                 "time_col": "RE_DATE", "label_col": "outcome"},
        "pipeline": "static",
        "features": {"agg": ["mean", "std", "max", "min", "median"], "include_duration": true},
        "clean": {"fill_missing": "mean", "outlier_method": "iqr", "scale": "standardize"},
        "split": {"test_size": 0.3, "shuffle": true, "seed": 42, "stratify": true},
        "model": {"type": "GBDT"},
        "output_dir": "out"
    })
}

fn metrics(dir: &Path) -> MetricsDocument {
    MetricsDocument::from_json_str(&fs::read_to_string(dir.join("metrics.json")).unwrap()).unwrap()
}

#[test]
fn static_run_writes_complete_artifact_set() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("covid.csv"), synth::covid_like_csv(120, 3)).unwrap();
    let cfg = write_config(dir.path(), "run.json", &covid_config());
    let manifest = run_pipeline(&cfg, &RunOptions::default()).unwrap();
    let out = dir.path().join("out");

    let mut on_disk: Vec<String> = fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    on_disk.sort();
    let mut listed = manifest.artifacts.clone();
    listed.sort();
    assert_eq!(on_disk, listed);
    for name in ["report.txt", "metrics.json", "confusion.svg", "roc.svg", "loss.svg", "model.mts", "manifest.json"] {
        assert!(listed.iter().any(|a| a == name), "{name} missing");
    }

    let doc = metrics(&out);
    let report = doc.report.as_ref().unwrap();
    assert!(report.accuracy >= 0.9, "accuracy {}", report.accuracy);
    assert_eq!(report.total, 36);
    let text = fs::read_to_string(out.join("report.txt")).unwrap();
    assert!(text.starts_with("--- GBDT Classification Report ---\n              precision"));
    assert_eq!(manifest.data_fingerprint.len(), 64);
}

#[test]
fn reruns_are_byte_identical_and_clear_stale_files() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("covid.csv"), synth::covid_like_csv(80, 4)).unwrap();
    let cfg = write_config(dir.path(), "run.json", &covid_config());
    run_pipeline(&cfg, &RunOptions::default()).unwrap();
    let out = dir.path().join("out");
    let first: Vec<Vec<u8>> = ["metrics.json", "report.txt", "confusion.svg", "roc.svg", "loss.svg"]
        .iter()
        .map(|n| fs::read(out.join(n)).unwrap())
        .collect();
    fs::write(out.join("temporal_metrics.csv"), "stale").unwrap();
    let manifest = run_pipeline(&cfg, &RunOptions::default()).unwrap();
    assert!(!out.join("temporal_metrics.csv").exists());
    assert!(!manifest.artifacts.iter().any(|a| a == "temporal_metrics.csv"));
    let second: Vec<Vec<u8>> = ["metrics.json", "report.txt", "confusion.svg", "roc.svg", "loss.svg"]
        .iter()
        .map(|n| fs::read(out.join(n)).unwrap())
        .collect();
    assert_eq!(first, second);
}

#[test]
fn invalid_config_fails_before_reading_data() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = covid_config();
    cfg["model"]["type"] = json!("Transformer");
    // the data file does not exist, so any read attempt would surface as an ingest error
    let path = write_config(dir.path(), "bad.json", &cfg);
    match run_pipeline(&path, &RunOptions::default()) {
        Err(PipelineError::Config(e)) => {
            assert!(e.fields.contains(&"model.type".to_string()));
            assert!(e.fields.contains(&"pipeline".to_string()));
        }
        other => panic!("expected config error, got {other:?}"),
    }
    let mut cfg = covid_config();
    cfg["data"]["path"] = json!("missing.csv");
    let path = write_config(dir.path(), "nodata.json", &cfg);
    let err = run_pipeline(&path, &RunOptions::default()).unwrap_err();
    assert_eq!(err.exit_code(), 3);
    assert!(err.to_string().starts_with("ingest:"));
}

#[test]
fn temporal_run_reports_per_step_series() {
    let dir = tempfile::tempdir().unwrap();
    synth::write_sepsis_like_dir(&dir.path().join("sepsis"), 40, 8).unwrap();
    let cfg = json!({
        "data": {"path": "sepsis", "layout": "wide", "time_col": "ICULOS",
                 "label_col": "SepsisLabel", "label_type": "temporal"},
        "pipeline": "temporal",
        "clean": {"fill_missing": "ffill", "outlier_method": "iqr", "scale": "standardize"},
        "split": {"test_size": 0.3, "seed": 42, "max_len": 40},
        "model": {"type": "LSTM", "config": {"epochs": 3, "hidden_size": 8}},
    });
    let path = write_config(dir.path(), "seq.json", &cfg);
    let out = dir.path().join("custom_out");
    let manifest = run_pipeline(&path, &RunOptions { strict: true, out: Some(out.clone()) }).unwrap();
    assert!(manifest.artifacts.iter().any(|a| a == "temporal_metrics.csv"));
    let csv = fs::read_to_string(out.join("temporal_metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 41);
    let text = fs::read_to_string(out.join("report.txt")).unwrap();
    assert!(text.starts_with("--- LSTM Temporal Classification Report (flattened) ---\n"));
    let doc = metrics(&out);
    assert_eq!(doc.training_loss.len(), 3);
    assert_eq!(doc.temporal.unwrap().flattened.total, csv.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse::<usize>().unwrap()).sum::<usize>());
}

#[test]
fn survival_run_fits_cox() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("follow.csv"), synth::survival_like_csv(150, 2)).unwrap();
    let cfg = json!({
        "data": {"path": "follow.csv", "id_col": "id", "time_col": "day", "label_col": "event"},
        "pipeline": "survival",
        "features": {"agg": ["mean"], "include_duration": true},
        "model": {"type": "CoxPH"},
        "output_dir": "surv"
    });
    let path = write_config(dir.path(), "surv.json", &cfg);
    run_pipeline(&path, &RunOptions::default()).unwrap();
    let doc = metrics(&dir.path().join("surv"));
    let s = doc.survival.unwrap();
    let beta = |name: &str| s.coefficients.iter().find(|c| c.name == name).unwrap().beta;
    assert!(beta("marker_a__mean") > 0.3, "{:?}", s.coefficients);
    assert!(beta("marker_b__mean") < -0.1, "{:?}", s.coefficients);
    assert!(s.concordance.unwrap() > 0.6);
    assert!(!s.coefficients.iter().any(|c| c.name == "__duration"));
}
