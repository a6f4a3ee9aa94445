//! End-to-end runs: ingest, preprocess, fit, evaluate and write artifacts,
//! all driven by a [`RunConfig`].

mod config;
mod inspect;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use config::{
    CleanSection, ConfigError, DataSection, EvaluationSection, FeatureSection, FillMode, LoadedConfig,
    ModelSection, PipelineKind, ResolvedModel, RunConfig, SplitSection, COX_NAMES,
};
pub use inspect::{inspect, DataSummary, FeatureSummary};

use crate::format::{LabelFrame, Labels};
use crate::ingest::{list_data_files, read_source, IngestError, IngestReport, Ingested, SourceSpec};
use crate::metrics::{
    temporal_metric_series, write_artifacts, Coefficient, EvalReport, MetricsDocument, MetricsError, SurvivalSummary,
};
use crate::sequence::{clean_sequences, masked_scale, resample_with_labels, tensorize, SequenceError};
use crate::static_models::{model_to_json, ModelError, ModelRegistry};
use crate::static_pipeline::{
    extract_features, fit_apply_cleaning, scale_features, stratified_split, FeatureMatrix, StaticError,
    DURATION_FEATURE,
};
use crate::survival::{concordance_index, cox_fit, SurvivalData, SurvivalError};
use crate::temporal::{Head, TemporalError, TemporalModel};

pub const OUTPUT_ROOT_ENV: &str = "MEDTS_OUTPUT_ROOT";
pub const MANIFEST_FORMAT: &str = "medts-manifest";

/// Every file name a run may write; stale copies are removed first.
pub const ARTIFACT_NAMES: [&str; 9] = [
    "report.txt",
    "metrics.json",
    "confusion.svg",
    "roc.svg",
    "loss.svg",
    "temporal_metrics.svg",
    "temporal_metrics.csv",
    "model.mts",
    "manifest.json",
];

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error("ingest: {0}")]
    Ingest(#[from] IngestError),
    #[error("static-pipeline: {0}")]
    Static(#[from] StaticError),
    #[error("sequence-pipeline: {0}")]
    Sequence(#[from] SequenceError),
    #[error("data: {0}")]
    Data(String),
    #[error("static-models: {0}")]
    Model(#[from] ModelError),
    #[error("temporal-models: {0}")]
    Temporal(#[from] TemporalError),
    #[error("survival-models: {0}")]
    Survival(#[from] SurvivalError),
    #[error("metrics: {0}")]
    Metrics(#[from] MetricsError),
    #[error("output: cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl PipelineError {
    /// Process exit code: 2 config, 3 data, 4 training, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Ingest(_)
            | PipelineError::Static(_)
            | PipelineError::Sequence(_)
            | PipelineError::Data(_) => 3,
            PipelineError::Model(_) | PipelineError::Temporal(_) | PipelineError::Survival(_) => 4,
            PipelineError::Metrics(_) | PipelineError::Io { .. } => 1,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Abort on the first unreadable file in directory mode.
    pub strict: bool,
    /// Replaces the configured output directory.
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub version: u32,
    pub toolkit_version: String,
    pub config_path: String,
    pub output_dir: String,
    pub config: RunConfig,
    /// Model configuration after defaults.
    pub model_config: Value,
    pub ingest: IngestReport,
    /// SHA-256 over every input file's relative name and bytes.
    pub data_fingerprint: String,
    pub artifacts: Vec<String>,
    pub timings: Vec<StageTiming>,
}

fn io_error(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn source_spec(loaded: &LoadedConfig, strict: bool) -> SourceSpec {
    let mut spec = SourceSpec::detect(loaded.data_path());
    spec.strict = strict;
    if let Some(ext) = &loaded.config.data.extensions {
        spec.extensions = ext.iter().map(|e| e.trim_start_matches('.').to_ascii_lowercase()).collect();
    }
    spec
}

/// Hash of the input bytes, stable across machines and directory order.
pub fn data_fingerprint(spec: &SourceSpec) -> Result<String, PipelineError> {
    let files = if spec.is_directory {
        list_data_files(spec)?
    } else {
        vec![spec.path.clone()]
    };
    let mut named: Vec<(String, PathBuf)> = files
        .into_iter()
        .map(|f| {
            let name = f
                .strip_prefix(&spec.path)
                .ok()
                .filter(|p| !p.as_os_str().is_empty())
                .or_else(|| f.file_name().map(Path::new))
                .map(|p| p.to_string_lossy().replace('\\', "/"))
                .unwrap_or_default();
            (name, f)
        })
        .collect();
    named.sort();
    let mut hasher = Sha256::new();
    for (name, path) in named {
        let bytes = fs::read(&path).map_err(io_error(&path))?;
        hasher.update(name.as_bytes());
        hasher.update([0]);
        hasher.update((bytes.len() as u64).to_le_bytes());
        hasher.update(&bytes);
    }
    Ok(hex::encode(hasher.finalize()))
}

struct Timer {
    timings: Vec<StageTiming>,
    at: Instant,
}

impl Timer {
    fn new() -> Self {
        Self {
            timings: Vec::new(),
            at: Instant::now(),
        }
    }

    fn lap(&mut self, stage: &str) {
        let now = Instant::now();
        self.timings.push(StageTiming {
            stage: stage.into(),
            seconds: (now - self.at).as_secs_f64(),
        });
        self.at = now;
    }
}

/// Result of the model stage, before artifacts are written.
struct Outcome {
    metrics: MetricsDocument,
    model: Value,
}

/// Reads, validates and runs the config at `path`.
pub fn run_pipeline(path: &Path, options: &RunOptions) -> Result<RunManifest, PipelineError> {
    let loaded = LoadedConfig::read(path)?;
    run_loaded(&loaded, options)
}

/// Validates without touching any data file; returns the resolved model.
pub fn validate_config(loaded: &LoadedConfig) -> Result<ResolvedModel, PipelineError> {
    Ok(loaded.config.validate(&ModelRegistry::with_builtins())?)
}

pub fn run_loaded(loaded: &LoadedConfig, options: &RunOptions) -> Result<RunManifest, PipelineError> {
    let registry = ModelRegistry::with_builtins();
    let resolved = loaded.config.validate(&registry)?;
    let config = &loaded.config;
    let mut timer = Timer::new();

    let spec = source_spec(loaded, options.strict);
    let ingested = read_source(&spec, &config.data.dataset_config())?;
    let fingerprint = data_fingerprint(&spec)?;
    info!(
        "ingested {} entities from {} file(s)",
        ingested.report.entities, ingested.report.files_read
    );
    timer.lap("ingest");

    let outcome = match &resolved {
        ResolvedModel::Static { name, .. } => run_static(config, &ingested, &registry, name, &mut timer)?,
        ResolvedModel::Temporal { kind, config: mc } => {
            run_temporal(config, ingested.clone(), *kind, mc.clone(), &mut timer)?
        }
        ResolvedModel::Survival { config: cc } => run_survival(config, &ingested, cc, &mut timer)?,
    };

    let out_dir = loaded.output_dir(options.out.as_deref());
    fs::create_dir_all(&out_dir).map_err(io_error(&out_dir))?;
    for name in ARTIFACT_NAMES {
        let p = out_dir.join(name);
        if p.is_file() {
            fs::remove_file(&p).map_err(io_error(&p))?;
        }
    }
    let mut artifacts = write_artifacts(&outcome.metrics, &out_dir)?;
    let model_path = out_dir.join("model.mts");
    let mut model_text = serde_json::to_string_pretty(&outcome.model).unwrap_or_default();
    model_text.push('\n');
    fs::write(&model_path, model_text).map_err(io_error(&model_path))?;
    artifacts.push("model.mts".into());
    artifacts.push("manifest.json".into());
    timer.lap("artifacts");

    let manifest = RunManifest {
        format: MANIFEST_FORMAT.into(),
        version: 1,
        toolkit_version: env!("CARGO_PKG_VERSION").into(),
        config_path: loaded.path.display().to_string(),
        output_dir: out_dir.display().to_string(),
        config: config.clone(),
        model_config: resolved.config_value(),
        ingest: ingested.report.clone(),
        data_fingerprint: fingerprint,
        artifacts,
        timings: timer.timings,
    };
    let manifest_path = out_dir.join("manifest.json");
    let mut text = serde_json::to_string_pretty(&manifest).unwrap_or_default();
    text.push('\n');
    fs::write(&manifest_path, text).map_err(io_error(&manifest_path))?;
    Ok(manifest)
}

fn static_label_map(frame: &LabelFrame) -> BTreeMap<String, usize> {
    match &frame.labels {
        Labels::Static(m) => m.clone(),
        Labels::Temporal(m) => m
            .iter()
            .filter_map(|(k, v)| v.iter().max().map(|c| (k.clone(), *c)))
            .collect(),
    }
}

/// Cleans and scales a split feature matrix, returning dense rows.
fn prepare_static(
    config: &RunConfig,
    train: &FeatureMatrix,
    test: &FeatureMatrix,
) -> Result<(FeatureMatrix, FeatureMatrix, Value), PipelineError> {
    let (train, test, cleaner) =
        fit_apply_cleaning(train, test, config.impute_strategy(), config.clean.outlier_method)?;
    let (train, test, scaler) = scale_features(&train, &test, config.clean.scale)?;
    let cleaner = cleaner.then(scaler);
    let cleaner = serde_json::to_value(&cleaner).unwrap_or(Value::Null);
    Ok((train, test, cleaner))
}

fn run_static(
    config: &RunConfig,
    data: &Ingested,
    registry: &ModelRegistry,
    name: &str,
    timer: &mut Timer,
) -> Result<Outcome, PipelineError> {
    let matrix = extract_features(&data.table, &config.features.agg, config.features.include_duration)?
        .with_labels(&data.labels)?;
    let labels = static_label_map(&data.labels);
    let (train_ids, test_ids) = stratified_split(&matrix.entities, &labels, &config.split.spec())?;
    let (train, test, cleaner) = prepare_static(config, &matrix.select(&train_ids), &matrix.select(&test_ids))?;
    timer.lap("preprocess");

    let mut model = registry.create(name, &config.model.config)?;
    let n_classes = matrix.class_names.len();
    model.fit(&train.to_dense()?, &train.labels, n_classes)?;
    timer.lap("fit");

    let proba = model.predict_proba(&test.to_dense()?)?;
    let report = EvalReport::from_probabilities(&test.labels, &proba, &matrix.class_names, config.evaluation.threshold)?;
    let mut metrics = MetricsDocument::new(name, "static", config.evaluation.threshold);
    metrics.report = Some(report);
    metrics.training_loss = model.training_loss().to_vec();
    timer.lap("evaluate");

    Ok(Outcome {
        metrics,
        model: serde_json::json!({
            "model": model_to_json(model.as_ref()),
            "preprocessing": cleaner,
            "feature_names": train.feature_names,
            "class_names": matrix.class_names,
        }),
    })
}

fn run_temporal(
    config: &RunConfig,
    data: Ingested,
    kind: crate::temporal::ModelKind,
    model_config: crate::temporal::TemporalConfig,
    timer: &mut Timer,
) -> Result<Outcome, PipelineError> {
    let (table, labels) = match config.clean.resample_step {
        Some(step) => resample_with_labels(&data.table, &data.labels, step)?,
        None => (data.table, data.labels),
    };
    let tensor = tensorize(&table, &labels, config.split.max_len, config.split.truncation)?;
    let label_map = static_label_map(&labels);
    let (train_ids, test_ids) = stratified_split(&tensor.entities, &label_map, &config.split.spec())?;
    let (train, test, cleaner) = clean_sequences(
        &tensor.select(&train_ids),
        &tensor.select(&test_ids),
        config.sequence_fill(),
        config.clean.outlier_method,
    )?;
    let (train, test, scaler) = masked_scale(&train, &test, config.clean.scale)?;
    let cleaner = cleaner.then(scaler);
    timer.lap("preprocess");

    let head = match labels.labels {
        Labels::Static(_) => Head::Static,
        Labels::Temporal(_) => Head::Temporal,
    };
    let class_names = tensor.class_names.clone();
    let mut model = TemporalModel::new(kind, model_config, train.n_features(), class_names.len().max(2), head)?;
    let log = model.fit(&train)?;
    timer.lap("fit");

    let proba = model.predict_proba(&test)?;
    let threshold = config.evaluation.threshold;
    let mut metrics = MetricsDocument::new(kind.name(), "temporal", threshold);
    match head {
        Head::Temporal => {
            let labels: Vec<Vec<usize>> = (0..test.n_sequences())
                .map(|n| test.temporal_labels(n).map(|l| l[..test.lengths[n]].to_vec()).unwrap_or_default())
                .collect();
            metrics.temporal = Some(temporal_metric_series(&labels, &proba, test.max_len, &class_names, threshold)?);
        }
        Head::Static => {
            let y: Vec<usize> = (0..test.n_sequences()).filter_map(|n| test.static_label(n)).collect();
            let rows: Vec<Vec<f64>> = proba.into_iter().filter_map(|p| p.into_iter().next()).collect();
            metrics.report = Some(EvalReport::from_probabilities(&y, &rows, &class_names, threshold)?);
        }
    }
    metrics.training_loss = log.epoch_loss;
    timer.lap("evaluate");

    Ok(Outcome {
        metrics,
        model: serde_json::json!({
            "model": model.to_json(),
            "preprocessing": serde_json::to_value(&cleaner).unwrap_or(Value::Null),
            "feature_names": train.feature_names,
            "class_names": class_names,
        }),
    })
}

/// Event indicator per class: non-zero numeric names count as events;
/// otherwise the second class is the event.
fn event_classes(class_names: &[String]) -> Result<Vec<bool>, PipelineError> {
    if class_names.len() > 2 {
        return Err(PipelineError::Data(format!(
            "survival labels must be binary event indicators, found classes {}",
            class_names.join(", ")
        )));
    }
    let numeric: Option<Vec<f64>> = class_names.iter().map(|c| c.trim().parse::<f64>().ok()).collect();
    Ok(match numeric {
        Some(values) => values.into_iter().map(|v| v != 0.0).collect(),
        None => (0..class_names.len()).map(|c| c == 1).collect(),
    })
}

fn run_survival(
    config: &RunConfig,
    data: &Ingested,
    cox_config: &crate::survival::CoxConfig,
    timer: &mut Timer,
) -> Result<Outcome, PipelineError> {
    let duration_col = config.data.duration_col.clone().unwrap_or_else(|| DURATION_FEATURE.to_string());
    let include_duration = config.features.include_duration || duration_col == DURATION_FEATURE;
    let matrix = extract_features(&data.table, &config.features.agg, include_duration)?.with_labels(&data.labels)?;
    let d = matrix
        .feature_index(&duration_col)
        .ok_or_else(|| PipelineError::Data(format!("duration feature `{duration_col}` not found")))?;
    let keep: Vec<String> = matrix
        .entities
        .iter()
        .zip(&matrix.values)
        .filter(|(e, r)| {
            let ok = r[d].as_f64().is_some_and(|v| v > 0.0);
            if !ok {
                warn!("dropping entity {e}: duration is missing or not positive");
            }
            ok
        })
        .map(|(e, _)| e.clone())
        .collect();
    let matrix = matrix.select(&keep);
    let events = event_classes(&matrix.class_names)?;

    let labels = static_label_map(&data.labels);
    let (train_ids, test_ids) = stratified_split(&matrix.entities, &labels, &config.split.spec())?;
    let (train_raw, test_raw) = (matrix.select(&train_ids), matrix.select(&test_ids));
    let covariates = |m: &FeatureMatrix| m.without_features(&[duration_col.as_str()]);
    let (train_cov, test_cov, cleaner) = prepare_static(config, &covariates(&train_raw), &covariates(&test_raw))?;
    let build = |cov: &FeatureMatrix, raw: &FeatureMatrix| -> Result<SurvivalData, PipelineError> {
        Ok(SurvivalData {
            entities: raw.entities.clone(),
            feature_names: cov.feature_names.clone(),
            covariates: cov.to_dense()?,
            duration: raw.values.iter().map(|r| r[d].as_f64().unwrap_or(f64::NAN)).collect(),
            event: raw.labels.iter().map(|&c| events[c]).collect(),
        })
    };
    let train = build(&train_cov, &train_raw)?;
    let test = build(&test_cov, &test_raw)?;
    timer.lap("preprocess");

    let model = cox_fit(&train, cox_config)?;
    timer.lap("fit");

    let risk = model.risk_for(&test)?;
    let concordance = match concordance_index(&risk, &test.duration, &test.event) {
        Ok(c) => Some(c),
        Err(SurvivalError::NoComparablePairs) => None,
        Err(e) => return Err(e.into()),
    };
    let mut metrics = MetricsDocument::new(COX_NAMES[0], "survival", config.evaluation.threshold);
    metrics.survival = Some(SurvivalSummary {
        coefficients: model
            .feature_names
            .iter()
            .zip(&model.beta)
            .map(|(name, &beta)| Coefficient {
                name: name.clone(),
                beta,
                hazard_ratio: beta.exp(),
            })
            .collect(),
        dropped_features: model.dropped_features.clone(),
        log_partial_likelihood: model.log_partial_likelihood,
        iterations: model.iterations,
        n_train: train.duration.len(),
        n_test: test.duration.len(),
        test_events: test.event.iter().filter(|&&e| e).count(),
        concordance,
    });
    metrics.training_loss = model.objective_trace.iter().map(|v| -v).collect();
    timer.lap("evaluate");

    Ok(Outcome {
        metrics,
        model: serde_json::json!({
            "model": model.to_json(),
            "preprocessing": cleaner,
            "duration_feature": duration_col,
        }),
    })
}
