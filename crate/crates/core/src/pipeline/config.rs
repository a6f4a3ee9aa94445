//! Run configuration: one JSON document describing data, preprocessing,
//! model and output. Validation runs before any data file is touched.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::format::{DatasetConfig, Delimiter, LabelType, Layout};
use crate::sequence::{SequenceFill, Truncation};
use crate::static_models::{ModelError, ModelRegistry};
use crate::static_pipeline::{AggFunc, ImputeStrategy, OutlierMethod, ScaleMethod, SplitSpec};
use crate::survival::{CoxConfig, SurvivalError};
use crate::temporal::{ModelKind, TemporalConfig, TemporalError};

/// Names accepted for the Cox model.
pub const COX_NAMES: [&str; 2] = ["CoxPH", "Cox"];

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    /// Dotted paths of the offending fields.
    pub fields: Vec<String>,
    pub message: String,
}

impl ConfigError {
    pub fn new(fields: &[&str], message: impl Into<String>) -> Self {
        Self {
            fields: fields.iter().map(|s| s.to_string()).collect(),
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.fields.is_empty() {
            write!(f, "{}", self.message)
        } else {
            let fields: Vec<String> = self.fields.iter().map(|s| format!("`{s}`")).collect();
            write!(f, "{}: {}", fields.join(", "), self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PipelineKind {
    Static,
    Temporal,
    Survival,
}

impl PipelineKind {
    pub fn name(self) -> &'static str {
        match self {
            PipelineKind::Static => "static",
            PipelineKind::Temporal => "temporal",
            PipelineKind::Survival => "survival",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// File or directory; relative paths resolve against the config file.
    pub path: PathBuf,
    #[serde(default = "default_layout")]
    pub layout: Layout,
    #[serde(default)]
    pub id_col: Option<String>,
    pub time_col: String,
    pub label_col: String,
    #[serde(default)]
    pub label_type: LabelType,
    #[serde(default)]
    pub delimiter: Delimiter,
    #[serde(default)]
    pub long_variable_col: Option<String>,
    #[serde(default)]
    pub long_value_col: Option<String>,
    /// Accepted extensions in directory mode.
    #[serde(default)]
    pub extensions: Option<Vec<String>>,
    /// Survival only: feature holding the duration instead of `__duration`.
    #[serde(default)]
    pub duration_col: Option<String>,
}

fn default_layout() -> Layout {
    Layout::Wide
}

impl DataSection {
    pub fn dataset_config(&self) -> DatasetConfig {
        DatasetConfig {
            layout: self.layout,
            id_col: self.id_col.clone(),
            time_col: self.time_col.clone(),
            label_col: self.label_col.clone(),
            label_type: self.label_type,
            long_variable_col: self.long_variable_col.clone(),
            long_value_col: self.long_value_col.clone(),
            delimiter: self.delimiter,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureSection {
    pub agg: Vec<AggFunc>,
    pub include_duration: bool,
}

impl Default for FeatureSection {
    fn default() -> Self {
        Self {
            agg: AggFunc::ALL.to_vec(),
            include_duration: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FillMode {
    Mean,
    Median,
    Ffill,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CleanSection {
    /// Defaults to `mean` for static inputs and `ffill` for sequences.
    pub fill_missing: Option<FillMode>,
    pub outlier_method: OutlierMethod,
    pub scale: ScaleMethod,
    /// Optional uniform resampling step for sequences.
    pub resample_step: Option<f64>,
}

impl Default for CleanSection {
    fn default() -> Self {
        Self {
            fill_missing: None,
            outlier_method: OutlierMethod::Iqr,
            scale: ScaleMethod::Standardize,
            resample_step: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSection {
    pub test_size: f64,
    pub shuffle: bool,
    pub seed: u64,
    pub stratify: bool,
    pub max_len: usize,
    pub truncation: Truncation,
}

impl Default for SplitSection {
    fn default() -> Self {
        Self {
            test_size: 0.3,
            shuffle: true,
            seed: 42,
            stratify: true,
            max_len: 30,
            truncation: Truncation::Earliest,
        }
    }
}

impl SplitSection {
    pub fn spec(&self) -> SplitSpec {
        SplitSpec {
            test_size: self.test_size,
            shuffle: self.shuffle,
            seed: self.seed,
            stratify: self.stratify,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(rename = "type")]
    pub kind: String,
    #[serde(default)]
    pub config: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationSection {
    pub threshold: f64,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        Self { threshold: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSection,
    pub pipeline: PipelineKind,
    #[serde(default)]
    pub features: FeatureSection,
    #[serde(default)]
    pub clean: CleanSection,
    #[serde(default)]
    pub split: SplitSection,
    pub model: ModelSection,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub evaluation: EvaluationSection,
}

/// Model settings after defaults are applied, per pipeline.
#[derive(Debug, Clone, PartialEq)]
pub enum ResolvedModel {
    Static { name: String, config: Map<String, Value> },
    Temporal { kind: ModelKind, config: TemporalConfig },
    Survival { config: CoxConfig },
}

impl ResolvedModel {
    pub fn name(&self) -> String {
        match self {
            ResolvedModel::Static { name, .. } => name.clone(),
            ResolvedModel::Temporal { kind, .. } => kind.name().to_string(),
            ResolvedModel::Survival { .. } => COX_NAMES[0].to_string(),
        }
    }

    pub fn config_value(&self) -> Value {
        match self {
            ResolvedModel::Static { config, .. } => Value::Object(config.clone()),
            ResolvedModel::Temporal { config, .. } => serde_json::to_value(config).unwrap_or(Value::Null),
            ResolvedModel::Survival { config } => serde_json::to_value(config).unwrap_or(Value::Null),
        }
    }
}

fn model_field(path: &str) -> String {
    if path.is_empty() || path == "." {
        "model.config".into()
    } else {
        format!("model.config.{path}")
    }
}

impl RunConfig {
    pub fn from_json_str(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let fields = if path == "." { vec![] } else { vec![path] };
            ConfigError {
                fields,
                message: e.inner().to_string(),
            }
        })
    }

    pub fn fill_mode(&self) -> FillMode {
        self.clean.fill_missing.unwrap_or(match self.pipeline {
            PipelineKind::Temporal => FillMode::Ffill,
            _ => FillMode::Mean,
        })
    }

    pub fn impute_strategy(&self) -> ImputeStrategy {
        match self.fill_mode() {
            FillMode::Median => ImputeStrategy::Median,
            _ => ImputeStrategy::Mean,
        }
    }

    pub fn sequence_fill(&self) -> SequenceFill {
        match self.fill_mode() {
            FillMode::Ffill => SequenceFill::Ffill,
            _ => SequenceFill::Mean,
        }
    }

    /// Checks every rule that does not need the data and resolves the model
    /// configuration.
    pub fn validate(&self, registry: &ModelRegistry) -> Result<ResolvedModel, ConfigError> {
        if self.data.path.as_os_str().is_empty() {
            return Err(ConfigError::new(&["data.path"], "must not be empty"));
        }
        self.data
            .dataset_config()
            .validate()
            .map_err(|e| ConfigError::new(&["data"], e.to_string()))?;
        if self.data.id_col.is_none() && self.data.layout != Layout::Wide {
            return Err(ConfigError::new(&["data.id_col"], "required for long and flat layouts"));
        }
        let s = &self.split;
        if !(s.test_size > 0.0 && s.test_size < 1.0) {
            return Err(ConfigError::new(&["split.test_size"], "must lie strictly between 0 and 1"));
        }
        let t = self.evaluation.threshold;
        if !(0.0..=1.0).contains(&t) {
            return Err(ConfigError::new(&["evaluation.threshold"], "must lie in [0, 1]"));
        }
        if let Some(step) = self.clean.resample_step {
            if !(step > 0.0 && step.is_finite()) {
                return Err(ConfigError::new(&["clean.resample_step"], "must be positive"));
            }
        }
        if self.pipeline != PipelineKind::Survival && self.data.duration_col.is_some() {
            return Err(ConfigError::new(
                &["data.duration_col", "pipeline"],
                "duration_col applies to the survival pipeline only",
            ));
        }
        match self.pipeline {
            PipelineKind::Static | PipelineKind::Survival => {
                if self.data.label_type != LabelType::Static {
                    return Err(ConfigError::new(
                        &["data.label_type", "pipeline"],
                        format!("the {} pipeline needs static labels", self.pipeline.name()),
                    ));
                }
                if self.fill_mode() == FillMode::Ffill {
                    return Err(ConfigError::new(
                        &["clean.fill_missing", "pipeline"],
                        "ffill applies to sequences; use mean or median",
                    ));
                }
                let needs_duration = self.pipeline == PipelineKind::Survival && self.data.duration_col.is_none();
                if self.features.agg.is_empty() && !self.features.include_duration && !needs_duration {
                    return Err(ConfigError::new(&["features.agg"], "select at least one aggregation"));
                }
            }
            PipelineKind::Temporal => {
                if self.fill_mode() == FillMode::Median {
                    return Err(ConfigError::new(
                        &["clean.fill_missing", "pipeline"],
                        "sequences support ffill or mean",
                    ));
                }
                if s.max_len == 0 {
                    return Err(ConfigError::new(&["split.max_len"], "must be at least 1"));
                }
            }
        }
        self.resolve_model(registry)
    }

    fn resolve_model(&self, registry: &ModelRegistry) -> Result<ResolvedModel, ConfigError> {
        let name = self.model.kind.as_str();
        let temporal_kind = name.parse::<ModelKind>().ok();
        let is_cox = COX_NAMES.contains(&name);
        let is_static = registry.contains(name);
        let home = if is_static {
            Some(PipelineKind::Static)
        } else if temporal_kind.is_some() {
            Some(PipelineKind::Temporal)
        } else if is_cox {
            Some(PipelineKind::Survival)
        } else {
            None
        };
        match home {
            None => {
                let mut known = registry.names();
                known.extend(["LSTM", "TLSTM", "Transformer", COX_NAMES[0]].map(String::from));
                return Err(ConfigError::new(
                    &["model.type"],
                    format!("unknown model `{name}`; available: {}", known.join(", ")),
                ));
            }
            Some(home) if home != self.pipeline => {
                return Err(ConfigError::new(
                    &["model.type", "pipeline"],
                    format!(
                        "model `{name}` requires pipeline \"{}\", but pipeline is \"{}\"",
                        home.name(),
                        self.pipeline.name()
                    ),
                ));
            }
            Some(_) => {}
        }
        let user = &self.model.config;
        match self.pipeline {
            PipelineKind::Static => {
                let config = registry.resolve_config(name, user).map_err(model_config_error)?;
                registry.create(name, user).map_err(model_config_error)?;
                Ok(ResolvedModel::Static {
                    name: name.to_string(),
                    config,
                })
            }
            PipelineKind::Temporal => {
                let mut merged = user.clone();
                // randomness follows the split seed unless pinned explicitly
                merged.entry("seed").or_insert_with(|| Value::from(self.split.seed));
                let config = TemporalConfig::from_map(&merged).map_err(|e| match e {
                    TemporalError::InvalidConfig { path, message } => ConfigError::new(&[&model_field(&path)], message),
                    other => ConfigError::new(&["model.config"], other.to_string()),
                })?;
                Ok(ResolvedModel::Temporal {
                    kind: temporal_kind.unwrap_or(ModelKind::Lstm),
                    config,
                })
            }
            PipelineKind::Survival => {
                let config = CoxConfig::from_map(user).map_err(|e| match e {
                    SurvivalError::InvalidConfig { path, message } => ConfigError::new(&[&model_field(&path)], message),
                    other => ConfigError::new(&["model.config"], other.to_string()),
                })?;
                Ok(ResolvedModel::Survival { config })
            }
        }
    }
}

fn model_config_error(e: ModelError) -> ConfigError {
    match e {
        ModelError::InvalidConfig { path, message } => ConfigError::new(&[&model_field(&path)], message),
        other => ConfigError::new(&["model.type"], other.to_string()),
    }
}

/// A parsed config plus the directory its relative paths resolve against.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub path: PathBuf,
    pub base_dir: PathBuf,
}

impl LoadedConfig {
    pub fn read(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::new(&[], format!("cannot read {}: {e}", path.display())))?;
        let config = RunConfig::from_json_str(&text)?;
        let base_dir = path
            .parent()
            .map(Path::to_path_buf)
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or_else(|| PathBuf::from("."));
        Ok(Self {
            config,
            path: path.to_path_buf(),
            base_dir,
        })
    }

    pub fn data_path(&self) -> PathBuf {
        self.base_dir.join(&self.config.data.path)
    }

    /// Output directory: the override, then `output_dir` from the config,
    /// then `$MEDTS_OUTPUT_ROOT/<config stem>`, then `runs/<config stem>`
    /// next to the config file.
    pub fn output_dir(&self, overridden: Option<&Path>) -> PathBuf {
        if let Some(p) = overridden {
            return p.to_path_buf();
        }
        if let Some(p) = &self.config.output_dir {
            return self.base_dir.join(p);
        }
        let stem = self
            .path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "run".into());
        match std::env::var_os(super::OUTPUT_ROOT_ENV) {
            Some(root) if !root.is_empty() => PathBuf::from(root).join(stem),
            _ => self.base_dir.join("runs").join(stem),
        }
    }
}
