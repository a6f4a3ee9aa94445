//! Static-input classifiers and the name-based registry that builds them
//! from a default config overlaid with user settings.

mod gbdt;
mod logistic;
mod registry;

use serde::de::DeserializeOwned;
use serde_json::{Map, Value};
use thiserror::Error;

pub use gbdt::{best_split, GbdtConfig, GbdtModel, Node, SplitCandidate, Tree};
pub use logistic::{logistic_objective, LogisticConfig, LogisticModel};
pub use registry::{Constructor, ModelRegistry};

pub const MODEL_FORMAT: &str = "medts-model";
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("unknown model `{name}`; registered: {}", available.join(", "))]
    UnknownModel { name: String, available: Vec<String> },
    #[error("model name must not be empty")]
    EmptyName,
    #[error("invalid model config at `{path}`: {message}")]
    InvalidConfig { path: String, message: String },
    #[error("training loss became non-finite at epoch {epoch}; lower the learning rate")]
    NonFiniteLoss { epoch: usize },
    #[error("training labels contain a single class")]
    SingleClassTraining,
    #[error("training set is empty")]
    EmptyTraining,
    #[error("model has not been fitted")]
    NotFitted,
    #[error("expected {expected} features, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("label {label} out of range for {n_classes} classes")]
    LabelOutOfRange { label: usize, n_classes: usize },
    #[error("cannot load model: {0}")]
    Persistence(String),
}

/// A static classifier: construct from config, `fit`, then `predict_proba`.
pub trait Classifier: Send + Sync {
    /// Registry name the model was built under.
    fn kind(&self) -> &str;

    /// Resolved configuration (defaults plus overrides).
    fn config(&self) -> Value;

    fn fit(&mut self, x: &[Vec<f64>], y: &[usize], n_classes: usize) -> Result<(), ModelError>;

    /// One probability row per input row, summing to 1 over classes.
    fn predict_proba(&self, x: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, ModelError>;

    /// Per-epoch (or per-round) training loss.
    fn training_loss(&self) -> &[f64];

    /// Fitted parameters as structured data.
    fn state(&self) -> Value;

    /// Inverse of [`state`](Self::state) on a freshly constructed model.
    fn restore(&mut self, state: &Value) -> Result<(), ModelError>;
}

/// Class decisions: thresholded positive probability for binary problems,
/// argmax (lowest index on ties) otherwise.
pub fn decide(proba: &[Vec<f64>], threshold: f64) -> Vec<usize> {
    proba
        .iter()
        .map(|p| {
            if p.len() == 2 {
                usize::from(p[1] >= threshold)
            } else {
                let mut best = 0;
                for (c, &v) in p.iter().enumerate() {
                    if v > p[best] {
                        best = c;
                    }
                }
                best
            }
        })
        .collect()
}

/// Serialized model envelope: format tag, version, kind, config, state.
pub fn model_to_json(model: &dyn Classifier) -> Value {
    serde_json::json!({
        "format": MODEL_FORMAT,
        "version": MODEL_FORMAT_VERSION,
        "kind": model.kind(),
        "config": model.config(),
        "state": model.state(),
    })
}

/// Typed config from a JSON map, reporting the offending field path.
pub(crate) fn parse_config<T: DeserializeOwned>(config: &Map<String, Value>) -> Result<T, ModelError> {
    let value = Value::Object(config.clone());
    serde_path_to_error::deserialize(value).map_err(|e| ModelError::InvalidConfig {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })
}

pub(crate) fn check_training(x: &[Vec<f64>], y: &[usize], n_classes: usize) -> Result<usize, ModelError> {
    if x.is_empty() || x.len() != y.len() {
        return Err(ModelError::EmptyTraining);
    }
    if let Some(&label) = y.iter().find(|&&c| c >= n_classes) {
        return Err(ModelError::LabelOutOfRange { label, n_classes });
    }
    if y.iter().all(|&c| c == y[0]) {
        return Err(ModelError::SingleClassTraining);
    }
    let f = x[0].len();
    if let Some(r) = x.iter().find(|r| r.len() != f) {
        return Err(ModelError::DimensionMismatch { expected: f, got: r.len() });
    }
    Ok(f)
}

pub(crate) fn check_width(x: &[Vec<f64>], expected: usize) -> Result<(), ModelError> {
    match x.iter().find(|r| r.len() != expected) {
        Some(r) => Err(ModelError::DimensionMismatch { expected, got: r.len() }),
        None => Ok(()),
    }
}

/// Binary sub-problems: one for two classes (positive = class 1), one per
/// class otherwise.
pub(crate) fn one_vs_rest_targets(y: &[usize], n_classes: usize) -> Vec<Vec<f64>> {
    let positives: Vec<usize> = if n_classes == 2 { vec![1] } else { (0..n_classes).collect() };
    positives
        .into_iter()
        .map(|c| y.iter().map(|&l| if l == c { 1.0 } else { 0.0 }).collect())
        .collect()
}

/// Turns per-sub-problem positive probabilities into class rows.
pub(crate) fn combine_one_vs_rest(scores: &[f64], n_classes: usize) -> Vec<f64> {
    if n_classes == 2 {
        return vec![1.0 - scores[0], scores[0]];
    }
    let total: f64 = scores.iter().sum();
    if total > 0.0 {
        scores.iter().map(|s| s / total).collect()
    } else {
        vec![1.0 / n_classes as f64; n_classes]
    }
}

pub(crate) fn from_state<T: DeserializeOwned>(state: &Value) -> Result<T, ModelError> {
    serde_json::from_value(state.clone()).map_err(|e| ModelError::Persistence(e.to_string()))
}
