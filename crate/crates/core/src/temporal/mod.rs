//! Sequence classifiers trained with hand-written backpropagation: LSTM,
//! time-aware LSTM and a Transformer encoder. Each backbone turns the
//! unmasked prefix of a sequence into hidden states; a shared linear
//! read-out maps either the pooled state (static labels) or every state
//! (per-step labels) to class logits.

mod lstm;
mod ops;
mod transformer;

use std::io::{self, Write};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::sequence::{SequenceLabels, SequenceTensor};
use crate::static_models::{MODEL_FORMAT, MODEL_FORMAT_VERSION};
use lstm::{LstmCache, LstmShape};
use ops::{affine, affine_backward, cross_entropy, pair_mut, softmax_in_place};
use transformer::{TransformerCache, TransformerShape};

pub use transformer::positional_encoding;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TemporalError {
    #[error("unknown sequence model `{0}`; expected LSTM, TLSTM or Transformer")]
    UnknownModel(String),
    #[error("invalid model config at `{path}`: {message}")]
    InvalidConfig { path: String, message: String },
    #[error("negative time delta for entity `{entity}` at step {step}")]
    NegativeDelta { entity: String, step: usize },
    #[error("tensor still has missing values; clean it before training ({0})")]
    UncleanInput(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("training loss became non-finite at epoch {epoch}; lower the learning rate")]
    NonFiniteLoss { epoch: usize },
    #[error("training tensor has no sequences")]
    EmptyTraining,
    #[error("cannot load model: {0}")]
    Persistence(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "LSTM")]
    Lstm,
    #[serde(rename = "TLSTM")]
    Tlstm,
    Transformer,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Lstm => "LSTM",
            ModelKind::Tlstm => "TLSTM",
            ModelKind::Transformer => "Transformer",
        }
    }
}

impl FromStr for ModelKind {
    type Err = TemporalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "LSTM" => Ok(ModelKind::Lstm),
            "TLSTM" | "T-LSTM" | "TimeAwareLSTM" => Ok(ModelKind::Tlstm),
            "Transformer" => Ok(ModelKind::Transformer),
            other => Err(TemporalError::UnknownModel(other.to_string())),
        }
    }
}

/// Elapsed-time discount applied to the short-term cell memory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decay {
    /// `1 / ln(e + dt)`
    #[default]
    InverseLog,
    /// `exp(-dt)`
    Exponential,
}

impl Decay {
    pub fn apply(self, dt: f64) -> f64 {
        match self {
            Decay::InverseLog => 1.0 / (std::f64::consts::E + dt).ln(),
            Decay::Exponential => (-dt).exp(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    #[default]
    Last,
    Mean,
}

/// Whether the model predicts one class per sequence or one per step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Head {
    Static,
    Temporal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TemporalConfig {
    pub hidden_size: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub ff_width: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub pooling: Pooling,
    pub causal: bool,
    pub decay: Decay,
}

impl Default for TemporalConfig {
    fn default() -> Self {
        Self {
            hidden_size: 32,
            d_model: 32,
            n_heads: 4,
            n_layers: 2,
            ff_width: 64,
            epochs: 50,
            batch_size: 32,
            learning_rate: 1e-3,
            seed: 42,
            pooling: Pooling::Last,
            causal: true,
            decay: Decay::InverseLog,
        }
    }
}

impl TemporalConfig {
    pub fn from_map(config: &Map<String, Value>) -> Result<Self, TemporalError> {
        let parsed: Self = serde_path_to_error::deserialize(Value::Object(config.clone())).map_err(|e| {
            TemporalError::InvalidConfig {
                path: e.path().to_string(),
                message: e.inner().to_string(),
            }
        })?;
        parsed.validate()?;
        Ok(parsed)
    }

    pub fn validate(&self) -> Result<(), TemporalError> {
        let invalid = |path: &str, message: String| {
            Err(TemporalError::InvalidConfig {
                path: path.into(),
                message,
            })
        };
        for (path, v) in [
            ("hidden_size", self.hidden_size),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("ff_width", self.ff_width),
            ("batch_size", self.batch_size),
        ] {
            if v == 0 {
                return invalid(path, "must be at least 1".into());
            }
        }
        if self.d_model % self.n_heads != 0 {
            return invalid(
                "d_model",
                format!("{} is not divisible by n_heads = {}", self.d_model, self.n_heads),
            );
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return invalid("learning_rate", "must be a positive number".into());
        }
        Ok(())
    }
}

/// Per-epoch mean training loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epoch_loss: Vec<f64>,
    pub epochs: usize,
    pub seed: u64,
}

impl TrainLog {
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "epoch,loss")?;
        for (e, l) in self.epoch_loss.iter().enumerate() {
            writeln!(out, "{},{}", e + 1, l)?;
        }
        out.flush()
    }
}

/// How per-term losses combine within a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Mean,
    Sum,
}

enum Cache {
    Lstm(LstmCache),
    Transformer(TransformerCache),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TemporalModel {
    pub kind: ModelKind,
    pub config: TemporalConfig,
    pub n_features: usize,
    pub n_classes: usize,
    pub head: Head,
    /// Backbone parameters followed by the read-out (`K x C` then `C`).
    pub params: Vec<f64>,
}

impl TemporalModel {
    /// Unfitted model with seeded initial parameters.
    pub fn new(
        kind: ModelKind,
        config: TemporalConfig,
        n_features: usize,
        n_classes: usize,
        head: Head,
    ) -> Result<Self, TemporalError> {
        config.validate()?;
        if n_features == 0 || n_classes < 2 {
            return Err(TemporalError::ShapeMismatch(format!(
                "need at least one feature and two classes, got {n_features} and {n_classes}"
            )));
        }
        let mut m = Self {
            kind,
            config,
            n_features,
            n_classes,
            head,
            params: Vec::new(),
        };
        m.params = vec![0.0; m.backbone_len() + m.width() * n_classes + n_classes];
        let mut rng = ChaCha8Rng::seed_from_u64(m.config.seed);
        m.initialize(&mut rng);
        Ok(m)
    }

    fn lstm_shape(&self) -> LstmShape {
        LstmShape {
            f: self.n_features,
            h: self.config.hidden_size,
            time_aware: self.kind == ModelKind::Tlstm,
        }
    }

    fn transformer_shape(&self) -> TransformerShape {
        TransformerShape {
            f: self.n_features,
            d: self.config.d_model,
            heads: self.config.n_heads,
            layers: self.config.n_layers,
            ff: self.config.ff_width,
            causal: self.config.causal,
        }
    }

    /// Width of the backbone's hidden states.
    fn width(&self) -> usize {
        match self.kind {
            ModelKind::Lstm | ModelKind::Tlstm => self.config.hidden_size,
            ModelKind::Transformer => self.config.d_model,
        }
    }

    fn backbone_len(&self) -> usize {
        match self.kind {
            ModelKind::Lstm | ModelKind::Tlstm => self.lstm_shape().len(),
            ModelKind::Transformer => self.transformer_shape().len(),
        }
    }

    fn readout(&self) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let start = self.backbone_len();
        let w = start..start + self.width() * self.n_classes;
        let b = w.end..w.end + self.n_classes;
        (w, b)
    }

    fn initialize<R: Rng>(&mut self, rng: &mut R) {
        let n = self.backbone_len();
        match self.kind {
            ModelKind::Lstm | ModelKind::Tlstm => self.lstm_shape().init(&mut self.params[..n], rng),
            ModelKind::Transformer => self.transformer_shape().init(&mut self.params[..n], rng),
        }
        let (w, b) = self.readout();
        let bound = 1.0 / (self.width() as f64).sqrt();
        for v in &mut self.params[w] {
            *v = rng.gen_range(-bound..bound);
        }
        self.params[b].fill(0.0);
    }

    /// Index range of the decay weights and bias (T-LSTM only).
    pub fn decay_parameters(&self) -> Option<std::ops::Range<usize>> {
        (self.kind == ModelKind::Tlstm).then(|| {
            let s = self.lstm_shape();
            s.wd().start..s.bd().end
        })
    }

    fn encode(&self, x: &[f64], deltas: &[f64]) -> (Vec<f64>, Cache) {
        match self.kind {
            ModelKind::Lstm | ModelKind::Tlstm => {
                let (h, c) = lstm::forward(&self.lstm_shape(), &self.params, x, deltas, self.config.decay);
                (h, Cache::Lstm(c))
            }
            ModelKind::Transformer => {
                let (h, c) = transformer::forward(&self.transformer_shape(), &self.params, x);
                (h, Cache::Transformer(c))
            }
        }
    }

    fn encode_backward(&self, cache: &Cache, dstates: &[f64], grad: &mut [f64]) {
        match cache {
            Cache::Lstm(c) => lstm::backward(&self.lstm_shape(), &self.params, c, dstates, grad),
            Cache::Transformer(c) => transformer::backward(&self.transformer_shape(), &self.params, c, dstates, grad),
        }
    }

    fn pool(&self, states: &[f64], len: usize) -> Vec<f64> {
        let k = self.width();
        match self.config.pooling {
            Pooling::Last => states[(len - 1) * k..len * k].to_vec(),
            Pooling::Mean => {
                let mut p = vec![0.0; k];
                for row in states.chunks_exact(k) {
                    for (a, b) in p.iter_mut().zip(row) {
                        *a += b;
                    }
                }
                p.iter_mut().for_each(|v| *v /= len as f64);
                p
            }
        }
    }

    /// Logits for one sequence given its full `T x F` block, deltas and
    /// mask (a true prefix). Static head: one row. Temporal head: `T` rows,
    /// zero at padded steps.
    pub fn forward_logits(&self, values: &[f64], deltas: &[f64], mask: &[bool]) -> Vec<Vec<f64>> {
        let len = mask.iter().take_while(|&&m| m).count();
        let c = self.n_classes;
        let (w, b) = self.readout();
        if len == 0 {
            return match self.head {
                Head::Static => vec![self.params[b].to_vec()],
                Head::Temporal => vec![vec![0.0; c]; mask.len()],
            };
        }
        let (states, _) = self.encode(&values[..len * self.n_features], &deltas[..len]);
        match self.head {
            Head::Static => {
                let pooled = self.pool(&states, len);
                vec![affine(&pooled, &self.params[w], Some(&self.params[b]), self.width(), c)]
            }
            Head::Temporal => {
                let logits = affine(&states, &self.params[w], Some(&self.params[b]), self.width(), c);
                let mut rows: Vec<Vec<f64>> = logits.chunks_exact(c).map(<[f64]>::to_vec).collect();
                rows.resize(mask.len(), vec![0.0; c]);
                rows
            }
        }
    }

    fn check_tensor(&self, t: &SequenceTensor) -> Result<(), TemporalError> {
        if t.n_features() != self.n_features {
            return Err(TemporalError::ShapeMismatch(format!(
                "model expects {} features, tensor has {}",
                self.n_features,
                t.n_features()
            )));
        }
        if t.has_missing() {
            return Err(TemporalError::UncleanInput("NaN at an unmasked step".into()));
        }
        for n in 0..t.n_sequences() {
            if let Some(step) = t.sequence_deltas(n).iter().position(|&d| d < 0.0 || d.is_nan()) {
                return Err(TemporalError::NegativeDelta {
                    entity: t.entities[n].clone(),
                    step,
                });
            }
        }
        Ok(())
    }

    /// Class probabilities per sequence (static head) or per unmasked step
    /// (temporal head; one inner row per real step).
    pub fn predict_proba(&self, t: &SequenceTensor) -> Result<Vec<Vec<Vec<f64>>>, TemporalError> {
        self.check_tensor(t)?;
        Ok((0..t.n_sequences())
            .map(|n| {
                let mut rows = self.forward_logits(t.sequence(n), t.sequence_deltas(n), t.sequence_mask(n));
                if self.head == Head::Temporal {
                    rows.truncate(t.lengths[n]);
                }
                for r in &mut rows {
                    softmax_in_place(r);
                }
                rows
            })
            .collect())
    }

    /// Loss over the listed sequences and its gradient with respect to
    /// every parameter. Returns `(loss, gradient, number of loss terms)`.
    pub fn objective(
        &self,
        t: &SequenceTensor,
        batch: &[usize],
        reduction: Reduction,
    ) -> Result<(f64, Vec<f64>, usize), TemporalError> {
        let mut grad = vec![0.0; self.params.len()];
        let (wr, br) = self.readout();
        let (k, c, f) = (self.width(), self.n_classes, self.n_features);
        let mut loss = 0.0;
        let mut terms = 0;
        for &n in batch {
            let len = t.lengths[n];
            if len == 0 {
                continue;
            }
            let (states, cache) = self.encode(&t.sequence(n)[..len * f], &t.sequence_deltas(n)[..len]);
            let dstates = match (&t.labels, self.head) {
                (SequenceLabels::Static(labels), Head::Static) => {
                    let pooled = self.pool(&states, len);
                    let logits = affine(&pooled, &self.params[wr.clone()], Some(&self.params[br.clone()]), k, c);
                    let mut dlogits = vec![0.0; c];
                    loss += cross_entropy(&logits, labels[n], 1.0, &mut dlogits);
                    terms += 1;
                    let (dw, db) = pair_mut(&mut grad, wr.clone(), br.clone());
                    let dpooled = affine_backward(&pooled, &self.params[wr.clone()], &dlogits, k, c, dw, Some(db));
                    let mut ds = vec![0.0; len * k];
                    match self.config.pooling {
                        Pooling::Last => ds[(len - 1) * k..].copy_from_slice(&dpooled),
                        Pooling::Mean => {
                            for row in ds.chunks_exact_mut(k) {
                                for (a, b) in row.iter_mut().zip(&dpooled) {
                                    *a = b / len as f64;
                                }
                            }
                        }
                    }
                    ds
                }
                (SequenceLabels::Temporal(_), Head::Temporal) => {
                    let labels = &t.temporal_labels(n).unwrap_or_default()[..len];
                    let logits = affine(&states, &self.params[wr.clone()], Some(&self.params[br.clone()]), k, c);
                    let mut dlogits = vec![0.0; len * c];
                    for (&y, (z, dz)) in labels.iter().zip(logits.chunks_exact(c).zip(dlogits.chunks_exact_mut(c))) {
                        loss += cross_entropy(z, y, 1.0, dz);
                    }
                    terms += len;
                    let (dw, db) = pair_mut(&mut grad, wr.clone(), br.clone());
                    affine_backward(&states, &self.params[wr.clone()], &dlogits, k, c, dw, Some(db))
                }
                _ => {
                    return Err(TemporalError::ShapeMismatch(
                        "label kind does not match the model head".into(),
                    ))
                }
            };
            self.encode_backward(&cache, &dstates, &mut grad);
        }
        if reduction == Reduction::Mean && terms > 0 {
            let s = 1.0 / terms as f64;
            loss *= s;
            grad.iter_mut().for_each(|g| *g *= s);
        }
        Ok((loss, grad, terms))
    }

    /// Trains in place with Adam over seeded mini-batches.
    pub fn fit(&mut self, t: &SequenceTensor) -> Result<TrainLog, TemporalError> {
        self.check_tensor(t)?;
        if t.n_sequences() == 0 {
            return Err(TemporalError::EmptyTraining);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        self.initialize(&mut rng);
        let mut adam = Adam::new(self.params.len(), self.config.learning_rate);
        let mut order: Vec<usize> = (0..t.n_sequences()).collect();
        let mut log = Vec::with_capacity(self.config.epochs);
        for epoch in 0..self.config.epochs {
            order.shuffle(&mut rng);
            let mut total = 0.0;
            let mut count = 0;
            for batch in order.chunks(self.config.batch_size) {
                let (loss, grad, terms) = self.objective(t, batch, Reduction::Mean)?;
                if !loss.is_finite() {
                    return Err(TemporalError::NonFiniteLoss { epoch });
                }
                adam.step(&mut self.params, &grad);
                total += loss * terms as f64;
                count += terms;
            }
            if self.params.iter().any(|p| !p.is_finite()) {
                return Err(TemporalError::NonFiniteLoss { epoch });
            }
            log.push(if count > 0 { total / count as f64 } else { 0.0 });
        }
        Ok(TrainLog {
            epoch_loss: log,
            epochs: self.config.epochs,
            seed: self.config.seed,
        })
    }

    pub fn to_json(&self) -> Value {
        serde_json::json!({
            "format": MODEL_FORMAT,
            "version": MODEL_FORMAT_VERSION,
            "kind": self.kind.name(),
            "config": self.config,
            "state": {
                "n_features": self.n_features,
                "n_classes": self.n_classes,
                "head": self.head,
                "params": self.params,
            },
        })
    }

    pub fn from_json(doc: &Value) -> Result<Self, TemporalError> {
        let bad = |m: String| TemporalError::Persistence(m);
        if doc.get("format").and_then(Value::as_str) != Some(MODEL_FORMAT) {
            return Err(bad("missing or foreign format tag".into()));
        }
        let version = doc.get("version").and_then(Value::as_u64);
        if version != Some(u64::from(MODEL_FORMAT_VERSION)) {
            return Err(bad(format!("unsupported version {version:?}")));
        }
        let kind: ModelKind = doc.get("kind").and_then(Value::as_str).unwrap_or_default().parse()?;
        let config: TemporalConfig =
            serde_json::from_value(doc.get("config").cloned().unwrap_or(Value::Null)).map_err(|e| bad(e.to_string()))?;
        #[derive(Deserialize)]
        struct State {
            n_features: usize,
            n_classes: usize,
            head: Head,
            params: Vec<f64>,
        }
        let state: State =
            serde_json::from_value(doc.get("state").cloned().unwrap_or(Value::Null)).map_err(|e| bad(e.to_string()))?;
        let mut m = Self::new(kind, config, state.n_features, state.n_classes, state.head)?;
        if state.params.len() != m.params.len() {
            return Err(bad(format!(
                "expected {} parameters, found {}",
                m.params.len(),
                state.params.len()
            )));
        }
        m.params = state.params;
        Ok(m)
    }
}

/// Adam with the usual defaults (0.9, 0.999, 1e-8).
struct Adam {
    lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize, lr: f64) -> Self {
        Self {
            lr,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = Self::B1 * *m + (1.0 - Self::B1) * g;
            *v = Self::B2 * *v + (1.0 - Self::B2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
        }
    }
}

/// Largest relative error `|ga - gn| / max(|ga|, |gn|, 1e-8)` between the
/// analytic gradient of the summed loss over `batch` and central finite
/// differences with step `h`, over `n_coords` randomly chosen parameters
/// (all of them when there are fewer).
pub fn gradient_check(
    model: &TemporalModel,
    t: &SequenceTensor,
    batch: &[usize],
    n_coords: usize,
    h: f64,
    seed: u64,
) -> Result<f64, TemporalError> {
    let (_, analytic, _) = model.objective(t, batch, Reduction::Sum)?;
    let mut coords: Vec<usize> = (0..model.params.len()).collect();
    coords.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    coords.truncate(n_coords);
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for i in coords {
        let orig = probe.params[i];
        probe.params[i] = orig + h;
        let up = probe.objective(t, batch, Reduction::Sum)?.0;
        probe.params[i] = orig - h;
        let down = probe.objective(t, batch, Reduction::Sum)?.0;
        probe.params[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let ga = analytic[i];
        worst = worst.max((ga - numeric).abs() / ga.abs().max(numeric.abs()).max(1e-8));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests;
