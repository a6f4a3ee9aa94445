//! Cox proportional hazards on static covariates: Breslow partial
//! likelihood, damped Newton fitting, Breslow baseline hazard and
//! Harrell's concordance index.

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::static_models::{MODEL_FORMAT, MODEL_FORMAT_VERSION};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SurvivalError {
    #[error("invalid survival data: {0}")]
    InvalidData(String),
    #[error("no observed events")]
    NoEvents,
    #[error(
        "Cox fit did not converge after {iterations} iterations (gradient max-norm {gradient_norm:e}){}",
        if *separation_suspected { "; covariates may separate events (try a ridge penalty)" } else { "" }
    )]
    NonConverged {
        iterations: usize,
        beta: Vec<f64>,
        gradient_norm: f64,
        separation_suspected: bool,
    },
    #[error("no comparable pairs for concordance")]
    NoComparablePairs,
    #[error("invalid Cox config at `{path}`: {message}")]
    InvalidConfig { path: String, message: String },
    #[error("cannot load model: {0}")]
    Persistence(String),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SurvivalData {
    pub entities: Vec<String>,
    pub feature_names: Vec<String>,
    pub covariates: Vec<Vec<f64>>,
    pub duration: Vec<f64>,
    pub event: Vec<bool>,
}

impl SurvivalData {
    pub fn validate(&self) -> Result<(), SurvivalError> {
        let n = self.duration.len();
        if self.event.len() != n || self.covariates.len() != n {
            return Err(SurvivalError::InvalidData("row counts differ".into()));
        }
        if let Some(d) = self.duration.iter().find(|d| !(**d > 0.0 && d.is_finite())) {
            return Err(SurvivalError::InvalidData(format!("duration {d} is not positive")));
        }
        if self.covariates.iter().flatten().any(|v| !v.is_finite()) {
            return Err(SurvivalError::InvalidData("non-finite covariate".into()));
        }
        if !self.event.iter().any(|&e| e) {
            return Err(SurvivalError::NoEvents);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CoxConfig {
    pub max_iter: usize,
    pub tol: f64,
    /// Penalty `ridge / 2 * |beta|^2` subtracted from the log partial
    /// likelihood while fitting.
    pub ridge: f64,
}

impl Default for CoxConfig {
    fn default() -> Self {
        Self {
            max_iter: 100,
            tol: 1e-8,
            ridge: 0.0,
        }
    }
}

impl CoxConfig {
    pub fn from_map(config: &Map<String, Value>) -> Result<Self, SurvivalError> {
        let c: Self = serde_path_to_error::deserialize(Value::Object(config.clone())).map_err(|e| {
            SurvivalError::InvalidConfig {
                path: e.path().to_string(),
                message: e.inner().to_string(),
            }
        })?;
        if !(c.ridge >= 0.0 && c.ridge.is_finite()) {
            return Err(SurvivalError::InvalidConfig {
                path: "ridge".into(),
                message: "must be non-negative".into(),
            });
        }
        if !(c.tol > 0.0) {
            return Err(SurvivalError::InvalidConfig {
                path: "tol".into(),
                message: "must be positive".into(),
            });
        }
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoxModel {
    pub config: CoxConfig,
    pub feature_names: Vec<String>,
    pub dropped_features: Vec<String>,
    pub beta: Vec<f64>,
    /// Unpenalized Breslow log partial likelihood at `beta`.
    pub log_partial_likelihood: f64,
    /// `(event time, cumulative baseline hazard)` in increasing time.
    pub baseline: Vec<(f64, f64)>,
    pub iterations: usize,
    pub gradient_norm: f64,
    /// Penalized objective after each Newton iteration (entry 0 is the
    /// starting point).
    pub objective_trace: Vec<f64>,
}

/// A coefficient moving the log hazard by more than this per standard
/// deviation of its covariate is taken as a sign of separation.
pub const SEPARATION_BOUND: f64 = 15.0;

/// Row indices grouped by equal duration, groups in decreasing time.
fn time_groups(duration: &[f64]) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..duration.len()).collect();
    order.sort_by(|&a, &b| duration[b].total_cmp(&duration[a]).then(a.cmp(&b)));
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for i in order {
        match groups.last_mut() {
            Some(g) if duration[g[0]] == duration[i] => g.push(i),
            _ => groups.push(vec![i]),
        }
    }
    groups
}

/// Breslow log partial likelihood with gradient and Hessian.
pub fn partial_likelihood(
    x: &[Vec<f64>],
    duration: &[f64],
    event: &[bool],
    beta: &[f64],
) -> (f64, Vec<f64>, Vec<Vec<f64>>) {
    let f = beta.len();
    let eta: Vec<f64> = x.iter().map(|r| r.iter().zip(beta).map(|(a, b)| a * b).sum()).collect();
    let shift = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s0 = 0.0;
    let mut s1 = vec![0.0; f];
    let mut s2 = vec![vec![0.0; f]; f];
    let mut ll = 0.0;
    let mut grad = vec![0.0; f];
    let mut hess = vec![vec![0.0; f]; f];
    for group in time_groups(duration) {
        for &i in &group {
            let w = (eta[i] - shift).exp();
            s0 += w;
            for a in 0..f {
                s1[a] += w * x[i][a];
                for b in 0..f {
                    s2[a][b] += w * x[i][a] * x[i][b];
                }
            }
        }
        let events: Vec<usize> = group.into_iter().filter(|&i| event[i]).collect();
        if events.is_empty() {
            continue;
        }
        let d = events.len() as f64;
        ll += events.iter().map(|&i| eta[i]).sum::<f64>() - d * (s0.ln() + shift);
        for a in 0..f {
            let mean_a = s1[a] / s0;
            grad[a] += events.iter().map(|&i| x[i][a]).sum::<f64>() - d * mean_a;
            for b in 0..f {
                hess[a][b] -= d * (s2[a][b] / s0 - mean_a * s1[b] / s0);
            }
        }
    }
    (ll, grad, hess)
}

fn penalized(x: &[Vec<f64>], d: &[f64], e: &[bool], beta: &[f64], ridge: f64) -> (f64, Vec<f64>, Vec<Vec<f64>>) {
    let (mut ll, mut g, mut h) = partial_likelihood(x, d, e, beta);
    if ridge > 0.0 {
        ll -= 0.5 * ridge * beta.iter().map(|b| b * b).sum::<f64>();
        for (a, gb) in g.iter_mut().enumerate() {
            *gb -= ridge * beta[a];
            h[a][a] -= ridge;
        }
    }
    (ll, g, h)
}

fn max_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Newton direction solving `(-H) step = g`, falling back to a damped
/// system when `-H` is not positive definite.
fn newton_step(grad: &[f64], hess: &[Vec<f64>]) -> Vec<f64> {
    let f = grad.len();
    let neg_h = DMatrix::from_fn(f, f, |a, b| -hess[a][b]);
    let g = DVector::from_column_slice(grad);
    if let Some(ch) = neg_h.clone().cholesky() {
        return ch.solve(&g).iter().copied().collect();
    }
    let scale = (0..f).map(|a| neg_h[(a, a)].abs()).fold(1e-8, f64::max);
    let mut damping = 1e-8 * scale;
    loop {
        let m = &neg_h + DMatrix::identity(f, f) * damping;
        if let Some(ch) = m.cholesky() {
            return ch.solve(&g).iter().copied().collect();
        }
        damping *= 10.0;
    }
}

/// Fits a Cox model. Constant columns are dropped with a warning.
pub fn cox_fit(data: &SurvivalData, config: &CoxConfig) -> Result<CoxModel, SurvivalError> {
    data.validate()?;
    let n_cols = data.covariates.first().map_or(0, Vec::len);
    let (mut keep, mut dropped) = (Vec::new(), Vec::new());
    for c in 0..n_cols {
        let first = data.covariates[0][c];
        let name = data.feature_names.get(c).cloned().unwrap_or_else(|| format!("x{c}"));
        if data.covariates.iter().all(|r| r[c] == first) {
            warn!("dropping constant covariate {name}");
            dropped.push(name);
        } else {
            keep.push((c, name));
        }
    }
    let x: Vec<Vec<f64>> = data.covariates.iter().map(|r| keep.iter().map(|(c, _)| r[*c]).collect()).collect();
    let (d, e) = (&data.duration, &data.event);

    let mut beta = vec![0.0; keep.len()];
    let (mut ll, mut g, mut h) = penalized(&x, d, e, &beta, config.ridge);
    let mut trace = vec![ll];
    let mut iterations = 0;
    while max_norm(&g) >= config.tol {
        if iterations == config.max_iter {
            let separation_suspected = max_norm(&beta) > 10.0;
            return Err(SurvivalError::NonConverged {
                iterations,
                beta,
                gradient_norm: max_norm(&g),
                separation_suspected,
            });
        }
        iterations += 1;
        let step = newton_step(&g, &h);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let cand: Vec<f64> = beta.iter().zip(&step).map(|(b, s)| b + t * s).collect();
            let next = penalized(&x, d, e, &cand, config.ridge);
            if next.0 >= ll && next.0.is_finite() {
                beta = cand;
                (ll, g, h) = next;
                accepted = true;
                break;
            }
            t /= 2.0;
        }
        trace.push(ll);
        if !accepted {
            // no ascent left along the Newton direction: the iterate is as
            // good as floating point allows
            break;
        }
    }

    let (log_pl, _, _) = partial_likelihood(&x, d, e, &beta);
    let model = CoxModel {
        config: config.clone(),
        feature_names: keep.into_iter().map(|(_, n)| n).collect(),
        dropped_features: dropped,
        baseline: breslow_baseline(&x, d, e, &beta),
        beta,
        log_partial_likelihood: log_pl,
        iterations,
        gradient_norm: max_norm(&g),
        objective_trace: trace,
    };
    // Under separation the gradient vanishes as |beta| grows without
    // bound, so a tiny gradient alone does not mean a finite optimum.
    let spread: Vec<f64> = (0..x.first().map_or(0, Vec::len))
        .map(|c| crate::stats::sample_std(&x.iter().map(|r| r[c]).collect::<Vec<_>>()).unwrap_or(0.0))
        .collect();
    let runaway = model.beta.iter().zip(&spread).any(|(b, s)| (b * s).abs() > SEPARATION_BOUND);
    if runaway && config.ridge == 0.0 {
        return Err(SurvivalError::NonConverged {
            iterations,
            separation_suspected: true,
            gradient_norm: model.gradient_norm,
            beta: model.beta,
        });
    }
    if model.gradient_norm >= config.tol.max(1e-6) {
        return Err(SurvivalError::NonConverged {
            iterations,
            separation_suspected: max_norm(&model.beta) > 10.0,
            gradient_norm: model.gradient_norm,
            beta: model.beta,
        });
    }
    Ok(model)
}

/// Breslow cumulative baseline hazard at each distinct event time.
fn breslow_baseline(x: &[Vec<f64>], duration: &[f64], event: &[bool], beta: &[f64]) -> Vec<(f64, f64)> {
    let risk: Vec<f64> = x
        .iter()
        .map(|r| r.iter().zip(beta).map(|(a, b)| a * b).sum::<f64>().exp())
        .collect();
    let mut at_risk = 0.0;
    let mut increments = Vec::new();
    for group in time_groups(duration) {
        at_risk += group.iter().map(|&i| risk[i]).sum::<f64>();
        let deaths = group.iter().filter(|&&i| event[i]).count();
        if deaths > 0 {
            increments.push((duration[group[0]], deaths as f64 / at_risk));
        }
    }
    increments.reverse();
    let mut total = 0.0;
    increments
        .into_iter()
        .map(|(t, dh)| {
            total += dh;
            (t, total)
        })
        .collect()
}

impl CoxModel {
    /// Linear predictor `x . beta` for rows laid out as `feature_names`.
    pub fn risk(&self, rows: &[Vec<f64>]) -> Vec<f64> {
        rows.iter()
            .map(|r| r.iter().zip(&self.beta).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Risk scores for data whose columns may include dropped features.
    pub fn risk_for(&self, data: &SurvivalData) -> Result<Vec<f64>, SurvivalError> {
        let cols: Vec<usize> = self
            .feature_names
            .iter()
            .map(|n| {
                data.feature_names
                    .iter()
                    .position(|x| x == n)
                    .ok_or_else(|| SurvivalError::InvalidData(format!("missing covariate {n}")))
            })
            .collect::<Result<_, _>>()?;
        let rows: Vec<Vec<f64>> = data.covariates.iter().map(|r| cols.iter().map(|&c| r[c]).collect()).collect();
        Ok(self.risk(&rows))
    }

    /// Baseline survival `exp(-H0(t))` with `H0` a right-continuous step.
    pub fn baseline_survival(&self, t: f64) -> f64 {
        let i = self.baseline.partition_point(|&(time, _)| time <= t);
        let h = if i == 0 { 0.0 } else { self.baseline[i - 1].1 };
        (-h).exp()
    }

    pub fn to_json(&self) -> Value {
        serde_json::json!({
            "format": MODEL_FORMAT,
            "version": MODEL_FORMAT_VERSION,
            "kind": "Cox",
            "config": self.config,
            "state": self,
        })
    }

    pub fn from_json(doc: &Value) -> Result<Self, SurvivalError> {
        if doc.get("format").and_then(Value::as_str) != Some(MODEL_FORMAT)
            || doc.get("version").and_then(Value::as_u64) != Some(u64::from(MODEL_FORMAT_VERSION))
        {
            return Err(SurvivalError::Persistence("unknown format or version".into()));
        }
        serde_json::from_value(doc.get("state").cloned().unwrap_or(Value::Null))
            .map_err(|e| SurvivalError::Persistence(e.to_string()))
    }
}

/// Harrell's C: among pairs where the shorter duration ends in an event,
/// the fraction whose risk is higher for that subject; risk ties count 1/2.
pub fn concordance_index(risk: &[f64], duration: &[f64], event: &[bool]) -> Result<f64, SurvivalError> {
    let groups = time_groups(duration);
    // risks of subjects strictly later than the current group, kept sorted
    let mut later: Vec<f64> = Vec::new();
    let (mut concordant, mut ties, mut pairs) = (0u64, 0u64, 0u64);
    for group in groups {
        for &i in group.iter().filter(|&&i| event[i]) {
            let below = later.partition_point(|&r| r < risk[i]) as u64;
            let not_above = later.partition_point(|&r| r <= risk[i]) as u64;
            concordant += below;
            ties += not_above - below;
            pairs += later.len() as u64;
        }
        for &i in &group {
            let at = later.partition_point(|&r| r < risk[i]);
            later.insert(at, risk[i]);
        }
    }
    if pairs == 0 {
        return Err(SurvivalError::NoComparablePairs);
    }
    Ok((concordant as f64 + 0.5 * ties as f64) / pairs as f64)
}
