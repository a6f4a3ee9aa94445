use log::warn;
use serde::{Deserialize, Serialize};

use super::{SequenceError, SequenceTensor};
use crate::static_pipeline::{OutlierMethod, ScaleMethod, ScaleParams, IQR_MULTIPLIER};
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SequenceFill {
    #[default]
    Ffill,
    Mean,
}

/// Where a cleaned cell's value came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Observed,
    CarriedForward,
    SubjectStatistic,
    GlobalStatistic,
    Padding,
}

/// Train-fitted sequence cleaning: fences, global fill values and masked
/// scaling parameters for each kept feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceCleaner {
    pub feature_names: Vec<String>,
    pub fill_missing: SequenceFill,
    pub global_fill: Vec<f64>,
    pub outlier_method: OutlierMethod,
    pub fences: Vec<(f64, f64)>,
    pub scale_method: ScaleMethod,
    pub scale_params: Vec<ScaleParams>,
    pub dropped_features: Vec<String>,
}

impl SequenceCleaner {
    /// Replays fences, imputation and scaling on a raw (tensorized) tensor.
    pub fn apply(&self, t: &SequenceTensor) -> Result<SequenceTensor, SequenceError> {
        self.apply_traced(t).map(|(out, _)| out)
    }

    /// Like [`apply`](Self::apply), also returning one provenance tag per
    /// cell (`[n][t][f]` over the kept features).
    pub fn apply_traced(&self, t: &SequenceTensor) -> Result<(SequenceTensor, Vec<Provenance>), SequenceError> {
        let cols = feature_columns(&self.feature_names, t)?;
        let (nf, tl) = (cols.len(), t.max_len);
        let mut values = vec![0.0; t.n_sequences() * tl * nf];
        let mut trace = vec![Provenance::Padding; values.len()];

        for s in 0..t.n_sequences() {
            let len = t.lengths[s];
            for (k, &c) in cols.iter().enumerate() {
                let (lo, hi) = self.fences[k];
                let series: Vec<Option<f64>> = (0..len)
                    .map(|step| Some(t.cell(s, step, c)).filter(|v| !v.is_nan() && *v >= lo && *v <= hi))
                    .collect();
                let observed: Vec<f64> = series.iter().flatten().copied().collect();
                let subject = stats::mean(&observed);
                let mut last = None;
                for (step, v) in series.into_iter().enumerate() {
                    let (x, p) = match (v, self.fill_missing, last, subject) {
                        (Some(x), ..) => (x, Provenance::Observed),
                        (None, SequenceFill::Ffill, Some(prev), _) => (prev, Provenance::CarriedForward),
                        (None, _, _, Some(m)) => (m, Provenance::SubjectStatistic),
                        (None, ..) => (self.global_fill[k], Provenance::GlobalStatistic),
                    };
                    if v.is_some() {
                        last = v;
                    }
                    let at = (s * tl + step) * nf + k;
                    values[at] = match self.scale_params.get(k) {
                        Some(p) => p.apply(x),
                        None => x,
                    };
                    trace[at] = p;
                }
            }
        }

        let out = SequenceTensor {
            max_len: tl,
            values,
            mask: t.mask.clone(),
            lengths: t.lengths.clone(),
            deltas: t.deltas.clone(),
            entities: t.entities.clone(),
            feature_names: self.feature_names.clone(),
            labels: t.labels.clone(),
            class_names: t.class_names.clone(),
        };
        Ok((out, trace))
    }

    /// Composes with a scaler fitted on this cleaner's output.
    pub fn then(mut self, scaler: SequenceCleaner) -> Self {
        debug_assert_eq!(self.feature_names, scaler.feature_names);
        self.scale_method = scaler.scale_method;
        self.scale_params = scaler.scale_params;
        self
    }
}

fn feature_columns(names: &[String], t: &SequenceTensor) -> Result<Vec<usize>, SequenceError> {
    names
        .iter()
        .map(|n| {
            t.feature_names
                .iter()
                .position(|x| x == n)
                .ok_or_else(|| SequenceError::FeatureMismatch(n.clone()))
        })
        .collect()
}

/// Non-NaN values of feature `f` over unmasked steps, in sequence order.
fn unmasked_cells(t: &SequenceTensor, f: usize) -> Vec<f64> {
    (0..t.n_sequences())
        .flat_map(|s| (0..t.lengths[s]).map(move |step| (s, step)))
        .map(|(s, step)| t.cell(s, step, f))
        .filter(|v| !v.is_nan())
        .collect()
}

fn check_pair(train: &SequenceTensor, test: &SequenceTensor) -> Result<(), SequenceError> {
    if train.feature_names != test.feature_names {
        return Err(SequenceError::FeatureMismatch("train and test feature names differ".into()));
    }
    if train.n_sequences() == 0 {
        return Err(SequenceError::EmptyTrain);
    }
    Ok(())
}

/// Fits fences and global fill values on the unmasked training cells and
/// imputes both tensors: observed, then carried forward (ffill only), then
/// the subject's own mean, then the training mean. Features with no
/// training observation at all are dropped with a warning.
pub fn clean_sequences(
    train: &SequenceTensor,
    test: &SequenceTensor,
    fill_missing: SequenceFill,
    outlier_method: OutlierMethod,
) -> Result<(SequenceTensor, SequenceTensor, SequenceCleaner), SequenceError> {
    check_pair(train, test)?;
    let mut cleaner = SequenceCleaner {
        feature_names: Vec::new(),
        fill_missing,
        global_fill: Vec::new(),
        outlier_method,
        fences: Vec::new(),
        scale_method: ScaleMethod::None,
        scale_params: Vec::new(),
        dropped_features: Vec::new(),
    };
    for (f, name) in train.feature_names.iter().enumerate() {
        let cells = unmasked_cells(train, f);
        let fences = match outlier_method {
            OutlierMethod::Iqr => stats::iqr_fences(&cells, IQR_MULTIPLIER),
            OutlierMethod::None => None,
        }
        .unwrap_or((f64::NEG_INFINITY, f64::INFINITY));
        let kept: Vec<f64> = cells.into_iter().filter(|&v| v >= fences.0 && v <= fences.1).collect();
        match stats::mean(&kept) {
            Some(m) => {
                cleaner.feature_names.push(name.clone());
                cleaner.fences.push(fences);
                cleaner.global_fill.push(m);
            }
            None => {
                warn!("dropping sequence feature {name}: no training observation");
                cleaner.dropped_features.push(name.clone());
            }
        }
    }
    if cleaner.feature_names.is_empty() {
        return Err(SequenceError::NoFeaturesLeft);
    }
    Ok((cleaner.apply(train)?, cleaner.apply(test)?, cleaner))
}

/// Scales unmasked cells with parameters fitted on unmasked training cells
/// only. Padded cells are left untouched.
pub fn masked_scale(
    train: &SequenceTensor,
    test: &SequenceTensor,
    method: ScaleMethod,
) -> Result<(SequenceTensor, SequenceTensor, SequenceCleaner), SequenceError> {
    check_pair(train, test)?;
    let nf = train.n_features();
    let scaler = SequenceCleaner {
        feature_names: train.feature_names.clone(),
        fill_missing: SequenceFill::Ffill,
        global_fill: vec![0.0; nf],
        outlier_method: OutlierMethod::None,
        fences: vec![(f64::NEG_INFINITY, f64::INFINITY); nf],
        scale_method: method,
        scale_params: (0..nf).map(|f| ScaleParams::fit(method, &unmasked_cells(train, f))).collect(),
        dropped_features: Vec::new(),
    };
    let scale = |t: &SequenceTensor| {
        let mut out = t.clone();
        for s in 0..t.n_sequences() {
            for step in 0..t.lengths[s] {
                for (f, p) in scaler.scale_params.iter().enumerate() {
                    let at = (s * t.max_len + step) * nf + f;
                    out.values[at] = p.apply(t.values[at]);
                }
            }
        }
        out
    };
    Ok((scale(train), scale(test), scaler))
}
