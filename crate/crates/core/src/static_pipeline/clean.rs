use log::warn;
use serde::{Deserialize, Serialize};

use super::{FeatureMatrix, StaticError};
use crate::format::CellValue;
use crate::stats;

pub const IQR_MULTIPLIER: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImputeStrategy {
    Mean,
    Median,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutlierMethod {
    #[default]
    Iqr,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScaleMethod {
    #[default]
    Standardize,
    MinMax,
    None,
}

/// Affine map `(x - center) / spread`; constant features map to 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleParams {
    pub center: f64,
    pub spread: f64,
    pub constant: bool,
}

impl ScaleParams {
    pub fn fit(method: ScaleMethod, values: &[f64]) -> Self {
        let (center, spread) = match method {
            ScaleMethod::Standardize => (
                stats::mean(values).unwrap_or(0.0),
                stats::sample_std(values).unwrap_or(0.0),
            ),
            ScaleMethod::MinMax => {
                let lo = stats::min(values).unwrap_or(0.0);
                (lo, stats::max(values).unwrap_or(lo) - lo)
            }
            ScaleMethod::None => (0.0, 1.0),
        };
        Self {
            center,
            spread,
            constant: !(spread > 0.0 && spread.is_finite()),
        }
    }

    pub fn apply(&self, x: f64) -> f64 {
        if self.constant {
            0.0
        } else {
            (x - self.center) / self.spread
        }
    }
}

/// Train-fitted cleaning and scaling parameters, one entry per kept feature.
/// Stages that were not fitted are `None`/empty and pass values through.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedCleaner {
    pub feature_names: Vec<String>,
    pub impute_strategy: Option<ImputeStrategy>,
    pub fill_values: Vec<f64>,
    pub outlier_method: OutlierMethod,
    /// `(lower, upper)`; infinite when the outlier stage is off.
    pub fences: Vec<(f64, f64)>,
    pub scale_method: ScaleMethod,
    pub scale_params: Vec<ScaleParams>,
    pub dropped_features: Vec<String>,
}

impl FittedCleaner {
    fn pass_through(feature_names: Vec<String>) -> Self {
        let n = feature_names.len();
        Self {
            feature_names,
            impute_strategy: None,
            fill_values: Vec::new(),
            outlier_method: OutlierMethod::None,
            fences: vec![(f64::NEG_INFINITY, f64::INFINITY); n],
            scale_method: ScaleMethod::None,
            scale_params: Vec::new(),
            dropped_features: Vec::new(),
        }
    }

    /// Replays the fitted stages (fences, then fill, then scaling) on a
    /// matrix holding at least the fitted features.
    pub fn apply(&self, m: &FeatureMatrix) -> Result<FeatureMatrix, StaticError> {
        let cols: Vec<usize> = self
            .feature_names
            .iter()
            .map(|n| m.feature_index(n).ok_or_else(|| StaticError::FeatureMismatch(n.clone())))
            .collect::<Result<_, _>>()?;
        let values = m
            .values
            .iter()
            .map(|row| {
                cols.iter()
                    .enumerate()
                    .map(|(k, &c)| {
                        let mut v = row[c].as_f64();
                        let (lo, hi) = self.fences[k];
                        if v.is_some_and(|x| x < lo || x > hi) {
                            v = None;
                        }
                        if v.is_none() {
                            v = self.fill_values.get(k).copied();
                        }
                        if let Some(p) = self.scale_params.get(k) {
                            v = v.map(|x| p.apply(x));
                        }
                        CellValue::from(v)
                    })
                    .collect()
            })
            .collect();
        Ok(FeatureMatrix {
            entities: m.entities.clone(),
            feature_names: self.feature_names.clone(),
            values,
            labels: m.labels.clone(),
            class_names: m.class_names.clone(),
        })
    }

    /// Composes this cleaner with a scaler fitted on its output.
    pub fn then(mut self, scaler: FittedCleaner) -> Self {
        debug_assert_eq!(self.feature_names, scaler.feature_names);
        self.scale_method = scaler.scale_method;
        self.scale_params = scaler.scale_params;
        self
    }
}

fn check_layout(train: &FeatureMatrix, test: &FeatureMatrix) -> Result<(), StaticError> {
    if train.feature_names != test.feature_names {
        return Err(StaticError::FeatureMismatch(
            "train and test feature names differ".into(),
        ));
    }
    if train.n_rows() == 0 {
        return Err(StaticError::EmptyTrain);
    }
    Ok(())
}

/// Fits IQR fences and fill values on `train`, then applies them to both
/// matrices. Out-of-fence values become missing before the fill value is
/// computed, so outliers never shape the fill. Features with no surviving
/// training value are dropped (listed in `dropped_features`).
pub fn fit_apply_cleaning(
    train: &FeatureMatrix,
    test: &FeatureMatrix,
    fill_missing: ImputeStrategy,
    outlier_method: OutlierMethod,
) -> Result<(FeatureMatrix, FeatureMatrix, FittedCleaner), StaticError> {
    check_layout(train, test)?;
    let mut cleaner = FittedCleaner::pass_through(Vec::new());
    cleaner.impute_strategy = Some(fill_missing);
    cleaner.outlier_method = outlier_method;
    cleaner.fences.clear();

    for (f, name) in train.feature_names.iter().enumerate() {
        let observed = train.observed(f);
        let fences = match outlier_method {
            OutlierMethod::Iqr => stats::iqr_fences(&observed, IQR_MULTIPLIER),
            OutlierMethod::None => None,
        }
        .unwrap_or((f64::NEG_INFINITY, f64::INFINITY));
        let kept: Vec<f64> = observed
            .into_iter()
            .filter(|&v| v >= fences.0 && v <= fences.1)
            .collect();
        let fill = match fill_missing {
            ImputeStrategy::Mean => stats::mean(&kept),
            ImputeStrategy::Median => stats::median(&kept),
        };
        match fill {
            Some(fill) => {
                cleaner.feature_names.push(name.clone());
                cleaner.fences.push(fences);
                cleaner.fill_values.push(fill);
            }
            None => {
                warn!("dropping feature {name}: no training observation");
                cleaner.dropped_features.push(name.clone());
            }
        }
    }
    if cleaner.feature_names.is_empty() {
        return Err(StaticError::NoFeaturesLeft);
    }
    Ok((cleaner.apply(train)?, cleaner.apply(test)?, cleaner))
}

/// Fits per-feature scaling on `train` (sample std for standardization) and
/// applies it to both matrices. Missing cells stay missing.
pub fn scale_features(
    train: &FeatureMatrix,
    test: &FeatureMatrix,
    method: ScaleMethod,
) -> Result<(FeatureMatrix, FeatureMatrix, FittedCleaner), StaticError> {
    check_layout(train, test)?;
    let mut scaler = FittedCleaner::pass_through(train.feature_names.clone());
    scaler.scale_method = method;
    scaler.scale_params = (0..train.n_features())
        .map(|f| ScaleParams::fit(method, &train.observed(f)))
        .collect();
    Ok((scaler.apply(train)?, scaler.apply(test)?, scaler))
}
