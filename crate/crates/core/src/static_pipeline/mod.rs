//! Static feature route: per-entity aggregation of the event table, entity
//! level train/test split, IQR outlier removal, imputation and scaling. Every
//! fitted quantity comes from training rows only and is replayable through
//! [`FittedCleaner::apply`].

mod aggregate;
mod clean;
mod split;

use std::collections::HashSet;
use std::io::Write;

use thiserror::Error;

pub use aggregate::{extract_features, AggFunc, DURATION_FEATURE};
pub use clean::{
    fit_apply_cleaning, scale_features, FittedCleaner, ImputeStrategy, OutlierMethod, ScaleMethod,
    ScaleParams, IQR_MULTIPLIER,
};
pub use split::{stratified_split, SplitSpec};

use crate::format::{CellValue, LabelFrame};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StaticError {
    #[error("no aggregation selected and duration disabled")]
    NoAggregationsRequested,
    #[error("class {0} has fewer than two members; cannot stratify")]
    ClassTooSmall(usize),
    #[error("degenerate split: {0}")]
    DegenerateSplit(String),
    #[error("entity `{0}` has no static label")]
    UnlabeledEntity(String),
    #[error("training matrix is empty")]
    EmptyTrain,
    #[error("feature `{0}` still has missing cells")]
    MissingValues(String),
    #[error("every feature was dropped during cleaning")]
    NoFeaturesLeft,
    #[error("feature layout differs between matrices: {0}")]
    FeatureMismatch(String),
}

/// Per-entity static features plus (optionally) one class per entity.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureMatrix {
    pub entities: Vec<String>,
    pub feature_names: Vec<String>,
    pub values: Vec<Vec<CellValue>>,
    /// Aligned with `entities`; empty when the matrix is unlabeled.
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
}

impl FeatureMatrix {
    pub fn n_rows(&self) -> usize {
        self.entities.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.feature_names.iter().position(|f| f == name)
    }

    pub fn is_labeled(&self) -> bool {
        !self.labels.is_empty() || self.entities.is_empty()
    }

    /// Attaches static labels from a label frame.
    pub fn with_labels(mut self, frame: &LabelFrame) -> Result<Self, StaticError> {
        self.labels = self
            .entities
            .iter()
            .map(|e| frame.static_label(e).ok_or_else(|| StaticError::UnlabeledEntity(e.clone())))
            .collect::<Result<_, _>>()?;
        self.class_names = frame.class_names.clone();
        Ok(self)
    }

    /// Rows for the given entities, in the given order.
    pub fn select(&self, entities: &[String]) -> Self {
        let idx: Vec<usize> = entities
            .iter()
            .filter_map(|e| self.entities.iter().position(|x| x == e))
            .collect();
        Self {
            entities: idx.iter().map(|&i| self.entities[i].clone()).collect(),
            feature_names: self.feature_names.clone(),
            values: idx.iter().map(|&i| self.values[i].clone()).collect(),
            labels: if self.labels.is_empty() {
                Vec::new()
            } else {
                idx.iter().map(|&i| self.labels[i]).collect()
            },
            class_names: self.class_names.clone(),
        }
    }

    /// Drops the named columns.
    pub fn without_features(&self, names: &[&str]) -> Self {
        let drop: HashSet<&str> = names.iter().copied().collect();
        let keep: Vec<usize> = (0..self.n_features())
            .filter(|&f| !drop.contains(self.feature_names[f].as_str()))
            .collect();
        Self {
            entities: self.entities.clone(),
            feature_names: keep.iter().map(|&f| self.feature_names[f].clone()).collect(),
            values: self
                .values
                .iter()
                .map(|r| keep.iter().map(|&f| r[f]).collect())
                .collect(),
            labels: self.labels.clone(),
            class_names: self.class_names.clone(),
        }
    }

    /// Non-missing values of column `f`.
    pub fn observed(&self, f: usize) -> Vec<f64> {
        self.values.iter().filter_map(|r| r[f].as_f64()).collect()
    }

    /// Dense row-major copy; fails on any missing cell.
    pub fn to_dense(&self) -> Result<Vec<Vec<f64>>, StaticError> {
        self.values
            .iter()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .map(|(f, c)| {
                        c.as_f64()
                            .ok_or_else(|| StaticError::MissingValues(self.feature_names[f].clone()))
                    })
                    .collect()
            })
            .collect()
    }

    /// Writes the matrix as delimited text: header row, entity id first,
    /// label name last when labeled. Missing cells are empty.
    pub fn write_delimited<W: Write>(&self, out: W, delimiter: u8) -> std::io::Result<()> {
        let mut w = csv::WriterBuilder::new().delimiter(delimiter).from_writer(out);
        let mut header = vec!["entity".to_string()];
        header.extend(self.feature_names.iter().cloned());
        let labeled = !self.labels.is_empty();
        if labeled {
            header.push("label".into());
        }
        w.write_record(&header)?;
        for (i, e) in self.entities.iter().enumerate() {
            let mut rec = vec![e.clone()];
            rec.extend(self.values[i].iter().map(ToString::to_string));
            if labeled {
                rec.push(self.class_names.get(self.labels[i]).cloned().unwrap_or_default());
            }
            w.write_record(&rec)?;
        }
        w.flush()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn delimited_export() {
        let m = FeatureMatrix {
            entities: vec!["a".into(), "b".into()],
            feature_names: vec!["hr__mean".into()],
            values: vec![vec![CellValue::Number(1.5)], vec![CellValue::Missing]],
            labels: vec![0, 1],
            class_names: vec!["0".into(), "1".into()],
        };
        let mut buf = Vec::new();
        m.write_delimited(&mut buf, b',').unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "entity,hr__mean,label\na,1.5,0\nb,,1\n");
        assert!(m.to_dense().is_err());
        let sel = m.select(&["b".to_string()]);
        assert_eq!(sel.labels, vec![1]);
    }
}
