//! Data-quality summary of an ingested source, without any modeling.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{source_spec, LoadedConfig, PipelineError};
use crate::format::Labels;
use crate::ingest::{read_source, IngestReport};
use crate::stats;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSummary {
    pub name: String,
    pub observed: usize,
    pub missing_fraction: f64,
    pub mean: Option<f64>,
    pub min: Option<f64>,
    pub max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSummary {
    pub entities: usize,
    pub rows: usize,
    /// `(min, median, max)` steps per entity.
    pub steps_per_entity: (usize, f64, usize),
    pub features: Vec<FeatureSummary>,
    pub label_kind: String,
    /// Entities per class for static labels, rows per class for temporal.
    pub class_counts: Vec<(String, usize)>,
    pub ingest: IngestReport,
}

pub fn inspect(loaded: &LoadedConfig, strict: bool) -> Result<DataSummary, PipelineError> {
    let config = &loaded.config;
    config
        .data
        .dataset_config()
        .validate()
        .map_err(|e| super::ConfigError::new(&["data"], e.to_string()))?;
    let data = read_source(&source_spec(loaded, strict), &config.data.dataset_config())?;
    let table = &data.table;
    let rows = table.n_rows();
    let features = table
        .feature_names
        .iter()
        .enumerate()
        .map(|(f, name)| {
            let values: Vec<f64> = table.entities.iter().flat_map(|e| e.observed(f)).collect();
            FeatureSummary {
                name: name.clone(),
                observed: values.len(),
                missing_fraction: if rows == 0 { 0.0 } else { 1.0 - values.len() as f64 / rows as f64 },
                mean: stats::mean(&values),
                min: stats::min(&values),
                max: stats::max(&values),
            }
        })
        .collect();
    let lengths: Vec<f64> = table.entities.iter().map(|e| e.len() as f64).collect();
    let steps_per_entity = (
        stats::min(&lengths).unwrap_or(0.0) as usize,
        stats::median(&lengths).unwrap_or(0.0),
        stats::max(&lengths).unwrap_or(0.0) as usize,
    );
    let mut counts = vec![0; data.labels.class_names.len()];
    let label_kind = match &data.labels.labels {
        Labels::Static(m) => {
            m.values().for_each(|&c| counts[c] += 1);
            "static"
        }
        Labels::Temporal(m) => {
            m.values().flatten().for_each(|&c| counts[c] += 1);
            "temporal"
        }
    };
    Ok(DataSummary {
        entities: table.entities.len(),
        rows,
        steps_per_entity,
        features,
        label_kind: label_kind.into(),
        class_counts: data.labels.class_names.iter().cloned().zip(counts).collect(),
        ingest: data.report,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into())
}

impl DataSummary {
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "files read: {}", self.ingest.files_read);
        let _ = writeln!(out, "entities: {}", self.entities);
        let _ = writeln!(out, "rows: {}", self.rows);
        let (lo, mid, hi) = self.steps_per_entity;
        let _ = writeln!(out, "steps per entity: min {lo}, median {mid}, max {hi}");
        let _ = writeln!(out, "cells coerced to missing: {}", self.ingest.cells_coerced_missing);
        if !self.ingest.columns_dropped.is_empty() {
            let _ = writeln!(out, "columns dropped: {}", self.ingest.columns_dropped.join(", "));
        }
        let _ = writeln!(out, "labels ({}):", self.label_kind);
        for (name, n) in &self.class_counts {
            let _ = writeln!(out, "  {name}: {n}");
        }
        let width = self.features.iter().map(|f| f.name.chars().count()).chain([7]).max().unwrap_or(7);
        let _ = writeln!(
            out,
            "{:<width$}  {:>9} {:>9} {:>12} {:>12} {:>12}",
            "feature", "observed", "missing", "mean", "min", "max"
        );
        for f in &self.features {
            let _ = writeln!(
                out,
                "{:<width$}  {:>9} {:>8.1}% {:>12} {:>12} {:>12}",
                f.name,
                f.observed,
                100.0 * f.missing_fraction,
                opt(f.mean),
                opt(f.min),
                opt(f.max)
            );
        }
        for w in &self.ingest.warnings {
            let _ = writeln!(out, "warning: {}: {}", w.file, w.message);
        }
        out
    }
}
