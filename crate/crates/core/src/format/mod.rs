//! Canonical event-table model and the converters that bring wide, long and
//! flattened raw tables into it.
//!
//! Every layout is first rewritten as a wide [`RawTable`] (one row per
//! entity and timestamp), then coerced to numbers, sorted, de-duplicated and
//! split into predictors ([`EventTable`]) and ground truth ([`LabelFrame`]).

mod coerce;
mod flat;
mod pivot;
pub mod timestamp;

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use coerce::{coerce_and_clean, CoercedTable, CoercionReport};
pub use flat::{unflatten_flat, FLAT_SEPARATOR};
pub use pivot::pivot_long_to_wide;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FormatError {
    #[error("column `{0}` not found")]
    MissingColumn(String),
    #[error("entity `{0}` carries more than one distinct static label")]
    ConflictingStaticLabel(String),
    #[error("table has no data rows")]
    EmptyTable,
    #[error("flattened column `{0}` does not follow the `<feature>@<timestamp>` convention")]
    MalformedFlatHeader(String),
    #[error("entity `{0}` appears in more than one row of a flattened table")]
    DuplicateEntityRow(String),
    #[error("row {row}: timestamp `{value}` is neither a number nor an ISO-8601 date-time")]
    UnparsableTimestamp { row: usize, value: String },
    #[error("row {row}: empty entity id")]
    MissingEntityId { row: usize },
    #[error("entity `{entity}` has no label{}", .timestamp.map(|t| format!(" at t={t}")).unwrap_or_default())]
    MissingLabel {
        entity: String,
        timestamp: Option<f64>,
    },
    #[error("row {row} has {found} cells, header has {expected}")]
    RaggedRow {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("duplicate column name `{0}`")]
    DuplicateColumn(String),
    #[error("variable `{0}` collides with the id or time column")]
    ConflictingColumn(String),
    #[error("invalid dataset configuration: {0}")]
    InvalidConfig(String),
}

/// A table of text cells exactly as read from a source. Empty cells are
/// empty strings.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawTable {
    pub column_names: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub source_name: String,
}

impl RawTable {
    pub fn new(
        column_names: Vec<String>,
        rows: Vec<Vec<String>>,
        source_name: impl Into<String>,
    ) -> Result<Self, FormatError> {
        let mut seen = HashSet::new();
        for name in &column_names {
            if !seen.insert(name.trim()) {
                return Err(FormatError::DuplicateColumn(name.trim().to_string()));
            }
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != column_names.len() {
                return Err(FormatError::RaggedRow {
                    row: i,
                    expected: column_names.len(),
                    found: row.len(),
                });
            }
        }
        Ok(Self {
            column_names,
            rows,
            source_name: source_name.into(),
        })
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        let name = name.trim();
        self.column_names.iter().position(|c| c.trim() == name)
    }

    pub(crate) fn require_column(&self, name: &str) -> Result<usize, FormatError> {
        self.column_index(name)
            .ok_or_else(|| FormatError::MissingColumn(name.trim().to_string()))
    }

    pub fn column(&self, idx: usize) -> impl Iterator<Item = &str> + '_ {
        self.rows.iter().map(move |r| r[idx].as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layout {
    Wide,
    Long,
    Flat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelType {
    #[default]
    Static,
    Temporal,
}

/// Field delimiter of a text source. Serialized as `"auto"`, `"tab"` or the
/// single delimiter character.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Delimiter {
    #[default]
    Auto,
    Char(char),
}

impl TryFrom<String> for Delimiter {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        match s.as_str() {
            "auto" => Ok(Delimiter::Auto),
            "tab" | "\\t" => Ok(Delimiter::Char('\t')),
            _ => {
                let mut chars = s.chars();
                match (chars.next(), chars.next()) {
                    (Some(c), None) if c.is_ascii() => Ok(Delimiter::Char(c)),
                    _ => Err(format!(
                        "delimiter must be \"auto\", \"tab\" or one ASCII character, got {s:?}"
                    )),
                }
            }
        }
    }
}

impl From<Delimiter> for String {
    fn from(d: Delimiter) -> String {
        match d {
            Delimiter::Auto => "auto".into(),
            Delimiter::Char('\t') => "tab".into(),
            Delimiter::Char(c) => c.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub layout: Layout,
    #[serde(default)]
    pub id_col: Option<String>,
    pub time_col: String,
    pub label_col: String,
    #[serde(default)]
    pub label_type: LabelType,
    #[serde(default)]
    pub long_variable_col: Option<String>,
    #[serde(default)]
    pub long_value_col: Option<String>,
    #[serde(default)]
    pub delimiter: Delimiter,
}

impl DatasetConfig {
    pub fn wide(id_col: &str, time_col: &str, label_col: &str) -> Self {
        Self {
            layout: Layout::Wide,
            id_col: Some(id_col.into()),
            time_col: time_col.into(),
            label_col: label_col.into(),
            label_type: LabelType::Static,
            long_variable_col: None,
            long_value_col: None,
            delimiter: Delimiter::Auto,
        }
    }

    pub fn validate(&self) -> Result<(), FormatError> {
        if self.layout == Layout::Long
            && (self.long_variable_col.is_none() || self.long_value_col.is_none())
        {
            return Err(FormatError::InvalidConfig(
                "long layout requires long_variable_col and long_value_col".into(),
            ));
        }
        if self.layout == Layout::Flat && self.label_type == LabelType::Temporal {
            return Err(FormatError::InvalidConfig(
                "flat layout carries one label per entity; label_type must be static".into(),
            ));
        }
        if self.time_col.trim().is_empty() || self.label_col.trim().is_empty() {
            return Err(FormatError::InvalidConfig(
                "time_col and label_col must be non-empty".into(),
            ));
        }
        Ok(())
    }

    pub(crate) fn require_id_col(&self) -> Result<&str, FormatError> {
        self.id_col
            .as_deref()
            .ok_or_else(|| FormatError::InvalidConfig("id_col is required for this layout".into()))
    }
}

/// One measured value. Non-finite numbers are never stored.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum CellValue {
    #[default]
    Missing,
    Number(f64),
}

impl CellValue {
    pub fn from_f64(v: f64) -> Self {
        if v.is_finite() {
            CellValue::Number(v)
        } else {
            CellValue::Missing
        }
    }

    /// Parses trimmed numeric text; `None` means the cell was non-empty but
    /// unusable.
    pub fn parse(text: &str) -> Option<Self> {
        let t = text.trim();
        if t.is_empty() {
            return Some(CellValue::Missing);
        }
        match t.parse::<f64>() {
            Ok(v) if v.is_finite() => Some(CellValue::Number(v)),
            _ => None,
        }
    }

    pub fn as_f64(self) -> Option<f64> {
        match self {
            CellValue::Number(v) => Some(v),
            CellValue::Missing => None,
        }
    }

    pub fn is_missing(self) -> bool {
        matches!(self, CellValue::Missing)
    }
}

impl From<Option<f64>> for CellValue {
    fn from(v: Option<f64>) -> Self {
        v.map_or(CellValue::Missing, CellValue::from_f64)
    }
}

impl fmt::Display for CellValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CellValue::Missing => Ok(()),
            CellValue::Number(v) => write!(f, "{v}"),
        }
    }
}

/// All rows of one entity, sorted by strictly increasing timestamp.
#[derive(Debug, Clone, PartialEq)]
pub struct EntitySeries {
    pub id: String,
    pub timestamps: Vec<f64>,
    pub rows: Vec<Vec<CellValue>>,
}

impl EntitySeries {
    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    /// Observed values of feature `f` in time order.
    pub fn observed(&self, f: usize) -> Vec<f64> {
        self.rows.iter().filter_map(|r| r[f].as_f64()).collect()
    }
}

/// Canonical wide table keyed by (entity, timestamp). Entities are sorted
/// lexicographically.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EventTable {
    pub feature_names: Vec<String>,
    pub entities: Vec<EntitySeries>,
}

impl EventTable {
    pub fn entity_ids(&self) -> Vec<String> {
        self.entities.iter().map(|e| e.id.clone()).collect()
    }

    pub fn entity(&self, id: &str) -> Option<&EntitySeries> {
        self.entities
            .binary_search_by(|e| e.id.as_str().cmp(id))
            .ok()
            .map(|i| &self.entities[i])
    }

    pub fn n_rows(&self) -> usize {
        self.entities.iter().map(EntitySeries::len).sum()
    }

    /// Checks the structural invariants; returns a description of the first
    /// violation.
    pub fn check_invariants(&self) -> Result<(), String> {
        let mut names = HashSet::new();
        for n in &self.feature_names {
            if !names.insert(n) {
                return Err(format!("duplicate feature {n}"));
            }
        }
        for w in self.entities.windows(2) {
            if w[0].id >= w[1].id {
                return Err(format!("entities out of order at {}", w[1].id));
            }
        }
        for e in &self.entities {
            if e.rows.len() != e.timestamps.len() {
                return Err(format!("{}: row/timestamp count mismatch", e.id));
            }
            if e.timestamps.windows(2).any(|w| w[0].partial_cmp(&w[1]) != Some(std::cmp::Ordering::Less)) {
                return Err(format!("{}: timestamps not strictly increasing", e.id));
            }
            if e.rows.iter().any(|r| r.len() != self.feature_names.len()) {
                return Err(format!("{}: row width mismatch", e.id));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Labels {
    /// One class per entity.
    Static(BTreeMap<String, usize>),
    /// One class per row, aligned with the entity's timestamps.
    Temporal(BTreeMap<String, Vec<usize>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelFrame {
    pub class_names: Vec<String>,
    pub labels: Labels,
}

impl LabelFrame {
    pub fn kind(&self) -> LabelType {
        match self.labels {
            Labels::Static(_) => LabelType::Static,
            Labels::Temporal(_) => LabelType::Temporal,
        }
    }

    pub fn static_label(&self, entity: &str) -> Option<usize> {
        match &self.labels {
            Labels::Static(m) => m.get(entity).copied(),
            Labels::Temporal(_) => None,
        }
    }

    pub fn temporal_labels(&self, entity: &str) -> Option<&[usize]> {
        match &self.labels {
            Labels::Temporal(m) => m.get(entity).map(Vec::as_slice),
            Labels::Static(_) => None,
        }
    }

    /// Entity-level class: the static label, or the highest class reached
    /// over time for temporal labels (used for stratification).
    pub fn entity_class(&self, entity: &str) -> Option<usize> {
        match &self.labels {
            Labels::Static(m) => m.get(entity).copied(),
            Labels::Temporal(m) => m.get(entity).and_then(|v| v.iter().max().copied()),
        }
    }
}

/// Output of [`standardize_table`].
#[derive(Debug, Clone, PartialEq)]
pub struct Standardized {
    pub table: EventTable,
    pub labels: LabelFrame,
    pub report: CoercionReport,
}

/// Converts a raw table of any supported layout into the canonical event
/// table and its labels.
pub fn standardize_table(raw: &RawTable, config: &DatasetConfig) -> Result<Standardized, FormatError> {
    config.validate()?;
    if raw.rows.is_empty() {
        return Err(FormatError::EmptyTable);
    }
    let converted;
    let wide = match config.layout {
        Layout::Wide => raw,
        Layout::Long => {
            converted = pivot_long_to_wide(raw, config)?;
            &converted
        }
        Layout::Flat => {
            converted = unflatten_flat(raw, config)?;
            &converted
        }
    };
    let coerced = coerce_and_clean(wide, config)?;
    assemble(coerced, config.label_type)
}

#[derive(Debug, Clone, PartialEq)]
enum LabelKey {
    Numeric(f64),
    Text(String),
}

impl LabelKey {
    fn parse(text: &str) -> Option<Self> {
        let t = text.trim();
        if t.is_empty() {
            return None;
        }
        match t.parse::<f64>() {
            Ok(v) if v.is_finite() => Some(LabelKey::Numeric(v + 0.0)),
            _ => Some(LabelKey::Text(t.to_string())),
        }
    }

    fn name(&self) -> String {
        match self {
            LabelKey::Numeric(v) => v.to_string(),
            LabelKey::Text(s) => s.clone(),
        }
    }
}

/// Maps label keys to class indices. Numeric labels are ordered by value so
/// class 1 is the positive class of a 0/1 outcome; text labels keep
/// first-seen order.
struct ClassIndex {
    keys: Vec<LabelKey>,
}

impl ClassIndex {
    fn build<'a>(seen: impl Iterator<Item = &'a LabelKey>) -> Self {
        let mut keys: Vec<LabelKey> = Vec::new();
        for k in seen {
            if !keys.contains(k) {
                keys.push(k.clone());
            }
        }
        if keys.iter().all(|k| matches!(k, LabelKey::Numeric(_))) {
            keys.sort_by(|a, b| match (a, b) {
                (LabelKey::Numeric(x), LabelKey::Numeric(y)) => x.total_cmp(y),
                _ => unreachable!(),
            });
        }
        Self { keys }
    }

    fn index(&self, key: &LabelKey) -> usize {
        self.keys.iter().position(|k| k == key).expect("key registered")
    }

    fn names(&self) -> Vec<String> {
        self.keys.iter().map(LabelKey::name).collect()
    }
}

fn assemble(coerced: CoercedTable, label_type: LabelType) -> Result<Standardized, FormatError> {
    let CoercedTable {
        entity_ids,
        timestamps,
        feature_names,
        values,
        labels: label_texts,
        report,
    } = coerced;

    let mut order: Vec<usize> = (0..entity_ids.len()).collect();
    order.sort_by(|&a, &b| {
        entity_ids[a]
            .cmp(&entity_ids[b])
            .then(timestamps[a].total_cmp(&timestamps[b]))
    });
    let label_keys: Vec<Option<LabelKey>> = label_texts.iter().map(|t| LabelKey::parse(t)).collect();

    // Static labels are checked over every raw row, before duplicate rows merge.
    let mut static_keys: BTreeMap<&str, LabelKey> = BTreeMap::new();
    if label_type == LabelType::Static {
        for &i in &order {
            if let Some(k) = &label_keys[i] {
                match static_keys.get(entity_ids[i].as_str()) {
                    Some(prev) if prev != k => {
                        return Err(FormatError::ConflictingStaticLabel(entity_ids[i].clone()))
                    }
                    Some(_) => {}
                    None => {
                        static_keys.insert(&entity_ids[i], k.clone());
                    }
                }
            }
        }
    }

    let mut entities: Vec<EntitySeries> = Vec::new();
    let mut row_labels: Vec<Vec<Option<LabelKey>>> = Vec::new();
    for &i in &order {
        let ts = timestamps[i] + 0.0;
        let same_entity = entities.last().is_some_and(|e| e.id == entity_ids[i]);
        if !same_entity {
            entities.push(EntitySeries {
                id: entity_ids[i].clone(),
                timestamps: Vec::new(),
                rows: Vec::new(),
            });
            row_labels.push(Vec::new());
        }
        let series = entities.last_mut().expect("pushed above");
        let lbls = row_labels.last_mut().expect("pushed above");
        if series.timestamps.last() == Some(&ts) {
            // duplicate key: later non-missing cells win
            let row = series.rows.last_mut().expect("row exists");
            for (dst, src) in row.iter_mut().zip(&values[i]) {
                if !src.is_missing() {
                    *dst = *src;
                }
            }
            if label_keys[i].is_some() {
                *lbls.last_mut().expect("label slot") = label_keys[i].clone();
            }
        } else {
            series.timestamps.push(ts);
            series.rows.push(values[i].clone());
            lbls.push(label_keys[i].clone());
        }
    }

    let labels = match label_type {
        LabelType::Static => {
            let classes = ClassIndex::build(
                entities
                    .iter()
                    .filter_map(|e| static_keys.get(e.id.as_str())),
            );
            let mut map = BTreeMap::new();
            for e in &entities {
                let key = static_keys.get(e.id.as_str()).ok_or_else(|| FormatError::MissingLabel {
                    entity: e.id.clone(),
                    timestamp: None,
                })?;
                map.insert(e.id.clone(), classes.index(key));
            }
            LabelFrame {
                class_names: classes.names(),
                labels: Labels::Static(map),
            }
        }
        LabelType::Temporal => {
            for (e, lbls) in entities.iter().zip(&row_labels) {
                if let Some(pos) = lbls.iter().position(Option::is_none) {
                    return Err(FormatError::MissingLabel {
                        entity: e.id.clone(),
                        timestamp: Some(e.timestamps[pos]),
                    });
                }
            }
            let classes = ClassIndex::build(row_labels.iter().flatten().flatten());
            let map = entities
                .iter()
                .zip(&row_labels)
                .map(|(e, lbls)| {
                    let idx = lbls.iter().flatten().map(|k| classes.index(k)).collect();
                    (e.id.clone(), idx)
                })
                .collect();
            LabelFrame {
                class_names: classes.names(),
                labels: Labels::Temporal(map),
            }
        }
    };

    Ok(Standardized {
        table: EventTable {
            feature_names,
            entities,
        },
        labels,
        report,
    })
}
