use super::timestamp::resolve_times;
use super::{CellValue, DatasetConfig, FormatError, RawTable};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CoercionReport {
    /// Non-empty feature cells that did not parse to a finite number.
    pub cells_coerced_missing: usize,
    pub columns_dropped: Vec<String>,
}

/// A wide table after value coercion, still in input row order.
#[derive(Debug, Clone, PartialEq)]
pub struct CoercedTable {
    pub entity_ids: Vec<String>,
    pub timestamps: Vec<f64>,
    pub feature_names: Vec<String>,
    pub values: Vec<Vec<CellValue>>,
    /// Raw label text per row.
    pub labels: Vec<String>,
    pub report: CoercionReport,
}

/// Parses a wide raw table: numbers from feature cells, reals from the time
/// column, and drops redundant columns (entirely empty, or a byte-for-byte
/// copy of the id or time column).
pub fn coerce_and_clean(raw: &RawTable, config: &DatasetConfig) -> Result<CoercedTable, FormatError> {
    let id_idx = raw.require_column(config.require_id_col()?)?;
    let time_idx = raw.require_column(&config.time_col)?;
    let label_idx = raw.require_column(&config.label_col)?;

    let mut report = CoercionReport::default();
    let mut feature_cols = Vec::new();
    for (c, name) in raw.column_names.iter().enumerate() {
        if c == id_idx || c == time_idx || c == label_idx {
            continue;
        }
        let all_empty = raw.rows.iter().all(|r| r[c].trim().is_empty());
        let copies_key = [id_idx, time_idx]
            .iter()
            .any(|&k| raw.rows.iter().all(|r| r[c] == r[k]));
        if all_empty || copies_key {
            report.columns_dropped.push(name.trim().to_string());
        } else {
            feature_cols.push(c);
        }
    }

    let timestamps = resolve_times(raw.column(time_idx)).map_err(|row| FormatError::UnparsableTimestamp {
        row,
        value: raw.rows[row][time_idx].clone(),
    })?;

    let mut entity_ids = Vec::with_capacity(raw.rows.len());
    let mut values = Vec::with_capacity(raw.rows.len());
    for (i, row) in raw.rows.iter().enumerate() {
        let id = row[id_idx].trim();
        if id.is_empty() {
            return Err(FormatError::MissingEntityId { row: i });
        }
        entity_ids.push(id.to_string());
        values.push(
            feature_cols
                .iter()
                .map(|&c| {
                    CellValue::parse(&row[c]).unwrap_or_else(|| {
                        report.cells_coerced_missing += 1;
                        CellValue::Missing
                    })
                })
                .collect(),
        );
    }

    Ok(CoercedTable {
        entity_ids,
        timestamps,
        feature_names: feature_cols
            .iter()
            .map(|&c| raw.column_names[c].trim().to_string())
            .collect(),
        values,
        labels: raw.rows.iter().map(|r| r[label_idx].clone()).collect(),
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::format::tests::table;

    #[test]
    fn trims_and_parses_numbers() {
        let raw = table(
            &["id", "t", "temp", "y"],
            &[&["a", "0", " 36.5 ", "0"], &["a", "1", "1e2", "0"], &["a", "2", "high", "0"]],
        );
        let out = coerce_and_clean(&raw, &DatasetConfig::wide("id", "t", "y")).unwrap();
        assert_eq!(out.values[0], vec![CellValue::Number(36.5)]);
        assert_eq!(out.values[1], vec![CellValue::Number(100.0)]);
        assert_eq!(out.values[2], vec![CellValue::Missing]);
        assert_eq!(out.report.cells_coerced_missing, 1);
    }

    #[test]
    fn non_finite_text_counts_as_coerced() {
        let raw = table(&["id", "t", "x", "y"], &[&["a", "0", "NaN", "0"], &["a", "1", "inf", "0"]]);
        let out = coerce_and_clean(&raw, &DatasetConfig::wide("id", "t", "y")).unwrap();
        assert_eq!(out.report.cells_coerced_missing, 2);
    }

    #[test]
    fn iso_timestamps_relative_to_earliest() {
        let raw = table(
            &["id", "t", "x", "y"],
            &[&["a", "2020-01-01T00:00:00", "1", "0"], &["a", "2020-01-01T01:00:00", "2", "0"]],
        );
        let out = coerce_and_clean(&raw, &DatasetConfig::wide("id", "t", "y")).unwrap();
        assert_eq!(out.timestamps, vec![0.0, 3600.0]);
    }

    #[test]
    fn redundant_columns_dropped() {
        let raw = table(
            &["id", "t", "blank", "id_copy", "t_copy", "x", "y"],
            &[&["a", "0", "", "a", "0", "1", "0"], &["b", "1", " ", "b", "1", "2", "1"]],
        );
        let out = coerce_and_clean(&raw, &DatasetConfig::wide("id", "t", "y")).unwrap();
        assert_eq!(out.feature_names, vec!["x"]);
        assert_eq!(out.report.columns_dropped, vec!["blank", "id_copy", "t_copy"]);
    }

    #[test]
    fn timestamps_must_parse() {
        let raw = table(&["id", "t", "x", "y"], &[&["a", "0", "1", "0"], &["a", "later", "1", "0"]]);
        assert_eq!(
            coerce_and_clean(&raw, &DatasetConfig::wide("id", "t", "y")).unwrap_err(),
            FormatError::UnparsableTimestamp {
                row: 1,
                value: "later".into()
            }
        );
    }
}
