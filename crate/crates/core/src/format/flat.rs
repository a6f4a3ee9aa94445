use std::collections::{HashMap, HashSet};

use super::timestamp::parse_time;
use super::{DatasetConfig, FormatError, RawTable};

/// Separator between feature name and timestamp in flattened headers.
pub const FLAT_SEPARATOR: char = '@';

fn split_header(header: &str) -> Option<(&str, &str)> {
    let (feature, time) = header.trim().rsplit_once(FLAT_SEPARATOR)?;
    let (feature, time) = (feature.trim(), time.trim());
    if feature.is_empty() || parse_time(time).is_none() {
        return None;
    }
    Some((feature, time))
}

/// Expands a flattened table (one row per entity, `<feature>@<timestamp>`
/// columns) into wide rows. The label column, when present, is replicated on
/// every produced row. Timestamps at which an entity has no value at all
/// produce no row.
pub fn unflatten_flat(raw: &RawTable, config: &DatasetConfig) -> Result<RawTable, FormatError> {
    let id_idx = raw.require_column(config.require_id_col()?)?;
    let label_idx = raw.column_index(&config.label_col);

    let mut features: Vec<String> = Vec::new();
    let mut times: Vec<String> = Vec::new();
    // (column, feature slot, time slot)
    let mut cells: Vec<(usize, usize, usize)> = Vec::new();
    for (c, header) in raw.column_names.iter().enumerate() {
        if c == id_idx || Some(c) == label_idx {
            continue;
        }
        let (feature, time) =
            split_header(header).ok_or_else(|| FormatError::MalformedFlatHeader(header.trim().to_string()))?;
        let f = features.iter().position(|x| x == feature).unwrap_or_else(|| {
            features.push(feature.to_string());
            features.len() - 1
        });
        let t = times.iter().position(|x| x == time).unwrap_or_else(|| {
            times.push(time.to_string());
            times.len() - 1
        });
        cells.push((c, f, t));
    }

    let mut columns = vec![
        raw.column_names[id_idx].trim().to_string(),
        config.time_col.trim().to_string(),
    ];
    if let Some(l) = label_idx {
        columns.push(raw.column_names[l].trim().to_string());
    }
    let first_feature = columns.len();
    if let Some(clash) = features.iter().find(|f| columns.contains(f)) {
        return Err(FormatError::ConflictingColumn(clash.clone()));
    }
    columns.extend(features.iter().cloned());

    let mut seen = HashSet::new();
    let mut rows = Vec::new();
    for row in &raw.rows {
        let entity = row[id_idx].trim();
        if !seen.insert(entity.to_string()) {
            return Err(FormatError::DuplicateEntityRow(entity.to_string()));
        }
        let mut by_time: HashMap<usize, Vec<String>> = HashMap::new();
        for &(c, f, t) in &cells {
            if row[c].trim().is_empty() {
                continue;
            }
            by_time.entry(t).or_insert_with(|| vec![String::new(); features.len()])[f] = row[c].clone();
        }
        for (t, time) in times.iter().enumerate() {
            let Some(values) = by_time.remove(&t) else { continue };
            let mut out = vec![entity.to_string(), time.clone()];
            if let Some(l) = label_idx {
                out.push(row[l].clone());
            }
            debug_assert_eq!(out.len(), first_feature);
            out.extend(values);
            rows.push(out);
        }
    }

    RawTable::new(columns, rows, raw.source_name.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::format::tests::table;
    use crate::format::Layout;

    fn flat_cfg() -> DatasetConfig {
        let mut cfg = DatasetConfig::wide("id", "t", "y");
        cfg.layout = Layout::Flat;
        cfg
    }

    #[test]
    fn headers_expand_to_rows() {
        let raw = table(&["id", "hr@0", "hr@1", "y"], &[&["p1", "60", "66", "1"]]);
        let wide = unflatten_flat(&raw, &flat_cfg()).unwrap();
        assert_eq!(wide.column_names, vec!["id", "t", "y", "hr"]);
        assert_eq!(wide.rows, vec![vec!["p1", "0", "1", "60"], vec!["p1", "1", "1", "66"]]);
    }

    #[test]
    fn single_cell_identity() {
        let raw = table(&["id", "hr@0", "y"], &[&["p1", "60", "0"]]);
        let wide = unflatten_flat(&raw, &flat_cfg()).unwrap();
        assert_eq!(wide.rows, vec![vec!["p1", "0", "0", "60"]]);
    }

    #[test]
    fn wrong_separator_is_malformed() {
        let raw = table(&["id", "hr-0", "y"], &[&["p1", "60", "0"]]);
        assert_eq!(
            unflatten_flat(&raw, &flat_cfg()).unwrap_err(),
            FormatError::MalformedFlatHeader("hr-0".into())
        );
        let raw = table(&["id", "hr@soon", "y"], &[&["p1", "60", "0"]]);
        assert!(unflatten_flat(&raw, &flat_cfg()).is_err());
        let raw = table(&["id", "@0", "y"], &[&["p1", "60", "0"]]);
        assert!(unflatten_flat(&raw, &flat_cfg()).is_err());
    }

    #[test]
    fn duplicate_entity_rows() {
        let raw = table(&["id", "hr@0", "y"], &[&["p1", "60", "0"], &[" p1", "61", "0"]]);
        assert_eq!(
            unflatten_flat(&raw, &flat_cfg()).unwrap_err(),
            FormatError::DuplicateEntityRow("p1".into())
        );
    }

    #[test]
    fn iso_header_times_and_empty_slots() {
        let raw = table(
            &["id", "hr@2020-01-01T00:00:00", "hr@2020-01-01T01:00:00", "y"],
            &[&["p1", "", "70", "0"]],
        );
        let wide = unflatten_flat(&raw, &flat_cfg()).unwrap();
        assert_eq!(wide.rows, vec![vec!["p1", "2020-01-01T01:00:00", "0", "70"]]);
    }
}
