use std::collections::HashMap;

use super::{DatasetConfig, FormatError, RawTable};

/// Pivots a long table (one measurement per row) to wide form.
///
/// Output columns are the id and time columns, then every other input
/// column carried through (last non-empty value per key), then one column
/// per distinct variable in first-seen order. Rows come out in first-seen
/// (entity, timestamp) order. A repeated (entity, timestamp, variable)
/// measurement keeps the last occurrence; rows with an empty variable name
/// contribute only their key and carried columns.
pub fn pivot_long_to_wide(raw: &RawTable, config: &DatasetConfig) -> Result<RawTable, FormatError> {
    let id_name = config.require_id_col()?;
    let var_name = config
        .long_variable_col
        .as_deref()
        .ok_or_else(|| FormatError::InvalidConfig("long_variable_col is required".into()))?;
    let val_name = config
        .long_value_col
        .as_deref()
        .ok_or_else(|| FormatError::InvalidConfig("long_value_col is required".into()))?;
    let id_idx = raw.require_column(id_name)?;
    let time_idx = raw.require_column(&config.time_col)?;
    let var_idx = raw.require_column(var_name)?;
    let val_idx = raw.require_column(val_name)?;

    let carried: Vec<usize> = (0..raw.column_names.len())
        .filter(|c| ![id_idx, time_idx, var_idx, val_idx].contains(c))
        .collect();

    let mut columns: Vec<String> = vec![
        raw.column_names[id_idx].trim().to_string(),
        raw.column_names[time_idx].trim().to_string(),
    ];
    columns.extend(carried.iter().map(|&c| raw.column_names[c].trim().to_string()));
    let mut column_pos: HashMap<String, usize> =
        columns.iter().enumerate().map(|(i, c)| (c.clone(), i)).collect();

    let mut key_pos: HashMap<(String, String), usize> = HashMap::new();
    let mut rows: Vec<Vec<String>> = Vec::new();

    for row in &raw.rows {
        let key = (row[id_idx].trim().to_string(), row[time_idx].trim().to_string());
        let r = *key_pos.entry(key.clone()).or_insert_with(|| {
            rows.push(vec![String::new(); columns.len()]);
            let last = rows.len() - 1;
            rows[last][0] = key.0.clone();
            rows[last][1] = key.1.clone();
            last
        });
        for (k, &c) in carried.iter().enumerate() {
            if !row[c].trim().is_empty() {
                rows[r][2 + k] = row[c].clone();
            }
        }
        let variable = row[var_idx].trim();
        let value = &row[val_idx];
        if variable.is_empty() || value.trim().is_empty() {
            continue;
        }
        let col = match column_pos.get(variable) {
            Some(&0) | Some(&1) => return Err(FormatError::ConflictingColumn(variable.to_string())),
            Some(&c) => c,
            None => {
                columns.push(variable.to_string());
                column_pos.insert(variable.to_string(), columns.len() - 1);
                for existing in rows.iter_mut() {
                    existing.push(String::new());
                }
                columns.len() - 1
            }
        };
        rows[r][col] = value.clone();
    }

    RawTable::new(columns, rows, raw.source_name.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::format::tests::table;
    use crate::format::Layout;

    fn long_cfg() -> DatasetConfig {
        let mut cfg = DatasetConfig::wide("id", "t", "y");
        cfg.layout = Layout::Long;
        cfg.long_variable_col = Some("var".into());
        cfg.long_value_col = Some("val".into());
        cfg
    }

    #[test]
    fn measurements_become_columns() {
        let raw = table(
            &["id", "t", "var", "val"],
            &[&["p1", "0", "hr", "60"], &["p1", "0", "temp", "36.5"]],
        );
        let wide = pivot_long_to_wide(&raw, &long_cfg()).unwrap();
        assert_eq!(wide.column_names, vec!["id", "t", "hr", "temp"]);
        assert_eq!(wide.rows, vec![vec!["p1", "0", "60", "36.5"]]);
    }

    #[test]
    fn singleton() {
        let raw = table(&["id", "t", "var", "val"], &[&["p1", "0", "hr", "60"]]);
        let wide = pivot_long_to_wide(&raw, &long_cfg()).unwrap();
        assert_eq!(wide.rows, vec![vec!["p1", "0", "60"]]);
    }

    #[test]
    fn last_duplicate_wins() {
        let rows: &[&[&str]] = &[&["p1", "0", "hr", "60"], &["p1", "0", "hr", "62"]];
        let raw = table(&["id", "t", "var", "val"], rows);
        let wide = pivot_long_to_wide(&raw, &long_cfg()).unwrap();
        // row-scan oracle: the last row mentioning (p1, 0, hr)
        let expected = rows
            .iter()
            .rev()
            .find(|r| r[0] == "p1" && r[1] == "0" && r[2] == "hr")
            .unwrap()[3];
        assert_eq!(wide.rows[0][2], expected);
        assert_eq!(expected, "62");
    }

    #[test]
    fn carried_columns_and_sparse_cells() {
        let raw = table(
            &["id", "t", "var", "val", "y"],
            &[
                &["p1", "0", "hr", "60", "0"],
                &["p1", "1", "temp", "37", "1"],
                &["p1", "2", "", "", "1"],
            ],
        );
        let wide = pivot_long_to_wide(&raw, &long_cfg()).unwrap();
        assert_eq!(wide.column_names, vec!["id", "t", "y", "hr", "temp"]);
        assert_eq!(
            wide.rows,
            vec![
                vec!["p1", "0", "0", "60", ""],
                vec!["p1", "1", "1", "", "37"],
                vec!["p1", "2", "1", "", ""],
            ]
        );
    }

    #[test]
    fn missing_columns() {
        let raw = table(&["id", "t", "variable", "val"], &[&["p1", "0", "hr", "60"]]);
        assert_eq!(
            pivot_long_to_wide(&raw, &long_cfg()).unwrap_err(),
            FormatError::MissingColumn("var".into())
        );
    }

    #[test]
    fn variable_named_like_key_column() {
        let raw = table(&["id", "t", "var", "val"], &[&["p1", "0", "t", "60"]]);
        assert!(matches!(
            pivot_long_to_wide(&raw, &long_cfg()),
            Err(FormatError::ConflictingColumn(_))
        ));
    }
}
