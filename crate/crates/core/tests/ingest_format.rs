use std::fs;

use medts_core::format::{standardize_table, CellValue, DatasetConfig, Delimiter, LabelType, Layout, RawTable};
use medts_core::ingest::{read_source, IngestError, SourceSpec};
use proptest::prelude::*;

fn dir_config() -> DatasetConfig {
    DatasetConfig {
        id_col: None,
        label_type: LabelType::Temporal,
        ..DatasetConfig::wide("", "hour", "label")
    }
}

#[test]
fn directory_entities_come_from_file_stems() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("b.psv"), "hour|hr|label\n2|80|0\n1|75|0\n").unwrap();
    fs::write(dir.path().join("a.psv"), "hour|hr|spo2|label\n1|90||0\n2|95|97|1\n").unwrap();
    fs::write(dir.path().join("notes.md"), "ignored").unwrap();

    let got = read_source(&SourceSpec::detect(dir.path()), &dir_config()).unwrap();
    assert_eq!(got.table.entity_ids(), vec!["a", "b"]);
    assert_eq!(got.table.feature_names, vec!["hr", "spo2"]);
    let b = got.table.entity("b").unwrap();
    assert_eq!(b.timestamps, vec![1.0, 2.0]);
    assert_eq!(b.rows[0], vec![CellValue::Number(75.0), CellValue::Missing]);
    assert_eq!(got.labels.temporal_labels("a"), Some(&[0, 1][..]));
    assert_eq!(got.report.files_read, 2);
    assert_eq!(got.report.rows_read, 4);
}

#[test]
fn bad_files_are_skipped_unless_strict() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("p1.csv"), "hour,hr,label\n1,70,0\n").unwrap();
    // the label column is missing, so the file cannot be standardized
    fs::write(dir.path().join("p2.csv"), "hour,hr\n1,70\n").unwrap();

    let mut spec = SourceSpec::directory(dir.path());
    let got = read_source(&spec, &dir_config()).unwrap();
    assert_eq!(got.table.entity_ids(), vec!["p1"]);
    assert_eq!(got.report.warnings.len(), 1);
    assert!(got.report.warnings[0].file.ends_with("p2.csv"));

    spec.strict = true;
    match read_source(&spec, &dir_config()) {
        Err(IngestError::File { path, .. }) => assert!(path.ends_with("p2.csv")),
        other => panic!("expected a per-file error, got {other:?}"),
    }
}

#[test]
fn empty_and_spreadsheet_sources_fail() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(
        read_source(&SourceSpec::directory(dir.path()), &dir_config()),
        Err(IngestError::EmptyDirectory(_))
    ));
    let book = dir.path().join("cohort.xlsx");
    fs::write(&book, b"PK").unwrap();
    let cfg = DatasetConfig::wide("id", "t", "y");
    assert!(matches!(
        read_source(&SourceSpec::file(&book), &cfg),
        Err(IngestError::UnsupportedSpreadsheet(_))
    ));
}

#[test]
fn single_file_with_sniffed_semicolons() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("labs.txt");
    fs::write(&path, "id;t;y;crp\np2;2020-01-02 08:00:00;1;12.5\np1;2020-01-01;0;n/a\np2;2020-01-01;1;3\n").unwrap();
    let cfg = DatasetConfig { delimiter: Delimiter::Auto, ..DatasetConfig::wide("id", "t", "y") };
    let got = read_source(&SourceSpec::file(&path), &cfg).unwrap();
    assert_eq!(got.table.entity_ids(), vec!["p1", "p2"]);
    let p2 = got.table.entity("p2").unwrap();
    assert!(p2.timestamps[0] < p2.timestamps[1]);
    assert_eq!(p2.observed(0), vec![3.0, 12.5]);
    assert_eq!(got.table.entity("p1").unwrap().rows[0], vec![CellValue::Missing]);
}

type Cells = Vec<(u8, u8, Vec<Option<i16>>)>;

/// (entity, time, values) rows with distinct keys and at least one value
/// per row, shaped as `n_features` columns.
fn rows_strategy() -> impl Strategy<Value = (usize, Cells)> {
    (1usize..4).prop_flat_map(|n_features| {
        let row = (0u8..5, 0u8..6, prop::collection::vec(prop::option::weighted(0.8, -50i16..50), n_features));
        (Just(n_features), prop::collection::vec(row, 1..15))
    })
}

fn normalize(n_features: usize, rows: Cells) -> Cells {
    let mut seen = std::collections::HashSet::new();
    let mut out: Cells = rows
        .into_iter()
        .filter(|(e, t, _)| seen.insert((*e, *t)))
        .map(|(e, t, mut v)| {
            if v.iter().all(Option::is_none) {
                v[0] = Some(i16::from(e) + i16::from(t));
            }
            (e, t, v)
        })
        .collect();
    for f in 0..n_features {
        if !out.iter().any(|r| r.2[f].is_some()) {
            out[0].2[f] = Some(1);
        }
    }
    out
}

/// Never an integer, so no value column can duplicate the time column
/// (such copies are dropped as redundant).
fn text(v: Option<i16>) -> String {
    v.map(|x| (f64::from(x) / 4.0 + 0.125).to_string()).unwrap_or_default()
}

proptest! {
    #[test]
    fn long_and_wide_agree((n_features, rows) in rows_strategy()) {
        let rows = normalize(n_features, rows);
        let label = |e: u8| (e % 2).to_string();
        let mut wide_cols = vec!["id".to_string(), "t".into(), "y".into()];
        wide_cols.extend((0..n_features).map(|f| format!("v{f}")));
        let wide_rows = rows
            .iter()
            .map(|(e, t, v)| {
                let mut r = vec![format!("e{e}"), t.to_string(), label(*e)];
                r.extend(v.iter().map(|x| text(*x)));
                r
            })
            .collect();
        let mut long_rows = Vec::new();
        for f in 0..n_features {
            for (e, t, v) in &rows {
                if v[f].is_some() {
                    long_rows.push(vec![format!("e{e}"), t.to_string(), label(*e), format!("v{f}"), text(v[f])]);
                }
            }
        }
        let wide = RawTable::new(wide_cols, wide_rows, "w").unwrap();
        let long = RawTable::new(["id", "t", "y", "var", "val"].map(String::from).to_vec(), long_rows, "l").unwrap();
        let wide_cfg = DatasetConfig::wide("id", "t", "y");
        let long_cfg = DatasetConfig {
            layout: Layout::Long,
            long_variable_col: Some("var".into()),
            long_value_col: Some("val".into()),
            ..wide_cfg.clone()
        };
        let a = standardize_table(&wide, &wide_cfg).unwrap();
        let b = standardize_table(&long, &long_cfg).unwrap();
        prop_assert_eq!(&a.table, &b.table);
        prop_assert_eq!(&a.labels, &b.labels);
        prop_assert!(a.table.check_invariants().is_ok());
        let cells: usize = rows.iter().map(|r| r.2.iter().flatten().count()).sum();
        let stored: usize = a.table.entities.iter().flat_map(|e| &e.rows).flatten().filter(|c| !c.is_missing()).count();
        prop_assert_eq!(cells, stored);
    }
}
