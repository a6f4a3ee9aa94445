//! Reading delimited text files and per-entity directories into the
//! canonical event table.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::format::{
    standardize_table, DatasetConfig, Delimiter, EntitySeries, EventTable, FormatError, LabelFrame,
    LabelType, Labels, RawTable,
};

/// Column holding the file-stem entity id in directory mode.
pub const ENTITY_COLUMN: &str = "__entity";

pub const DEFAULT_EXTENSIONS: &[&str] = &["csv", "psv", "tsv", "txt"];

const SNIFF_LINES: usize = 100;
const DELIMITER_PREFERENCE: [u8; 4] = [b',', b'|', b'\t', b';'];

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}: could not detect a delimiter giving a consistent column count")]
    DelimiterUndetectable(PathBuf),
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{0}: no data files found")]
    EmptyDirectory(PathBuf),
    #[error("{0}: XLSX workbooks are not supported; export the sheet to CSV first")]
    UnsupportedSpreadsheet(PathBuf),
    #[error("{0}: no file could be standardized")]
    NoUsableFiles(PathBuf),
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: Box<IngestError>,
    },
    #[error(transparent)]
    Format(#[from] FormatError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceSpec {
    pub path: PathBuf,
    pub is_directory: bool,
    /// Accepted file extensions in directory mode (lowercase, no dot).
    pub extensions: Vec<String>,
    /// Abort on the first bad file instead of skipping it.
    pub strict: bool,
}

impl SourceSpec {
    pub fn file(path: impl Into<PathBuf>) -> Self {
        Self {
            path: path.into(),
            is_directory: false,
            extensions: DEFAULT_EXTENSIONS.iter().map(|s| s.to_string()).collect(),
            strict: false,
        }
    }

    pub fn directory(path: impl Into<PathBuf>) -> Self {
        Self {
            is_directory: true,
            ..Self::file(path)
        }
    }

    /// Builds a spec from a path on disk, picking file or directory mode.
    pub fn detect(path: impl Into<PathBuf>) -> Self {
        let path = path.into();
        if path.is_dir() {
            Self::directory(path)
        } else {
            Self::file(path)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileWarning {
    pub file: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub files_read: usize,
    pub rows_read: usize,
    pub cells_coerced_missing: usize,
    pub columns_dropped: Vec<String>,
    pub entities: usize,
    pub warnings: Vec<FileWarning>,
}

#[derive(Debug, Clone)]
pub struct Ingested {
    pub table: EventTable,
    pub labels: LabelFrame,
    pub report: IngestReport,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IngestError + '_ {
    move |source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn reject_spreadsheet(path: &Path) -> Result<(), IngestError> {
    let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
    if matches!(ext.as_deref(), Some("xlsx" | "xls")) {
        return Err(IngestError::UnsupportedSpreadsheet(path.to_path_buf()));
    }
    Ok(())
}

fn column_counts(text: &str, delimiter: u8) -> Option<Vec<usize>> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(false)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut counts = Vec::new();
    for rec in reader.records().take(SNIFF_LINES) {
        counts.push(rec.ok()?.len());
    }
    Some(counts)
}

/// Picks the delimiter that splits the first lines into a consistent number
/// (at least two) of columns. When several qualify the widest split wins,
/// then the earlier entry of comma, pipe, tab, semicolon.
pub fn detect_delimiter(text: &str) -> Option<u8> {
    let mut best: Option<(u8, usize)> = None;
    for d in DELIMITER_PREFERENCE {
        let Some(counts) = column_counts(text, d) else { continue };
        let Some(&first) = counts.first() else { continue };
        if first < 2 || counts.iter().any(|&c| c != first) {
            continue;
        }
        if best.is_none_or(|(_, n)| first > n) {
            best = Some((d, first));
        }
    }
    best.map(|(d, _)| d)
}

/// Parses delimited text (header line first) into a raw table.
pub fn parse_delimited(text: &str, delimiter: Delimiter, source: &Path) -> Result<RawTable, IngestError> {
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    if text.trim().is_empty() {
        return Err(FormatError::EmptyTable.into());
    }
    let d = match delimiter {
        Delimiter::Char(c) => c as u8,
        Delimiter::Auto => detect_delimiter(text).ok_or_else(|| IngestError::DelimiterUndetectable(source.to_path_buf()))?,
    };
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(d)
        .has_headers(true)
        .from_reader(text.as_bytes());
    let parse_err = |e: csv::Error| IngestError::Parse {
        path: source.to_path_buf(),
        message: e.to_string(),
    };
    let header: Vec<String> = reader.headers().map_err(parse_err)?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(parse_err)?;
        if rec.len() == 1 && rec[0].trim().is_empty() && header.len() > 1 {
            continue;
        }
        rows.push(rec.iter().map(str::to_string).collect());
    }
    Ok(RawTable::new(header, rows, source.display().to_string())?)
}

pub fn read_raw(path: &Path, delimiter: Delimiter) -> Result<RawTable, IngestError> {
    reject_spreadsheet(path)?;
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_delimited(&text, delimiter, path)
}

/// Reads one delimited file holding every entity.
pub fn read_file(spec: &SourceSpec, config: &DatasetConfig) -> Result<Ingested, IngestError> {
    config.require_id_col()?;
    let raw = read_raw(&spec.path, config.delimiter)?;
    let rows_read = raw.rows.len();
    let out = standardize_table(&raw, config)?;
    Ok(Ingested {
        report: IngestReport {
            files_read: 1,
            rows_read,
            cells_coerced_missing: out.report.cells_coerced_missing,
            columns_dropped: out.report.columns_dropped,
            entities: out.table.entities.len(),
            warnings: Vec::new(),
        },
        table: out.table,
        labels: out.labels,
    })
}

/// Lists data files of a directory sorted by file name.
pub fn list_data_files(spec: &SourceSpec) -> Result<Vec<PathBuf>, IngestError> {
    let mut files = Vec::new();
    for entry in fs::read_dir(&spec.path).map_err(io_err(&spec.path))? {
        let path = entry.map_err(io_err(&spec.path))?.path();
        if !path.is_file() {
            continue;
        }
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if ext.is_some_and(|e| spec.extensions.iter().any(|x| x.eq_ignore_ascii_case(&e))) {
            files.push(path);
        }
    }
    files.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    Ok(files)
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn with_entity_column(raw: RawTable, entity: &str) -> Result<RawTable, FormatError> {
    let mut columns = Vec::with_capacity(raw.column_names.len() + 1);
    columns.push(ENTITY_COLUMN.to_string());
    columns.extend(raw.column_names);
    let rows = raw
        .rows
        .into_iter()
        .map(|r| {
            let mut out = Vec::with_capacity(r.len() + 1);
            out.push(entity.to_string());
            out.extend(r);
            out
        })
        .collect();
    RawTable::new(columns, rows, raw.source_name)
}

/// Reads a directory with one file per entity (entity id = file stem).
///
/// Files are processed in file-name order. Each file is standardized on its
/// own first; files that fail are skipped with a warning unless
/// `spec.strict` is set. The surviving files are aligned on the union of
/// their columns and standardized together so timestamps and class indices
/// are consistent across entities.
pub fn read_directory(spec: &SourceSpec, config: &DatasetConfig) -> Result<Ingested, IngestError> {
    if config.id_col.is_some() {
        return Err(FormatError::InvalidConfig(
            "directory sources take the entity id from file names; remove id_col".into(),
        )
        .into());
    }
    let files = list_data_files(spec)?;
    if files.is_empty() {
        return Err(IngestError::EmptyDirectory(spec.path.clone()));
    }
    let mut file_config = config.clone();
    file_config.id_col = Some(ENTITY_COLUMN.to_string());

    let mut report = IngestReport::default();
    let mut accepted: Vec<RawTable> = Vec::new();
    let mut empty_entities: Vec<String> = Vec::new();
    let mut empty_headers: Vec<Vec<String>> = Vec::new();

    for path in &files {
        let entity = stem(path);
        let attempt = read_raw(path, config.delimiter).and_then(|raw| {
            let raw = with_entity_column(raw, &entity)?;
            if raw.rows.is_empty() {
                return Ok(raw);
            }
            standardize_table(&raw, &file_config)?;
            Ok(raw)
        });
        match attempt {
            Ok(raw) => {
                report.files_read += 1;
                report.rows_read += raw.rows.len();
                if raw.rows.is_empty() {
                    if config.label_type == LabelType::Temporal {
                        empty_entities.push(entity);
                        empty_headers.push(raw.column_names);
                    } else {
                        report.warnings.push(FileWarning {
                            file: path.display().to_string(),
                            message: "no data rows, so no static label; skipped".into(),
                        });
                    }
                } else {
                    accepted.push(raw);
                }
            }
            Err(e) if spec.strict => {
                return Err(IngestError::File {
                    path: path.clone(),
                    source: Box::new(e),
                })
            }
            Err(e) => {
                warn!("skipping {}: {e}", path.display());
                report.warnings.push(FileWarning {
                    file: path.display().to_string(),
                    message: e.to_string(),
                });
            }
        }
    }
    if accepted.is_empty() {
        return Err(IngestError::NoUsableFiles(spec.path.clone()));
    }

    let merged = union_tables(&accepted, &empty_headers)?;
    let mut out = standardize_table(&merged, &file_config)?;
    for entity in empty_entities {
        let pos = out
            .table
            .entities
            .binary_search_by(|e| e.id.as_str().cmp(&entity))
            .unwrap_or_else(|p| p);
        out.table.entities.insert(
            pos,
            EntitySeries {
                id: entity.clone(),
                timestamps: Vec::new(),
                rows: Vec::new(),
            },
        );
        if let Labels::Temporal(m) = &mut out.labels.labels {
            m.insert(entity, Vec::new());
        }
    }

    report.cells_coerced_missing = out.report.cells_coerced_missing;
    report.columns_dropped = out.report.columns_dropped;
    report.entities = out.table.entities.len();
    Ok(Ingested {
        table: out.table,
        labels: out.labels,
        report,
    })
}

/// Stacks tables on the union of their columns (first-seen order); absent
/// columns become empty cells.
fn union_tables(tables: &[RawTable], extra_headers: &[Vec<String>]) -> Result<RawTable, FormatError> {
    let mut columns: Vec<String> = Vec::new();
    let mut seen = HashSet::new();
    for names in tables.iter().map(|t| &t.column_names).chain(extra_headers) {
        for c in names {
            let c = c.trim();
            if seen.insert(c.to_string()) {
                columns.push(c.to_string());
            }
        }
    }
    let mut rows = Vec::new();
    for t in tables {
        let map: Vec<usize> = t
            .column_names
            .iter()
            .map(|c| columns.iter().position(|x| x == c.trim()).expect("union contains column"))
            .collect();
        for r in &t.rows {
            let mut out = vec![String::new(); columns.len()];
            for (cell, &dst) in r.iter().zip(&map) {
                out[dst] = cell.clone();
            }
            rows.push(out);
        }
    }
    RawTable::new(columns, rows, "directory")
}

/// Reads a file or directory according to `spec`.
pub fn read_source(spec: &SourceSpec, config: &DatasetConfig) -> Result<Ingested, IngestError> {
    if spec.is_directory {
        read_directory(spec, config)
    } else {
        read_file(spec, config)
    }
}
