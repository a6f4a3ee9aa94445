//! Sequence route: fixed-size padded tensors with an observation mask,
//! per-subject then global imputation, and scaling that only looks at real
//! (unmasked) steps.

mod clean;
mod resample;

use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use clean::{clean_sequences, masked_scale, Provenance, SequenceCleaner, SequenceFill};
pub use resample::{resample_uniform, resample_with_labels};

use crate::format::{EventTable, LabelFrame, Labels};

#[derive(Debug, Error)]
pub enum SequenceError {
    #[error("max_len must be at least 1")]
    InvalidMaxLen,
    #[error("entity `{0}` has no rows")]
    EmptyEntity(String),
    #[error("labels do not cover entity `{0}`")]
    LabelMismatch(String),
    #[error("resampling step must be positive, got {0}")]
    NonPositiveStep(f64),
    #[error("feature layout differs between tensors: {0}")]
    FeatureMismatch(String),
    #[error("every feature was dropped during cleaning")]
    NoFeaturesLeft,
    #[error("training tensor is empty")]
    EmptyTrain,
    #[error("malformed tensor dump: {0}")]
    MalformedDump(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Which end of an over-long sequence is kept.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Truncation {
    #[default]
    Earliest,
    Latest,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SequenceLabels {
    Static(Vec<usize>),
    /// `N * T` classes; entries at padded steps are 0 and carry no meaning.
    Temporal(Vec<usize>),
}

/// `N` sequences padded to `T` steps of `F` features.
///
/// `values` is row-major `[n][t][f]`. Before cleaning, an observed-missing
/// cell holds NaN while padded cells hold 0; after cleaning only the mask
/// tells real steps from padding.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceTensor {
    pub max_len: usize,
    pub values: Vec<f64>,
    pub mask: Vec<bool>,
    pub lengths: Vec<usize>,
    pub deltas: Vec<f64>,
    pub entities: Vec<String>,
    pub feature_names: Vec<String>,
    pub labels: SequenceLabels,
    pub class_names: Vec<String>,
}

impl SequenceTensor {
    pub fn n_sequences(&self) -> usize {
        self.entities.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn cell(&self, n: usize, t: usize, f: usize) -> f64 {
        self.values[(n * self.max_len + t) * self.n_features() + f]
    }

    /// The `T x F` block of sequence `n`.
    pub fn sequence(&self, n: usize) -> &[f64] {
        let w = self.max_len * self.n_features();
        &self.values[n * w..(n + 1) * w]
    }

    pub fn sequence_deltas(&self, n: usize) -> &[f64] {
        &self.deltas[n * self.max_len..(n + 1) * self.max_len]
    }

    pub fn sequence_mask(&self, n: usize) -> &[bool] {
        &self.mask[n * self.max_len..(n + 1) * self.max_len]
    }

    pub fn temporal_labels(&self, n: usize) -> Option<&[usize]> {
        match &self.labels {
            SequenceLabels::Temporal(l) => Some(&l[n * self.max_len..(n + 1) * self.max_len]),
            SequenceLabels::Static(_) => None,
        }
    }

    pub fn static_label(&self, n: usize) -> Option<usize> {
        match &self.labels {
            SequenceLabels::Static(l) => Some(l[n]),
            SequenceLabels::Temporal(_) => None,
        }
    }

    /// True when any unmasked cell is still missing.
    pub fn has_missing(&self) -> bool {
        let f = self.n_features();
        (0..self.n_sequences() * self.max_len)
            .filter(|&i| self.mask[i])
            .any(|i| self.values[i * f..(i + 1) * f].iter().any(|v| v.is_nan()))
    }

    /// Sub-tensor holding the named entities in the given order.
    pub fn select(&self, entities: &[String]) -> Self {
        let idx: Vec<usize> = entities
            .iter()
            .filter_map(|e| self.entities.iter().position(|x| x == e))
            .collect();
        let t = self.max_len;
        let w = t * self.n_features();
        let gather = |src: &[f64], width: usize| -> Vec<f64> {
            idx.iter().flat_map(|&i| src[i * width..(i + 1) * width].iter().copied()).collect()
        };
        Self {
            max_len: t,
            values: gather(&self.values, w),
            mask: idx.iter().flat_map(|&i| self.mask[i * t..(i + 1) * t].iter().copied()).collect(),
            lengths: idx.iter().map(|&i| self.lengths[i]).collect(),
            deltas: gather(&self.deltas, t),
            entities: idx.iter().map(|&i| self.entities[i].clone()).collect(),
            feature_names: self.feature_names.clone(),
            labels: match &self.labels {
                SequenceLabels::Static(l) => SequenceLabels::Static(idx.iter().map(|&i| l[i]).collect()),
                SequenceLabels::Temporal(l) => SequenceLabels::Temporal(
                    idx.iter().flat_map(|&i| l[i * t..(i + 1) * t].iter().copied()).collect(),
                ),
            },
            class_names: self.class_names.clone(),
        }
    }

    pub fn check_invariants(&self) -> Result<(), String> {
        let (n, t, f) = (self.n_sequences(), self.max_len, self.n_features());
        if self.values.len() != n * t * f || self.mask.len() != n * t || self.deltas.len() != n * t {
            return Err("buffer sizes do not match N, T, F".into());
        }
        for s in 0..n {
            let m = self.sequence_mask(s);
            let len = m.iter().filter(|&&b| b).count();
            if len != self.lengths[s] || m.iter().take(len).any(|&b| !b) {
                return Err(format!("sequence {s}: mask is not a prefix of length {}", self.lengths[s]));
            }
            for step in len..t {
                if (0..f).any(|k| self.cell(s, step, k).to_bits() != 0) {
                    return Err(format!("sequence {s}: padded step {step} is not zero"));
                }
                if self.sequence_deltas(s)[step] != 0.0 {
                    return Err(format!("sequence {s}: padded delta at {step}"));
                }
            }
            if self.sequence_deltas(s).iter().any(|&d| d < 0.0) {
                return Err(format!("sequence {s}: negative delta"));
            }
        }
        Ok(())
    }

    /// Dumps the tensor as: `N`, `T`, `F` (u64 little-endian), the values
    /// row-major as f64 little-endian, then one byte (0/1) per mask entry.
    pub fn write_binary<W: Write>(&self, mut out: W) -> io::Result<()> {
        for dim in [self.n_sequences(), self.max_len, self.n_features()] {
            out.write_all(&(dim as u64).to_le_bytes())?;
        }
        for v in &self.values {
            out.write_all(&v.to_le_bytes())?;
        }
        let mask: Vec<u8> = self.mask.iter().map(|&b| u8::from(b)).collect();
        out.write_all(&mask)?;
        out.flush()
    }
}

/// Contents of a binary tensor dump.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorDump {
    pub shape: (usize, usize, usize),
    pub values: Vec<f64>,
    pub mask: Vec<bool>,
}

pub fn read_binary<R: Read>(mut input: R) -> Result<TensorDump, SequenceError> {
    let mut word = [0u8; 8];
    let mut dims = [0usize; 3];
    for d in &mut dims {
        input.read_exact(&mut word)?;
        *d = usize::try_from(u64::from_le_bytes(word))
            .map_err(|_| SequenceError::MalformedDump("dimension overflow".into()))?;
    }
    let [n, t, f] = dims;
    let cells = n
        .checked_mul(t)
        .and_then(|x| x.checked_mul(f))
        .ok_or_else(|| SequenceError::MalformedDump("shape overflow".into()))?;
    let mut values = Vec::with_capacity(cells);
    for _ in 0..cells {
        input.read_exact(&mut word)?;
        values.push(f64::from_le_bytes(word));
    }
    let mut mask = vec![0u8; n * t];
    input.read_exact(&mut mask)?;
    if mask.iter().any(|&b| b > 1) {
        return Err(SequenceError::MalformedDump("mask byte other than 0/1".into()));
    }
    let mut rest = Vec::new();
    input.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(SequenceError::MalformedDump(format!("{} trailing bytes", rest.len())));
    }
    Ok(TensorDump {
        shape: (n, t, f),
        values,
        mask: mask.into_iter().map(|b| b == 1).collect(),
    })
}

/// Pads or truncates every entity to `max_len` steps.
///
/// Missing observations become NaN; padded steps are 0 with a false mask.
/// `deltas[t]` is the time since the previous kept step (0 at the first).
pub fn tensorize(
    table: &EventTable,
    labels: &LabelFrame,
    max_len: usize,
    truncation: Truncation,
) -> Result<SequenceTensor, SequenceError> {
    if max_len == 0 {
        return Err(SequenceError::InvalidMaxLen);
    }
    let n = table.entities.len();
    let f = table.feature_names.len();
    let mut values = vec![0.0; n * max_len * f];
    let mut mask = vec![false; n * max_len];
    let mut deltas = vec![0.0; n * max_len];
    let mut lengths = Vec::with_capacity(n);
    let mut static_labels = Vec::new();
    let mut temporal_labels = Vec::new();

    for (s, e) in table.entities.iter().enumerate() {
        if e.is_empty() {
            return Err(SequenceError::EmptyEntity(e.id.clone()));
        }
        let len = e.len().min(max_len);
        let start = match truncation {
            Truncation::Earliest => 0,
            Truncation::Latest => e.len() - len,
        };
        for k in 0..len {
            let src = start + k;
            let at = s * max_len + k;
            mask[at] = true;
            if k > 0 {
                deltas[at] = e.timestamps[src] - e.timestamps[src - 1];
            }
            for (j, cell) in e.rows[src].iter().enumerate() {
                values[at * f + j] = cell.as_f64().unwrap_or(f64::NAN);
            }
        }
        lengths.push(len);
        match &labels.labels {
            Labels::Static(m) => {
                static_labels.push(*m.get(&e.id).ok_or_else(|| SequenceError::LabelMismatch(e.id.clone()))?);
            }
            Labels::Temporal(m) => {
                let l = m
                    .get(&e.id)
                    .filter(|l| l.len() == e.len())
                    .ok_or_else(|| SequenceError::LabelMismatch(e.id.clone()))?;
                let mut row = vec![0; max_len];
                row[..len].copy_from_slice(&l[start..start + len]);
                temporal_labels.extend(row);
            }
        }
    }

    Ok(SequenceTensor {
        max_len,
        values,
        mask,
        lengths,
        deltas,
        entities: table.entity_ids(),
        feature_names: table.feature_names.clone(),
        labels: match labels.labels {
            Labels::Static(_) => SequenceLabels::Static(static_labels),
            Labels::Temporal(_) => SequenceLabels::Temporal(temporal_labels),
        },
        class_names: labels.class_names.clone(),
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::format::{CellValue, EntitySeries};

    pub(crate) fn series_table(series: &[(&str, Vec<f64>, Vec<Vec<Option<f64>>>)]) -> (EventTable, LabelFrame) {
        let f = series.first().map_or(0, |s| s.2.first().map_or(0, Vec::len));
        let table = EventTable {
            feature_names: (0..f).map(|i| format!("f{i}")).collect(),
            entities: series
                .iter()
                .map(|(id, ts, rows)| EntitySeries {
                    id: id.to_string(),
                    timestamps: ts.clone(),
                    rows: rows.iter().map(|r| r.iter().map(|v| CellValue::from(*v)).collect()).collect(),
                })
                .collect(),
        };
        let labels = LabelFrame {
            class_names: vec!["0".into(), "1".into()],
            labels: Labels::Static(series.iter().map(|s| (s.0.to_string(), 0)).collect::<BTreeMap<_, _>>()),
        };
        (table, labels)
    }

    #[test]
    fn pads_with_trailing_zeros() {
        let (table, labels) = series_table(&[(
            "a",
            vec![0.0, 2.0, 5.0],
            vec![vec![Some(1.0)], vec![None], vec![Some(3.0)]],
        )]);
        let t = tensorize(&table, &labels, 30, Truncation::Earliest).unwrap();
        assert_eq!(t.lengths, vec![3]);
        assert_eq!(&t.mask[..4], &[true, true, true, false]);
        assert!(t.values[3..].iter().all(|&v| v == 0.0));
        assert!(t.values[1].is_nan());
        assert_eq!(&t.deltas[..4], &[0.0, 2.0, 3.0, 0.0]);
        t.check_invariants().unwrap();
    }

    #[test]
    fn truncates_to_max_len() {
        let ts: Vec<f64> = (0..40).map(f64::from).collect();
        let rows = ts.iter().map(|&v| vec![Some(v)]).collect();
        let (table, labels) = series_table(&[("a", ts, rows)]);
        let t = tensorize(&table, &labels, 30, Truncation::Earliest).unwrap();
        assert_eq!(t.lengths, vec![30]);
        assert_eq!(t.cell(0, 29, 0), 29.0);
        let t = tensorize(&table, &labels, 30, Truncation::Latest).unwrap();
        assert_eq!(t.cell(0, 0, 0), 10.0);
        assert_eq!(t.deltas[0], 0.0);
    }

    #[test]
    fn empty_entity_and_bad_len() {
        let (mut table, labels) = series_table(&[("a", vec![0.0], vec![vec![Some(1.0)]])]);
        assert!(matches!(
            tensorize(&table, &labels, 0, Truncation::Earliest),
            Err(SequenceError::InvalidMaxLen)
        ));
        table.entities[0].timestamps.clear();
        table.entities[0].rows.clear();
        assert!(matches!(
            tensorize(&table, &labels, 3, Truncation::Earliest),
            Err(SequenceError::EmptyEntity(_))
        ));
    }

    #[test]
    fn binary_dump_layout() {
        let (table, labels) = series_table(&[("a", vec![0.0, 1.0], vec![vec![Some(1.5)], vec![Some(-2.0)]])]);
        let t = tensorize(&table, &labels, 3, Truncation::Earliest).unwrap();
        let mut buf = Vec::new();
        t.write_binary(&mut buf).unwrap();
        assert_eq!(buf.len(), 24 + 3 * 8 + 3);
        assert_eq!(&buf[..8], &1u64.to_le_bytes());
        assert_eq!(&buf[8..16], &3u64.to_le_bytes());
        assert_eq!(&buf[24..32], &1.5f64.to_le_bytes());
        assert_eq!(&buf[48..], &[1, 1, 0]);
        let dump = read_binary(&buf[..]).unwrap();
        assert_eq!(dump.shape, (1, 3, 1));
        assert_eq!(dump.values, t.values);
        assert_eq!(dump.mask, t.mask);
        assert!(read_binary(&buf[..buf.len() - 1]).is_err());
    }
}
