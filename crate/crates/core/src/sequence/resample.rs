use super::SequenceError;
use crate::format::{CellValue, EntitySeries, EventTable, LabelFrame, Labels};

fn grid(first: f64, last: f64, step: f64) -> Vec<f64> {
    let n = ((last - first) / step + 1e-9).floor() as usize;
    (0..=n).map(|k| first + k as f64 * step).collect()
}

/// Linear interpolation of `(t, v)` points (sorted by `t`) at `x`; `None`
/// outside the observed span.
fn interpolate(points: &[(f64, f64)], x: f64) -> Option<f64> {
    let i = points.partition_point(|p| p.0 < x);
    match points.get(i) {
        Some(&(t, v)) if t == x => Some(v),
        Some(&(t1, v1)) if i > 0 => {
            let (t0, v0) = points[i - 1];
            Some(v0 + (v1 - v0) * (x - t0) / (t1 - t0))
        }
        _ => None,
    }
}

fn resample_entity(e: &EntitySeries, n_features: usize, step: f64) -> EntitySeries {
    if e.len() < 2 {
        return e.clone();
    }
    let times = grid(e.timestamps[0], e.timestamps[e.len() - 1], step);
    let columns: Vec<Vec<(f64, f64)>> = (0..n_features)
        .map(|f| {
            e.timestamps
                .iter()
                .zip(&e.rows)
                .filter_map(|(&t, r)| r[f].as_f64().map(|v| (t, v)))
                .collect()
        })
        .collect();
    let rows = times
        .iter()
        .map(|&t| columns.iter().map(|c| CellValue::from(interpolate(c, t))).collect())
        .collect();
    EntitySeries {
        id: e.id.clone(),
        timestamps: times,
        rows,
    }
}

/// Re-samples every entity onto a uniform grid from its first to its last
/// timestamp. Single-row entities pass through unchanged.
pub fn resample_uniform(table: &EventTable, step: f64) -> Result<EventTable, SequenceError> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(SequenceError::NonPositiveStep(step));
    }
    Ok(EventTable {
        feature_names: table.feature_names.clone(),
        entities: table
            .entities
            .iter()
            .map(|e| resample_entity(e, table.feature_names.len(), step))
            .collect(),
    })
}

/// Resamples the table and carries temporal labels onto the new grid: each
/// grid point takes the label of the latest original step at or before it.
pub fn resample_with_labels(
    table: &EventTable,
    labels: &LabelFrame,
    step: f64,
) -> Result<(EventTable, LabelFrame), SequenceError> {
    let out = resample_uniform(table, step)?;
    let labels = match &labels.labels {
        Labels::Static(_) => labels.clone(),
        Labels::Temporal(map) => {
            let mut resampled = map.clone();
            for (orig, new) in table.entities.iter().zip(&out.entities) {
                let old = map.get(&orig.id).ok_or_else(|| SequenceError::LabelMismatch(orig.id.clone()))?;
                let held = new
                    .timestamps
                    .iter()
                    .map(|&t| old[orig.timestamps.partition_point(|&x| x <= t).max(1) - 1])
                    .collect();
                resampled.insert(orig.id.clone(), held);
            }
            LabelFrame {
                class_names: labels.class_names.clone(),
                labels: Labels::Temporal(resampled),
            }
        }
    };
    Ok((out, labels))
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;

    fn one(ts: &[f64], vals: &[Option<f64>]) -> EventTable {
        EventTable {
            feature_names: vec!["hr".into()],
            entities: vec![EntitySeries {
                id: "a".into(),
                timestamps: ts.to_vec(),
                rows: vals.iter().map(|v| vec![CellValue::from(*v)]).collect(),
            }],
        }
    }

    fn col(t: &EventTable) -> Vec<Option<f64>> {
        t.entities[0].rows.iter().map(|r| r[0].as_f64()).collect()
    }

    #[test]
    fn midpoint() {
        let out = resample_uniform(&one(&[0.0, 2.0], &[Some(60.0), Some(70.0)]), 1.0).unwrap();
        assert_eq!(out.entities[0].timestamps, vec![0.0, 1.0, 2.0]);
        assert_eq!(col(&out), vec![Some(60.0), Some(65.0), Some(70.0)]);
    }

    #[test]
    fn uniform_series_is_identity() {
        let t = one(&[0.0, 3.0, 6.0], &[Some(1.0), Some(4.0), Some(-2.0)]);
        assert_eq!(resample_uniform(&t, 3.0).unwrap(), t);
    }

    #[test]
    fn span_clipping() {
        let t = one(&[0.0, 1.0, 2.0], &[None, None, Some(5.0)]);
        assert_eq!(col(&resample_uniform(&t, 1.0).unwrap()), vec![None, None, Some(5.0)]);
    }

    #[test]
    fn bad_step() {
        let t = one(&[0.0], &[Some(1.0)]);
        for s in [0.0, -1.0, f64::NAN] {
            assert!(matches!(resample_uniform(&t, s), Err(SequenceError::NonPositiveStep(_))));
        }
    }

    #[test]
    fn labels_hold_last_value() {
        let t = one(&[0.0, 2.0, 3.0], &[Some(1.0), Some(2.0), Some(3.0)]);
        let frame = LabelFrame {
            class_names: vec!["0".into(), "1".into()],
            labels: Labels::Temporal(BTreeMap::from([("a".to_string(), vec![0, 1, 0])])),
        };
        let (out, l) = resample_with_labels(&t, &frame, 0.5).unwrap();
        assert_eq!(out.entities[0].len(), 7);
        assert_eq!(l.temporal_labels("a").unwrap(), &[0, 0, 0, 0, 1, 1, 0]);
    }
}
