use serde::{Deserialize, Serialize};

use super::{FeatureMatrix, StaticError};
use crate::format::{CellValue, EventTable};
use crate::stats;

pub const DURATION_FEATURE: &str = "__duration";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggFunc {
    Mean,
    Std,
    Max,
    Min,
    Median,
}

impl AggFunc {
    pub const ALL: [AggFunc; 5] = [AggFunc::Mean, AggFunc::Std, AggFunc::Max, AggFunc::Min, AggFunc::Median];

    pub fn name(self) -> &'static str {
        match self {
            AggFunc::Mean => "mean",
            AggFunc::Std => "std",
            AggFunc::Max => "max",
            AggFunc::Min => "min",
            AggFunc::Median => "median",
        }
    }

    fn apply(self, values: &[f64]) -> Option<f64> {
        match self {
            AggFunc::Mean => stats::mean(values),
            AggFunc::Std => stats::sample_std(values),
            AggFunc::Max => stats::max(values),
            AggFunc::Min => stats::min(values),
            AggFunc::Median => stats::median(values),
        }
    }
}

/// Aggregates each entity's series into one row. Columns are
/// `<feature>__<agg>` for every feature and requested statistic (in that
/// nesting order), then `__duration` when requested.
pub fn extract_features(
    table: &EventTable,
    agg_funcs: &[AggFunc],
    include_duration: bool,
) -> Result<FeatureMatrix, StaticError> {
    if agg_funcs.is_empty() && !include_duration {
        return Err(StaticError::NoAggregationsRequested);
    }
    let mut feature_names: Vec<String> = table
        .feature_names
        .iter()
        .flat_map(|f| agg_funcs.iter().map(move |a| format!("{f}__{}", a.name())))
        .collect();
    if include_duration {
        feature_names.push(DURATION_FEATURE.to_string());
    }

    let values = table
        .entities
        .iter()
        .map(|e| {
            let mut row = Vec::with_capacity(feature_names.len());
            for f in 0..table.feature_names.len() {
                let obs = e.observed(f);
                row.extend(agg_funcs.iter().map(|a| CellValue::from(a.apply(&obs))));
            }
            if include_duration {
                let span = e.timestamps.first().zip(e.timestamps.last()).map(|(a, b)| b - a);
                row.push(CellValue::from(span));
            }
            row
        })
        .collect();

    Ok(FeatureMatrix {
        entities: table.entity_ids(),
        feature_names,
        values,
        labels: Vec::new(),
        class_names: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::format::EntitySeries;

    fn num(v: f64) -> CellValue {
        CellValue::Number(v)
    }

    fn sample() -> EventTable {
        EventTable {
            feature_names: vec!["hr".into()],
            entities: vec![
                EntitySeries {
                    id: "p1".into(),
                    timestamps: vec![0.0, 1.0],
                    rows: vec![vec![num(60.0)], vec![num(66.0)]],
                },
                EntitySeries {
                    id: "p2".into(),
                    timestamps: vec![0.0],
                    rows: vec![vec![num(70.0)]],
                },
                EntitySeries {
                    id: "p3".into(),
                    timestamps: vec![2.0, 5.0],
                    rows: vec![vec![CellValue::Missing], vec![CellValue::Missing]],
                },
            ],
        }
    }

    #[test]
    fn two_point_statistics() {
        let m = extract_features(&sample(), &AggFunc::ALL, true).unwrap();
        assert_eq!(
            m.feature_names,
            vec!["hr__mean", "hr__std", "hr__max", "hr__min", "hr__median", "__duration"]
        );
        let p1 = &m.values[0];
        assert_eq!(p1[0], num(63.0));
        assert!((p1[1].as_f64().unwrap() - 18f64.sqrt()).abs() < 1e-12);
        assert_eq!(p1[2], num(66.0));
        assert_eq!(p1[3], num(60.0));
        assert_eq!(p1[4], num(63.0));
        assert_eq!(p1[5], num(1.0));
    }

    #[test]
    fn single_and_zero_observations() {
        let m = extract_features(&sample(), &AggFunc::ALL, true).unwrap();
        assert_eq!(m.values[1][1], CellValue::Missing);
        assert_eq!(m.values[1][5], num(0.0));
        assert!(m.values[2][..5].iter().all(|c| c.is_missing()));
        assert_eq!(m.values[2][5], num(3.0));
    }

    #[test]
    fn nothing_requested() {
        assert_eq!(
            extract_features(&sample(), &[], false).unwrap_err(),
            StaticError::NoAggregationsRequested
        );
        let m = extract_features(&sample(), &[], true).unwrap();
        assert_eq!(m.feature_names, vec![DURATION_FEATURE]);
    }
}
