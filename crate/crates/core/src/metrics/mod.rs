//! Classification diagnostics: per-class report, confusion matrix, ROC/AUC
//! and per-timestep series for sequence outputs.

mod render;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use render::{
    confusion_svg, line_chart_svg, loss_svg, roc_svg, temporal_csv, temporal_svg, write_artifacts, ArtifactSet,
    Coefficient, MetricsDocument, Series, SurvivalSummary, METRICS_FORMAT, METRICS_FORMAT_VERSION,
};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("length mismatch: {0} labels vs {1} predictions")]
    LengthMismatch(usize, usize),
    #[error("nothing to evaluate")]
    Empty,
    #[error("ROC needs both classes present")]
    SingleClass,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("label {label} out of range for {n_classes} classes")]
    LabelOutOfRange { label: usize, n_classes: usize },
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Averages {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Score cut producing this point; `None` for the origin.
    pub threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub class_names: Vec<String>,
    pub per_class: Vec<ClassMetrics>,
    pub accuracy: f64,
    pub macro_avg: Averages,
    pub weighted_avg: Averages,
    /// Rows are true classes, columns predicted classes.
    pub confusion: Vec<Vec<usize>>,
    pub total: usize,
    pub roc: Option<RocCurve>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

pub fn confusion_matrix(y_true: &[usize], y_pred: &[usize], n_classes: usize) -> Result<Vec<Vec<usize>>, MetricsError> {
    if y_true.len() != y_pred.len() {
        return Err(MetricsError::LengthMismatch(y_true.len(), y_pred.len()));
    }
    let mut m = vec![vec![0; n_classes]; n_classes];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        let label = t.max(p);
        if label >= n_classes {
            return Err(MetricsError::LabelOutOfRange { label, n_classes });
        }
        m[t][p] += 1;
    }
    Ok(m)
}

pub fn classification_report(
    y_true: &[usize],
    y_pred: &[usize],
    class_names: &[String],
) -> Result<EvalReport, MetricsError> {
    let confusion = confusion_matrix(y_true, y_pred, class_names.len())?;
    if y_true.is_empty() {
        return Err(MetricsError::Empty);
    }
    let total = y_true.len();
    let c = class_names.len();
    let per_class: Vec<ClassMetrics> = (0..c)
        .map(|k| {
            let tp = confusion[k][k];
            let support: usize = confusion[k].iter().sum();
            let predicted: usize = confusion.iter().map(|row| row[k]).sum();
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, support);
            ClassMetrics {
                precision,
                recall,
                f1: harmonic(precision, recall),
                support,
            }
        })
        .collect();
    let trace: usize = (0..c).map(|k| confusion[k][k]).sum();
    let mean = |f: &dyn Fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / c as f64;
    let weighted = |f: &dyn Fn(&ClassMetrics) -> f64| {
        per_class.iter().map(|m| f(m) * m.support as f64).sum::<f64>() / total as f64
    };
    Ok(EvalReport {
        class_names: class_names.to_vec(),
        accuracy: ratio(trace, total),
        macro_avg: Averages {
            precision: mean(&|m| m.precision),
            recall: mean(&|m| m.recall),
            f1: mean(&|m| m.f1),
        },
        weighted_avg: Averages {
            precision: weighted(&|m| m.precision),
            recall: weighted(&|m| m.recall),
            f1: weighted(&|m| m.f1),
        },
        per_class,
        confusion,
        total,
        roc: None,
    })
}

/// ROC over descending unique score cuts. The trapezoid area is
/// accumulated in integers over `2 * P * N`, which makes it identical to
/// the Mann-Whitney statistic.
pub fn roc_auc(y_true: &[usize], scores: &[f64]) -> Result<RocCurve, MetricsError> {
    if y_true.len() != scores.len() {
        return Err(MetricsError::LengthMismatch(y_true.len(), scores.len()));
    }
    let pos = y_true.iter().filter(|&&y| y == 1).count() as u64;
    let neg = y_true.len() as u64 - pos;
    if pos == 0 || neg == 0 {
        return Err(MetricsError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: None,
    }];
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut doubled_area: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let cut = scores[order[i]];
        let (tp0, fp0) = (tp, fp);
        while i < order.len() && scores[order[i]] == cut {
            if y_true[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        doubled_area += u128::from(fp - fp0) * u128::from(tp + tp0);
        points.push(RocPoint {
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
            threshold: Some(cut),
        });
    }
    Ok(RocCurve {
        points,
        auc: doubled_area as f64 / (2 * u128::from(pos) * u128::from(neg)) as f64,
    })
}

/// Macro one-vs-rest AUC over classes that occur in `y_true` with at least
/// one negative; `None` when fewer than two classes occur.
fn multiclass_auc(y_true: &[usize], proba: &[Vec<f64>], n_classes: usize) -> Option<f64> {
    let aucs: Vec<f64> = (0..n_classes)
        .filter_map(|c| {
            let y: Vec<usize> = y_true.iter().map(|&t| usize::from(t == c)).collect();
            let s: Vec<f64> = proba.iter().map(|p| p[c]).collect();
            roc_auc(&y, &s).ok().map(|r| r.auc)
        })
        .collect();
    (!aucs.is_empty()).then(|| aucs.iter().sum::<f64>() / aucs.len() as f64)
}

impl EvalReport {
    /// Report plus ROC for binary problems (positive class 1).
    pub fn from_probabilities(
        y_true: &[usize],
        proba: &[Vec<f64>],
        class_names: &[String],
        threshold: f64,
    ) -> Result<Self, MetricsError> {
        if let Some(p) = proba.iter().find(|p| p.len() != class_names.len()) {
            return Err(MetricsError::ShapeMismatch(format!(
                "{} probabilities for {} classes",
                p.len(),
                class_names.len()
            )));
        }
        let y_pred = crate::static_models::decide(proba, threshold);
        let mut report = classification_report(y_true, &y_pred, class_names)?;
        if class_names.len() == 2 {
            let scores: Vec<f64> = proba.iter().map(|p| p[1]).collect();
            report.roc = roc_auc(y_true, &scores).ok();
        }
        Ok(report)
    }

    /// Fixed-width text table with two-decimal rates.
    pub fn render(&self, title: &str) -> String {
        let width = self
            .class_names
            .iter()
            .map(|n| n.chars().count())
            .chain([12])
            .max()
            .unwrap_or(12);
        let mut out = String::new();
        if !title.is_empty() {
            let _ = writeln!(out, "--- {title} ---");
        }
        let _ = write!(out, "{:>width$} ", "");
        for h in ["precision", "recall", "f1-score", "support"] {
            let _ = write!(out, " {h:>9}");
        }
        out.push_str("\n\n");
        let row = |out: &mut String, name: &str, p: f64, r: f64, f: f64, s: usize| {
            let _ = writeln!(out, "{name:>width$}  {p:>9.2} {r:>9.2} {f:>9.2} {s:>9}");
        };
        for (name, m) in self.class_names.iter().zip(&self.per_class) {
            row(&mut out, name, m.precision, m.recall, m.f1, m.support);
        }
        out.push('\n');
        let _ = writeln!(out, "{:>width$}  {:>9} {:>9} {:>9.2} {:>9}", "accuracy", "", "", self.accuracy, self.total);
        let a = self.macro_avg;
        row(&mut out, "macro avg", a.precision, a.recall, a.f1, self.total);
        let a = self.weighted_avg;
        row(&mut out, "weighted avg", a.precision, a.recall, a.f1, self.total);
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    /// 1-based step index.
    pub step: usize,
    pub n_evaluated: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Absent when the step holds a single label class.
    pub roc_auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalEvalSeries {
    pub steps: Vec<StepMetrics>,
    pub flattened: EvalReport,
}

/// Per-step metrics over sequences still running at each step, plus a
/// report pooled over every real step. Binary tasks report class 1;
/// multiclass tasks report macro averages.
///
/// `labels[n]` holds one label per real step of sequence `n`; `proba[n]`
/// must have the same length. `n_steps` fixes the series length.
pub fn temporal_metric_series(
    labels: &[Vec<usize>],
    proba: &[Vec<Vec<f64>>],
    n_steps: usize,
    class_names: &[String],
    threshold: f64,
) -> Result<TemporalEvalSeries, MetricsError> {
    if labels.len() != proba.len() {
        return Err(MetricsError::ShapeMismatch(format!(
            "{} label sequences vs {} prediction sequences",
            labels.len(),
            proba.len()
        )));
    }
    for (n, (l, p)) in labels.iter().zip(proba).enumerate() {
        if l.len() != p.len() || l.len() > n_steps {
            return Err(MetricsError::ShapeMismatch(format!(
                "sequence {n}: {} labels, {} predictions, {n_steps} steps",
                l.len(),
                p.len()
            )));
        }
    }
    let c = class_names.len();
    let mut steps = Vec::with_capacity(n_steps);
    for t in 0..n_steps {
        let (y, p): (Vec<usize>, Vec<Vec<f64>>) = labels
            .iter()
            .zip(proba)
            .filter(|(l, _)| t < l.len())
            .map(|(l, p)| (l[t], p[t].clone()))
            .unzip();
        let mut m = StepMetrics {
            step: t + 1,
            n_evaluated: y.len(),
            precision: 0.0,
            recall: 0.0,
            f1: 0.0,
            roc_auc: None,
        };
        if !y.is_empty() {
            let r = EvalReport::from_probabilities(&y, &p, class_names, threshold)?;
            let (pr, rc, f1) = if c == 2 {
                let k = &r.per_class[1];
                (k.precision, k.recall, k.f1)
            } else {
                (r.macro_avg.precision, r.macro_avg.recall, r.macro_avg.f1)
            };
            m.precision = pr;
            m.recall = rc;
            m.f1 = f1;
            m.roc_auc = if c == 2 {
                r.roc.map(|roc| roc.auc)
            } else {
                multiclass_auc(&y, &p, c)
            };
        }
        steps.push(m);
    }
    let y: Vec<usize> = labels.iter().flatten().copied().collect();
    let p: Vec<Vec<f64>> = proba.iter().flatten().cloned().collect();
    let flattened = EvalReport::from_probabilities(&y, &p, class_names, threshold)?;
    Ok(TemporalEvalSeries { steps, flattened })
}
