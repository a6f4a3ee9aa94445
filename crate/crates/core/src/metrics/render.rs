//! Artifact rendering: text report, versioned metrics JSON, CSV series and
//! static SVG charts. Output depends only on the inputs, byte for byte.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EvalReport, MetricsError, RocCurve, StepMetrics, TemporalEvalSeries};

pub const METRICS_FORMAT: &str = "medts-metrics";
pub const METRICS_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub name: String,
    pub beta: f64,
    pub hazard_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalSummary {
    pub coefficients: Vec<Coefficient>,
    pub dropped_features: Vec<String>,
    pub log_partial_likelihood: f64,
    pub iterations: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub test_events: usize,
    /// Concordance on the test split; absent without comparable pairs.
    pub concordance: Option<f64>,
}

impl SurvivalSummary {
    pub fn render(&self, model: &str) -> String {
        let width = self.coefficients.iter().map(|c| c.name.chars().count()).chain([12]).max().unwrap_or(12);
        let mut out = format!("--- {model} Survival Report ---\n");
        let _ = writeln!(out, "{:>width$}  {:>12} {:>12}", "", "coef", "exp(coef)");
        out.push('\n');
        for c in &self.coefficients {
            let _ = writeln!(out, "{:>width$}  {:>12.4} {:>12.4}", c.name, c.beta, c.hazard_ratio);
        }
        out.push('\n');
        let _ = writeln!(out, "log partial likelihood: {:.4}", self.log_partial_likelihood);
        let _ = writeln!(out, "newton iterations: {}", self.iterations);
        let _ = writeln!(out, "train subjects: {}", self.n_train);
        let _ = writeln!(out, "test subjects: {} ({} events)", self.n_test, self.test_events);
        match self.concordance {
            Some(c) => {
                let _ = writeln!(out, "concordance index: {c:.4}");
            }
            None => out.push_str("concordance index: undefined (no comparable pairs)\n"),
        }
        if !self.dropped_features.is_empty() {
            let _ = writeln!(out, "dropped constant covariates: {}", self.dropped_features.join(", "));
        }
        out
    }
}

/// Everything a run reports, serialized as `metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsDocument {
    pub format: String,
    pub version: u32,
    pub model: String,
    pub pipeline: String,
    pub threshold: f64,
    pub report: Option<EvalReport>,
    pub temporal: Option<TemporalEvalSeries>,
    pub survival: Option<SurvivalSummary>,
    pub training_loss: Vec<f64>,
}

impl MetricsDocument {
    pub fn new(model: &str, pipeline: &str, threshold: f64) -> Self {
        Self {
            format: METRICS_FORMAT.into(),
            version: METRICS_FORMAT_VERSION,
            model: model.into(),
            pipeline: pipeline.into(),
            threshold,
            report: None,
            temporal: None,
            survival: None,
            training_loss: Vec::new(),
        }
    }

    /// Classification report, flattened for temporal runs.
    pub fn classification(&self) -> Option<&EvalReport> {
        self.report.as_ref().or(self.temporal.as_ref().map(|t| &t.flattened))
    }

    pub fn report_text(&self) -> String {
        if let Some(s) = &self.survival {
            return s.render(&self.model);
        }
        match (&self.report, &self.temporal) {
            (Some(r), _) => r.render(&format!("{} Classification Report", self.model)),
            (None, Some(t)) => t
                .flattened
                .render(&format!("{} Temporal Classification Report (flattened)", self.model)),
            (None, None) => String::new(),
        }
    }

    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("metrics serialize");
        s.push('\n');
        s
    }

    pub fn from_json_str(text: &str) -> Result<Self, String> {
        let doc: Self = serde_json::from_str(text).map_err(|e| e.to_string())?;
        if doc.format != METRICS_FORMAT || doc.version != METRICS_FORMAT_VERSION {
            return Err(format!("unsupported metrics format {} v{}", doc.format, doc.version));
        }
        Ok(doc)
    }
}

/// Names of the files written, in write order.
pub type ArtifactSet = Vec<String>;

fn write(dir: &Path, name: &str, body: &str, written: &mut ArtifactSet) -> Result<(), MetricsError> {
    let path = dir.join(name);
    fs::write(&path, body).map_err(|source| MetricsError::Io {
        path: path.display().to_string(),
        source,
    })?;
    written.push(name.to_string());
    Ok(())
}

/// Writes report.txt, metrics.json and whichever charts apply.
pub fn write_artifacts(doc: &MetricsDocument, dir: &Path) -> Result<ArtifactSet, MetricsError> {
    fs::create_dir_all(dir).map_err(|source| MetricsError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let mut written = Vec::new();
    write(dir, "report.txt", &doc.report_text(), &mut written)?;
    write(dir, "metrics.json", &doc.to_json_string(), &mut written)?;
    if let Some(r) = doc.classification() {
        write(dir, "confusion.svg", &confusion_svg(r), &mut written)?;
        if let Some(roc) = &r.roc {
            write(dir, "roc.svg", &roc_svg(roc), &mut written)?;
        }
    }
    if !doc.training_loss.is_empty() {
        write(dir, "loss.svg", &loss_svg(&doc.training_loss), &mut written)?;
    }
    if let Some(t) = &doc.temporal {
        write(dir, "temporal_metrics.csv", &temporal_csv(&t.steps), &mut written)?;
        write(dir, "temporal_metrics.svg", &temporal_svg(&t.steps), &mut written)?;
    }
    Ok(written)
}

pub fn temporal_csv(steps: &[StepMetrics]) -> String {
    let mut out = String::from("step,n_evaluated,precision,recall,f1,roc_auc\n");
    for s in steps {
        let auc = s.roc_auc.map(|a| a.to_string()).unwrap_or_default();
        let _ = writeln!(out, "{},{},{},{},{},{}", s.step, s.n_evaluated, s.precision, s.recall, s.f1, auc);
    }
    out
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

const W: f64 = 520.0;
const H: f64 = 380.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 132.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 52.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

fn svg_open(out: &mut String, w: f64, h: f64, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        w / 2.0,
        escape(title)
    );
}

fn tick_label(v: f64) -> String {
    if (v - v.round()).abs() < 1e-9 {
        format!("{}", v.round() as i64)
    } else {
        format!("{v:.2}")
    }
}

/// One named line; `None` points break the line.
pub struct Series<'a> {
    pub name: &'a str,
    pub points: Vec<Option<(f64, f64)>>,
}

/// Line chart with linear axes. `y_range` pins the vertical extent.
pub fn line_chart_svg(title: &str, x_label: &str, y_label: &str, series: &[Series], y_range: Option<(f64, f64)>) -> String {
    let all: Vec<(f64, f64)> = series.iter().flat_map(|s| s.points.iter().flatten().copied()).collect();
    let span = |vals: Vec<f64>| {
        let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        match (lo.is_finite(), hi > lo) {
            (false, _) => (0.0, 1.0),
            (true, false) => (lo - 0.5, hi + 0.5),
            (true, true) => (lo, hi),
        }
    };
    let (x0, x1) = span(all.iter().map(|p| p.0).collect());
    let (y0, y1) = y_range.unwrap_or_else(|| span(all.iter().map(|p| p.1).collect()));
    let pw = W - LEFT - RIGHT;
    let ph = H - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| TOP + ph - (y - y0) / (y1 - y0) * ph;

    let mut out = String::new();
    svg_open(&mut out, W, H, title);
    let _ = writeln!(
        out,
        r##"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>"##
    );
    for i in 0..=4 {
        let fx = x0 + (x1 - x0) * i as f64 / 4.0;
        let fy = y0 + (y1 - y0) * i as f64 / 4.0;
        let _ = writeln!(
            out,
            r##"<line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#ddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"##,
            LEFT + pw,
            LEFT - 6.0,
            sy(fy) + 4.0,
            tick_label(fy),
            y = sy(fy),
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            sx(fx),
            TOP + ph + 18.0,
            tick_label(fx)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        LEFT + pw / 2.0,
        H - 12.0,
        escape(x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0,
        escape(y_label)
    );
    for (k, s) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        for run in s.points.split(Option::is_none) {
            let coords: Vec<String> = run
                .iter()
                .flatten()
                .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
                .collect();
            match coords.len() {
                0 => {}
                1 => {
                    let (cx, cy) = coords[0].split_once(',').unwrap_or(("0", "0"));
                    let _ = writeln!(out, r#"<circle cx="{cx}" cy="{cy}" r="2.5" fill="{color}"/>"#);
                }
                _ => {
                    let _ = writeln!(
                        out,
                        r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
                        coords.join(" ")
                    );
                }
            }
        }
        let ly = TOP + 14.0 + 18.0 * k as f64;
        let lx = LEFT + pw + 12.0;
        let _ = writeln!(
            out,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            lx + 18.0,
            lx + 24.0,
            ly + 4.0,
            escape(s.name)
        );
    }
    out.push_str("</svg>\n");
    out
}

pub fn loss_svg(loss: &[f64]) -> String {
    let points = loss.iter().enumerate().map(|(i, &l)| l.is_finite().then_some(((i + 1) as f64, l))).collect();
    line_chart_svg("Training loss", "epoch", "loss", &[Series { name: "loss", points }], None)
}

pub fn roc_svg(roc: &RocCurve) -> String {
    let curve = Series {
        name: "ROC",
        points: roc.points.iter().map(|p| Some((p.fpr, p.tpr))).collect(),
    };
    let chance = Series {
        name: "chance",
        points: vec![Some((0.0, 0.0)), Some((1.0, 1.0))],
    };
    line_chart_svg(
        &format!("ROC curve (AUC = {:.4})", roc.auc),
        "false positive rate",
        "true positive rate",
        &[curve, chance],
        Some((0.0, 1.0)),
    )
}

pub fn temporal_svg(steps: &[StepMetrics]) -> String {
    let line = |name, f: &dyn Fn(&StepMetrics) -> Option<f64>| Series {
        name,
        points: steps
            .iter()
            .map(|s| if s.n_evaluated == 0 { None } else { f(s).map(|v| (s.step as f64, v)) })
            .collect(),
    };
    let series = [
        line("precision", &|s| Some(s.precision)),
        line("recall", &|s| Some(s.recall)),
        line("f1", &|s| Some(s.f1)),
        line("roc_auc", &|s| s.roc_auc),
    ];
    line_chart_svg("Metrics by time step", "time step", "score", &series, Some((0.0, 1.0)))
}

/// Heat grid of counts shaded by row share (rows true, columns predicted).
pub fn confusion_svg(report: &EvalReport) -> String {
    let c = report.class_names.len();
    let cell = 64.0;
    let (ox, oy) = (110.0, 70.0);
    let w = ox + cell * c as f64 + 30.0;
    let h = oy + cell * c as f64 + 50.0;
    let mut out = String::new();
    svg_open(&mut out, w, h, "Confusion matrix");
    for (i, row) in report.confusion.iter().enumerate() {
        let support: usize = row.iter().sum();
        for (j, &n) in row.iter().enumerate() {
            let share = if support == 0 { 0.0 } else { n as f64 / support as f64 };
            let shade = (255.0 - 200.0 * share).round() as u8;
            let ink = if share > 0.6 { "white" } else { "black" };
            let (x, y) = (ox + cell * j as f64, oy + cell * i as f64);
            let _ = writeln!(
                out,
                r##"<rect x="{x}" y="{y}" width="{cell}" height="{cell}" fill="rgb({shade},{shade},255)" stroke="#444"/><text x="{:.1}" y="{:.1}" text-anchor="middle" fill="{ink}">{n}</text>"##,
                x + cell / 2.0,
                y + cell / 2.0 + 4.0
            );
        }
    }
    for (k, name) in report.class_names.iter().enumerate() {
        let name = escape(name);
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{name}</text><text x="{:.1}" y="{:.1}" text-anchor="middle">{name}</text>"#,
            ox - 8.0,
            oy + cell * (k as f64 + 0.5) + 4.0,
            ox + cell * (k as f64 + 0.5),
            oy - 8.0
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">predicted</text>"#,
        ox + cell * c as f64 / 2.0,
        oy + cell * c as f64 + 28.0
    );
    let _ = writeln!(
        out,
        r#"<text x="24" y="{:.1}" text-anchor="middle" transform="rotate(-90 24 {:.1})">true</text>"#,
        oy + cell * c as f64 / 2.0,
        oy + cell * c as f64 / 2.0
    );
    out.push_str("</svg>\n");
    out
}
