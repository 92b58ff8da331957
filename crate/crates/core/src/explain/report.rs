//! Run artefacts: joined prediction/explanation records, a run summary and
//! a self-contained static HTML report.

use super::{AnomalyEntry, ExplainError, Explanation, ModelSummary, PathFeature};
use crate::eval::{deserialize_scores, serialize_scores, PrequentialMetrics, PredictionRecord};
use crate::features::{FeatureName, FeatureSchema, FeatureVector};
use crate::ingest::format_timestamp;
use crate::sensor::{ClassLabel, N_CLASSES};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

/// One line of `records.jsonl`: a prediction, joined with its explanation
/// when one was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRecord {
    pub seq_id: u64,
    pub timestamp: i64,
    #[serde(rename = "true")]
    pub truth: ClassLabel,
    pub predicted: ClassLabel,
    #[serde(serialize_with = "serialize_scores", deserialize_with = "deserialize_scores")]
    pub scores: [f64; N_CLASSES],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_features: Option<Vec<PathFeature>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_summary: Option<ModelSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anomalies: Option<Vec<AnomalyEntry>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
}

impl ReportRecord {
    pub fn join(record: &PredictionRecord, explanation: Option<&Explanation>) -> Self {
        Self {
            seq_id: record.seq_id,
            timestamp: record.timestamp,
            truth: record.truth,
            predicted: record.predicted,
            scores: record.scores,
            top_features: explanation.map(|e| e.top_features.clone()),
            model_summary: explanation.and_then(|e| e.model_summary.clone()),
            anomalies: explanation.map(|e| e.anomalies.clone()),
            text: explanation.map(|e| e.text.clone()),
        }
    }

    /// The prediction part.
    pub fn prediction(&self) -> PredictionRecord {
        PredictionRecord {
            seq_id: self.seq_id,
            timestamp: self.timestamp,
            truth: self.truth,
            predicted: self.predicted,
            scores: self.scores,
            latency: Default::default(),
        }
    }

    /// The explanation part, if any.
    pub fn explanation(&self) -> Option<Explanation> {
        Some(Explanation {
            seq_id: self.seq_id,
            predicted: self.predicted,
            truth: Some(self.truth),
            top_features: self.top_features.clone()?,
            model_summary: self.model_summary.clone(),
            anomalies: self.anomalies.clone().unwrap_or_default(),
            text: self.text.clone()?,
        })
    }
}

/// `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub samples: u64,
    pub explained: u64,
    /// Per-class counts of true labels.
    pub true_counts: [u64; N_CLASSES],
    pub predicted_counts: [u64; N_CLASSES],
    pub metrics: Option<PrequentialMetrics>,
    pub model_summary: Option<ModelSummary>,
    /// Free-form run description (model, configuration, ...).
    #[serde(default)]
    pub context: serde_json::Value,
}

/// Value of one feature over time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSeries {
    pub feature: FeatureName,
    pub points: Vec<SeriesPoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub timestamp: i64,
    pub value: f64,
    pub truth: ClassLabel,
}

/// Bounded-memory sample of classified vectors for plotting: keeps every
/// `stride`-th vector and doubles the stride whenever the buffer fills.
#[derive(Debug, Clone)]
pub struct SeriesRecorder {
    schema: Option<Arc<FeatureSchema>>,
    capacity: usize,
    stride: u64,
    seen: u64,
    rows: Vec<(i64, ClassLabel, Vec<f32>)>,
}

impl SeriesRecorder {
    pub fn new(capacity: usize) -> Self {
        Self { schema: None, capacity: capacity.max(2), stride: 1, seen: 0, rows: Vec::new() }
    }

    pub fn push(&mut self, fv: &FeatureVector, truth: ClassLabel) {
        let schema = self.schema.get_or_insert_with(|| Arc::clone(fv.schema()));
        if !Arc::ptr_eq(schema, fv.schema()) && schema.names() != fv.names() {
            return;
        }
        if self.seen % self.stride == 0 {
            if self.rows.len() == self.capacity {
                let kept: Vec<_> = self.rows.drain(..).step_by(2).collect();
                self.rows = kept;
                self.stride *= 2;
            }
            if self.seen % self.stride == 0 {
                self.rows.push((fv.timestamp, truth, fv.values().iter().map(|&v| v as f32).collect()));
            }
        }
        self.seen += 1;
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Series of the given features (features outside the schema are
    /// skipped).
    pub fn series(&self, features: &[FeatureName]) -> Vec<FeatureSeries> {
        let Some(schema) = &self.schema else {
            return Vec::new();
        };
        features
            .iter()
            .filter_map(|f| {
                let i = schema.position(f)?;
                let points = self
                    .rows
                    .iter()
                    .map(|(ts, truth, v)| SeriesPoint { timestamp: *ts, value: f64::from(v[i]), truth: *truth })
                    .collect();
                Some(FeatureSeries { feature: *f, points })
            })
            .collect()
    }
}

/// Inputs of [`emit_report`].
#[derive(Debug, Clone, Copy)]
pub struct ReportInput<'a> {
    pub title: &'a str,
    /// Model label for the results table (e.g. "ARFC").
    pub model: &'a str,
    pub records: &'a [PredictionRecord],
    pub explanations: &'a [Explanation],
    pub metrics: Option<&'a PrequentialMetrics>,
    pub model_summary: Option<&'a ModelSummary>,
    pub series: &'a [FeatureSeries],
    pub context: &'a serde_json::Value,
}

/// Paths of the written files.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportFiles {
    pub records: PathBuf,
    pub summary: PathBuf,
    pub html: PathBuf,
}

impl ReportFiles {
    pub fn in_dir(dir: &Path) -> Self {
        Self { records: dir.join("records.jsonl"), summary: dir.join("summary.json"), html: dir.join("report.html") }
    }
}

/// Writes `records.jsonl`, `summary.json` and `report.html` into `dir`
/// (created if missing).
pub fn emit_report(dir: &Path, input: &ReportInput<'_>) -> Result<ReportFiles, ExplainError> {
    std::fs::create_dir_all(dir)?;
    let files = ReportFiles::in_dir(dir);
    let by_seq: HashMap<u64, &Explanation> = input.explanations.iter().map(|e| (e.seq_id, e)).collect();

    let mut out = BufWriter::new(std::fs::File::create(&files.records)?);
    for r in input.records {
        serde_json::to_writer(&mut out, &ReportRecord::join(r, by_seq.get(&r.seq_id).copied()))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;

    let summary = run_summary(input);
    std::fs::write(&files.summary, serde_json::to_string_pretty(&summary)?)?;
    std::fs::write(&files.html, render_html(input, &summary))?;
    Ok(files)
}

fn run_summary(input: &ReportInput<'_>) -> RunSummary {
    let mut true_counts = [0; N_CLASSES];
    let mut predicted_counts = [0; N_CLASSES];
    for r in input.records {
        true_counts[r.truth.ordinal()] += 1;
        predicted_counts[r.predicted.ordinal()] += 1;
    }
    RunSummary {
        samples: input.records.len() as u64,
        explained: input.explanations.len() as u64,
        true_counts,
        predicted_counts,
        metrics: input.metrics.cloned(),
        model_summary: input.model_summary.cloned(),
        context: input.context.clone(),
    }
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            c => out.push(c),
        }
    }
    out
}

const STYLE: &str = "body{font-family:system-ui,sans-serif;margin:2em auto;max-width:1100px;color:#222}\
table{border-collapse:collapse;margin:1em 0}th,td{border:1px solid #bbb;padding:4px 10px;text-align:right}\
th{background:#eee}td.l,th.l{text-align:left}pre{background:#f6f6f6;padding:1em;white-space:pre-wrap}\
.muted{color:#777}h2{border-bottom:1px solid #ccc;padding-bottom:4px}";

const CLASS_NAMES: [&str; N_CLASSES] = ["Non-failure", "Oil leak compressor", "Air leak dryer", "Air leak client"];

fn render_html(input: &ReportInput<'_>, summary: &RunSummary) -> String {
    let mut h = String::new();
    let _ = write!(
        h,
        "<!DOCTYPE html>\n<html lang=\"en\"><head><meta charset=\"utf-8\"><title>{0}</title><style>{STYLE}</style></head><body>\n<h1>{0}</h1>\n",
        escape(input.title)
    );

    h.push_str("<h2>Online failure detection results</h2>\n");
    match input.metrics {
        None => h.push_str("<p class=\"muted\">No samples were classified.</p>\n"),
        Some(m) => {
            h.push_str("<table><tr><th class=\"l\">Model</th><th>Accuracy</th><th>Macro F</th><th>Micro F</th>");
            for c in CLASS_NAMES {
                let _ = write!(h, "<th>F {c}</th>");
            }
            h.push_str("<th>Runtime (s)</th><th>Samples/s</th></tr>\n");
            let _ = write!(
                h,
                "<tr><td class=\"l\">{}</td><td>{:.4}</td><td>{:.4}</td><td>{:.4}</td>",
                escape(input.model),
                m.accuracy,
                m.macro_f,
                m.micro_f
            );
            for f in m.per_class_f {
                let _ = write!(h, "<td>{f:.4}</td>");
            }
            let _ = writeln!(h, "<td>{:.2}</td><td>{:.1}</td></tr></table>", m.wall_seconds, m.throughput);

            h.push_str("<h3>Confusion matrix (rows: true class, columns: predicted)</h3>\n<table><tr><th></th>");
            for c in CLASS_NAMES {
                let _ = write!(h, "<th>{c}</th>");
            }
            h.push_str("</tr>\n");
            for t in ClassLabel::ALL {
                let _ = write!(h, "<tr><th class=\"l\">{}</th>", CLASS_NAMES[t.ordinal()]);
                for p in ClassLabel::ALL {
                    let _ = write!(h, "<td>{}</td>", m.confusion.get(t, p));
                }
                h.push_str("</tr>\n");
            }
            h.push_str("</table>\n");
        }
    }
    let _ = writeln!(
        h,
        "<p>{} samples classified, {} explained.</p>",
        summary.samples, summary.explained
    );

    h.push_str("<h2>Model description</h2>\n");
    match input.model_summary {
        None => h.push_str("<p class=\"muted\">No decision paths were accumulated.</p>\n"),
        Some(s) => {
            h.push_str("<table><tr><th class=\"l\">Sliding windows</th><th class=\"l\">Statistics</th><th class=\"l\">Sensors</th></tr>\n");
            for i in 0..super::TOP_K {
                let cell = |v: Option<String>| v.map_or_else(String::new, |s| escape(&s));
                let _ = writeln!(
                    h,
                    "<tr><td class=\"l\">{}</td><td class=\"l\">{}</td><td class=\"l\">{}</td></tr>",
                    cell(s.top_windows.get(i).map(|r| format!("{} ({})", r.item.as_str(), r.frequency))),
                    cell(s.top_metrics.get(i).map(|r| format!("{} ({})", r.item.label(), r.frequency))),
                    cell(s.top_sensors.get(i).map(|r| format!("{} ({})", r.item.name(), r.frequency))),
                );
            }
            h.push_str("</table>\n");
            if s.windows_equal {
                h.push_str("<p>All four sliding windows contribute equally.</p>\n");
            }
        }
    }

    h.push_str("<h2>Explanation examples</h2>\n");
    let mut any = false;
    for c in ClassLabel::ALL {
        // Prefer a correctly classified example of each predicted class.
        let example = input
            .explanations
            .iter()
            .filter(|e| e.predicted == c)
            .min_by_key(|e| (e.truth != Some(c), e.seq_id));
        if let Some(e) = example {
            any = true;
            let _ = writeln!(
                h,
                "<h3>Predicted: {}</h3>\n<p class=\"muted\">sample {}, true class {}</p>\n<pre>{}</pre>",
                CLASS_NAMES[c.ordinal()],
                e.seq_id,
                e.truth.map_or("unknown", |t| CLASS_NAMES[t.ordinal()]),
                escape(&e.text)
            );
        }
    }
    if !any {
        h.push_str("<p class=\"muted\">No explanations were produced.</p>\n");
    }

    h.push_str("<h2>Most relevant features over time</h2>\n");
    if input.series.iter().all(|s| s.points.is_empty()) {
        h.push_str("<p class=\"muted\">No feature series recorded.</p>\n");
    }
    for s in input.series.iter().filter(|s| !s.points.is_empty()) {
        let _ = writeln!(h, "<h3>{}</h3>\n{}", escape(&s.feature.describe()), svg_plot(s));
    }
    h.push_str("<p class=\"muted\">Shaded bands mark samples labelled as failures.</p>\n</body></html>\n");
    h
}

fn svg_plot(series: &FeatureSeries) -> String {
    const W: f64 = 1000.0;
    const H: f64 = 220.0;
    const PAD: f64 = 40.0;
    let pts = &series.points;
    let (t0, t1) = (pts[0].timestamp as f64, pts[pts.len() - 1].timestamp as f64);
    let finite = pts.iter().map(|p| p.value).filter(|v| v.is_finite());
    let lo = finite.clone().fold(f64::INFINITY, f64::min);
    let hi = finite.fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if lo.is_finite() && hi > lo { (lo, hi) } else if lo.is_finite() { (lo - 1.0, lo + 1.0) } else { (0.0, 1.0) };
    let x = |t: i64| if t1 > t0 { PAD + (t as f64 - t0) / (t1 - t0) * (W - 2.0 * PAD) } else { W / 2.0 };
    let y = |v: f64| H - PAD / 2.0 - (v - lo) / (hi - lo) * (H - PAD);
    let mut svg = format!("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">");
    // Failure stretches.
    let mut i = 0;
    while i < pts.len() {
        if pts[i].truth.is_failure() {
            let start = i;
            while i + 1 < pts.len() && pts[i + 1].truth == pts[start].truth {
                i += 1;
            }
            let (a, b) = (x(pts[start].timestamp), x(pts[i].timestamp));
            let colour = ["#fff", "#f8d0c8", "#f8e8b0", "#d8c8f0"][pts[start].truth.ordinal()];
            let _ = write!(
                svg,
                "<rect x=\"{a:.1}\" y=\"0\" width=\"{:.1}\" height=\"{H}\" fill=\"{colour}\"><title>{}</title></rect>",
                (b - a).max(1.0),
                CLASS_NAMES[pts[start].truth.ordinal()]
            );
        }
        i += 1;
    }
    let path: Vec<String> = pts
        .iter()
        .filter(|p| p.value.is_finite())
        .map(|p| format!("{:.1},{:.1}", x(p.timestamp), y(p.value)))
        .collect();
    let _ = write!(svg, "<polyline fill=\"none\" stroke=\"#2060a0\" stroke-width=\"1\" points=\"{}\"/>", path.join(" "));
    let _ = write!(
        svg,
        "<text x=\"4\" y=\"14\" font-size=\"11\">{hi:.4}</text><text x=\"4\" y=\"{:.0}\" font-size=\"11\">{lo:.4}</text>",
        H - 6.0
    );
    let _ = write!(
        svg,
        "<text x=\"{PAD}\" y=\"{H}\" font-size=\"11\" dy=\"-2\">{}</text><text x=\"{:.0}\" y=\"{H}\" font-size=\"11\" dy=\"-2\" text-anchor=\"end\">{}</text></svg>",
        escape(&format_timestamp(pts[0].timestamp)),
        W - PAD,
        escape(&format_timestamp(pts[pts.len() - 1].timestamp))
    );
    svg
}
