//! Explanations: decision-path feature relevance, run-level model summaries,
//! sensor anomaly durations and natural-language rendering.

mod report;

pub use report::{emit_report, FeatureSeries, ReportFiles, ReportInput, ReportRecord, RunSummary, SeriesPoint, SeriesRecorder};

use crate::eval::PredictionRecord;
use crate::features::{FeatureEngine, FeatureName, FeatureVector, Metric, WindowKind};
use crate::ingest::RawSample;
use crate::learn::{Classifier, HoeffdingTree};
use crate::sensor::{ClassLabel, Sensor, N_SENSORS};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use thiserror::Error;

/// Number of entries in every ranked list.
pub const TOP_K: usize = 5;

#[derive(Debug, Error)]
pub enum ExplainError {
    #[error("{0} models have no decision paths to explain")]
    Unsupported(String),
    #[error("integrity: {0}")]
    Integrity(String),
    #[error("template placeholder {{{0}}} is not defined")]
    Template(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Feature found on a decision path with the number of times its
/// greater-than branch was taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "PathFeatureRecord", try_from = "PathFeatureRecord")]
pub struct PathFeature {
    pub feature: FeatureName,
    pub frequency: u64,
}

#[derive(Serialize, Deserialize)]
struct PathFeatureRecord {
    sensor: Sensor,
    metric: Metric,
    window: Option<WindowKind>,
    frequency: u64,
}

impl From<PathFeature> for PathFeatureRecord {
    fn from(p: PathFeature) -> Self {
        Self { sensor: p.feature.sensor(), metric: p.feature.metric(), window: p.feature.window(), frequency: p.frequency }
    }
}

impl TryFrom<PathFeatureRecord> for PathFeature {
    type Error = String;

    fn try_from(r: PathFeatureRecord) -> Result<Self, Self::Error> {
        let feature = match (r.metric, r.window) {
            (Metric::Raw, None) => FeatureName::raw(r.sensor),
            (Metric::Raw, Some(_)) | (_, None) => return Err("raw features have no window, others need one".into()),
            (m, Some(w)) => FeatureName::engineered(r.sensor, m, w),
        };
        if r.frequency == 0 {
            return Err("frequency must be positive".into());
        }
        Ok(Self { feature, frequency: r.frequency })
    }
}

/// Decreasing frequency, then serialised name order.
fn rank_features(counts: impl IntoIterator<Item = (FeatureName, u64)>) -> Vec<PathFeature> {
    let mut out: Vec<(String, PathFeature)> = counts
        .into_iter()
        .filter(|&(_, n)| n > 0)
        .map(|(feature, frequency)| (feature.to_string(), PathFeature { feature, frequency }))
        .collect();
    out.sort_by(|a, b| b.1.frequency.cmp(&a.1.frequency).then_with(|| a.0.cmp(&b.0)));
    out.into_iter().map(|(_, p)| p).collect()
}

/// Positions in `fv` of the tree's schema entries.
fn feature_positions(names: &[FeatureName], fv: &FeatureVector) -> Result<Option<Vec<usize>>, ExplainError> {
    if names == fv.names() {
        return Ok(None);
    }
    names
        .iter()
        .map(|n| fv.schema().position(n).ok_or_else(|| ExplainError::Integrity(format!("feature {n} is missing from the sample"))))
        .collect::<Result<Vec<_>, _>>()
        .map(Some)
}

/// Walks `tree` from the root to the leaf `fv` is routed to and counts the
/// features whose greater-than branch was followed, ranked by frequency.
pub fn decision_path_features(tree: &HoeffdingTree, fv: &FeatureVector) -> Result<Vec<PathFeature>, ExplainError> {
    let Some(names) = tree.feature_names() else {
        return Ok(Vec::new());
    };
    let x: Vec<f64> = match feature_positions(names, fv)? {
        None => fv.values().to_vec(),
        Some(pos) => pos.iter().map(|&i| fv.values()[i]).collect(),
    };
    let mut counts: HashMap<FeatureName, u64> = HashMap::new();
    for step in tree.path(&x) {
        if step.went_right {
            *counts.entry(names[step.feature]).or_default() += 1;
        }
    }
    Ok(rank_features(counts))
}

/// Merges the path features of the first `n_estimators` trees (every tree
/// when `None`) and keeps the five most frequent.
pub fn top_relevant_features<C: Classifier + ?Sized>(
    model: &C,
    fv: &FeatureVector,
    n_estimators: Option<usize>,
) -> Result<Vec<PathFeature>, ExplainError> {
    let all = all_relevant_features(model, fv, n_estimators)?;
    Ok(all.into_iter().take(TOP_K).collect())
}

/// Like [`top_relevant_features`] without the cut-off.
pub fn all_relevant_features<C: Classifier + ?Sized>(
    model: &C,
    fv: &FeatureVector,
    n_estimators: Option<usize>,
) -> Result<Vec<PathFeature>, ExplainError> {
    let trees = model.decision_trees().ok_or_else(|| ExplainError::Unsupported("naive Bayes".to_string()))?;
    let n = n_estimators.unwrap_or(trees.len()).min(trees.len());
    let mut counts: HashMap<FeatureName, u64> = HashMap::new();
    for tree in &trees[..n] {
        for p in decision_path_features(tree, fv)? {
            *counts.entry(p.feature).or_default() += p.frequency;
        }
    }
    Ok(rank_features(counts))
}

/// One entry of a ranked component list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ranked<T> {
    pub item: T,
    pub frequency: u64,
}

/// Most frequent windows, metrics and sensors over accumulated path
/// features.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub top_windows: Vec<Ranked<WindowKind>>,
    pub top_metrics: Vec<Ranked<Metric>>,
    pub top_sensors: Vec<Ranked<Sensor>>,
    /// All four sliding windows appear with identical counts.
    pub windows_equal: bool,
}

fn top_of<T: Copy + Ord>(counts: &BTreeMap<T, u64>, name: impl Fn(T) -> String) -> Vec<Ranked<T>> {
    let mut v: Vec<(String, Ranked<T>)> =
        counts.iter().map(|(&item, &frequency)| (name(item), Ranked { item, frequency })).collect();
    v.sort_by(|a, b| b.1.frequency.cmp(&a.1.frequency).then_with(|| a.0.cmp(&b.0)));
    v.into_iter().take(TOP_K).map(|(_, r)| r).collect()
}

/// Running tally of path features over a run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelTally {
    counts: BTreeMap<FeatureName, u64>,
}

impl ModelTally {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, features: &[PathFeature]) {
        for p in features {
            *self.counts.entry(p.feature).or_default() += p.frequency;
        }
    }

    /// Adds a feature given by its serialised name.
    pub fn add_named(&mut self, name: &str, frequency: u64) -> Result<(), ExplainError> {
        let feature: FeatureName =
            name.parse().map_err(|_| ExplainError::Integrity(format!("cannot parse feature name {name:?}")))?;
        *self.counts.entry(feature).or_default() += frequency;
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.counts.values().all(|&n| n == 0)
    }

    /// Accumulated features, ranked.
    pub fn features(&self) -> Vec<PathFeature> {
        rank_features(self.counts.iter().map(|(&f, &n)| (f, n)))
    }

    pub fn summary(&self) -> Result<ModelSummary, ExplainError> {
        if self.is_empty() {
            return Err(ExplainError::Integrity("no path features accumulated yet".to_string()));
        }
        let mut windows = BTreeMap::new();
        let mut metrics = BTreeMap::new();
        let mut sensors = BTreeMap::new();
        for (f, &n) in &self.counts {
            if let Some(w) = f.window() {
                *windows.entry(w).or_insert(0) += n;
            }
            *metrics.entry(f.metric()).or_insert(0) += n;
            *sensors.entry(f.sensor()).or_insert(0) += n;
        }
        let window_counts: Vec<u64> = WindowKind::ALL.iter().map(|w| windows.get(w).copied().unwrap_or(0)).collect();
        let windows_equal = window_counts[0] > 0 && window_counts.iter().all(|&c| c == window_counts[0]);
        Ok(ModelSummary {
            top_windows: top_of(&windows, |w: WindowKind| w.as_str().to_string()),
            top_metrics: top_of(&metrics, |m: Metric| m.as_str().to_string()),
            top_sensors: top_of(&sensors, |s: Sensor| s.name().to_string()),
            windows_equal,
        })
    }
}

/// Summary of one list of path features.
pub fn model_summary(features: &[PathFeature]) -> Result<ModelSummary, ExplainError> {
    let mut tally = ModelTally::new();
    tally.add(features);
    tally.summary()
}

/// Detector thresholds and reporting floors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnomalyConfig {
    /// Pattern anomaly: |raw − mean| > sigmas · std over the W_avg window.
    pub pattern_sigmas: f64,
    /// Value anomaly: raw outside [q1 − k·IQR, q3 + k·IQR] over W_avg.
    pub value_iqr_factor: f64,
    pub std_floor: f64,
    /// Minimum durations (seconds) for a sensor to be reported.
    pub pattern_report_seconds: u64,
    pub value_report_seconds: u64,
}

impl Default for AnomalyConfig {
    fn default() -> Self {
        Self { pattern_sigmas: 3.0, value_iqr_factor: 3.0, std_floor: 1e-9, pattern_report_seconds: 600, value_report_seconds: 120 }
    }
}

/// W_avg statistics of one sensor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowSummary {
    pub mean: f64,
    pub std: f64,
    pub q1: f64,
    pub q3: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnomalyKind {
    /// Windowed statistics deviate.
    Pattern,
    /// Raw value is out of range.
    Value,
}

/// A sensor whose anomaly has lasted at least the reporting floor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnomalyEntry {
    pub sensor: Sensor,
    pub kind: AnomalyKind,
    pub seconds: u64,
}

/// Current consecutive anomaly durations per sensor, in seconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnomalyReport {
    pub pattern_seconds: [u64; N_SENSORS],
    pub value_seconds: [u64; N_SENSORS],
}

impl AnomalyReport {
    /// Sensors at or above the reporting floors, longest first.
    pub fn entries(&self, config: &AnomalyConfig) -> Vec<AnomalyEntry> {
        let mut out = Vec::new();
        for (kind, durations, floor) in [
            (AnomalyKind::Pattern, &self.pattern_seconds, config.pattern_report_seconds),
            (AnomalyKind::Value, &self.value_seconds, config.value_report_seconds),
        ] {
            let mut part: Vec<AnomalyEntry> = Sensor::ALL
                .into_iter()
                .filter(|s| durations[s.index()] > 0 && durations[s.index()] >= floor)
                .map(|sensor| AnomalyEntry { sensor, kind, seconds: durations[sensor.index()] })
                .collect();
            part.sort_by(|a, b| b.seconds.cmp(&a.seconds).then(a.sensor.index().cmp(&b.sensor.index())));
            out.extend(part);
        }
        out
    }
}

/// Tracks how long each sensor has been continuously anomalous.
#[derive(Debug, Clone, PartialEq)]
pub struct AnomalyTracker {
    config: AnomalyConfig,
    report: AnomalyReport,
    last_timestamp: Option<i64>,
    first_timestamp: Option<i64>,
}

impl AnomalyTracker {
    pub fn new(config: AnomalyConfig) -> Self {
        Self { config, report: AnomalyReport::default(), last_timestamp: None, first_timestamp: None }
    }

    pub fn config(&self) -> &AnomalyConfig {
        &self.config
    }

    pub fn report(&self) -> &AnomalyReport {
        &self.report
    }

    /// Seconds since the first update (inclusive), bounding every duration.
    pub fn age(&self) -> u64 {
        match (self.first_timestamp, self.last_timestamp) {
            (Some(a), Some(b)) => (b - a + 1).max(0) as u64,
            _ => 0,
        }
    }

    /// Updates durations from one raw sample and the W_avg statistics of
    /// every sensor (windows including the sample).
    pub fn update(&mut self, timestamp: i64, raw: &[f64; N_SENSORS], stats: &[WindowSummary; N_SENSORS]) -> &AnomalyReport {
        let step = match self.last_timestamp {
            Some(t) if timestamp > t => (timestamp - t) as u64,
            Some(_) => 0,
            None => 1,
        };
        self.first_timestamp.get_or_insert(timestamp);
        self.last_timestamp = Some(self.last_timestamp.map_or(timestamp, |t| t.max(timestamp)));
        let c = &self.config;
        for s in 0..N_SENSORS {
            let st = stats[s];
            let x = raw[s];
            let pattern = (x - st.mean).abs() > c.pattern_sigmas * st.std.max(c.std_floor);
            let iqr = st.q3 - st.q1;
            let value = x < st.q1 - c.value_iqr_factor * iqr || x > st.q3 + c.value_iqr_factor * iqr;
            for (flag, slot) in [(pattern, &mut self.report.pattern_seconds[s]), (value, &mut self.report.value_seconds[s])] {
                *slot = match (flag, *slot) {
                    (false, _) => 0,
                    (true, 0) => 1,
                    (true, d) => d + step,
                };
            }
        }
        &self.report
    }

    /// Updates from the engine's W_avg windows after it observed `sample`.
    pub fn observe(&mut self, engine: &FeatureEngine, sample: &RawSample) -> &AnomalyReport {
        let stats: [WindowSummary; N_SENSORS] = std::array::from_fn(|i| {
            let w = engine.window(Sensor::ALL[i], WindowKind::Avg);
            if w.is_empty() {
                let x = sample.values[i];
                return WindowSummary { mean: x, std: 0.0, q1: x, q3: x };
            }
            WindowSummary { mean: w.mean(), std: w.running_std(), q1: w.quartile(1), q3: w.quartile(3) }
        });
        self.update(sample.timestamp, &sample.values, &stats)
    }
}

/// Everything known about one explained prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub seq_id: u64,
    pub predicted: ClassLabel,
    #[serde(rename = "true")]
    pub truth: Option<ClassLabel>,
    pub top_features: Vec<PathFeature>,
    pub model_summary: Option<ModelSummary>,
    pub anomalies: Vec<AnomalyEntry>,
    pub text: String,
}

/// Placeholders available to templates.
pub const PLACEHOLDERS: [&str; 5] = ["seq_id", "top_features", "model_summary", "anomalies", "prediction"];

/// Default explanation template.
pub const DEFAULT_TEMPLATE: &str = "For sample {seq_id}, the most relevant features are:
{top_features}

Most representative parameters of the model:
{model_summary}

Given sensors with
{anomalies}
then the prediction is that
    {prediction}.
";

/// A parsed template: literal text and placeholders.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    parts: Vec<Part>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Part {
    Text(String),
    Slot(String),
}

impl Template {
    /// `{name}` marks a placeholder, `{{` and `}}` are literal braces.
    pub fn parse(source: &str) -> Result<Self, ExplainError> {
        let mut parts = Vec::new();
        let mut text = String::new();
        let mut chars = source.chars().peekable();
        while let Some(c) = chars.next() {
            match c {
                '{' if chars.peek() == Some(&'{') => {
                    chars.next();
                    text.push('{');
                }
                '}' if chars.peek() == Some(&'}') => {
                    chars.next();
                    text.push('}');
                }
                '{' => {
                    let name: String = chars.by_ref().take_while(|&c| c != '}').collect();
                    if !PLACEHOLDERS.contains(&name.as_str()) {
                        return Err(ExplainError::Template(name));
                    }
                    if !text.is_empty() {
                        parts.push(Part::Text(std::mem::take(&mut text)));
                    }
                    parts.push(Part::Slot(name));
                }
                c => text.push(c),
            }
        }
        if !text.is_empty() {
            parts.push(Part::Text(text));
        }
        Ok(Self { parts })
    }

    fn fill(&self, values: &HashMap<&str, String>) -> Result<String, ExplainError> {
        let mut out = String::new();
        for p in &self.parts {
            match p {
                Part::Text(t) => out.push_str(t),
                Part::Slot(name) => out.push_str(values.get(name.as_str()).ok_or_else(|| ExplainError::Template(name.clone()))?),
            }
        }
        Ok(out)
    }
}

impl Default for Template {
    fn default() -> Self {
        Self::parse(DEFAULT_TEMPLATE).expect("default template is valid")
    }
}

fn join_natural(items: &[String]) -> String {
    items.join(", ")
}

fn format_duration(seconds: u64) -> String {
    if seconds >= 120 {
        format!("> {} minutes", seconds / 60)
    } else if seconds >= 60 {
        "> 1 minute".to_string()
    } else {
        format!("{seconds} s")
    }
}

/// Parts rendered into an explanation text.
#[derive(Debug, Clone, Copy)]
pub struct ExplanationParts<'a> {
    pub seq_id: u64,
    pub predicted: ClassLabel,
    pub top_features: &'a [PathFeature],
    pub model_summary: Option<&'a ModelSummary>,
    pub anomalies: &'a [AnomalyEntry],
}

/// Fills `template` with the numbered feature list, model summary lines,
/// anomaly sections and the predicted class clause.
pub fn render_explanation(parts: &ExplanationParts<'_>, template: &Template) -> Result<String, ExplainError> {
    let mut features = String::new();
    if parts.top_features.is_empty() {
        features.push_str("    (no greater-than branch on the decision path)");
    }
    for (i, p) in parts.top_features.iter().enumerate() {
        if i > 0 {
            features.push('\n');
        }
        let _ = write!(features, "    {}. {}", i + 1, p.feature.describe());
    }

    let summary = match parts.model_summary {
        None => "    (no decision paths accumulated yet)".to_string(),
        Some(s) => {
            let windows = if s.windows_equal {
                "four sliding windows contribute equally".to_string()
            } else if s.top_windows.is_empty() {
                "none".to_string()
            } else {
                join_natural(&s.top_windows.iter().map(|r| format!("{}-size", r.item.label())).collect::<Vec<_>>())
            };
            let metrics = join_natural(&s.top_metrics.iter().map(|r| r.item.label().to_string()).collect::<Vec<_>>());
            let sensors = join_natural(&s.top_sensors.iter().map(|r| r.item.name().to_string()).collect::<Vec<_>>());
            format!("    Sliding windows: {windows}.\n    Statistics: {metrics}.\n    Sensors: {sensors}.")
        }
    };

    let patterns: Vec<&AnomalyEntry> = parts.anomalies.iter().filter(|a| a.kind == AnomalyKind::Pattern).collect();
    let values: Vec<&AnomalyEntry> = parts.anomalies.iter().filter(|a| a.kind == AnomalyKind::Value).collect();
    let anomalies = if patterns.is_empty() && values.is_empty() {
        "    no sensors with abnormal behavior".to_string()
    } else {
        let section = |entries: &[&AnomalyEntry]| {
            if entries.is_empty() {
                "\n    -  none".to_string()
            } else {
                entries.iter().map(|a| format!("\n    -  {} ({})", a.sensor, format_duration(a.seconds))).collect()
            }
        };
        format!("    abnormal patterns:{}\nand anomalous values:{}", section(&patterns), section(&values))
    };

    let values = HashMap::from([
        ("seq_id", parts.seq_id.to_string()),
        ("top_features", features),
        ("model_summary", summary),
        ("anomalies", anomalies),
        ("prediction", parts.predicted.phrase().to_string()),
    ]);
    template.fill(&values)
}

/// Explanation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExplainConfig {
    /// Trees inspected per forest prediction; all when unset.
    pub n_estimators: Option<usize>,
    pub anomaly: AnomalyConfig,
    /// Custom template text; the built-in one when unset.
    pub template: Option<String>,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        Self { n_estimators: None, anomaly: AnomalyConfig::default(), template: None }
    }
}

/// Stateful explainer used alongside a prequential run: call
/// [`Explainer::observe`] for every raw sample and [`Explainer::explain`]
/// between prediction and learning.
#[derive(Debug, Clone)]
pub struct Explainer {
    config: ExplainConfig,
    template: Template,
    tally: ModelTally,
    tracker: AnomalyTracker,
}

impl Explainer {
    pub fn new(config: ExplainConfig) -> Result<Self, ExplainError> {
        let template = match &config.template {
            Some(t) => Template::parse(t)?,
            None => Template::default(),
        };
        let tracker = AnomalyTracker::new(config.anomaly.clone());
        Ok(Self { config, template, tally: ModelTally::new(), tracker })
    }

    pub fn tally(&self) -> &ModelTally {
        &self.tally
    }

    pub fn tracker(&self) -> &AnomalyTracker {
        &self.tracker
    }

    /// Run-level model summary so far.
    pub fn summary(&self) -> Option<ModelSummary> {
        self.tally.summary().ok()
    }

    pub fn observe(&mut self, engine: &FeatureEngine, sample: &RawSample) {
        self.tracker.observe(engine, sample);
    }

    /// Explains `record`, produced by `model` on `fv`.
    pub fn explain<C: Classifier + ?Sized>(
        &mut self,
        model: &C,
        fv: &FeatureVector,
        record: &PredictionRecord,
    ) -> Result<Explanation, ExplainError> {
        let report = *self.tracker.report();
        self.explain_with(model, fv, record, &report)
    }

    /// Like [`Explainer::explain`], with the anomaly state observed when
    /// the sample arrived (for predictions made after the stream moved on,
    /// such as replayed burn-in vectors).
    pub fn explain_with<C: Classifier + ?Sized>(
        &mut self,
        model: &C,
        fv: &FeatureVector,
        record: &PredictionRecord,
        anomalies: &AnomalyReport,
    ) -> Result<Explanation, ExplainError> {
        let all = all_relevant_features(model, fv, self.config.n_estimators)?;
        self.tally.add(&all);
        let top_features: Vec<PathFeature> = all.into_iter().take(TOP_K).collect();
        let model_summary = self.summary();
        let anomalies = anomalies.entries(&self.config.anomaly);
        let text = render_explanation(
            &ExplanationParts {
                seq_id: record.seq_id,
                predicted: record.predicted,
                top_features: &top_features,
                model_summary: model_summary.as_ref(),
                anomalies: &anomalies,
            },
            &self.template,
        )?;
        Ok(Explanation {
            seq_id: record.seq_id,
            predicted: record.predicted,
            truth: Some(record.truth),
            top_features,
            model_summary,
            anomalies,
            text,
        })
    }
}
