//! End-to-end orchestration: run configuration, window calibration,
//! hyperparameter tuning, prequential runs with explanations, and reports.
//!
//! Every output lives under the configured output directory with a stable
//! file name, so repeated runs with the same configuration and seed can be
//! compared file by file.

use crate::calibrate::{calibrate_windows, CalibrationError, WindowSpec};
use crate::eval::{default_grid, grid_search, prequential_run_with, EvalError, Leaderboard, PredictionRecord, PrequentialMetrics};
use crate::explain::{
    emit_report, render_explanation, AnomalyConfig, AnomalyReport, AnomalyTracker, ExplainConfig, ExplainError,
    Explainer, Explanation, ExplanationParts, FeatureSeries, ReportFiles, ReportInput, ReportRecord, RunSummary,
    SeriesRecorder, Template, TOP_K,
};
use crate::features::{FeatureEngine, FeatureName, FeatureVector, SpectralSummary};
use crate::ingest::{DownsampleMode, Downsampler, EventSet, IngestError, ParseReport, RawSample, SampleReader, SECONDS_PER_DAY};
use crate::learn::{Checkpoint, Classifier, Hyperparameters, LearnError, Model, ModelFamily, ModelSpec};
use crate::select::{Projector, Scenario, SelectError, Selection, VarianceState, DEFAULT_THRESHOLD};
use crate::sensor::{ClassLabel, Sensor};
use serde::{Deserialize, Serialize};
use std::cell::{Cell, RefCell};
use std::collections::VecDeque;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const WINDOWS_FILE: &str = "windows.toml";
pub const SELECTION_FILE: &str = "selection.txt";
pub const LEADERBOARD_FILE: &str = "leaderboard.json";
pub const SERIES_FILE: &str = "series.json";
pub const MODEL_FILE: &str = "model.json";

/// How a failure is classified for the exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad configuration or arguments.
    Usage,
    /// Unreadable or unusable input data.
    Data,
    /// A broken internal invariant.
    Internal,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Usage => 2,
            ErrorKind::Data => 3,
            ErrorKind::Internal => 4,
        }
    }
}

/// A failure tagged with the pipeline stage that raised it.
#[derive(Debug, Error)]
#[error("{stage}: {message}")]
pub struct PipelineError {
    pub kind: ErrorKind,
    pub stage: &'static str,
    pub message: String,
}

impl PipelineError {
    pub fn new(kind: ErrorKind, stage: &'static str, message: impl Into<String>) -> Self {
        Self { kind, stage, message: message.into() }
    }

    pub fn usage(stage: &'static str, message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Usage, stage, message)
    }

    pub fn data(stage: &'static str, message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Data, stage, message)
    }

    pub fn internal(stage: &'static str, message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Internal, stage, message)
    }

    pub fn exit_code(&self) -> i32 {
        self.kind.exit_code()
    }
}

impl From<IngestError> for PipelineError {
    fn from(e: IngestError) -> Self {
        match e {
            IngestError::ZeroFactor | IngestError::EventsFile(_) | IngestError::InvalidEvent(_) | IngestError::OverlappingEvents(..) => {
                Self::usage("ingest", e.to_string())
            }
            _ => Self::data("ingest", e.to_string()),
        }
    }
}

impl From<CalibrationError> for PipelineError {
    fn from(e: CalibrationError) -> Self {
        Self::data("calibrate", e.to_string())
    }
}

impl From<SelectError> for PipelineError {
    fn from(e: SelectError) -> Self {
        match e {
            SelectError::SchemaMismatch | SelectError::MissingFeature(_) => Self::internal("select", e.to_string()),
            _ => Self::data("select", e.to_string()),
        }
    }
}

impl From<LearnError> for PipelineError {
    fn from(e: LearnError) -> Self {
        match e {
            LearnError::InvalidParameter(_) => Self::usage("learn", e.to_string()),
            LearnError::Io(_) | LearnError::Checkpoint(_) => Self::data("learn", e.to_string()),
            _ => Self::internal("learn", e.to_string()),
        }
    }
}

impl From<EvalError> for PipelineError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::EmptyGrid | EvalError::InvalidArgument(_) => Self::usage("eval", e.to_string()),
            EvalError::NoSamples => Self::data(
                "eval",
                "no samples reached the classifier (check the evaluation window, downsampling and window lengths)",
            ),
            EvalError::Learn(inner) => inner.into(),
            EvalError::Io(_) | EvalError::Json(_) | EvalError::Upstream(_) => Self::data("eval", e.to_string()),
        }
    }
}

impl From<ExplainError> for PipelineError {
    fn from(e: ExplainError) -> Self {
        match e {
            ExplainError::Unsupported(_) | ExplainError::Template(_) => Self::usage("explain", e.to_string()),
            ExplainError::Integrity(_) => Self::internal("explain", e.to_string()),
            ExplainError::Io(_) | ExplainError::Json(_) => Self::data("explain", e.to_string()),
        }
    }
}

fn io_error(stage: &'static str, path: &Path, e: impl fmt::Display) -> PipelineError {
    PipelineError::data(stage, format!("{}: {e}", path.display()))
}

/// Sampling of the classified stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DownsampleConfig {
    pub factor: u64,
    pub mode: DownsampleMode,
}

/// Hyperparameter search settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TuneConfig {
    pub factor: u64,
    pub mode: DownsampleMode,
    /// Evaluate grid points on the thread pool.
    pub parallel: bool,
    /// Explicit grid; the family's standard grid when unset.
    pub grid: Option<Vec<Hyperparameters>>,
}

impl Default for TuneConfig {
    fn default() -> Self {
        Self { factor: 500, mode: DownsampleMode::Random, parallel: true, grid: None }
    }
}

/// Classifier settings (the run seed is shared with the model).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub family: ModelFamily,
    #[serde(default)]
    pub hyperparameters: Hyperparameters,
    #[serde(default = "default_decay")]
    pub accuracy_decay: Option<f64>,
    #[serde(default)]
    pub parallel: bool,
}

fn default_decay() -> Option<f64> {
    ModelSpec::new(ModelFamily::Arfc).accuracy_decay
}

impl Default for ModelConfig {
    fn default() -> Self {
        let spec = ModelSpec::new(ModelFamily::Arfc);
        Self { family: spec.family, hyperparameters: spec.hyperparameters, accuracy_decay: spec.accuracy_decay, parallel: false }
    }
}

/// Explanation and report settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExplainSettings {
    pub enabled: bool,
    /// Trees inspected per forest prediction; all when unset.
    pub n_estimators: Option<usize>,
    pub anomaly: AnomalyConfig,
    /// Custom template text; the built-in one when unset.
    pub template: Option<String>,
    /// Points kept per plotted feature series.
    pub series_capacity: usize,
}

impl Default for ExplainSettings {
    fn default() -> Self {
        Self { enabled: true, n_estimators: None, anomaly: AnomalyConfig::default(), template: None, series_capacity: 2000 }
    }
}

impl ExplainSettings {
    pub fn explain_config(&self) -> ExplainConfig {
        ExplainConfig { n_estimators: self.n_estimators, anomaly: self.anomaly.clone(), template: self.template.clone() }
    }

    pub fn template(&self) -> Result<Template, PipelineError> {
        Ok(match &self.template {
            Some(t) => Template::parse(t)?,
            None => Template::default(),
        })
    }
}

/// Complete description of a run; one TOML file, unknown keys rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Sensor CSV.
    pub data: Option<PathBuf>,
    /// Failure-report TOML; the built-in metro APU reports when unset.
    pub events: Option<PathBuf>,
    pub scenario: Scenario,
    /// Window-length file; calibrated from the data when unset.
    pub windows: Option<PathBuf>,
    /// Days at the start of the stream used for window calibration.
    pub calibration_days: i64,
    pub spectral: SpectralSummary,
    /// Variance threshold of feature selection.
    pub threshold: f64,
    /// Days at the start of the stream whose vectors decide the selection.
    pub burn_in_days: i64,
    /// Classify only samples inside the failure evaluation windows.
    pub evaluation_window: bool,
    pub downsample: DownsampleConfig,
    pub tune: TuneConfig,
    pub model: ModelConfig,
    pub seed: u64,
    pub out: PathBuf,
    pub explain: ExplainSettings,
    /// Write the final model checkpoint.
    pub save_model: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: None,
            events: None,
            scenario: Scenario::Two,
            windows: None,
            calibration_days: 2,
            spectral: SpectralSummary::default(),
            threshold: DEFAULT_THRESHOLD,
            burn_in_days: 2,
            evaluation_window: true,
            downsample: DownsampleConfig { factor: 50, mode: DownsampleMode::Stride },
            tune: TuneConfig::default(),
            model: ModelConfig::default(),
            seed: 0,
            out: PathBuf::from("out"),
            explain: ExplainSettings::default(),
            save_model: false,
        }
    }
}

impl RunConfig {
    /// Parses TOML text; relative paths stay relative.
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        toml::from_str(text).map_err(|e| PipelineError::usage("config", e.to_string()))
    }

    /// Reads a config file, resolving relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::usage("config", format!("{}: {e}", path.display())))?;
        let mut config = Self::from_toml(&text).map_err(|e| PipelineError::usage("config", format!("{}: {}", path.display(), e.message)))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [&mut config.data, &mut config.events, &mut config.windows].into_iter().flatten() {
            resolve(p);
        }
        resolve(&mut config.out);
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    /// Checks paths, ranges and model settings before any work starts.
    pub fn validate(&self) -> Result<(), PipelineError> {
        let data = self.data_path()?;
        if !data.is_file() {
            return Err(PipelineError::usage("config", format!("data file {} does not exist", data.display())));
        }
        for (key, path) in [("events", &self.events), ("windows", &self.windows)] {
            if let Some(p) = path {
                if !p.is_file() {
                    return Err(PipelineError::usage("config", format!("{key} file {} does not exist", p.display())));
                }
            }
        }
        if !(self.threshold.is_finite() && self.threshold >= 0.0) {
            return Err(PipelineError::usage("config", format!("threshold must be a non-negative number, got {}", self.threshold)));
        }
        if self.calibration_days < 1 || self.burn_in_days < 1 {
            return Err(PipelineError::usage("config", "calibration_days and burn_in_days must be at least 1"));
        }
        if self.downsample.factor == 0 || self.tune.factor == 0 {
            return Err(PipelineError::usage("config", "downsample factors must be at least 1"));
        }
        self.model.hyperparameters.validate_for(self.model.family)?;
        if let Some(grid) = &self.tune.grid {
            for point in grid {
                point.validate_for(self.model.family)?;
            }
        }
        if self.explain.series_capacity < 2 {
            return Err(PipelineError::usage("config", "explain.series_capacity must be at least 2"));
        }
        self.explain.template()?;
        Ok(())
    }

    pub fn data_path(&self) -> Result<&Path, PipelineError> {
        self.data.as_deref().ok_or_else(|| PipelineError::usage("config", "no data file given"))
    }

    pub fn events(&self) -> Result<EventSet, PipelineError> {
        match &self.events {
            Some(p) => Ok(EventSet::load(p)?),
            None => Ok(EventSet::metropt()),
        }
    }

    pub fn model_spec(&self) -> ModelSpec {
        ModelSpec {
            family: self.model.family,
            hyperparameters: self.model.hyperparameters.clone(),
            seed: self.seed,
            accuracy_decay: self.model.accuracy_decay,
            parallel: self.model.parallel,
        }
    }

    fn open_data(&self) -> Result<SampleReader<BufReader<File>>, PipelineError> {
        let path = self.data_path()?;
        let file = File::open(path).map_err(|e| io_error("ingest", path, e))?;
        Ok(SampleReader::new(BufReader::with_capacity(1 << 20, file), &Sensor::ALL)?)
    }

    fn output_dir(&self) -> Result<&Path, PipelineError> {
        std::fs::create_dir_all(&self.out).map_err(|e| io_error("output", &self.out, e))?;
        Ok(&self.out)
    }
}

fn log_parse_report(report: &ParseReport) {
    if report.skipped > 0 {
        log::warn!("ingest: skipped {} of {} rows", report.skipped, report.rows_read);
        for e in report.errors.iter().take(5) {
            log::warn!("  row {}: {}", e.row, e.reason);
        }
    }
}

/// Calibrates window lengths from the leading days of the data.
pub fn calibrate(config: &RunConfig) -> Result<WindowSpec, PipelineError> {
    let mut reader = config.open_data()?;
    let mut slice: Vec<RawSample> = Vec::new();
    let mut limit = None;
    for sample in reader.by_ref() {
        let end = *limit.get_or_insert(sample.timestamp + config.calibration_days * SECONDS_PER_DAY);
        if sample.timestamp >= end {
            break;
        }
        slice.push(sample);
    }
    log_parse_report(reader.report());
    if slice.is_empty() {
        return Err(PipelineError::data("calibrate", "the data file holds no readable samples"));
    }
    let analog: Vec<Sensor> = Sensor::analog().collect();
    let spec = calibrate_windows(&slice, &analog)?;
    log::info!("calibrate: {} samples -> {:?}", slice.len(), spec.lengths());
    Ok(spec)
}

/// Calibrates and writes `windows.toml` into the output directory.
pub fn cmd_calibrate(config: &RunConfig) -> Result<(WindowSpec, PathBuf), PipelineError> {
    config.validate()?;
    let spec = calibrate(config)?;
    let path = config.output_dir()?.join(WINDOWS_FILE);
    spec.save(&path).map_err(|e| io_error("calibrate", &path, e))?;
    Ok((spec, path))
}

/// Window lengths from the configured file, or calibrated.
pub fn window_spec(config: &RunConfig) -> Result<WindowSpec, PipelineError> {
    match &config.windows {
        Some(p) => Ok(WindowSpec::load(p)?),
        None => calibrate(config),
    }
}

/// One classified vector with its label and the anomaly state at arrival.
pub type StreamItem = (FeatureVector, ClassLabel, AnomalyReport);

enum SelectionState {
    Burning { variance: VarianceState, buffered: Vec<StreamItem> },
    Frozen { selection: Selection, variance: VarianceState },
}

/// Turns raw samples into selected, labelled feature vectors.
///
/// Sliding windows see every sample; only vectors of kept samples are
/// materialised. Until the burn-in ends, full vectors of every
/// `select_stride`-th sample feed the variance state and classified vectors
/// are buffered; at the end of the burn-in the selection freezes and the
/// buffer is projected and replayed ahead of the live stream.
pub struct FeatureStream<S: Iterator<Item = RawSample>> {
    source: S,
    events: EventSet,
    spans: Option<Vec<(i64, i64)>>,
    engine: FeatureEngine,
    sampler: Downsampler,
    select_stride: u64,
    scenario: Scenario,
    threshold: f64,
    burn_in_seconds: i64,
    burn_in_end: Option<i64>,
    tracker: Option<AnomalyTracker>,
    state: SelectionState,
    replay: VecDeque<StreamItem>,
    done: bool,
}

/// Settings of a [`FeatureStream`].
#[derive(Debug, Clone)]
pub struct StreamSettings {
    pub windows: WindowSpec,
    pub spectral: SpectralSummary,
    pub scenario: Scenario,
    pub threshold: f64,
    pub burn_in_days: i64,
    pub select_stride: u64,
    pub factor: u64,
    pub mode: DownsampleMode,
    pub seed: u64,
    pub evaluation_window: bool,
    /// Track sensor anomalies for explanations.
    pub anomalies: Option<AnomalyConfig>,
}

impl StreamSettings {
    /// Settings of an evaluation run.
    pub fn for_run(config: &RunConfig, windows: WindowSpec) -> Self {
        Self {
            windows,
            spectral: config.spectral,
            scenario: config.scenario,
            threshold: config.threshold,
            burn_in_days: config.burn_in_days,
            select_stride: config.downsample.factor,
            factor: config.downsample.factor,
            mode: config.downsample.mode,
            seed: config.seed,
            evaluation_window: config.evaluation_window,
            anomalies: config.explain.enabled.then(|| config.explain.anomaly.clone()),
        }
    }

    /// Settings of a tuning pass: same selection as a run, sparser stream.
    pub fn for_tuning(config: &RunConfig, windows: WindowSpec) -> Self {
        Self { factor: config.tune.factor, mode: config.tune.mode, anomalies: None, ..Self::for_run(config, windows) }
    }
}

impl<S: Iterator<Item = RawSample>> FeatureStream<S> {
    pub fn new(source: S, events: EventSet, settings: StreamSettings) -> Result<Self, PipelineError> {
        let spans = settings.evaluation_window.then(|| events.evaluation_intervals());
        Ok(Self {
            source,
            events,
            spans,
            engine: FeatureEngine::new(settings.windows, settings.spectral),
            sampler: Downsampler::new(settings.factor, settings.mode, settings.seed)?,
            select_stride: settings.select_stride.max(1),
            scenario: settings.scenario,
            threshold: settings.threshold,
            burn_in_seconds: settings.burn_in_days * SECONDS_PER_DAY,
            burn_in_end: None,
            tracker: settings.anomalies.map(AnomalyTracker::new),
            state: SelectionState::Burning { variance: VarianceState::new(), buffered: Vec::new() },
            replay: VecDeque::new(),
            done: false,
        })
    }

    /// The frozen selection, once the burn-in is over.
    pub fn selection(&self) -> Option<&Selection> {
        match &self.state {
            SelectionState::Frozen { selection, .. } => Some(selection),
            SelectionState::Burning { .. } => None,
        }
    }

    /// Burn-in variances (final once the selection is frozen).
    pub fn variances(&self) -> &VarianceState {
        match &self.state {
            SelectionState::Frozen { variance, .. } | SelectionState::Burning { variance, .. } => variance,
        }
    }

    pub fn source(&self) -> &S {
        &self.source
    }

    fn in_window(&self, ts: i64) -> bool {
        self.spans.as_ref().is_none_or(|spans| spans.iter().any(|&(from, to)| ts >= from && ts < to))
    }

    fn freeze(&mut self) -> Result<(), PipelineError> {
        let SelectionState::Burning { variance, buffered } = &mut self.state else {
            return Ok(());
        };
        let selection = variance.selected_for(self.scenario, self.threshold)?;
        if selection.is_empty() {
            return Err(PipelineError::data(
                "select",
                format!("no candidate feature has variance above {} in the burn-in", self.threshold),
            ));
        }
        log::info!("select: {} features after {} burn-in vectors", selection.len(), selection.burn_in());
        let projector: Projector = selection.projector(self.engine.schema())?;
        for (fv, label, report) in buffered.drain(..) {
            self.replay.push_back((projector.apply(&fv), label, report));
        }
        let variance = std::mem::take(variance);
        self.state = SelectionState::Frozen { selection, variance };
        Ok(())
    }

    fn step(&mut self) -> Result<Option<StreamItem>, PipelineError> {
        loop {
            if let Some(item) = self.replay.pop_front() {
                return Ok(Some(item));
            }
            if self.done {
                return Ok(None);
            }
            let Some(sample) = self.source.next() else {
                self.done = true;
                self.freeze()?;
                continue;
            };
            let end = *self.burn_in_end.get_or_insert(sample.timestamp + self.burn_in_seconds);
            if sample.timestamp >= end {
                self.freeze()?;
            }
            let warm = self.engine.observe(&sample);
            let report = match &mut self.tracker {
                Some(t) => *t.observe(&self.engine, &sample),
                None => AnomalyReport::default(),
            };
            let kept = self.sampler.keep(sample.seq_id);
            let classify = warm && kept && self.in_window(sample.timestamp);
            let label = self.events.label_at(sample.timestamp);
            match &mut self.state {
                SelectionState::Burning { variance, buffered } => {
                    let pick = warm && sample.seq_id % self.select_stride == 0;
                    if pick || classify {
                        let fv = self.engine.emit(&sample).expect("warm engine emits");
                        if pick {
                            variance.update(&fv)?;
                        }
                        if classify {
                            buffered.push((fv, label, report));
                        }
                    }
                }
                SelectionState::Frozen { selection, .. } => {
                    if classify {
                        let schema = selection.schema().clone();
                        let fv = self.engine.emit_for(&sample, &schema).expect("warm engine emits");
                        // Queued behind any replayed burn-in vectors.
                        self.replay.push_back((fv, label, report));
                    }
                }
            }
        }
    }
}

impl<S: Iterator<Item = RawSample>> Iterator for FeatureStream<S> {
    type Item = Result<StreamItem, PipelineError>;

    fn next(&mut self) -> Option<Self::Item> {
        self.step().transpose()
    }
}

/// Feature selection of a run: reads only as far as the end of the burn-in.
pub fn burn_in_selection(config: &RunConfig, windows: WindowSpec) -> Result<(Selection, VarianceState), PipelineError> {
    let settings = StreamSettings { anomalies: None, ..StreamSettings::for_run(config, windows) };
    let mut stream = FeatureStream::new(config.open_data()?, config.events()?, settings)?;
    while stream.selection().is_none() {
        if stream.next().transpose()?.is_none() {
            break;
        }
    }
    let selection = stream.selection().cloned().ok_or_else(|| PipelineError::internal("select", "selection never froze"))?;
    Ok((selection, stream.variances().clone()))
}

/// Upper-case model label used in result tables.
pub fn model_label(family: ModelFamily) -> String {
    family.as_str().to_ascii_uppercase()
}

/// Header of [`table_row`].
pub fn table_header() -> String {
    let mut out = format!("{:<6} {:>9} {:>9} {:>9}", "Model", "Acc %", "MacroF %", "MicroF %");
    for c in ClassLabel::ALL {
        out.push_str(&format!(" {:>9}", short_class(c)));
    }
    out.push_str(&format!(" {:>11} {:>10}", "Runtime s", "Samples/s"));
    out
}

fn short_class(c: ClassLabel) -> &'static str {
    match c {
        ClassLabel::NonFailure => "F NF",
        ClassLabel::OilLeakCompressor => "F OLC",
        ClassLabel::AirLeakDryer => "F ALD",
        ClassLabel::AirLeakClient => "F ALC",
    }
}

/// One results-table line: percentages with two decimals.
pub fn table_row(model: &str, m: &PrequentialMetrics) -> String {
    let mut out = format!("{:<6} {:>9.2} {:>9.2} {:>9.2}", model, 100.0 * m.accuracy, 100.0 * m.macro_f, 100.0 * m.micro_f);
    for f in m.per_class_f {
        out.push_str(&format!(" {:>9.2}", 100.0 * f));
    }
    out.push_str(&format!(" {:>11.1} {:>10.1}", m.wall_seconds, m.throughput));
    out
}

/// Result of [`cmd_run`].
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub metrics: PrequentialMetrics,
    pub windows: WindowSpec,
    pub selection: Selection,
    pub files: ReportFiles,
    pub explained: u64,
    pub ingest: ParseReport,
}

/// Runs the configured model end to end and writes every artefact.
pub fn cmd_run(config: &RunConfig) -> Result<RunOutcome, PipelineError> {
    config.validate()?;
    let model = config.model_spec().build()?;
    let (outcome, model) = run_with_model(config, model, &model_label(config.model.family))?;
    if config.save_model {
        let path = config.out.join(MODEL_FILE);
        Checkpoint::new(model).save(&path)?;
    }
    Ok(outcome)
}

/// Runs the pipeline around any classifier (the configured model family is
/// only used for labelling). Returns the trained model.
pub fn run_with_model<C: Classifier>(config: &RunConfig, mut model: C, label: &str) -> Result<(RunOutcome, C), PipelineError> {
    let events = config.events()?;
    let windows = window_spec(config)?;
    log::info!("run: windows {:?}", windows.lengths());
    let reader = config.open_data()?;
    let mut stream = FeatureStream::new(reader, events, StreamSettings::for_run(config, windows))?;

    let mut explainer = if config.explain.enabled { Some(Explainer::new(config.explain.explain_config())?) } else { None };
    let mut records: Vec<PredictionRecord> = Vec::new();
    let mut explanations: Vec<Explanation> = Vec::new();
    let mut series = SeriesRecorder::new(config.explain.series_capacity);
    let current = Cell::new(AnomalyReport::default());
    let failure: RefCell<Option<PipelineError>> = RefCell::new(None);
    let stash = |e: PipelineError| {
        let message = e.to_string();
        *failure.borrow_mut() = Some(e);
        EvalError::Upstream(message)
    };

    let items = stream.by_ref().map(|item| {
        item.map(|(fv, truth, report)| {
            current.set(report);
            (fv, truth)
        })
        .map_err(stash)
    });
    let result = prequential_run_with(&mut model, items, |model, fv, record| {
        records.push(record.clone());
        series.push(fv, record.truth);
        if let Some(ex) = explainer.as_mut() {
            match ex.explain_with(model, fv, record, &current.get()) {
                Ok(e) => explanations.push(e),
                Err(ExplainError::Unsupported(what)) => {
                    log::info!("explain: {what} models have no decision paths; explanations disabled");
                    explainer = None;
                }
                Err(e) => return Err(stash(e.into())),
            }
        }
        Ok(())
    });
    let metrics = match result {
        Ok(m) => m,
        Err(e) => return Err(failure.take().unwrap_or_else(|| e.into())),
    };
    let ingest = stream.source().report().clone();
    log_parse_report(&ingest);
    let selection = stream.selection().cloned().ok_or_else(|| PipelineError::internal("select", "selection never froze"))?;

    let out = config.output_dir()?;
    let windows_path = out.join(WINDOWS_FILE);
    windows.save(&windows_path).map_err(|e| io_error("output", &windows_path, e))?;
    let selection_path = out.join(SELECTION_FILE);
    selection.save(&selection_path).map_err(|e| io_error("output", &selection_path, e))?;

    let model_summary = explainer.as_ref().and_then(|e| e.summary());
    let plotted = plotted_features(explainer.as_ref(), &selection);
    let series = series.series(&plotted);
    let series_path = out.join(SERIES_FILE);
    std::fs::write(&series_path, serde_json::to_string(&series).map_err(ExplainError::from)?)
        .map_err(|e| io_error("output", &series_path, e))?;

    let context = run_context(config, label, &windows, &selection, &ingest);
    let files = emit_report(
        out,
        &ReportInput {
            title: &report_title(label, config.scenario),
            model: label,
            records: &records,
            explanations: &explanations,
            metrics: Some(&metrics),
            model_summary: model_summary.as_ref(),
            series: &series,
            context: &context,
        },
    )?;
    let outcome = RunOutcome { metrics, windows, selection, files, explained: explanations.len() as u64, ingest };
    Ok((outcome, model))
}

fn report_title(label: &str, scenario: Scenario) -> String {
    format!("{label} - scenario {}", scenario.number())
}

/// Most path-relevant features of the run, else the first selected ones.
fn plotted_features(explainer: Option<&Explainer>, selection: &Selection) -> Vec<FeatureName> {
    let from_paths: Vec<FeatureName> =
        explainer.map(|e| e.tally().features().into_iter().take(TOP_K).map(|p| p.feature).collect()).unwrap_or_default();
    if from_paths.is_empty() {
        selection.names().iter().take(TOP_K).copied().collect()
    } else {
        from_paths
    }
}

fn run_context(config: &RunConfig, label: &str, windows: &WindowSpec, selection: &Selection, ingest: &ParseReport) -> serde_json::Value {
    let spec = config.model_spec();
    serde_json::json!({
        "model": label,
        "family": config.model.family,
        "hyperparameters": spec.resolved(),
        "scenario": config.scenario.number(),
        "seed": config.seed,
        "windows": windows,
        "threshold": config.threshold,
        "selected_features": selection.len(),
        "downsample": config.downsample,
        "evaluation_window": config.evaluation_window,
        "rows_read": ingest.rows_read,
        "rows_skipped": ingest.skipped,
    })
}

/// Result of [`cmd_tune`].
#[derive(Debug, Clone)]
pub enum TuneOutcome {
    /// The family has no hyperparameters.
    NothingToTune,
    Ranked { leaderboard: Leaderboard<Hyperparameters>, path: PathBuf, samples: usize },
}

/// Prequential grid search on the sparse tuning stream.
pub fn cmd_tune(config: &RunConfig) -> Result<TuneOutcome, PipelineError> {
    config.validate()?;
    let grid = match &config.tune.grid {
        Some(grid) if grid.is_empty() => return Err(EvalError::EmptyGrid.into()),
        Some(grid) => grid.clone(),
        None if config.model.family == ModelFamily::Gnb => return Ok(TuneOutcome::NothingToTune),
        None => default_grid(config.model.family),
    };
    let stream = tuning_stream(config)?;
    log::info!("tune: {} grid points over {} samples", grid.len(), stream.len());
    let leaderboard = grid_search(&config.model_spec(), &grid, &stream, config.tune.parallel)?;
    let path = config.output_dir()?.join(LEADERBOARD_FILE);
    leaderboard.save(&path)?;
    Ok(TuneOutcome::Ranked { leaderboard, path, samples: stream.len() })
}

/// The labelled vectors a tuning pass evaluates.
pub fn tuning_stream(config: &RunConfig) -> Result<Vec<(FeatureVector, ClassLabel)>, PipelineError> {
    let events = config.events()?;
    let windows = window_spec(config)?;
    let reader = config.open_data()?;
    FeatureStream::new(reader, events, StreamSettings::for_tuning(config, windows))?
        .map(|item| item.map(|(fv, label, _)| (fv, label)))
        .collect()
}

/// Which records to explain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeqSelector(RangeInclusive<u64>);

impl SeqSelector {
    pub fn single(seq_id: u64) -> Self {
        Self(seq_id..=seq_id)
    }

    pub fn range(range: RangeInclusive<u64>) -> Self {
        Self(range)
    }

    pub fn contains(&self, seq_id: u64) -> bool {
        self.0.contains(&seq_id)
    }
}

impl std::str::FromStr for SeqSelector {
    type Err = String;

    /// `N`, `A..B` (inclusive) or `A-B`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parse = |t: &str| t.trim().parse::<u64>().map_err(|_| format!("`{s}` is not a sample id or range"));
        let split = s.split_once("..").or_else(|| s.split_once('-'));
        match split {
            Some((a, b)) => {
                let (a, b) = (parse(a)?, parse(b.trim_start_matches('='))?);
                if a > b {
                    return Err(format!("empty range `{s}`"));
                }
                Ok(Self(a..=b))
            }
            None => Ok(Self::single(parse(s)?)),
        }
    }
}

impl fmt::Display for SeqSelector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.start() == self.0.end() {
            write!(f, "{}", self.0.start())
        } else {
            write!(f, "{}..{}", self.0.start(), self.0.end())
        }
    }
}

fn read_summary(out: &Path) -> Result<RunSummary, PipelineError> {
    let path = ReportFiles::in_dir(out).summary;
    let text = std::fs::read_to_string(&path).map_err(|e| {
        PipelineError::usage("explain", format!("{}: {e} (run the pipeline into this directory first)", path.display()))
    })?;
    serde_json::from_str(&text).map_err(|e| io_error("explain", &path, e))
}

/// Reads `records.jsonl` of a completed run.
pub fn read_report_records(out: &Path) -> Result<Vec<ReportRecord>, PipelineError> {
    let path = ReportFiles::in_dir(out).records;
    let file = File::open(&path).map_err(|e| {
        PipelineError::usage("explain", format!("{}: {e} (run the pipeline into this directory first)", path.display()))
    })?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io_error("explain", &path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(&line).map_err(|e| io_error("explain", &path, format!("line {}: {e}", i + 1)))?);
    }
    Ok(records)
}

/// Explanation texts of the selected records of a completed run, rendered
/// with the configured template.
pub fn cmd_explain(config: &RunConfig, selector: &SeqSelector) -> Result<Vec<(u64, String)>, PipelineError> {
    let template = config.explain.template()?;
    let summary = read_summary(&config.out)?;
    if summary.context.get("family").and_then(|f| f.as_str()) == Some(ModelFamily::Gnb.as_str()) {
        return Err(ExplainError::Unsupported(model_label(ModelFamily::Gnb)).into());
    }
    let selected: Vec<ReportRecord> = read_report_records(&config.out)?.into_iter().filter(|r| selector.contains(r.seq_id)).collect();
    if selected.is_empty() {
        return Err(PipelineError::usage("explain", format!("no classified sample with id {selector}")));
    }
    selected
        .iter()
        .map(|r| {
            let e = r.explanation().ok_or_else(|| {
                PipelineError::usage("explain", format!("sample {} was classified without an explanation", r.seq_id))
            })?;
            let text = render_explanation(
                &ExplanationParts {
                    seq_id: e.seq_id,
                    predicted: e.predicted,
                    top_features: &e.top_features,
                    model_summary: e.model_summary.as_ref(),
                    anomalies: &e.anomalies,
                },
                &template,
            )?;
            Ok((r.seq_id, text))
        })
        .collect()
}

/// Rebuilds `report.html` (and the summary) from a completed run's files.
pub fn cmd_report(out: &Path) -> Result<ReportFiles, PipelineError> {
    let summary = read_summary(out)?;
    let records = read_report_records(out)?;
    let series_path = out.join(SERIES_FILE);
    let series: Vec<FeatureSeries> = match std::fs::read_to_string(&series_path) {
        Ok(text) => serde_json::from_str(&text).map_err(|e| io_error("report", &series_path, e))?,
        Err(_) => Vec::new(),
    };
    let predictions: Vec<PredictionRecord> = records.iter().map(ReportRecord::prediction).collect();
    let explanations: Vec<Explanation> = records.iter().filter_map(ReportRecord::explanation).collect();
    let label = summary.context.get("model").and_then(|m| m.as_str()).unwrap_or("model").to_string();
    let scenario = summary.context.get("scenario").and_then(|s| s.as_u64()).and_then(|s| Scenario::try_from(s as u8).ok());
    let title = scenario.map_or_else(|| label.clone(), |s| report_title(&label, s));
    Ok(emit_report(
        out,
        &ReportInput {
            title: &title,
            model: &label,
            records: &predictions,
            explanations: &explanations,
            metrics: summary.metrics.as_ref(),
            model_summary: summary.model_summary.as_ref(),
            series: &series,
            context: &summary.context,
        },
    )?)
}

/// The model checkpoint saved by a run with `save_model`.
pub fn load_model(out: &Path) -> Result<Model, PipelineError> {
    Ok(Checkpoint::load(&out.join(MODEL_FILE))?.model)
}

