//! Prequential (test-then-train) evaluation, classification metrics and
//! prequential grid search.

use crate::features::FeatureVector;
use crate::learn::{Classifier, Hyperparameters, LearnError, Model, ModelFamily, ModelSpec};
use crate::sensor::{ClassLabel, N_CLASSES};
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::time::{Duration, Instant};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no samples were evaluated")]
    NoSamples,
    #[error("the hyperparameter grid is empty")]
    EmptyGrid,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Learn(#[from] LearnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Upstream(String),
}

/// Counts indexed by (true class, predicted class).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    counts: [[u64; N_CLASSES]; N_CLASSES],
}

impl ConfusionMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_counts(counts: [[u64; N_CLASSES]; N_CLASSES]) -> Self {
        Self { counts }
    }

    pub fn from_records<'a>(records: impl IntoIterator<Item = &'a PredictionRecord>) -> Self {
        let mut cm = Self::new();
        for r in records {
            cm.record(r.truth, r.predicted);
        }
        cm
    }

    pub fn record(&mut self, truth: ClassLabel, predicted: ClassLabel) {
        self.counts[truth.ordinal()][predicted.ordinal()] += 1;
    }

    pub fn get(&self, truth: ClassLabel, predicted: ClassLabel) -> u64 {
        self.counts[truth.ordinal()][predicted.ordinal()]
    }

    pub fn counts(&self) -> &[[u64; N_CLASSES]; N_CLASSES] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..N_CLASSES).map(|i| self.counts[i][i]).sum()
    }

    /// Samples whose true class is `c`.
    pub fn support(&self, c: ClassLabel) -> u64 {
        self.counts[c.ordinal()].iter().sum()
    }

    /// Samples predicted as `c`.
    pub fn predicted(&self, c: ClassLabel) -> u64 {
        self.counts.iter().map(|row| row[c.ordinal()]).sum()
    }

    pub fn accuracy(&self) -> Option<f64> {
        let total = self.total();
        (total > 0).then(|| self.correct() as f64 / total as f64)
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for (a, b) in self.counts.iter_mut().flatten().zip(other.counts.iter().flatten()) {
            *a += b;
        }
    }
}

/// Per-class, macro-averaged and pooled (micro) F-measures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FMeasures {
    pub macro_f: f64,
    pub micro_f: f64,
    pub per_class: [f64; N_CLASSES],
}

fn f_score(tp: u64, fp: u64, fn_: u64) -> f64 {
    // 2PR/(P+R) simplifies to 2TP/(2TP+FP+FN); zero when nothing was
    // predicted or present.
    let denominator = 2 * tp + fp + fn_;
    if tp == 0 {
        0.0
    } else {
        (2 * tp) as f64 / denominator as f64
    }
}

/// F-measures of a confusion matrix. Classes with precision + recall = 0
/// score 0 and still count towards the macro mean.
pub fn compute_fmeasure(cm: &ConfusionMatrix) -> Result<FMeasures, EvalError> {
    let total = cm.total();
    if total == 0 {
        return Err(EvalError::InvalidArgument("confusion matrix is empty".to_string()));
    }
    let mut per_class = [0.0; N_CLASSES];
    for c in ClassLabel::ALL {
        let tp = cm.get(c, c);
        per_class[c.ordinal()] = f_score(tp, cm.predicted(c) - tp, cm.support(c) - tp);
    }
    let macro_f = per_class.iter().sum::<f64>() / N_CLASSES as f64;
    let correct = cm.correct();
    let micro_f = f_score(correct, total - correct, total - correct);
    Ok(FMeasures { macro_f, micro_f, per_class })
}

/// Time accounting of a prequential run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    /// Whole loop: producing samples (feature engineering, selection) plus
    /// predict and learn.
    pub wall_seconds: f64,
    /// Spent waiting for the sample source.
    pub prepare_seconds: f64,
    /// Spent in predict and learn.
    pub model_seconds: f64,
}

/// Summary metrics of a prequential run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrequentialMetrics {
    pub samples: u64,
    pub accuracy: f64,
    pub macro_f: f64,
    pub micro_f: f64,
    pub per_class_f: [f64; N_CLASSES],
    pub wall_seconds: f64,
    /// Samples per second over the whole loop.
    pub throughput: f64,
    pub prepare_seconds: f64,
    pub model_seconds: f64,
    /// Samples per second counting predict and learn only.
    pub model_throughput: f64,
    pub confusion: ConfusionMatrix,
}

fn per_second(samples: u64, seconds: f64) -> f64 {
    // Zero when no time was measured (e.g. metrics rebuilt from records).
    if seconds > 0.0 {
        samples as f64 / seconds
    } else {
        0.0
    }
}

impl PrequentialMetrics {
    pub fn from_confusion(confusion: ConfusionMatrix, timing: Timing) -> Result<Self, EvalError> {
        let samples = confusion.total();
        if samples == 0 {
            return Err(EvalError::NoSamples);
        }
        let f = compute_fmeasure(&confusion)?;
        Ok(Self {
            samples,
            accuracy: confusion.accuracy().unwrap_or(0.0),
            macro_f: f.macro_f,
            micro_f: f.micro_f,
            per_class_f: f.per_class,
            wall_seconds: timing.wall_seconds,
            throughput: per_second(samples, timing.wall_seconds),
            prepare_seconds: timing.prepare_seconds,
            model_seconds: timing.model_seconds,
            model_throughput: per_second(samples, timing.model_seconds),
            confusion,
        })
    }

    /// Recomputes the quality metrics from records (timing left at zero).
    pub fn from_records<'a>(records: impl IntoIterator<Item = &'a PredictionRecord>) -> Result<Self, EvalError> {
        Self::from_confusion(ConfusionMatrix::from_records(records), Timing::default())
    }

    /// Same quality metrics, ignoring timing.
    pub fn same_quality(&self, other: &Self) -> bool {
        self.confusion == other.confusion
            && self.accuracy == other.accuracy
            && self.macro_f == other.macro_f
            && self.micro_f == other.micro_f
            && self.per_class_f == other.per_class_f
    }
}

impl fmt::Display for PrequentialMetrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "samples            {}", self.samples)?;
        writeln!(f, "accuracy           {:.4}", self.accuracy)?;
        writeln!(f, "macro F-measure    {:.4}", self.macro_f)?;
        writeln!(f, "micro F-measure    {:.4}", self.micro_f)?;
        for c in ClassLabel::ALL {
            writeln!(f, "  F {:<22} {:.4}", c.to_string(), self.per_class_f[c.ordinal()])?;
        }
        writeln!(f, "wall time          {:.3} s", self.wall_seconds)?;
        writeln!(f, "throughput         {:.1} samples/s", self.throughput)?;
        write!(f, "  (model only      {:.1} samples/s)", self.model_throughput)
    }
}

/// Outcome of one test-then-train step. Latency is measured but not
/// serialised, so record files of replayed runs are identical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub seq_id: u64,
    pub timestamp: i64,
    #[serde(rename = "true")]
    pub truth: ClassLabel,
    pub predicted: ClassLabel,
    /// Per-class scores; non-finite values (for example log scores of
    /// unseen classes, or no scores before the first sample) map to null.
    #[serde(serialize_with = "serialize_scores", deserialize_with = "deserialize_scores")]
    pub scores: [f64; N_CLASSES],
    #[serde(skip)]
    pub latency: Duration,
}

pub(crate) fn serialize_scores<S: Serializer>(scores: &[f64; N_CLASSES], s: S) -> Result<S::Ok, S::Error> {
    let mapped: Vec<Option<f64>> = scores.iter().map(|v| v.is_finite().then_some(*v)).collect();
    mapped.serialize(s)
}

pub(crate) fn deserialize_scores<'de, D: Deserializer<'de>>(d: D) -> Result<[f64; N_CLASSES], D::Error> {
    let raw: [Option<f64>; N_CLASSES] = Deserialize::deserialize(d)?;
    Ok(raw.map(|v| v.unwrap_or(f64::NAN)))
}

impl PredictionRecord {
    pub fn is_correct(&self) -> bool {
        self.truth == self.predicted
    }
}

/// Writes records as JSON lines.
pub fn write_records<'a, W: Write>(
    records: impl IntoIterator<Item = &'a PredictionRecord>,
    mut out: W,
) -> Result<(), EvalError> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Reads JSON-lines records; blank lines are ignored.
pub fn read_records<R: BufRead>(input: R) -> Result<Vec<PredictionRecord>, EvalError> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

/// Test-then-train over a fallible sample source. For every sample the
/// model predicts first (a model that is not ready yet counts as predicting
/// NonFailure), then `hook` sees the model state that produced the
/// prediction, and only then the model learns the label.
pub fn prequential_run_with<C, I, H>(model: &mut C, stream: I, mut hook: H) -> Result<PrequentialMetrics, EvalError>
where
    C: Classifier + ?Sized,
    I: IntoIterator<Item = Result<(FeatureVector, ClassLabel), EvalError>>,
    H: FnMut(&C, &FeatureVector, &PredictionRecord) -> Result<(), EvalError>,
{
    let mut confusion = ConfusionMatrix::new();
    let mut prepare = Duration::ZERO;
    let mut modelling = Duration::ZERO;
    let start = Instant::now();
    let mut iter = stream.into_iter();
    loop {
        let fetch = Instant::now();
        let Some(item) = iter.next() else {
            break;
        };
        prepare += fetch.elapsed();
        let (fv, truth) = item?;
        let t0 = Instant::now();
        let (predicted, scores) = match model.predict(&fv) {
            Ok(p) => (p.label, p.scores),
            Err(LearnError::NotReady) => (ClassLabel::NonFailure, [f64::NAN; N_CLASSES]),
            Err(e) => return Err(e.into()),
        };
        let predict_time = t0.elapsed();
        let record = PredictionRecord {
            seq_id: fv.seq_id,
            timestamp: fv.timestamp,
            truth,
            predicted,
            scores,
            latency: predict_time,
        };
        confusion.record(truth, predicted);
        hook(model, &fv, &record)?;
        let t1 = Instant::now();
        model.learn(&fv, truth)?;
        modelling += predict_time + t1.elapsed();
    }
    let timing = Timing {
        wall_seconds: start.elapsed().as_secs_f64(),
        prepare_seconds: prepare.as_secs_f64(),
        model_seconds: modelling.as_secs_f64(),
    };
    PrequentialMetrics::from_confusion(confusion, timing)
}

/// Test-then-train over an in-memory stream, collecting every record.
pub fn prequential_run<C, I>(model: &mut C, stream: I) -> Result<(PrequentialMetrics, Vec<PredictionRecord>), EvalError>
where
    C: Classifier + ?Sized,
    I: IntoIterator<Item = (FeatureVector, ClassLabel)>,
{
    let mut records = Vec::new();
    let metrics = prequential_run_with(model, stream.into_iter().map(Ok), |_, _, r| {
        records.push(r.clone());
        Ok(())
    })?;
    Ok((metrics, records))
}

/// The tuning grid of a family: the 27 combinations of three values per
/// hyperparameter. Naive Bayes has nothing to tune and yields no points.
pub fn default_grid(family: ModelFamily) -> Vec<Hyperparameters> {
    let mut grid = Vec::new();
    match family {
        ModelFamily::Gnb => {}
        ModelFamily::Htc | ModelFamily::Hatc => {
            for depth in [50, 100, 200] {
                for tie in [0.5, 0.05, 0.005] {
                    for size in [50.0, 100.0, 200.0] {
                        grid.push(Hyperparameters {
                            depth: Some(depth),
                            tiethreshold: Some(tie),
                            maxsize: Some(size),
                            ..Hyperparameters::default()
                        });
                    }
                }
            }
        }
        ModelFamily::Arfc => {
            for models in [50, 100, 200] {
                for features in [50, 100, 200] {
                    for lambda in [50.0, 100.0, 200.0] {
                        grid.push(Hyperparameters {
                            models: Some(models),
                            features: Some(features),
                            lambda: Some(lambda),
                            ..Hyperparameters::default()
                        });
                    }
                }
            }
        }
    }
    grid
}

/// One evaluated grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow<P> {
    pub rank: usize,
    /// Position in the submitted grid.
    pub index: usize,
    pub point: P,
    pub metrics: PrequentialMetrics,
}

/// Grid points ranked by macro F-measure (descending), ties broken by
/// shorter wall-clock time, then by grid position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Leaderboard<P> {
    pub rows: Vec<GridRow<P>>,
}

impl<P> Leaderboard<P> {
    pub fn best(&self) -> &GridRow<P> {
        &self.rows[0]
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

impl<P: Serialize> Leaderboard<P> {
    pub fn save(&self, path: &Path) -> Result<(), EvalError> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

impl Leaderboard<Hyperparameters> {
    /// Fixed-width text table.
    pub fn to_table(&self) -> String {
        let mut out = format!("{:>4}  {:<40} {:>8} {:>8} {:>10}\n", "rank", "hyperparameters", "macro F", "acc", "wall s");
        for r in &self.rows {
            out.push_str(&format!(
                "{:>4}  {:<40} {:>8.4} {:>8.4} {:>10.3}\n",
                r.rank,
                r.point.to_string(),
                r.metrics.macro_f,
                r.metrics.accuracy,
                r.metrics.wall_seconds
            ));
        }
        out
    }
}

/// Evaluates every grid point by an independent prequential run over the
/// same replayed stream and ranks the results.
pub fn grid_search_with<P, C, B>(
    points: &[P],
    build: B,
    stream: &[(FeatureVector, ClassLabel)],
    parallel: bool,
) -> Result<Leaderboard<P>, EvalError>
where
    P: Clone + Send + Sync,
    C: Classifier,
    B: Fn(&P) -> Result<C, EvalError> + Sync,
{
    if points.is_empty() {
        return Err(EvalError::EmptyGrid);
    }
    if stream.is_empty() {
        return Err(EvalError::NoSamples);
    }
    let evaluate = |(index, point): (usize, &P)| -> Result<GridRow<P>, EvalError> {
        let mut model = build(point)?;
        let metrics = prequential_run_with(&mut model, stream.iter().cloned().map(Ok), |_, _, _| Ok(()))?;
        Ok(GridRow { rank: 0, index, point: point.clone(), metrics })
    };
    let mut rows: Vec<GridRow<P>> = if parallel {
        points.par_iter().enumerate().map(evaluate).collect::<Result<_, _>>()?
    } else {
        points.iter().enumerate().map(evaluate).collect::<Result<_, _>>()?
    };
    rows.sort_by(|a, b| {
        b.metrics
            .macro_f
            .total_cmp(&a.metrics.macro_f)
            .then(a.metrics.wall_seconds.total_cmp(&b.metrics.wall_seconds))
            .then(a.index.cmp(&b.index))
    });
    for (i, row) in rows.iter_mut().enumerate() {
        row.rank = i + 1;
    }
    Ok(Leaderboard { rows })
}

/// Grid search over hyperparameters of `base`'s family; every other
/// setting (seed, forest options) is kept from `base`.
pub fn grid_search(
    base: &ModelSpec,
    grid: &[Hyperparameters],
    stream: &[(FeatureVector, ClassLabel)],
    parallel: bool,
) -> Result<Leaderboard<Hyperparameters>, EvalError> {
    for point in grid {
        point.validate_for(base.family)?;
    }
    grid_search_with(
        grid,
        |h| -> Result<Model, EvalError> { Ok(base.clone().with_hyperparameters(h.clone()).build()?) },
        stream,
        parallel,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::synthetic_schema;

    #[test]
    fn diagonal_matrix_is_perfect() {
        let mut cm = ConfusionMatrix::new();
        for (i, c) in ClassLabel::ALL.into_iter().enumerate() {
            for _ in 0..=i {
                cm.record(c, c);
            }
        }
        let f = compute_fmeasure(&cm).unwrap();
        assert_eq!(f.macro_f, 1.0);
        assert_eq!(f.micro_f, 1.0);
        assert_eq!(f.per_class, [1.0; N_CLASSES]);
    }

    #[test]
    fn absent_class_scores_zero() {
        let mut cm = ConfusionMatrix::new();
        for c in &ClassLabel::ALL[..3] {
            cm.record(*c, *c);
        }
        let f = compute_fmeasure(&cm).unwrap();
        assert_eq!(f.per_class[3], 0.0);
        assert_eq!(f.macro_f, 0.75);
        assert_eq!(f.micro_f, 1.0);
    }

    #[test]
    fn empty_matrix_is_an_error() {
        assert!(matches!(compute_fmeasure(&ConfusionMatrix::new()), Err(EvalError::InvalidArgument(_))));
        assert!(matches!(PrequentialMetrics::from_records(&[]), Err(EvalError::NoSamples)));
    }

    #[test]
    fn scores_serialise_non_finite_as_null() {
        let r = PredictionRecord {
            seq_id: 3,
            timestamp: 10,
            truth: ClassLabel::AirLeakClient,
            predicted: ClassLabel::NonFailure,
            scores: [0.5, f64::NEG_INFINITY, f64::NAN, 1.0],
            latency: Duration::from_millis(5),
        };
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("[0.5,null,null,1.0]"), "{json}");
        assert!(!json.contains("latency"));
        let back: PredictionRecord = serde_json::from_str(&json).unwrap();
        assert_eq!(back.scores[0], 0.5);
        assert!(back.scores[1].is_nan());
        assert_eq!(back.latency, Duration::ZERO);
    }

    #[test]
    fn records_round_trip_through_json_lines() {
        let records: Vec<PredictionRecord> = (0..5)
            .map(|i| PredictionRecord {
                seq_id: i,
                timestamp: i as i64,
                truth: ClassLabel::ALL[i as usize % 4],
                predicted: ClassLabel::NonFailure,
                scores: [i as f64; 4],
                latency: Duration::ZERO,
            })
            .collect();
        let mut buf = Vec::new();
        write_records(&records, &mut buf).unwrap();
        assert_eq!(read_records(buf.as_slice()).unwrap(), records);
    }

    #[test]
    fn grids_have_27_points_except_naive_bayes() {
        assert!(default_grid(ModelFamily::Gnb).is_empty());
        for family in [ModelFamily::Htc, ModelFamily::Hatc, ModelFamily::Arfc] {
            let grid = default_grid(family);
            assert_eq!(grid.len(), 27);
            for h in &grid {
                h.validate_for(family).unwrap();
            }
            assert!(grid.contains(&Hyperparameters::defaults(family)), "{family}");
        }
    }

    #[test]
    fn empty_grid_and_stream_are_errors() {
        let spec = ModelSpec::new(ModelFamily::Htc);
        let schema = synthetic_schema(1);
        let stream = vec![(FeatureVector::new(0, 0, schema, vec![1.0]), ClassLabel::NonFailure)];
        assert!(matches!(grid_search(&spec, &[], &stream, false), Err(EvalError::EmptyGrid)));
        assert!(matches!(
            grid_search(&spec, &default_grid(ModelFamily::Htc)[..1], &[], false),
            Err(EvalError::NoSamples)
        ));
    }
}
