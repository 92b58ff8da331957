use pdm_core::eval::{
    compute_fmeasure, default_grid, grid_search, grid_search_with, prequential_run, prequential_run_with,
    write_records, ConfusionMatrix, EvalError, PrequentialMetrics,
};
use pdm_core::features::FeatureVector;
use pdm_core::learn::{Classifier, LearnError, ModelFamily, ModelSpec, Prediction};
use pdm_core::synth::{separable_stream, synthetic_schema};
use pdm_core::{ClassLabel, N_CLASSES};
use proptest::prelude::*;
use std::cell::RefCell;
use std::collections::HashMap;

/// Always outputs the label it was built to know in advance.
struct Oracle {
    truth: HashMap<u64, ClassLabel>,
}

impl Classifier for Oracle {
    fn predict(&self, fv: &FeatureVector) -> Result<Prediction, LearnError> {
        let label = self.truth[&fv.seq_id];
        let mut scores = [0.0; N_CLASSES];
        scores[label.ordinal()] = 1.0;
        Ok(Prediction { label, scores })
    }

    fn learn(&mut self, _: &FeatureVector, _: ClassLabel) -> Result<(), LearnError> {
        Ok(())
    }
}

struct Constant(ClassLabel);

impl Classifier for Constant {
    fn predict(&self, _: &FeatureVector) -> Result<Prediction, LearnError> {
        Ok(Prediction { label: self.0, scores: [0.0; N_CLASSES] })
    }

    fn learn(&mut self, _: &FeatureVector, _: ClassLabel) -> Result<(), LearnError> {
        Ok(())
    }
}

/// Logs every call so the test can audit the order.
#[derive(Default)]
struct Spy {
    log: RefCell<Vec<(&'static str, u64)>>,
    seen_labels: RefCell<Vec<u64>>,
}

impl Classifier for Spy {
    fn predict(&self, fv: &FeatureVector) -> Result<Prediction, LearnError> {
        assert!(!self.seen_labels.borrow().contains(&fv.seq_id), "label seen before prediction");
        self.log.borrow_mut().push(("predict", fv.seq_id));
        Err(LearnError::NotReady)
    }

    fn learn(&mut self, fv: &FeatureVector, _: ClassLabel) -> Result<(), LearnError> {
        self.seen_labels.borrow_mut().push(fv.seq_id);
        self.log.borrow_mut().push(("learn", fv.seq_id));
        Ok(())
    }
}

fn labelled(labels: &[ClassLabel]) -> Vec<(FeatureVector, ClassLabel)> {
    let schema = synthetic_schema(1);
    labels
        .iter()
        .enumerate()
        .map(|(i, &c)| (FeatureVector::new(i as u64, i as i64, schema.clone(), vec![c.ordinal() as f64]), c))
        .collect()
}

/// Textbook per-class precision/recall/F from a flat list of (truth,
/// prediction) pairs.
fn batch_metrics(pairs: &[(usize, usize)]) -> (f64, f64, [f64; N_CLASSES]) {
    let mut per_class = [0.0; N_CLASSES];
    for (c, slot) in per_class.iter_mut().enumerate() {
        let tp = pairs.iter().filter(|&&(t, p)| t == c && p == c).count() as f64;
        let predicted = pairs.iter().filter(|&&(_, p)| p == c).count() as f64;
        let actual = pairs.iter().filter(|&&(t, _)| t == c).count() as f64;
        let precision = if predicted > 0.0 { tp / predicted } else { 0.0 };
        let recall = if actual > 0.0 { tp / actual } else { 0.0 };
        *slot = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
    }
    let accuracy = pairs.iter().filter(|(t, p)| t == p).count() as f64 / pairs.len() as f64;
    (per_class.iter().sum::<f64>() / N_CLASSES as f64, accuracy, per_class)
}

#[test]
fn oracle_predictor_is_perfect() {
    let stream = labelled(&[ClassLabel::NonFailure, ClassLabel::AirLeakClient, ClassLabel::OilLeakCompressor]);
    let mut oracle = Oracle { truth: stream.iter().map(|(fv, c)| (fv.seq_id, *c)).collect() };
    let (m, records) = prequential_run(&mut oracle, stream).unwrap();
    assert_eq!(m.accuracy, 1.0);
    assert_eq!(m.micro_f, 1.0);
    assert_eq!(records.len(), 3);
    assert!(records.iter().all(|r| r.is_correct()));
}

#[test]
fn majority_predictor_scores_the_majority_share() {
    let counts = [
        (ClassLabel::NonFailure, 372_718),
        (ClassLabel::OilLeakCompressor, 202_684),
        (ClassLabel::AirLeakDryer, 22_021),
        (ClassLabel::AirLeakClient, 9_001),
    ];
    let labels: Vec<ClassLabel> = counts.iter().flat_map(|&(c, n)| std::iter::repeat_n(c, n)).collect();
    assert_eq!(labels.len(), 606_424);
    let (m, _) = prequential_run(&mut Constant(ClassLabel::NonFailure), labelled(&labels)).unwrap();
    assert_eq!(m.accuracy, 372_718.0 / 606_424.0);
    assert!((m.accuracy - 0.6146).abs() < 5e-5);
    assert_eq!(m.per_class_f[1..], [0.0; 3]);
}

#[test]
fn empty_stream_is_an_error() {
    assert!(matches!(prequential_run(&mut Constant(ClassLabel::NonFailure), Vec::new()), Err(EvalError::NoSamples)));
}

#[test]
fn predictions_strictly_precede_learning() {
    let stream = labelled(&[ClassLabel::AirLeakDryer; 50]);
    let mut spy = Spy::default();
    let mut hooked = Vec::new();
    let m = prequential_run_with(&mut spy, stream.into_iter().map(Ok), |model, fv, record| {
        assert_eq!(model.log.borrow().last(), Some(&("predict", fv.seq_id)));
        assert_eq!(record.predicted, ClassLabel::NonFailure, "not-ready falls back to NonFailure");
        assert!(record.scores.iter().all(|s| s.is_nan()));
        hooked.push(fv.seq_id);
        Ok(())
    })
    .unwrap();
    assert_eq!(m.samples, 50);
    assert_eq!(hooked, (0..50).collect::<Vec<_>>());
    let log = spy.log.into_inner();
    for (i, pair) in log.chunks(2).enumerate() {
        assert_eq!(pair, [("predict", i as u64), ("learn", i as u64)]);
    }
}

#[test]
fn upstream_errors_abort_the_run() {
    let mut items: Vec<Result<_, EvalError>> = labelled(&[ClassLabel::NonFailure; 3]).into_iter().map(Ok).collect();
    items.insert(2, Err(EvalError::Upstream("broken row".into())));
    let err = prequential_run_with(&mut Constant(ClassLabel::NonFailure), items, |_, _, _| Ok(())).unwrap_err();
    assert!(matches!(err, EvalError::Upstream(_)));
}

#[test]
fn metrics_are_a_function_of_the_records() {
    for family in ModelFamily::ALL {
        let mut spec = ModelSpec::new(family).with_seed(4);
        spec.hyperparameters.models = (family == ModelFamily::Arfc).then_some(4);
        spec.hyperparameters.features = (family == ModelFamily::Arfc).then_some(2);
        let stream: Vec<_> = separable_stream(3_000, 21, 3, Some(1_500))
            .into_iter()
            .enumerate()
            .map(|(i, (fv, c))| (fv, if i % 7 == 0 { ClassLabel::OilLeakCompressor } else { c }))
            .collect();
        let mut model = spec.build().unwrap();
        let (m, records) = prequential_run(&mut model, stream.clone()).unwrap();
        let replayed = PrequentialMetrics::from_records(&records).unwrap();
        assert!(m.same_quality(&replayed), "{family}");
        let pairs: Vec<(usize, usize)> = records.iter().map(|r| (r.truth.ordinal(), r.predicted.ordinal())).collect();
        let (macro_f, accuracy, per_class) = batch_metrics(&pairs);
        assert!((m.macro_f - macro_f).abs() < 1e-12);
        assert_eq!(m.accuracy, accuracy);
        for c in 0..N_CLASSES {
            assert!((m.per_class_f[c] - per_class[c]).abs() < 1e-12);
        }
        let (again, again_records) = prequential_run(&mut spec.build().unwrap(), stream).unwrap();
        assert!(m.same_quality(&again));
        let jsonl = |rs: &[_]| {
            let mut buf = Vec::new();
            write_records(rs, &mut buf).unwrap();
            buf
        };
        assert_eq!(jsonl(&records), jsonl(&again_records), "{family}");
    }
}

#[test]
fn random_matrix_matches_textbook_oracle() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
    let pairs: Vec<(usize, usize)> =
        (0..10_000).map(|_| (rng.random_range(0..N_CLASSES), rng.random_range(0..N_CLASSES))).collect();
    let mut cm = ConfusionMatrix::new();
    for &(t, p) in &pairs {
        cm.record(ClassLabel::ALL[t], ClassLabel::ALL[p]);
    }
    let f = compute_fmeasure(&cm).unwrap();
    let (macro_f, accuracy, per_class) = batch_metrics(&pairs);
    assert!((f.macro_f - macro_f).abs() < 1e-12);
    assert!((f.micro_f - accuracy).abs() < 1e-12);
    for c in 0..N_CLASSES {
        assert!((f.per_class[c] - per_class[c]).abs() < 1e-12);
    }
}

#[test]
fn singleton_grid_returns_its_point() {
    let stream = separable_stream(600, 22, 1, None);
    let grid = &default_grid(ModelFamily::Htc)[4..5];
    let board = grid_search(&ModelSpec::new(ModelFamily::Htc), grid, &stream, false).unwrap();
    assert_eq!(board.len(), 1);
    assert_eq!(board.best().point, grid[0]);
    assert_eq!(board.best().rank, 1);
}

#[test]
fn oracle_point_ranks_first() {
    let stream = separable_stream(500, 23, 0, None);
    let truth: HashMap<u64, ClassLabel> = stream.iter().map(|(fv, c)| (fv.seq_id, *c)).collect();
    let points = ["constant", "oracle"];
    let board = grid_search_with(
        &points,
        |p| -> Result<Box<dyn Classifier + Send>, EvalError> {
            Ok(match *p {
                "oracle" => Box::new(OracleSend(truth.clone())),
                _ => Box::new(ConstantSend),
            })
        },
        &stream,
        true,
    )
    .unwrap();
    assert_eq!(board.best().point, "oracle");
    assert_eq!(board.rows[1].rank, 2);
}

struct OracleSend(HashMap<u64, ClassLabel>);
struct ConstantSend;

impl Classifier for OracleSend {
    fn predict(&self, fv: &FeatureVector) -> Result<Prediction, LearnError> {
        Oracle { truth: self.0.clone() }.predict(fv)
    }
    fn learn(&mut self, _: &FeatureVector, _: ClassLabel) -> Result<(), LearnError> {
        Ok(())
    }
}

impl Classifier for ConstantSend {
    fn predict(&self, fv: &FeatureVector) -> Result<Prediction, LearnError> {
        Constant(ClassLabel::NonFailure).predict(fv)
    }
    fn learn(&mut self, _: &FeatureVector, _: ClassLabel) -> Result<(), LearnError> {
        Ok(())
    }
}

#[test]
fn full_tree_grid_produces_27_ranked_rows() {
    let stream = separable_stream(1_500, 24, 2, Some(900));
    let board = grid_search(&ModelSpec::new(ModelFamily::Htc), &default_grid(ModelFamily::Htc), &stream, true).unwrap();
    assert_eq!(board.len(), 27);
    let ranks: Vec<usize> = board.rows.iter().map(|r| r.rank).collect();
    assert_eq!(ranks, (1..=27).collect::<Vec<_>>());
    for w in board.rows.windows(2) {
        assert!(w[0].metrics.macro_f >= w[1].metrics.macro_f);
    }
    // Parallel and sequential evaluation see identical replays.
    let sequential =
        grid_search(&ModelSpec::new(ModelFamily::Htc), &default_grid(ModelFamily::Htc), &stream, false).unwrap();
    for row in &board.rows {
        let twin = sequential.rows.iter().find(|r| r.index == row.index).unwrap();
        assert!(row.metrics.same_quality(&twin.metrics));
    }
}

proptest! {
    #[test]
    fn micro_f_equals_accuracy_and_values_are_bounded(
        pairs in proptest::collection::vec((0usize..N_CLASSES, 0usize..N_CLASSES), 1..400)
    ) {
        let mut cm = ConfusionMatrix::new();
        for &(t, p) in &pairs {
            cm.record(ClassLabel::ALL[t], ClassLabel::ALL[p]);
        }
        prop_assert_eq!(cm.total(), pairs.len() as u64);
        let f = compute_fmeasure(&cm).unwrap();
        prop_assert_eq!(f.micro_f, cm.accuracy().unwrap());
        for v in f.per_class.iter().chain([&f.macro_f]) {
            prop_assert!((0.0..=1.0).contains(v));
        }
    }
}
