use pdm_core::eval::{prequential_run, prequential_run_with, PredictionRecord};
use pdm_core::explain::{
    decision_path_features, emit_report, model_summary, render_explanation, top_relevant_features, AnomalyConfig,
    AnomalyEntry, AnomalyKind, AnomalyTracker, ExplainConfig, ExplainError, Explainer, Explanation, ExplanationParts,
    ModelTally, PathFeature, ReportInput, ReportRecord, RunSummary, SeriesRecorder, Template, WindowSummary,
};
use pdm_core::features::{FeatureName, FeatureSchema, FeatureVector, Metric, WindowKind};
use pdm_core::learn::{Classifier, HoeffdingTree, LearnError, ModelFamily, ModelSpec, Node, Prediction, TreeParams};
use pdm_core::synth::separable_stream;
use pdm_core::{ClassLabel, Sensor, N_SENSORS};
use proptest::prelude::*;
use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;
use std::time::Duration;

fn f(sensor: Sensor, metric: Metric, window: WindowKind) -> FeatureName {
    FeatureName::engineered(sensor, metric, window)
}

fn f1() -> FeatureName {
    f(Sensor::Reservoirs, Metric::Fft, WindowKind::Q1)
}

fn f2() -> FeatureName {
    f(Sensor::Tp3, Metric::Fft, WindowKind::Q3)
}

fn counts(c: ClassLabel) -> [f64; 4] {
    let mut v = [0.0; 4];
    v[c.ordinal()] = 5.0;
    v
}

fn vector(names: &[FeatureName], values: &[f64]) -> FeatureVector {
    FeatureVector::new(7, 70, Arc::new(FeatureSchema::new(names.to_vec())), values.to_vec())
}

fn stump() -> HoeffdingTree {
    let root = Node::split(0, 0.5, Node::leaf(counts(ClassLabel::NonFailure)), Node::leaf(counts(ClassLabel::AirLeakDryer)));
    HoeffdingTree::from_structure(TreeParams::default(), vec![f1()], root).unwrap()
}

/// f1 > 0.5 → (f2 > 1 → (f2 > 2 → dryer | client) | oil) | non-failure.
fn three_level() -> HoeffdingTree {
    let deep = Node::split(1, 2.0, Node::leaf(counts(ClassLabel::AirLeakClient)), Node::leaf(counts(ClassLabel::AirLeakDryer)));
    let mid = Node::split(1, 1.0, Node::leaf(counts(ClassLabel::OilLeakCompressor)), deep);
    let root = Node::split(0, 0.5, Node::leaf(counts(ClassLabel::NonFailure)), mid);
    HoeffdingTree::from_structure(TreeParams::default(), vec![f1(), f2()], root).unwrap()
}

#[test]
fn stump_paths() {
    let tree = stump();
    assert_eq!(
        decision_path_features(&tree, &vector(&[f1()], &[0.7])).unwrap(),
        vec![PathFeature { feature: f1(), frequency: 1 }]
    );
    assert!(decision_path_features(&tree, &vector(&[f1()], &[0.3])).unwrap().is_empty());
    // The boundary value goes left.
    assert!(decision_path_features(&tree, &vector(&[f1()], &[0.5])).unwrap().is_empty());
}

#[test]
fn repeated_gate_ranks_first() {
    let tree = three_level();
    let fv = vector(&[f1(), f2()], &[0.9, 2.5]);
    // Enumerating the path by hand: f1 right, f2 right, f2 right.
    assert_eq!(
        decision_path_features(&tree, &fv).unwrap(),
        vec![PathFeature { feature: f2(), frequency: 2 }, PathFeature { feature: f1(), frequency: 1 }]
    );
    assert_eq!(tree.predict(&fv).unwrap().label, ClassLabel::AirLeakDryer);
    let fv = vector(&[f1(), f2()], &[0.9, 1.5]);
    assert_eq!(decision_path_features(&tree, &fv).unwrap().len(), 2);
    assert_eq!(tree.predict(&fv).unwrap().label, ClassLabel::AirLeakClient);
}

#[test]
fn paths_resolve_features_by_name() {
    let tree = three_level();
    // Same features in another order plus an extra one.
    let extra = FeatureName::raw(Sensor::H1);
    let fv = vector(&[extra, f2(), f1()], &[0.0, 2.5, 0.9]);
    assert_eq!(decision_path_features(&tree, &fv).unwrap()[0], PathFeature { feature: f2(), frequency: 2 });
    let missing = vector(&[f1()], &[0.9]);
    assert!(matches!(decision_path_features(&tree, &missing), Err(ExplainError::Integrity(_))));
}

#[test]
fn untrained_and_naive_bayes_models() {
    let fv = vector(&[f1()], &[1.0]);
    assert!(decision_path_features(&HoeffdingTree::new(TreeParams::default()).unwrap(), &fv).unwrap().is_empty());
    let gnb = ModelSpec::new(ModelFamily::Gnb).build().unwrap();
    assert!(matches!(top_relevant_features(&gnb, &fv, None), Err(ExplainError::Unsupported(_))));
}

/// A model made of prebuilt trees.
struct Trees(Vec<HoeffdingTree>);

impl Classifier for Trees {
    fn predict(&self, fv: &FeatureVector) -> Result<Prediction, LearnError> {
        self.0[0].predict(fv)
    }
    fn learn(&mut self, _: &FeatureVector, _: ClassLabel) -> Result<(), LearnError> {
        Ok(())
    }
    fn decision_trees(&self) -> Option<Vec<&HoeffdingTree>> {
        Some(self.0.iter().collect())
    }
}

#[test]
fn forest_aggregation() {
    let fv = vector(&[f1()], &[0.9]);
    let forest = Trees(vec![stump(); 6]);
    assert_eq!(top_relevant_features(&forest, &fv, None).unwrap(), vec![PathFeature { feature: f1(), frequency: 6 }]);
    assert_eq!(top_relevant_features(&forest, &fv, Some(4)).unwrap(), vec![PathFeature { feature: f1(), frequency: 4 }]);
    assert_eq!(top_relevant_features(&forest, &fv, Some(60)).unwrap()[0].frequency, 6);
    let single = Trees(vec![three_level()]);
    let fv = vector(&[f1(), f2()], &[0.9, 2.5]);
    assert_eq!(top_relevant_features(&single, &fv, None).unwrap(), decision_path_features(&single.0[0], &fv).unwrap());
}

#[test]
fn top_list_is_capped_at_five() {
    let names: Vec<FeatureName> = Sensor::ALL[..7].iter().map(|&s| f(s, Metric::Avg, WindowKind::Avg)).collect();
    // Right-leaning chain over seven features.
    let mut node = Node::leaf(counts(ClassLabel::AirLeakDryer));
    for i in (0..7).rev() {
        node = Node::split(i, 0.0, Node::leaf(counts(ClassLabel::NonFailure)), node);
    }
    let tree = HoeffdingTree::from_structure(TreeParams::default(), names.clone(), node).unwrap();
    let fv = vector(&names, &[1.0; 7]);
    assert_eq!(decision_path_features(&tree, &fv).unwrap().len(), 7);
    let top = top_relevant_features(&tree, &fv, None).unwrap();
    assert_eq!(top.len(), 5);
    // All tie at 1, so serialised name order decides.
    let mut sorted: Vec<String> = names.iter().map(ToString::to_string).collect();
    sorted.sort();
    assert_eq!(top.iter().map(|p| p.feature.to_string()).collect::<Vec<_>>(), sorted[..5]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    /// Reported features lie on the routing path and frequencies add up to
    /// the right-branch count.
    #[test]
    fn path_consistency(seed in 0u64..1000, probes in proptest::collection::vec(proptest::collection::vec(-1.0f64..1.0, 4), 1..20)) {
        let stream = separable_stream(2_000, seed, 3, None);
        let mut tree = HoeffdingTree::new(TreeParams { grace_period: 50.0, tie_threshold: 0.3, ..TreeParams::default() }).unwrap();
        for (fv, c) in &stream {
            let c = if fv.values()[2] > 0.5 { ClassLabel::AirLeakClient } else { *c };
            tree.learn(fv, c).unwrap();
        }
        let schema = stream[0].0.schema().clone();
        let names = schema.names().to_vec();
        for x in probes {
            let fv = FeatureVector::new(0, 0, schema.clone(), x.clone());
            let path = tree.path(&x);
            let reported = decision_path_features(&tree, &fv).unwrap();
            let rights = path.iter().filter(|s| s.went_right).count() as u64;
            prop_assert_eq!(reported.iter().map(|p| p.frequency).sum::<u64>(), rights);
            for p in &reported {
                let on_path = path.iter().filter(|s| s.went_right && names[s.feature] == p.feature).count() as u64;
                prop_assert_eq!(on_path, p.frequency);
            }
            for w in reported.windows(2) {
                prop_assert!(w[0].frequency > w[1].frequency
                    || (w[0].frequency == w[1].frequency && w[0].feature.to_string() < w[1].feature.to_string()));
            }
        }
    }

    /// Summary ranks agree with a brute-force tally.
    #[test]
    fn summary_matches_brute_force(entries in proptest::collection::vec((0usize..16, 1usize..7, 0usize..4, 1u64..9), 1..40)) {
        let features: Vec<PathFeature> = entries
            .iter()
            .map(|&(s, m, w, n)| PathFeature { feature: f(Sensor::ALL[s], Metric::ENGINEERED[m - 1], WindowKind::ALL[w]), frequency: n })
            .collect();
        let summary = model_summary(&features).unwrap();
        let mut sensors: BTreeMap<String, u64> = BTreeMap::new();
        let mut windows: BTreeMap<String, u64> = BTreeMap::new();
        let mut metrics: BTreeMap<String, u64> = BTreeMap::new();
        for p in &features {
            *sensors.entry(p.feature.sensor().name().to_string()).or_default() += p.frequency;
            *windows.entry(p.feature.window().unwrap().as_str().to_string()).or_default() += p.frequency;
            *metrics.entry(p.feature.metric().as_str().to_string()).or_default() += p.frequency;
        }
        let top = |m: BTreeMap<String, u64>| {
            let mut v: Vec<(String, u64)> = m.into_iter().collect();
            v.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
            v.truncate(5);
            v
        };
        prop_assert_eq!(top(sensors), summary.top_sensors.iter().map(|r| (r.item.name().to_string(), r.frequency)).collect::<Vec<_>>());
        let w = top(windows.clone());
        prop_assert_eq!(&w, &summary.top_windows.iter().map(|r| (r.item.as_str().to_string(), r.frequency)).collect::<Vec<_>>());
        prop_assert_eq!(top(metrics), summary.top_metrics.iter().map(|r| (r.item.as_str().to_string(), r.frequency)).collect::<Vec<_>>());
        let equal = windows.len() == 4 && windows.values().all(|&c| c == w[0].1);
        prop_assert_eq!(summary.windows_equal, equal);
    }
}

#[test]
fn equal_window_contributions_are_flagged() {
    let features: Vec<PathFeature> = WindowKind::ALL
        .into_iter()
        .map(|w| PathFeature { feature: f(Sensor::Reservoirs, Metric::Fft, w), frequency: 3 })
        .collect();
    assert!(model_summary(&features).unwrap().windows_equal);
    assert!(!model_summary(&features[..3]).unwrap().windows_equal);
}

/// Reference statistics over an explicit window buffer.
fn oracle_stats(window: &VecDeque<f64>) -> WindowSummary {
    let n = window.len() as f64;
    let mean = window.iter().sum::<f64>() / n;
    let std = (window.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    let mut sorted: Vec<f64> = window.iter().copied().collect();
    sorted.sort_by(f64::total_cmp);
    let rank = |k: usize| sorted[((k * sorted.len()).div_ceil(4)).max(1) - 1];
    WindowSummary { mean, std, q1: rank(1), q3: rank(3) }
}

/// Feeds sensor 0 with `signal` through a W-sample window; every other
/// sensor is constant. Returns pattern and value durations per second.
fn simulate(signal: &[f64], w: usize) -> Vec<(u64, u64)> {
    let mut tracker = AnomalyTracker::new(AnomalyConfig::default());
    let mut window = VecDeque::new();
    let mut out = Vec::new();
    for (t, &x) in signal.iter().enumerate() {
        window.push_back(x);
        if window.len() > w {
            window.pop_front();
        }
        let mut raw = [1.0; N_SENSORS];
        raw[0] = x;
        let constant = WindowSummary { mean: 1.0, std: 0.0, q1: 1.0, q3: 1.0 };
        let mut stats = [constant; N_SENSORS];
        stats[0] = oracle_stats(&window);
        let r = *tracker.update(t as i64, &raw, &stats);
        for s in 1..N_SENSORS {
            assert_eq!((r.pattern_seconds[s], r.value_seconds[s]), (0, 0));
        }
        out.push((r.pattern_seconds[0], r.value_seconds[0]));
        assert!(r.pattern_seconds[0] <= tracker.age() && r.value_seconds[0] <= tracker.age());
    }
    out
}

#[test]
fn constant_stream_never_anomalous() {
    assert!(simulate(&[4.2; 3_000], 100).iter().all(|&d| d == (0, 0)));
}

#[test]
fn sustained_step_is_tracked_until_absorbed() {
    const W: usize = 1399;
    let sigma = 0.1;
    // Alternating ±σ baseline has standard deviation exactly σ.
    let mut signal: Vec<f64> = (0..3 * W).map(|i| if i % 2 == 0 { sigma } else { -sigma }).collect();
    let onset = signal.len();
    signal.extend(std::iter::repeat_n(10.0 * sigma, 600));
    let durations = simulate(&signal, W);
    assert!(durations[..onset].iter().all(|&(p, _)| p == 0));
    let pattern: Vec<u64> = durations[onset..].iter().map(|d| d.0).collect();
    // Independent closed form: with a fraction p of step samples in the
    // window the deviation is 10σ(1 − p) against a standard deviation of
    // σ·sqrt((1 − p)(1 + 100p)).
    let absorbed = (1..W)
        .find(|&k| {
            let p = k as f64 / W as f64;
            10.0 * (1.0 - p) <= 3.0 * ((1.0 - p) * (1.0 + 100.0 * p)).sqrt()
        })
        .unwrap();
    assert!(absorbed > 120, "{absorbed}");
    assert_eq!(pattern[119], 120);
    let peak = *pattern.iter().max().unwrap();
    assert!((peak as i64 - absorbed as i64 + 1).abs() <= 2, "peak {peak}, closed form {absorbed}");
    assert!(pattern[peak as usize..].iter().all(|&d| d == 0));
}

#[test]
fn single_spike_lasts_one_second() {
    let mut signal: Vec<f64> = (0..500).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
    signal.push(100.0);
    signal.extend((0..10).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }));
    let d = simulate(&signal, 200);
    assert_eq!(d[500], (1, 1));
    assert_eq!(d[501], (0, 0));
}

#[test]
fn entries_respect_reporting_floors() {
    let mut report = pdm_core::explain::AnomalyReport::default();
    report.pattern_seconds[Sensor::DvPressure.index()] = 1_850;
    report.pattern_seconds[Sensor::Tp3.index()] = 950;
    report.pattern_seconds[Sensor::H1.index()] = 599;
    report.value_seconds[Sensor::Flowmeter.index()] = 130;
    report.value_seconds[Sensor::Reservoirs.index()] = 119;
    let entries = report.entries(&AnomalyConfig::default());
    assert_eq!(
        entries,
        vec![
            AnomalyEntry { sensor: Sensor::DvPressure, kind: AnomalyKind::Pattern, seconds: 1_850 },
            AnomalyEntry { sensor: Sensor::Tp3, kind: AnomalyKind::Pattern, seconds: 950 },
            AnomalyEntry { sensor: Sensor::Flowmeter, kind: AnomalyKind::Value, seconds: 130 },
        ]
    );
}

fn sample_parts() -> (Vec<PathFeature>, pdm_core::explain::ModelSummary, Vec<AnomalyEntry>) {
    let top = vec![
        PathFeature { feature: f(Sensor::Reservoirs, Metric::Fft, WindowKind::Q1), frequency: 5 },
        PathFeature { feature: f(Sensor::Reservoirs, Metric::Fft, WindowKind::Q2), frequency: 4 },
        PathFeature { feature: f(Sensor::Tp3, Metric::Fft, WindowKind::Q3), frequency: 3 },
        PathFeature { feature: f(Sensor::DvPressure, Metric::Fft, WindowKind::Avg), frequency: 2 },
        PathFeature { feature: f(Sensor::Flowmeter, Metric::Fft, WindowKind::Q1), frequency: 1 },
    ];
    let mut tally = ModelTally::new();
    for (s, w) in [
        (Sensor::Flowmeter, WindowKind::Avg),
        (Sensor::H1, WindowKind::Q1),
        (Sensor::OilTemperature, WindowKind::Q2),
        (Sensor::Tp2, WindowKind::Q3),
    ] {
        tally.add(&[PathFeature { feature: f(s, Metric::Fft, w), frequency: 2 }]);
    }
    for w in WindowKind::ALL {
        tally.add(&[PathFeature { feature: f(Sensor::Tp3, Metric::Fft, w), frequency: 1 }]);
    }
    let summary = tally.summary().unwrap();
    let anomalies = vec![
        AnomalyEntry { sensor: Sensor::DvPressure, kind: AnomalyKind::Pattern, seconds: 1_850 },
        AnomalyEntry { sensor: Sensor::Tp3, kind: AnomalyKind::Pattern, seconds: 920 },
        AnomalyEntry { sensor: Sensor::Reservoirs, kind: AnomalyKind::Pattern, seconds: 610 },
        AnomalyEntry { sensor: Sensor::Flowmeter, kind: AnomalyKind::Value, seconds: 125 },
        AnomalyEntry { sensor: Sensor::Reservoirs, kind: AnomalyKind::Value, seconds: 121 },
    ];
    (top, summary, anomalies)
}

#[test]
fn rendering_has_the_expected_structure() {
    let (top, summary, anomalies) = sample_parts();
    assert!(summary.windows_equal);
    let parts = ExplanationParts {
        seq_id: 1340,
        predicted: ClassLabel::AirLeakDryer,
        top_features: &top,
        model_summary: Some(&summary),
        anomalies: &anomalies,
    };
    let text = render_explanation(&parts, &Template::default()).unwrap();
    let expected = "For sample 1340, the most relevant features are:
    1. FFT of Reservoirs from Q1-size sliding window
    2. FFT of Reservoirs from Q2-size sliding window
    3. FFT of TP3 from Q3-size sliding window
    4. FFT of DV pressure from AVG-size sliding window
    5. FFT of Flowmeter from Q1-size sliding window

Most representative parameters of the model:
    Sliding windows: four sliding windows contribute equally.
    Statistics: FFT.
    Sensors: TP3, Flowmeter, H1, Oil temperature, TP2.

Given sensors with
    abnormal patterns:
    -  DV pressure (> 30 minutes)
    -  TP3 (> 15 minutes)
    -  Reservoirs (> 10 minutes)
and anomalous values:
    -  Flowmeter (> 2 minutes)
    -  Reservoirs (> 2 minutes)
then the prediction is that
    there is an air leak in the air dryer.
";
    assert_eq!(text, expected);
    assert_eq!(render_explanation(&parts, &Template::default()).unwrap(), text);
    for p in &top {
        assert!(text.contains(&p.feature.describe()));
    }
}

#[test]
fn empty_anomalies_use_the_placeholder_sentence() {
    let (top, _, _) = sample_parts();
    let parts =
        ExplanationParts { seq_id: 1, predicted: ClassLabel::NonFailure, top_features: &top, model_summary: None, anomalies: &[] };
    let text = render_explanation(&parts, &Template::default()).unwrap();
    assert!(text.contains("no sensors with abnormal behavior"));
    assert!(text.contains("there is no failure"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rendering_is_injective_on_content(
        a in proptest::collection::vec((0usize..16, 1usize..7, 0usize..4), 0..5),
        b in proptest::collection::vec((0usize..16, 1usize..7, 0usize..4), 0..5),
        ca in 0usize..4,
        cb in 0usize..4,
    ) {
        let build = |v: &[(usize, usize, usize)]| -> Vec<PathFeature> {
            v.iter().map(|&(s, m, w)| PathFeature { feature: f(Sensor::ALL[s], Metric::ENGINEERED[m - 1], WindowKind::ALL[w]), frequency: 1 }).collect()
        };
        let (fa, fb) = (build(&a), build(&b));
        let render = |top: &[PathFeature], c: usize| {
            render_explanation(
                &ExplanationParts { seq_id: 9, predicted: ClassLabel::ALL[c], top_features: top, model_summary: None, anomalies: &[] },
                &Template::default(),
            ).unwrap()
        };
        let (ta, tb) = (render(&fa, ca), render(&fb, cb));
        let same_content = fa.iter().map(|p| p.feature).collect::<Vec<_>>() == fb.iter().map(|p| p.feature).collect::<Vec<_>>() && ca == cb;
        prop_assert_eq!(ta == tb, same_content);
        prop_assert!(ta.contains(ClassLabel::ALL[ca].phrase()));
    }
}

fn explained_run(n: usize) -> (Vec<PredictionRecord>, Vec<Explanation>, ModelTally) {
    let stream = separable_stream(n, 31, 2, None);
    let mut model = ModelSpec::new(ModelFamily::Htc).build().unwrap();
    let mut explainer = Explainer::new(ExplainConfig::default()).unwrap();
    let mut records = Vec::new();
    let mut explanations = Vec::new();
    prequential_run_with(&mut model, stream.into_iter().map(Ok), |m, fv, r| {
        let e = explainer.explain(m, fv, r).unwrap();
        // Features come from the tree state that made the prediction.
        for p in &e.top_features {
            let trees = m.decision_trees().unwrap();
            let names = trees[0].feature_names().unwrap();
            assert!(trees[0].path(fv.values()).iter().any(|s| s.went_right && names[s.feature] == p.feature));
        }
        records.push(r.clone());
        explanations.push(e);
        Ok(())
    })
    .unwrap();
    (records, explanations, explainer.tally().clone())
}

#[test]
fn report_round_trips_records() {
    let (records, explanations, tally) = explained_run(1_000);
    let records = &records[900..];
    let explanations = &explanations[900..];
    assert_eq!(records.len(), 100);
    let metrics = pdm_core::eval::PrequentialMetrics::from_records(records).unwrap();
    let summary = tally.summary().unwrap();
    let mut recorder = SeriesRecorder::new(64);
    for (fv, c) in separable_stream(1_000, 31, 2, None) {
        recorder.push(&fv, c);
    }
    assert!(recorder.len() <= 64);
    let series = recorder.series(&[tally.features()[0].feature]);
    let dir = tempfile::tempdir().unwrap();
    let context = serde_json::json!({"model": "htc"});
    let files = emit_report(
        dir.path(),
        &ReportInput {
            title: "Run report",
            model: "HTC",
            records,
            explanations,
            metrics: Some(&metrics),
            model_summary: Some(&summary),
            series: &series,
            context: &context,
        },
    )
    .unwrap();
    let text = std::fs::read_to_string(&files.records).unwrap();
    let lines: Vec<ReportRecord> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 100);
    for ((line, r), e) in lines.iter().zip(records).zip(explanations) {
        assert_eq!(line.prediction().seq_id, r.seq_id);
        assert_eq!(line.prediction().predicted, r.predicted);
        assert_eq!(line.explanation().as_ref(), Some(e));
    }
    let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    for key in ["seq_id", "predicted", "true", "top_features", "model_summary", "anomalies", "text"] {
        assert!(first.get(key).is_some(), "{key}");
    }
    let summary_file: RunSummary = serde_json::from_str(&std::fs::read_to_string(&files.summary).unwrap()).unwrap();
    assert_eq!(summary_file.samples, 100);
    assert_eq!(summary_file.explained, 100);
    let html = std::fs::read_to_string(&files.html).unwrap();
    for needle in ["Accuracy", "Macro F", "F Non-failure", "F Oil leak compressor", "F Air leak dryer", "F Air leak client", "<svg", "<polyline"] {
        assert!(html.contains(needle), "{needle}");
    }
    assert!(!html.contains("<script") && !html.contains("<link") && !html.contains("src=\"http"));
}

#[test]
fn empty_run_report() {
    let dir = tempfile::tempdir().unwrap();
    let context = serde_json::Value::Null;
    let files = emit_report(
        dir.path(),
        &ReportInput {
            title: "Empty",
            model: "HTC",
            records: &[],
            explanations: &[],
            metrics: None,
            model_summary: None,
            series: &[],
            context: &context,
        },
    )
    .unwrap();
    assert_eq!(std::fs::read_to_string(&files.records).unwrap(), "");
    let summary: RunSummary = serde_json::from_str(&std::fs::read_to_string(&files.summary).unwrap()).unwrap();
    assert_eq!((summary.samples, summary.explained, summary.true_counts), (0, 0, [0; 4]));
    assert!(summary.metrics.is_none());
}

#[test]
fn unwritable_directory_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    let context = serde_json::Value::Null;
    let input = ReportInput {
        title: "x",
        model: "x",
        records: &[],
        explanations: &[],
        metrics: None,
        model_summary: None,
        series: &[],
        context: &context,
    };
    assert!(matches!(emit_report(&blocker.join("sub"), &input), Err(ExplainError::Io(_))));
}

#[test]
fn explanations_mention_features_and_class() {
    let (_, explanations, _) = explained_run(1_500);
    let late = &explanations[1_000..];
    assert!(late.iter().any(|e| !e.top_features.is_empty()));
    for e in late {
        for p in &e.top_features {
            assert!(e.text.contains(&p.feature.describe()));
        }
        assert!(e.text.contains(e.predicted.phrase()));
    }
}

#[test]
fn engine_backed_tracker_stays_within_stream_age() {
    use pdm_core::calibrate::WindowSpec;
    use pdm_core::features::{FeatureEngine, SpectralSummary};
    use pdm_core::synth::SyntheticApu;
    let spec = WindowSpec::new(300, 40, 120, 200).unwrap();
    let mut engine = FeatureEngine::new(spec, SpectralSummary::default());
    let mut tracker = AnomalyTracker::new(AnomalyConfig::default());
    let apu = SyntheticApu::with_failures(3, 4);
    let mut flagged = 0;
    for s in apu.samples().take(40_000) {
        engine.observe(&s);
        let r = *tracker.observe(&engine, &s);
        for i in 0..N_SENSORS {
            assert!(r.pattern_seconds[i] <= tracker.age() && r.value_seconds[i] <= tracker.age());
        }
        flagged += usize::from(r.pattern_seconds.iter().any(|&d| d > 0));
    }
    assert!(flagged > 0);
}

#[test]
fn latency_is_not_part_of_the_record_file() {
    let stream = separable_stream(50, 1, 0, None);
    let (_, mut records) = prequential_run(&mut ModelSpec::new(ModelFamily::Htc).build().unwrap(), stream).unwrap();
    records[0].latency = Duration::from_secs(3);
    let line = serde_json::to_string(&ReportRecord::join(&records[0], None)).unwrap();
    assert!(!line.contains("latency") && !line.contains("text"));
}
