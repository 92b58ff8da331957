//! Sliding-window feature engineering.
//!
//! Every signal feeds four windows (one per calibrated length). Each full
//! window contributes six statistics (mean, population standard deviation,
//! three nearest-rank quartiles and a spectral magnitude), so a sample
//! expands to 16 raw values plus 16 x 4 x 6 = 384 engineered values.
//!
//! Feature names serialize as `<sensor>|<metric>|<window>`, e.g.
//! `Reservoirs|fft|W_q1`; raw readings use `<sensor>|raw|none`.

mod order;
mod spectral;
mod window;

pub use order::OrderStatTree;
pub use spectral::SpectralSummary;
pub use window::SlidingWindow;

use crate::calibrate::WindowSpec;
use crate::ingest::{RawSample, Sequenced};
use crate::sensor::{Sensor, N_SENSORS};
use serde::{Deserialize, Serialize};
use spectral::SpectrumWorkspace;
use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FeatureError {
    #[error("window of length {0} is too short (need at least 2)")]
    WindowTooShort(usize),
    #[error("cannot parse feature name `{0}`")]
    BadName(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Raw,
    Avg,
    Std,
    Q1,
    Q2,
    Q3,
    Fft,
}

impl Metric {
    pub const ENGINEERED: [Metric; 6] = [Metric::Avg, Metric::Std, Metric::Q1, Metric::Q2, Metric::Q3, Metric::Fft];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Raw => "raw",
            Metric::Avg => "avg",
            Metric::Std => "std",
            Metric::Q1 => "q1",
            Metric::Q2 => "q2",
            Metric::Q3 => "q3",
            Metric::Fft => "fft",
        }
    }

    /// Display form used in rendered text.
    pub fn label(self) -> &'static str {
        match self {
            Metric::Raw => "Raw value",
            Metric::Avg => "Average",
            Metric::Std => "Standard deviation",
            Metric::Q1 => "Q1",
            Metric::Q2 => "Q2",
            Metric::Q3 => "Q3",
            Metric::Fft => "FFT",
        }
    }
}

impl FromStr for Metric {
    type Err = FeatureError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [Metric::Raw, Metric::Avg, Metric::Std, Metric::Q1, Metric::Q2, Metric::Q3, Metric::Fft]
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| FeatureError::BadName(s.to_string()))
    }
}

/// Which calibrated length a window uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum WindowKind {
    #[serde(rename = "W_avg")]
    Avg,
    #[serde(rename = "W_q1")]
    Q1,
    #[serde(rename = "W_q2")]
    Q2,
    #[serde(rename = "W_q3")]
    Q3,
}

impl WindowKind {
    pub const ALL: [WindowKind; 4] = [WindowKind::Avg, WindowKind::Q1, WindowKind::Q2, WindowKind::Q3];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            WindowKind::Avg => "W_avg",
            WindowKind::Q1 => "W_q1",
            WindowKind::Q2 => "W_q2",
            WindowKind::Q3 => "W_q3",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            WindowKind::Avg => "AVG",
            WindowKind::Q1 => "Q1",
            WindowKind::Q2 => "Q2",
            WindowKind::Q3 => "Q3",
        }
    }

    pub fn length(self, spec: &WindowSpec) -> usize {
        spec.lengths()[self.index()]
    }
}

/// `(sensor, metric, window)`; the window is `None` exactly for raw values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FeatureName {
    sensor: Sensor,
    metric: Metric,
    window: Option<WindowKind>,
}

impl FeatureName {
    pub fn raw(sensor: Sensor) -> Self {
        Self { sensor, metric: Metric::Raw, window: None }
    }

    /// Panics if `metric` is `Raw`.
    pub fn engineered(sensor: Sensor, metric: Metric, window: WindowKind) -> Self {
        assert!(metric != Metric::Raw, "raw features carry no window");
        Self { sensor, metric, window: Some(window) }
    }

    pub fn sensor(&self) -> Sensor {
        self.sensor
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn window(&self) -> Option<WindowKind> {
        self.window
    }

    pub fn is_raw(&self) -> bool {
        self.metric == Metric::Raw
    }

    /// e.g. "FFT of Reservoirs from Q1-size sliding window".
    pub fn describe(&self) -> String {
        match self.window {
            None => format!("{} of {}", self.metric.label(), self.sensor),
            Some(w) => format!("{} of {} from {}-size sliding window", self.metric.label(), self.sensor, w.label()),
        }
    }
}

impl fmt::Display for FeatureName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let window = self.window.map_or("none", WindowKind::as_str);
        write!(f, "{}|{}|{}", self.sensor, self.metric.as_str(), window)
    }
}

impl FromStr for FeatureName {
    type Err = FeatureError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || FeatureError::BadName(s.to_string());
        let mut parts = s.split('|');
        let (Some(sensor), Some(metric), Some(window), None) = (parts.next(), parts.next(), parts.next(), parts.next())
        else {
            return Err(bad());
        };
        let sensor: Sensor = sensor.parse().map_err(|_| bad())?;
        if sensor.name() != sensor_canonical(s) {
            return Err(bad());
        }
        let metric: Metric = metric.parse().map_err(|_| bad())?;
        let window = match window {
            "none" => None,
            w => Some(WindowKind::ALL.into_iter().find(|k| k.as_str() == w).ok_or_else(bad)?),
        };
        if (metric == Metric::Raw) != window.is_none() {
            return Err(bad());
        }
        Ok(Self { sensor, metric, window })
    }
}

fn sensor_canonical(s: &str) -> &str {
    s.split('|').next().unwrap_or("")
}

impl Serialize for FeatureName {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for FeatureName {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Ordered, immutable list of feature names shared by every vector of a stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureSchema {
    names: Vec<FeatureName>,
    index: HashMap<FeatureName, usize>,
}

impl FeatureSchema {
    pub fn new(names: Vec<FeatureName>) -> Self {
        let index = names.iter().enumerate().map(|(i, n)| (*n, i)).collect();
        Self { names, index }
    }

    /// The 400-entry layout: raw values first, then per sensor, per window,
    /// the six engineered metrics.
    pub fn full() -> Self {
        let mut names: Vec<FeatureName> = Sensor::ALL.into_iter().map(FeatureName::raw).collect();
        for sensor in Sensor::ALL {
            for window in WindowKind::ALL {
                for metric in Metric::ENGINEERED {
                    names.push(FeatureName::engineered(sensor, metric, window));
                }
            }
        }
        Self::new(names)
    }

    pub fn names(&self) -> &[FeatureName] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn position(&self, name: &FeatureName) -> Option<usize> {
        self.index.get(name).copied()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub seq_id: u64,
    pub timestamp: i64,
    schema: Arc<FeatureSchema>,
    values: Vec<f64>,
}

impl FeatureVector {
    pub fn new(seq_id: u64, timestamp: i64, schema: Arc<FeatureSchema>, values: Vec<f64>) -> Self {
        assert_eq!(schema.len(), values.len(), "feature vector length must match its schema");
        Self { seq_id, timestamp, schema, values }
    }

    pub fn schema(&self) -> &Arc<FeatureSchema> {
        &self.schema
    }

    pub fn names(&self) -> &[FeatureName] {
        self.schema.names()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, name: &FeatureName) -> Option<f64> {
        self.schema.position(name).map(|i| self.values[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&FeatureName, f64)> + '_ {
        self.schema.names().iter().zip(self.values.iter().copied())
    }
}

impl Sequenced for FeatureVector {
    fn seq_id(&self) -> u64 {
        self.seq_id
    }
}

/// Index into the sorted window for quartile `k` of `n` elements:
/// `round(k * n / 4)` (half away from zero), clamped to `n - 1`.
pub fn quartile_index(k: usize, n: usize) -> usize {
    let idx = ((k * n) as f64 / 4.0).round() as usize;
    idx.min(n.saturating_sub(1))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowStats {
    pub avg: f64,
    pub std: f64,
    pub q1: f64,
    pub q2: f64,
    pub q3: f64,
}

/// Batch statistics of one window (sorting a copy).
pub fn window_stats(window: &[f64]) -> Result<WindowStats, FeatureError> {
    let n = window.len();
    if n < 2 {
        return Err(FeatureError::WindowTooShort(n));
    }
    let avg = window.iter().sum::<f64>() / n as f64;
    let var = window.iter().map(|x| (x - avg) * (x - avg)).sum::<f64>() / n as f64;
    let mut sorted = window.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q = |k| sorted[quartile_index(k, n)];
    Ok(WindowStats { avg, std: var.sqrt(), q1: q(1), q2: q(2), q3: q(3) })
}

/// Largest non-DC DFT magnitude of the window (no zero padding).
pub fn fft_feature(window: &[f64]) -> Result<f64, FeatureError> {
    spectral_feature(window, SpectralSummary::MaxMagnitude)
}

pub fn spectral_feature(window: &[f64], summary: SpectralSummary) -> Result<f64, FeatureError> {
    if window.len() < 2 {
        return Err(FeatureError::WindowTooShort(window.len()));
    }
    let mut ws = SpectrumWorkspace::default();
    Ok(ws.summarize(window.iter().copied(), window.len(), summary))
}

/// Outcome of feeding one sample to the engine.
#[derive(Debug, Clone, PartialEq)]
pub enum Push {
    /// Windows still filling: `seen` of `needed` samples.
    ColdStart { seen: usize, needed: usize },
    Ready(FeatureVector),
}

impl Push {
    pub fn into_vector(self) -> Option<FeatureVector> {
        match self {
            Push::Ready(v) => Some(v),
            Push::ColdStart { .. } => None,
        }
    }
}

/// Per-stream window state: 16 signals x 4 windows.
#[derive(Debug, Clone)]
pub struct FeatureEngine {
    spec: WindowSpec,
    summary: SpectralSummary,
    schema: Arc<FeatureSchema>,
    windows: Vec<SlidingWindow>,
    seen: usize,
    spectrum: SpectrumWorkspace,
}

impl FeatureEngine {
    pub fn new(spec: WindowSpec, summary: SpectralSummary) -> Self {
        let windows = Sensor::ALL
            .iter()
            .flat_map(|_| WindowKind::ALL.map(|k| SlidingWindow::new(k.length(&spec))))
            .collect();
        Self {
            spec,
            summary,
            schema: Arc::new(FeatureSchema::full()),
            windows,
            seen: 0,
            spectrum: SpectrumWorkspace::default(),
        }
    }

    pub fn spec(&self) -> &WindowSpec {
        &self.spec
    }

    pub fn schema(&self) -> &Arc<FeatureSchema> {
        &self.schema
    }

    pub fn window(&self, sensor: Sensor, kind: WindowKind) -> &SlidingWindow {
        &self.windows[sensor.index() * 4 + kind.index()]
    }

    /// Number of samples observed so far.
    pub fn seen(&self) -> usize {
        self.seen
    }

    /// True once every window is full and vectors can be emitted.
    pub fn is_warm(&self) -> bool {
        self.seen >= self.spec.max_len()
    }

    /// Slides every window forward by one sample without computing features.
    /// Returns whether the engine is warm afterwards.
    pub fn observe(&mut self, sample: &RawSample) -> bool {
        for sensor in Sensor::ALL {
            let x = sample.value(sensor);
            for kind in WindowKind::ALL {
                self.windows[sensor.index() * 4 + kind.index()].push(x);
            }
        }
        self.seen += 1;
        self.is_warm()
    }

    /// Observes `sample` and, once warm, emits its full feature vector.
    pub fn push(&mut self, sample: &RawSample) -> Push {
        if !self.observe(sample) {
            return Push::ColdStart { seen: self.seen, needed: self.spec.max_len() };
        }
        Push::Ready(self.emit(sample).expect("warm engine"))
    }

    /// Full feature vector for the most recently observed `sample`.
    pub fn emit(&mut self, sample: &RawSample) -> Option<FeatureVector> {
        if !self.is_warm() {
            return None;
        }
        let mut values = Vec::with_capacity(self.schema.len());
        values.extend_from_slice(&sample.values[..N_SENSORS]);
        for w in &self.windows {
            let fft = if w.is_constant() {
                0.0
            } else {
                self.spectrum.summarize(w.values(), w.len(), self.summary)
            };
            values.extend_from_slice(&[w.mean(), w.std(), w.quartile(1), w.quartile(2), w.quartile(3), fft]);
        }
        Some(FeatureVector::new(sample.seq_id, sample.timestamp, Arc::clone(&self.schema), values))
    }

    /// Feature vector restricted to `schema` for the most recently observed
    /// `sample`; only the requested metrics are computed.
    pub fn emit_for(&mut self, sample: &RawSample, schema: &Arc<FeatureSchema>) -> Option<FeatureVector> {
        if !self.is_warm() {
            return None;
        }
        let values = schema
            .names()
            .iter()
            .map(|name| {
                let Some(kind) = name.window() else {
                    return sample.value(name.sensor());
                };
                let w = &self.windows[name.sensor().index() * 4 + kind.index()];
                match name.metric() {
                    Metric::Avg => w.mean(),
                    Metric::Std => w.std(),
                    Metric::Q1 => w.quartile(1),
                    Metric::Q2 => w.quartile(2),
                    Metric::Q3 => w.quartile(3),
                    Metric::Fft if w.is_constant() => 0.0,
                    Metric::Fft => self.spectrum.summarize(w.values(), w.len(), self.summary),
                    Metric::Raw => sample.value(name.sensor()),
                }
            })
            .collect();
        Some(FeatureVector::new(sample.seq_id, sample.timestamp, Arc::clone(schema), values))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    /// O(w^2) DFT; maximum magnitude over k = 1..=w/2.
    fn direct_dft_max(x: &[f64]) -> f64 {
        let w = x.len();
        (1..=w / 2)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (t, v) in x.iter().enumerate() {
                    let angle = -2.0 * PI * (k * t) as f64 / w as f64;
                    re += v * angle.cos();
                    im += v * angle.sin();
                }
                (re * re + im * im).sqrt()
            })
            .fold(0.0, f64::max)
    }

    fn sample(seq: u64, v: f64) -> RawSample {
        RawSample { seq_id: seq, timestamp: seq as i64, values: [v; N_SENSORS] }
    }

    #[test]
    fn names_round_trip() {
        let schema = FeatureSchema::full();
        assert_eq!(schema.len(), 400);
        for name in schema.names() {
            let text = name.to_string();
            assert_eq!(text.parse::<FeatureName>().unwrap(), *name, "{text}");
        }
        let n: FeatureName = "Reservoirs|fft|W_q1".parse().unwrap();
        assert_eq!(n, FeatureName::engineered(Sensor::Reservoirs, Metric::Fft, WindowKind::Q1));
        assert_eq!(n.describe(), "FFT of Reservoirs from Q1-size sliding window");
        for bad in ["Reservoirs|raw|W_q1", "Reservoirs|fft|none", "Nope|fft|W_q1", "Reservoirs|fft", "reservoirs|fft|W_q1"] {
            assert!(bad.parse::<FeatureName>().is_err(), "{bad}");
        }
    }

    #[test]
    fn stats_of_small_window() {
        let s = window_stats(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(s.avg, 2.5);
        assert!((s.std - 1.118_033_988_749_895).abs() < 1e-12);
        assert_eq!((s.q1, s.q2, s.q3), (2.0, 3.0, 4.0));
        assert_eq!(window_stats(&[1.0]), Err(FeatureError::WindowTooShort(1)));
    }

    #[test]
    fn constant_window_stats() {
        let s = window_stats(&[7.5; 9]).unwrap();
        assert_eq!((s.avg, s.std, s.q1, s.q2, s.q3), (7.5, 0.0, 7.5, 7.5, 7.5));
    }

    #[test]
    fn quartile_indices() {
        assert_eq!(quartile_index(1, 4), 1);
        assert_eq!(quartile_index(3, 4), 3);
        assert_eq!(quartile_index(4, 4), 3);
        // 116 / 4 = 29, 3 * 116 / 4 = 87
        assert_eq!(quartile_index(1, 116), 29);
        assert_eq!(quartile_index(3, 116), 87);
        // 1 * 1399 / 4 = 349.75 -> 350; 2 * 1399 / 4 = 699.5 -> 700
        assert_eq!(quartile_index(1, 1399), 350);
        assert_eq!(quartile_index(2, 1399), 700);
        assert_eq!(quartile_index(2, 5), 3);
    }

    #[test]
    fn fft_of_constant_is_zero() {
        assert!(fft_feature(&[3.0; 16]).unwrap() < 1e-12);
        assert_eq!(fft_feature(&[1.0]), Err(FeatureError::WindowTooShort(1)));
    }

    #[test]
    fn fft_of_exact_bin_sinusoid() {
        let x: Vec<f64> = (0..8).map(|t| (2.0 * PI * t as f64 / 4.0).sin()).collect();
        assert!((direct_dft_max(&x) - 4.0).abs() < 1e-12);
        assert!((fft_feature(&x).unwrap() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn energy_summary() {
        let x: Vec<f64> = (0..8).map(|t| (2.0 * PI * t as f64 / 4.0).sin()).collect();
        // |X_2| = 4 and its mirror bin 6 lies outside 1..=4
        let e = spectral_feature(&x, SpectralSummary::Energy).unwrap();
        assert!((e - 16.0).abs() < 1e-9);
    }

    #[test]
    fn engine_warm_up() {
        let mut engine = FeatureEngine::new(WindowSpec::uniform(2).unwrap(), SpectralSummary::default());
        assert_eq!(engine.push(&sample(0, 1.0)), Push::ColdStart { seen: 1, needed: 2 });
        match engine.push(&sample(1, 3.0)) {
            Push::Ready(fv) => {
                assert_eq!(fv.len(), 400);
                assert_eq!(fv.seq_id, 1);
                let avg = FeatureName::engineered(Sensor::Tp2, Metric::Avg, WindowKind::Q3);
                assert_eq!(fv.get(&avg), Some(2.0));
                assert_eq!(fv.get(&FeatureName::raw(Sensor::Tp2)), Some(3.0));
                let fft = FeatureName::engineered(Sensor::Tp2, Metric::Fft, WindowKind::Avg);
                assert!((fv.get(&fft).unwrap() - 2.0).abs() < 1e-12);
            }
            other => panic!("expected a vector, got {other:?}"),
        }
    }

    #[test]
    fn emission_starts_at_longest_window() {
        let spec = WindowSpec::new(9, 3, 5, 7).unwrap();
        let mut engine = FeatureEngine::new(spec, SpectralSummary::default());
        let first = (0..20u64).find(|&i| matches!(engine.push(&sample(i, i as f64)), Push::Ready(_)));
        assert_eq!(first, Some(8));
    }

    #[test]
    fn restricted_emission_matches_full_vector() {
        let spec = WindowSpec::new(9, 3, 5, 7).unwrap();
        let mut engine = FeatureEngine::new(spec, SpectralSummary::default());
        let names: Vec<FeatureName> = FeatureSchema::full().names().iter().rev().step_by(7).cloned().collect();
        let sub = Arc::new(FeatureSchema::new(names));
        for i in 0..40u64 {
            let mut s = sample(i, 0.0);
            for (j, v) in s.values.iter_mut().enumerate() {
                *v = if j < 8 { ((i * 7 + j as u64) % 13) as f64 * 0.5 } else { ((i + j as u64) % 3 == 0) as u8 as f64 };
            }
            if !engine.observe(&s) {
                assert!(engine.emit_for(&s, &sub).is_none());
                continue;
            }
            let full = engine.emit(&s).unwrap();
            let part = engine.emit_for(&s, &sub).unwrap();
            for (name, v) in part.iter() {
                assert_eq!(full.get(name), Some(v), "{name}");
            }
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use rand::{Rng, SeedableRng};
        use rand_chacha::ChaCha8Rng;

        fn rel_close(a: f64, b: f64, tol: f64) -> bool {
            (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300) || (a - b).abs() < 1e-300
        }

        /// Relative closeness measured against the magnitude of the window
        /// contents, the scale at which summation rounding arises.
        fn scaled_close(a: f64, b: f64, window: &[f64], tol: f64) -> bool {
            let scale = window.iter().fold(a.abs().max(b.abs()), |m, x| m.max(x.abs()));
            (a - b).abs() <= tol * scale.max(1e-300)
        }

        #[test]
        fn incremental_window_matches_recompute() {
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            for &w in &[2usize, 5, 116, 531] {
                let mut win = SlidingWindow::new(w);
                let mut history: Vec<f64> = Vec::new();
                for _ in 0..10_000 {
                    let x: f64 = rng.random_range(-50.0..50.0) + 1000.0 * (rng.random::<f64>() < 0.01) as u8 as f64;
                    win.push(x);
                    history.push(x);
                    if history.len() >= w {
                        let tail = &history[history.len() - w..];
                        let oracle = window_stats(tail).unwrap();
                        assert!(scaled_close(win.mean(), oracle.avg, tail, 1e-12), "mean {} vs {}", win.mean(), oracle.avg);
                        assert!(scaled_close(win.std(), oracle.std, tail, 1e-12), "std {} vs {}", win.std(), oracle.std);
                        assert_eq!(win.quartile(1), oracle.q1);
                        assert_eq!(win.quartile(2), oracle.q2);
                        assert_eq!(win.quartile(3), oracle.q3);
                    }
                }
            }
        }

        proptest! {
            #[test]
            fn fft_matches_direct_dft(x in proptest::collection::vec(-100.0f64..100.0, 2..300)) {
                let fast = fft_feature(&x).unwrap();
                let slow = direct_dft_max(&x);
                prop_assert!(rel_close(fast, slow, 1e-9) || (fast - slow).abs() < 1e-9, "{} vs {}", fast, slow);
            }

            #[test]
            fn fft_ignores_dc_offset(x in proptest::collection::vec(-10.0f64..10.0, 2..200), c in -1e3f64..1e3) {
                let shifted: Vec<f64> = x.iter().map(|v| v + c).collect();
                let a = fft_feature(&x).unwrap();
                let b = fft_feature(&shifted).unwrap();
                prop_assert!((a - b).abs() <= 1e-9 * (1.0 + c.abs()) * x.len() as f64, "{} vs {}", a, b);
            }

            #[test]
            fn single_replacement_moves_median_one_rank(
                x in proptest::collection::vec(-100.0f64..100.0, 8..64),
                pos in 0usize..64,
                spike in -1e6f64..1e6,
            ) {
                let mut y = x.clone();
                let pos = pos % y.len();
                y[pos] = spike;
                let mut sorted = x.clone();
                sorted.sort_by(f64::total_cmp);
                let k = quartile_index(2, x.len());
                let before = window_stats(&x).unwrap().q2;
                let after = window_stats(&y).unwrap().q2;
                prop_assert!(y.contains(&after));
                let lo = sorted[k.saturating_sub(1)];
                let hi = sorted[(k + 1).min(sorted.len() - 1)];
                prop_assert!(after >= lo && after <= hi, "median {} escaped [{}, {}] (was {})", after, lo, hi, before);
            }

            #[test]
            fn engine_key_order_is_stable(values in proptest::collection::vec(0.0f64..10.0, 6..30)) {
                let mut engine = FeatureEngine::new(WindowSpec::new(3, 2, 2, 4).unwrap(), SpectralSummary::default());
                let mut names: Option<Vec<FeatureName>> = None;
                for (i, v) in values.iter().enumerate() {
                    if let Push::Ready(fv) = engine.push(&sample(i as u64, *v)) {
                        prop_assert_eq!(fv.len(), 400);
                        match &names {
                            None => names = Some(fv.names().to_vec()),
                            Some(n) => prop_assert_eq!(n.as_slice(), fv.names()),
                        }
                    }
                }
            }
        }

        #[test]
        fn engine_matches_batch_recompute() {
            let spec = WindowSpec::new(11, 4, 6, 9).unwrap();
            let mut engine = FeatureEngine::new(spec, SpectralSummary::default());
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let mut history: Vec<[f64; N_SENSORS]> = Vec::new();
            for i in 0..300u64 {
                let mut values = [0.0; N_SENSORS];
                for (j, v) in values.iter_mut().enumerate() {
                    *v = if j < 8 { rng.random_range(0.0..20.0) } else { f64::from(rng.random_bool(0.3) as u8) };
                }
                history.push(values);
                let s = RawSample { seq_id: i, timestamp: i as i64, values };
                let Push::Ready(fv) = engine.push(&s) else { continue };
                for sensor in Sensor::ALL {
                    for kind in WindowKind::ALL {
                        let w = kind.length(&spec);
                        let tail: Vec<f64> = history[history.len() - w..].iter().map(|v| v[sensor.index()]).collect();
                        let st = window_stats(&tail).unwrap();
                        let get = |m| fv.get(&FeatureName::engineered(sensor, m, kind)).unwrap();
                        assert!(scaled_close(get(Metric::Avg), st.avg, &tail, 1e-12));
                        assert!(scaled_close(get(Metric::Std), st.std, &tail, 1e-12), "std {} vs {}", get(Metric::Std), st.std);
                        assert_eq!(get(Metric::Q1), st.q1);
                        assert_eq!(get(Metric::Q2), st.q2);
                        assert_eq!(get(Metric::Q3), st.q3);
                        let dft = direct_dft_max(&tail);
                        assert!((get(Metric::Fft) - dft).abs() <= 1e-9 * dft.max(1.0));
                    }
                }
            }
        }
    }
}
