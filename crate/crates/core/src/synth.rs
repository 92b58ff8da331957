//! Seeded synthetic data: an air-production-unit simulator emitting the
//! sixteen monitored signals with failure signatures, and small labelled
//! feature streams for exercising the learners.

use crate::features::{FeatureSchema, FeatureVector};
use crate::ingest::{format_timestamp, EventSet, FailureEvent, IngestError, RawSample, DEFAULT_PRE_WINDOW, SECONDS_PER_DAY};
use crate::sensor::{ClassLabel, Sensor, N_SENSORS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::io::Write;
use std::sync::Arc;

/// Simulator configuration. Failure signatures are active over each event's
/// labelled interval (pre-window included).
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticApu {
    pub seed: u64,
    /// First timestamp (seconds since the epoch).
    pub start: i64,
    /// Number of 1 Hz samples.
    pub seconds: u64,
    pub events: Vec<FailureEvent>,
    pub pre_window: i64,
    /// Standard deviation of the additive analog noise.
    pub noise: f64,
}

/// Midnight, 1 January 2022 (UTC).
pub const DEFAULT_START: i64 = 1_640_995_200;

impl SyntheticApu {
    /// `days` (at least 4) of data with one failure of each kind, on
    /// separate days spread over the span.
    pub fn with_failures(seed: u64, days: u64) -> Self {
        assert!(days >= 4, "failure scenarios need at least four days");
        let start = DEFAULT_START;
        let day = SECONDS_PER_DAY;
        let d = days as i64;
        let at = |frac: f64, hour: i64| start + ((d as f64 * frac) as i64) * day + hour * 3600;
        let events = vec![
            FailureEvent::new(ClassLabel::AirLeakDryer, at(0.45, 14), at(0.45, 20)).expect("valid event"),
            FailureEvent::new(ClassLabel::AirLeakClient, at(0.65, 9), at(0.65, 10)).expect("valid event"),
            FailureEvent::new(ClassLabel::OilLeakCompressor, at(0.85, 6), at(0.85, 6) + day).expect("valid event"),
        ];
        Self { seed, start, seconds: days * day as u64, events, pre_window: DEFAULT_PRE_WINDOW, noise: 0.02 }
    }

    /// Failure-free data.
    pub fn healthy(seed: u64, seconds: u64) -> Self {
        Self { seed, start: DEFAULT_START, seconds, events: Vec::new(), pre_window: DEFAULT_PRE_WINDOW, noise: 0.02 }
    }

    pub fn event_set(&self) -> Result<EventSet, IngestError> {
        EventSet::new(self.events.clone(), self.pre_window)
    }

    fn active_fault(&self, ts: i64) -> ClassLabel {
        self.events
            .iter()
            .find(|e| ts >= e.start - self.pre_window && ts <= e.end)
            .map_or(ClassLabel::NonFailure, |e| e.label)
    }

    /// Generates the whole stream.
    pub fn generate(&self) -> Vec<RawSample> {
        self.samples().collect()
    }

    /// Lazily generates the stream.
    pub fn samples(&self) -> impl Iterator<Item = RawSample> + '_ {
        let mut sim = Simulator::new(self.seed, self.noise);
        (0..self.seconds).map(move |i| {
            let ts = self.start + i as i64;
            let values = sim.step(self.active_fault(ts));
            RawSample { seq_id: i, timestamp: ts, values }
        })
    }
}

/// Compressor cycle state.
struct Simulator {
    rng: ChaCha8Rng,
    noise: Normal<f64>,
    loading: bool,
    phase: f64,
    tp2: f64,
    oil_temp: f64,
    towers: bool,
    since_switch: u64,
}

const LOW_PRESSURE: f64 = 8.2;
const HIGH_PRESSURE: f64 = 10.1;

impl Simulator {
    fn new(seed: u64, noise: f64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            noise: Normal::new(0.0, noise.max(0.0)).expect("finite noise"),
            loading: false,
            phase: 0.0,
            tp2: 9.0,
            oil_temp: 62.0,
            towers: false,
            since_switch: 0,
        }
    }

    fn jitter(&mut self) -> f64 {
        self.noise.sample(&mut self.rng)
    }

    fn step(&mut self, fault: ClassLabel) -> [f64; N_SENSORS] {
        let leak = match fault {
            ClassLabel::AirLeakDryer => 0.0025,
            ClassLabel::AirLeakClient => 0.004,
            _ => 0.0,
        };
        // Pressure dynamics: linear charge while loading, consumption plus
        // leakage otherwise; hysteresis between the two set points.
        if self.loading {
            self.tp2 += 0.0048 * (1.0 + 0.05 * (self.phase * 0.01).sin());
            if self.tp2 >= HIGH_PRESSURE {
                self.loading = false;
                self.since_switch = 0;
                self.towers = !self.towers;
            }
        } else {
            self.tp2 -= 0.0016 + leak;
            if self.tp2 <= LOW_PRESSURE {
                self.loading = true;
                self.since_switch = 0;
            }
        }
        self.phase += 1.0;
        self.since_switch += 1;
        let heat = if self.loading { 0.012 } else { -0.006 };
        self.oil_temp = (self.oil_temp + heat).clamp(55.0, 80.0);
        let oil_leak = fault == ClassLabel::OilLeakCompressor;

        let mut v = [0.0; N_SENSORS];
        let unload_pulse = !self.loading && self.since_switch < 20;
        v[Sensor::DvPressure.index()] = if unload_pulse { 2.0 } else { -0.02 }
            + if fault == ClassLabel::AirLeakDryer { 0.6 + 0.3 * (self.phase * 0.05).sin() } else { 0.0 };
        v[Sensor::Flowmeter.index()] = 19.0 + if fault == ClassLabel::AirLeakClient { 4.0 } else { 0.0 };
        v[Sensor::H1.index()] = if self.loading { 0.1 } else { self.tp2 - 0.3 };
        v[Sensor::MotorCurrent.index()] = if self.loading { 5.8 + if oil_leak { 1.2 } else { 0.0 } } else { 0.04 };
        v[Sensor::OilTemperature.index()] = self.oil_temp + if oil_leak { 9.0 } else { 0.0 };
        v[Sensor::Tp2.index()] = self.tp2;
        v[Sensor::Tp3.index()] = self.tp2 - 0.05;
        v[Sensor::Reservoirs.index()] = self.tp2 - 0.08 - if fault == ClassLabel::AirLeakClient { 0.2 } else { 0.0 };
        for s in Sensor::ALL.into_iter().filter(|s| s.is_analog()) {
            let j = self.jitter();
            v[s.index()] += j;
        }

        let bit = |b: bool| f64::from(u8::from(b));
        v[Sensor::CaudalImpulses.index()] = bit(self.rng.random_bool(0.98));
        v[Sensor::Comp.index()] = bit(!self.loading);
        v[Sensor::DvElectric.index()] = bit(self.loading);
        v[Sensor::Lps.index()] = bit(fault == ClassLabel::AirLeakClient && self.tp2 < 8.4);
        v[Sensor::Mpg.index()] = bit(self.loading && self.tp2 < 8.6);
        v[Sensor::OilLevel.index()] = bit(!(oil_leak && self.rng.random_bool(0.3)));
        v[Sensor::PressureSwitch.index()] = 1.0;
        v[Sensor::Towers.index()] = bit(self.towers);
        v
    }
}

/// Writes samples as a CSV table with the canonical signal names.
pub fn write_csv<W: Write>(samples: &[RawSample], out: W) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["timestamp".to_string()];
    header.extend(Sensor::ALL.iter().map(|s| s.name().to_string()));
    w.write_record(&header)?;
    for s in samples {
        let mut row = vec![format_timestamp(s.timestamp)];
        row.extend(s.values.iter().map(|v| format!("{v}")));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Schema made of the first `n` engineered-feature names (arbitrary but
/// valid names for synthetic vectors).
pub fn synthetic_schema(n: usize) -> Arc<FeatureSchema> {
    Arc::new(FeatureSchema::new(FeatureSchema::full().names()[..n].to_vec()))
}

/// Stream where the label is `x0 > 0` for `x0` uniform on [-1, 1], plus
/// `noise_features` uninformative uniform features. From `invert_at` on, the
/// concept is inverted.
pub fn separable_stream(
    n: usize,
    seed: u64,
    noise_features: usize,
    invert_at: Option<usize>,
) -> Vec<(FeatureVector, ClassLabel)> {
    let schema = synthetic_schema(1 + noise_features);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let values: Vec<f64> = (0..=noise_features).map(|_| rng.random_range(-1.0..1.0)).collect();
            let positive = values[0] > 0.0;
            let inverted = invert_at.is_some_and(|t| i >= t);
            let label = if positive != inverted { ClassLabel::AirLeakDryer } else { ClassLabel::NonFailure };
            (FeatureVector::new(i as u64, i as i64, Arc::clone(&schema), values), label)
        })
        .collect()
}
