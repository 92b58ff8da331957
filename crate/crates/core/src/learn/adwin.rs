//! Adaptive windowing change detector and a warning/drift pair built on it.

use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

/// Default confidence for drift detection.
pub const DELTA_DRIFT: f64 = 0.002;
/// Default (looser) confidence for warning detection.
pub const DELTA_WARN: f64 = 0.01;

/// Summary of `2^row` consecutive observations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct Bucket {
    total: f64,
    /// Sum of squared deviations from the bucket mean.
    variance: f64,
}

/// Adaptive sliding window over a numeric stream.
///
/// Observations are kept in exponential histogram rows: row `i` holds up to
/// `max_buckets` buckets of `2^i` observations each, oldest first. Every
/// `clock` updates the window is scanned for a split point whose two
/// sub-window means differ beyond the cut threshold; the oldest bucket is
/// dropped while such a split exists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adwin {
    delta: f64,
    clock: u32,
    max_buckets: usize,
    min_window: u64,
    grace_period: u64,
    rows: Vec<VecDeque<Bucket>>,
    width: u64,
    total: f64,
    variance: f64,
    tick: u64,
    detections: u64,
}

impl Adwin {
    pub fn new(delta: f64) -> Self {
        assert!(delta > 0.0 && delta < 1.0, "adwin confidence must lie in (0, 1)");
        Self {
            delta,
            clock: 32,
            max_buckets: 5,
            min_window: 5,
            grace_period: 10,
            rows: vec![VecDeque::new()],
            width: 0,
            total: 0.0,
            variance: 0.0,
            tick: 0,
            detections: 0,
        }
    }

    /// Sets how many updates pass between change checks.
    pub fn with_clock(mut self, clock: u32) -> Self {
        self.clock = clock.max(1);
        self
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Number of observations currently retained.
    pub fn width(&self) -> u64 {
        self.width
    }

    /// Mean of the retained observations (0 for an empty window).
    pub fn estimation(&self) -> f64 {
        if self.width == 0 {
            0.0
        } else {
            self.total / self.width as f64
        }
    }

    /// Population variance of the retained observations.
    pub fn variance(&self) -> f64 {
        if self.width == 0 {
            0.0
        } else {
            self.variance / self.width as f64
        }
    }

    /// Total number of changes detected so far.
    pub fn detections(&self) -> u64 {
        self.detections
    }

    /// Forgets everything but the configuration.
    pub fn reset(&mut self) {
        *self = Self { detections: self.detections, ..Self::new(self.delta).with_clock(self.clock) };
    }

    /// Adds one observation; returns true when a change was detected.
    pub fn update(&mut self, value: f64) -> bool {
        self.width += 1;
        if self.width > 1 {
            let prev = (self.width - 1) as f64;
            let d = value - self.total / prev;
            self.variance += prev * d * d / self.width as f64;
        }
        self.total += value;
        self.rows[0].push_back(Bucket { total: value, variance: 0.0 });
        self.compress();
        self.detect()
    }

    fn compress(&mut self) {
        let mut row = 0;
        while self.rows[row].len() > self.max_buckets {
            let a = self.rows[row].pop_front().expect("row overflow");
            let b = self.rows[row].pop_front().expect("row overflow");
            let n = (1u64 << row) as f64;
            let d = b.total / n - a.total / n;
            let merged = Bucket { total: a.total + b.total, variance: a.variance + b.variance + n * n * d * d / (2.0 * n) };
            if self.rows.len() == row + 1 {
                self.rows.push(VecDeque::new());
            }
            self.rows[row + 1].push_back(merged);
            row += 1;
        }
    }

    fn detect(&mut self) -> bool {
        self.tick += 1;
        if self.tick % u64::from(self.clock) != 0 || self.width <= self.grace_period {
            return false;
        }
        let mut changed = false;
        while self.find_cut() {
            changed = true;
            self.drop_oldest();
        }
        if changed {
            self.detections += 1;
        }
        changed
    }

    /// Scans split points from the oldest bucket forward.
    fn find_cut(&self) -> bool {
        if self.width < 2 * self.min_window {
            return false;
        }
        let (mut n0, mut u0) = (0.0f64, 0.0f64);
        let (mut n1, mut u1) = (self.width as f64, self.total);
        let var = self.variance();
        let delta_prime = (2.0 * (self.width as f64).ln() / self.delta).ln();
        let min = self.min_window as f64;
        let newest = (0, self.rows[0].len().saturating_sub(1));
        for row in (0..self.rows.len()).rev() {
            let n2 = (1u64 << row) as f64;
            for (k, bucket) in self.rows[row].iter().enumerate() {
                if (row, k) == newest {
                    return false;
                }
                n0 += n2;
                n1 -= n2;
                u0 += bucket.total;
                u1 -= bucket.total;
                if n0 < min || n1 < min {
                    continue;
                }
                let m_recip = 1.0 / (n0 - min + 1.0) + 1.0 / (n1 - min + 1.0);
                let epsilon = (2.0 * m_recip * var * delta_prime).sqrt() + 2.0 / 3.0 * delta_prime * m_recip;
                if (u0 / n0 - u1 / n1).abs() > epsilon {
                    return true;
                }
            }
        }
        false
    }

    fn drop_oldest(&mut self) {
        let row = self.rows.len() - 1;
        let bucket = self.rows[row].pop_front().expect("non-empty window");
        let n = (1u64 << row) as f64;
        self.width -= 1u64 << row;
        self.total -= bucket.total;
        if self.width == 0 {
            self.variance = 0.0;
        } else {
            let w = self.width as f64;
            let d = bucket.total / n - self.total / w;
            self.variance = (self.variance - bucket.variance - n * w * d * d / (n + w)).max(0.0);
        }
        while self.rows.len() > 1 && self.rows.last().is_some_and(VecDeque::is_empty) {
            self.rows.pop();
        }
    }
}

/// Detector state after an update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DriftSignal {
    Stable,
    Warning,
    Drift,
}

/// Two adaptive windows over the same stream at different confidences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarnDrift {
    warn: Adwin,
    drift: Adwin,
}

impl Default for WarnDrift {
    fn default() -> Self {
        Self::new(DELTA_WARN, DELTA_DRIFT)
    }
}

impl WarnDrift {
    pub fn new(delta_warn: f64, delta_drift: f64) -> Self {
        Self { warn: Adwin::new(delta_warn), drift: Adwin::new(delta_drift) }
    }

    /// Feeds one value to both detectors; drift takes precedence.
    pub fn update(&mut self, value: f64) -> DriftSignal {
        let warned = self.warn.update(value);
        if self.drift.update(value) {
            DriftSignal::Drift
        } else if warned {
            DriftSignal::Warning
        } else {
            DriftSignal::Stable
        }
    }

    pub fn reset_warning(&mut self) {
        self.warn.reset();
    }

    pub fn reset(&mut self) {
        self.warn.reset();
        self.drift.reset();
    }

    /// Current estimate of the monitored mean (from the drift window).
    pub fn estimation(&self) -> f64 {
        self.drift.estimation()
    }

    pub fn drift_window(&self) -> &Adwin {
        &self.drift
    }
}
