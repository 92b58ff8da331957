//! Derivation of the four sliding-window lengths from the oscillation period
//! of the analog signals in an initial slice of the stream.

use crate::features::quartile_index;
use crate::ingest::RawSample;
use crate::sensor::Sensor;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CalibrationError {
    #[error("series of length {0} is too short for minimum detection (need at least 3)")]
    SeriesTooShort(usize),
    #[error("no oscillation detected: no signal has two relative minima")]
    NoOscillation,
    #[error("invalid window spec: {0}")]
    InvalidSpec(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("window spec file: {0}")]
    Format(String),
}

/// The four calibrated window lengths, in samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowSpec {
    pub w_avg: usize,
    pub w_q1: usize,
    pub w_q2: usize,
    pub w_q3: usize,
}

impl WindowSpec {
    pub fn new(w_avg: usize, w_q1: usize, w_q2: usize, w_q3: usize) -> Result<Self, CalibrationError> {
        let spec = Self { w_avg, w_q1, w_q2, w_q3 };
        spec.validate()?;
        Ok(spec)
    }

    pub fn uniform(w: usize) -> Result<Self, CalibrationError> {
        Self::new(w, w, w, w)
    }

    pub fn validate(&self) -> Result<(), CalibrationError> {
        if self.lengths().iter().any(|&w| w < 2) {
            return Err(CalibrationError::InvalidSpec(format!("all lengths must exceed 1, got {self:?}")));
        }
        Ok(())
    }

    /// Lengths in window order: avg, Q1, Q2, Q3.
    pub fn lengths(&self) -> [usize; 4] {
        [self.w_avg, self.w_q1, self.w_q2, self.w_q3]
    }

    pub fn max_len(&self) -> usize {
        self.lengths().into_iter().max().unwrap_or(0)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("window spec serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self, CalibrationError> {
        let spec: WindowSpec = toml::from_str(text).map_err(|e| CalibrationError::Format(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self, CalibrationError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), CalibrationError> {
        std::fs::write(path, self.to_toml())?;
        Ok(())
    }
}

/// Sample distances between consecutive relative minima, pooled over signals.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GapList(Vec<usize>);

impl GapList {
    pub fn gaps(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Interior indices `i` with `x[i] < x[i-1]` and `x[i] <= x[i+1]`. A flat
/// valley is reported once, at its leading index.
pub fn find_relative_minima(series: &[f64]) -> Result<Vec<usize>, CalibrationError> {
    if series.len() < 3 {
        return Err(CalibrationError::SeriesTooShort(series.len()));
    }
    Ok((1..series.len() - 1)
        .filter(|&i| series[i] < series[i - 1] && series[i] <= series[i + 1])
        .collect())
}

pub fn minima_gaps(minima: &[usize]) -> Vec<usize> {
    minima.windows(2).map(|w| w[1] - w[0]).collect()
}

pub fn merge_gap_lists<I>(per_feature: I) -> Result<GapList, CalibrationError>
where
    I: IntoIterator<Item = Vec<usize>>,
{
    let merged: Vec<usize> = per_feature.into_iter().flatten().collect();
    if merged.is_empty() {
        return Err(CalibrationError::NoOscillation);
    }
    Ok(GapList(merged))
}

/// Mean and nearest-rank quartiles of the gaps, rounded half away from zero
/// and clamped to at least 2.
pub fn windows_from_gaps(gaps: &GapList) -> Result<WindowSpec, CalibrationError> {
    if gaps.is_empty() {
        return Err(CalibrationError::NoOscillation);
    }
    let mut sorted = gaps.0.clone();
    sorted.sort_unstable();
    let n = sorted.len();
    let mean = sorted.iter().map(|&g| g as f64).sum::<f64>() / n as f64;
    let q = |k: usize| sorted[quartile_index(k, n)];
    let clamp = |w: usize| w.max(2);
    WindowSpec::new(clamp(mean.round() as usize), clamp(q(1)), clamp(q(2)), clamp(q(3)))
}

/// Full calibration over a slice of samples (typically the first two days).
pub fn calibrate_windows(slice: &[RawSample], analog: &[Sensor]) -> Result<WindowSpec, CalibrationError> {
    let mut per_feature = Vec::with_capacity(analog.len());
    for &sensor in analog {
        let series: Vec<f64> = slice.iter().map(|s| s.value(sensor)).collect();
        if series.len() < 3 {
            return Err(CalibrationError::SeriesTooShort(series.len()));
        }
        let gaps = minima_gaps(&find_relative_minima(&series)?);
        log::debug!("calibration: {sensor}: {} gaps", gaps.len());
        per_feature.push(gaps);
    }
    let gaps = merge_gap_lists(per_feature)?;
    let spec = windows_from_gaps(&gaps)?;
    let cap = slice.len();
    if spec.lengths().iter().any(|&w| w > cap) {
        return Err(CalibrationError::InvalidSpec(format!(
            "calibrated lengths {spec:?} exceed the {cap}-sample calibration slice"
        )));
    }
    Ok(spec)
}
