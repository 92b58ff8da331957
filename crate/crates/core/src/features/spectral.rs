//! Scalar spectral summary of a window.

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::sync::Arc;

/// How the non-DC magnitude spectrum collapses to one feature value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectralSummary {
    /// Largest `|X_k|` over `k = 1..=w/2`.
    #[default]
    MaxMagnitude,
    /// `sum |X_k|^2` over `k = 1..=w/2`.
    Energy,
}

impl SpectralSummary {
    pub(crate) fn reduce(self, spectrum: &[Complex<f64>]) -> f64 {
        let half = spectrum.len() / 2;
        let bins = &spectrum[1..=half];
        match self {
            SpectralSummary::MaxMagnitude => bins.iter().map(|c| c.norm()).fold(0.0, f64::max),
            SpectralSummary::Energy => bins.iter().map(|c| c.norm_sqr()).sum(),
        }
    }
}

/// Cached FFT plans and buffers keyed by window length.
pub(crate) struct SpectrumWorkspace {
    planner: FftPlanner<f64>,
    plans: HashMap<usize, (Arc<dyn Fft<f64>>, Vec<Complex<f64>>)>,
    buffer: Vec<Complex<f64>>,
}

impl Default for SpectrumWorkspace {
    fn default() -> Self {
        Self { planner: FftPlanner::new(), plans: HashMap::new(), buffer: Vec::new() }
    }
}

impl std::fmt::Debug for SpectrumWorkspace {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpectrumWorkspace").field("lengths", &self.plans.keys().collect::<Vec<_>>()).finish()
    }
}

impl Clone for SpectrumWorkspace {
    fn clone(&self) -> Self {
        Self::default()
    }
}

impl SpectrumWorkspace {
    /// Transforms `values` (chronological order) and summarises the result.
    pub(crate) fn summarize<I>(&mut self, values: I, len: usize, summary: SpectralSummary) -> f64
    where
        I: IntoIterator<Item = f64>,
    {
        let planner = &mut self.planner;
        let (fft, scratch) = self.plans.entry(len).or_insert_with(|| {
            let fft = planner.plan_fft_forward(len);
            let scratch = vec![Complex::default(); fft.get_inplace_scratch_len()];
            (fft, scratch)
        });
        self.buffer.clear();
        self.buffer.extend(values.into_iter().map(|v| Complex::new(v, 0.0)));
        debug_assert_eq!(self.buffer.len(), len);
        fft.process_with_scratch(&mut self.buffer, scratch);
        summary.reduce(&self.buffer)
    }
}
