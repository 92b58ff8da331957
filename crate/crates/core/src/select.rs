//! Online variance-threshold feature selection.

use crate::features::{FeatureName, FeatureSchema, FeatureVector, Metric, WindowKind};
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::sync::Arc;
use thiserror::Error;

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error)]
pub enum SelectError {
    #[error("stream schema changed after the variance state was initialised")]
    SchemaMismatch,
    #[error("variance needs at least 2 vectors, saw {0}")]
    NotReady(u64),
    #[error("selected feature `{0}` is absent from the vector")]
    MissingFeature(FeatureName),
    #[error("selection file: {0}")]
    Format(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Candidate-feature presets for the two evaluation scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Scenario {
    /// Mean and standard deviation of the average-length window.
    One,
    /// All six engineered metrics of all four windows.
    Two,
}

impl Scenario {
    pub fn admits(self, name: &FeatureName) -> bool {
        match self {
            Scenario::One => {
                matches!(name.metric(), Metric::Avg | Metric::Std) && name.window() == Some(WindowKind::Avg)
            }
            Scenario::Two => !name.is_raw(),
        }
    }

    pub fn number(self) -> u8 {
        match self {
            Scenario::One => 1,
            Scenario::Two => 2,
        }
    }
}

impl TryFrom<u8> for Scenario {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        match v {
            1 => Ok(Scenario::One),
            2 => Ok(Scenario::Two),
            other => Err(format!("scenario must be 1 or 2, got {other}")),
        }
    }
}

impl From<Scenario> for u8 {
    fn from(s: Scenario) -> u8 {
        s.number()
    }
}

/// Running mean and squared-deviation sum per feature (Welford).
#[derive(Debug, Clone, Default)]
pub struct VarianceState {
    schema: Option<Arc<FeatureSchema>>,
    count: u64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl VarianceState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn update(&mut self, fv: &FeatureVector) -> Result<(), SelectError> {
        match &self.schema {
            None => {
                self.schema = Some(Arc::clone(fv.schema()));
                self.mean = vec![0.0; fv.len()];
                self.m2 = vec![0.0; fv.len()];
            }
            Some(s) if Arc::ptr_eq(s, fv.schema()) || **s == **fv.schema() => {}
            Some(_) => return Err(SelectError::SchemaMismatch),
        }
        self.count += 1;
        let n = self.count as f64;
        for ((mean, m2), &x) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(fv.values()) {
            let delta = x - *mean;
            *mean += delta / n;
            *m2 += delta * (x - *mean);
        }
        Ok(())
    }

    /// Population variance of every feature, in schema order.
    pub fn variances(&self) -> Vec<(FeatureName, f64)> {
        let Some(schema) = &self.schema else {
            return Vec::new();
        };
        let n = self.count.max(1) as f64;
        schema.names().iter().zip(&self.m2).map(|(name, m2)| (*name, (m2 / n).max(0.0))).collect()
    }

    pub fn variance(&self, name: &FeatureName) -> Option<f64> {
        let i = self.schema.as_ref()?.position(name)?;
        Some((self.m2[i] / self.count.max(1) as f64).max(0.0))
    }

    /// Features with variance strictly above `threshold`.
    pub fn selected_features(&self, threshold: f64) -> Result<Selection, SelectError> {
        self.selected_where(threshold, |_| true)
    }

    /// As [`Self::selected_features`], restricted to the scenario's candidates.
    pub fn selected_for(&self, scenario: Scenario, threshold: f64) -> Result<Selection, SelectError> {
        self.selected_where(threshold, |n| scenario.admits(n))
    }

    pub fn selected_where<F>(&self, threshold: f64, admit: F) -> Result<Selection, SelectError>
    where
        F: Fn(&FeatureName) -> bool,
    {
        if self.count < 2 {
            return Err(SelectError::NotReady(self.count));
        }
        let names = self
            .variances()
            .into_iter()
            .filter(|(name, var)| admit(name) && *var > threshold)
            .map(|(name, _)| name)
            .collect();
        Ok(Selection::new(names, threshold, self.count))
    }
}

/// A frozen feature subset, with the threshold and sample count it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    threshold: f64,
    burn_in: u64,
    schema: Arc<FeatureSchema>,
}

impl Selection {
    pub fn new(names: Vec<FeatureName>, threshold: f64, burn_in: u64) -> Self {
        Self { threshold, burn_in, schema: Arc::new(FeatureSchema::new(names)) }
    }

    /// Identity selection over a schema.
    pub fn all(schema: &FeatureSchema) -> Self {
        Self::new(schema.names().to_vec(), f64::NEG_INFINITY, 0)
    }

    pub fn names(&self) -> &[FeatureName] {
        self.schema.names()
    }

    pub fn schema(&self) -> &Arc<FeatureSchema> {
        &self.schema
    }

    pub fn len(&self) -> usize {
        self.schema.len()
    }

    pub fn is_empty(&self) -> bool {
        self.schema.is_empty()
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn burn_in(&self) -> u64 {
        self.burn_in
    }

    /// Precomputes positions against a source schema.
    pub fn projector(&self, source: &FeatureSchema) -> Result<Projector, SelectError> {
        let positions = self
            .names()
            .iter()
            .map(|n| source.position(n).ok_or(SelectError::MissingFeature(*n)))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Projector { positions, schema: Arc::clone(&self.schema) })
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("# threshold={}\n# burn_in={}\n", self.threshold, self.burn_in);
        for name in self.names() {
            out.push_str(&name.to_string());
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, SelectError> {
        let mut threshold = None;
        let mut burn_in = None;
        let mut names = Vec::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            if let Some(header) = line.strip_prefix('#') {
                let (key, value) = header
                    .trim()
                    .split_once('=')
                    .ok_or_else(|| SelectError::Format(format!("bad header `{line}`")))?;
                match key.trim() {
                    "threshold" => threshold = Some(value.trim().parse::<f64>().map_err(|e| SelectError::Format(e.to_string()))?),
                    "burn_in" => burn_in = Some(value.trim().parse::<u64>().map_err(|e| SelectError::Format(e.to_string()))?),
                    other => return Err(SelectError::Format(format!("unknown header key `{other}`"))),
                }
            } else {
                names.push(line.parse::<FeatureName>().map_err(|e| SelectError::Format(e.to_string()))?);
            }
        }
        let threshold = threshold.ok_or_else(|| SelectError::Format("missing threshold header".into()))?;
        let burn_in = burn_in.ok_or_else(|| SelectError::Format("missing burn_in header".into()))?;
        Ok(Self::new(names, threshold, burn_in))
    }

    pub fn save(&self, path: &Path) -> Result<(), SelectError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, SelectError> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

/// Cached index map from a source schema onto a selection.
#[derive(Debug, Clone)]
pub struct Projector {
    positions: Vec<usize>,
    schema: Arc<FeatureSchema>,
}

impl Projector {
    pub fn apply(&self, fv: &FeatureVector) -> FeatureVector {
        let values = self.positions.iter().map(|&i| fv.values()[i]).collect();
        FeatureVector::new(fv.seq_id, fv.timestamp, Arc::clone(&self.schema), values)
    }
}

/// Projection of `fv` onto the selected names, in selection order.
pub fn apply_selection(fv: &FeatureVector, selection: &Selection) -> Result<FeatureVector, SelectError> {
    Ok(selection.projector(fv.schema())?.apply(fv))
}
