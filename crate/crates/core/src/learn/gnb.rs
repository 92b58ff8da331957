//! Incremental Gaussian naive Bayes.

use super::{check_schema, Classifier, LearnError, Prediction};
use crate::features::{FeatureName, FeatureVector};
use crate::sensor::{argmax_class, ClassLabel, N_CLASSES};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Floor applied to class-conditional variances.
pub const VARIANCE_FLOOR: f64 = 1e-9;

/// Running mean and squared-deviation sum (Welford).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RunningMoments {
    pub count: f64,
    pub mean: f64,
    pub m2: f64,
}

impl RunningMoments {
    pub fn update(&mut self, x: f64, weight: f64) {
        self.count += weight;
        let delta = x - self.mean;
        self.mean += weight * delta / self.count;
        self.m2 += weight * delta * (x - self.mean);
    }

    /// Population variance.
    pub fn variance(&self) -> f64 {
        if self.count > 0.0 {
            (self.m2 / self.count).max(0.0)
        } else {
            0.0
        }
    }
}

/// Class priors plus one Gaussian per (class, feature).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GaussianNb {
    features: Option<Vec<FeatureName>>,
    class_counts: [f64; N_CLASSES],
    /// Indexed `[class][feature]`.
    moments: Vec<Vec<RunningMoments>>,
}

impl GaussianNb {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn class_counts(&self) -> &[f64; N_CLASSES] {
        &self.class_counts
    }

    pub fn total(&self) -> f64 {
        self.class_counts.iter().sum()
    }

    /// Mean and floored variance of `feature` (by position) within `class`.
    pub fn gaussian(&self, class: ClassLabel, feature: usize) -> Option<(f64, f64)> {
        let m = self.moments.get(class.ordinal())?.get(feature)?;
        Some((m.mean, m.variance().max(VARIANCE_FLOOR)))
    }

    /// Log prior plus summed log densities, per class; classes never seen
    /// score negative infinity.
    pub fn log_joint(&self, x: &[f64]) -> [f64; N_CLASSES] {
        let total = self.total();
        let mut scores = [f64::NEG_INFINITY; N_CLASSES];
        for (c, score) in scores.iter_mut().enumerate() {
            if self.class_counts[c] <= 0.0 {
                continue;
            }
            let mut s = (self.class_counts[c] / total).ln();
            for (m, &v) in self.moments[c].iter().zip(x) {
                let var = m.variance().max(VARIANCE_FLOOR);
                let d = v - m.mean;
                s -= 0.5 * ((2.0 * PI * var).ln() + d * d / var);
            }
            *score = s;
        }
        scores
    }
}

impl Classifier for GaussianNb {
    fn predict(&self, fv: &FeatureVector) -> Result<Prediction, LearnError> {
        let features = self.features.as_deref().ok_or(LearnError::NotReady)?;
        check_schema(features, fv)?;
        let scores = self.log_joint(fv.values());
        Ok(Prediction { label: argmax_class(&scores), scores })
    }

    fn learn(&mut self, fv: &FeatureVector, label: ClassLabel) -> Result<(), LearnError> {
        match &self.features {
            Some(f) => check_schema(f, fv)?,
            None => {
                self.features = Some(fv.names().to_vec());
                self.moments = vec![vec![RunningMoments::default(); fv.len()]; N_CLASSES];
            }
        }
        let c = label.ordinal();
        self.class_counts[c] += 1.0;
        for (m, &v) in self.moments[c].iter_mut().zip(fv.values()) {
            m.update(v, 1.0);
        }
        Ok(())
    }
}
