//! Incremental classifiers: Gaussian naive Bayes, Hoeffding tree, adaptive
//! Hoeffding tree and adaptive random forest.

pub mod adwin;
pub mod forest;
pub mod gnb;
pub mod tree;

use crate::features::{FeatureName, FeatureVector};
use crate::sensor::{ClassLabel, N_CLASSES};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use thiserror::Error;

pub use adwin::{Adwin, DriftSignal, WarnDrift};
pub use forest::{weighted_vote, AdaptiveRandomForest, ForestParams, Member};
pub use gnb::GaussianNb;
pub use tree::{HoeffdingTree, Leaf, Node, NodeMonitor, PathStep, Split, SplitEvent, TreeParams};

#[derive(Debug, Error)]
pub enum LearnError {
    #[error("model has not learned from any sample yet")]
    NotReady,
    #[error("feature schema changed: expected {expected} features, found {found} (first difference at position {position})")]
    SchemaMismatch { expected: usize, found: usize, position: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Predicted class with per-class scores (meaning depends on the model).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: ClassLabel,
    pub scores: [f64; N_CLASSES],
}

/// Anytime incremental classifier over a fixed feature schema.
pub trait Classifier {
    /// Predicts without modifying the model.
    fn predict(&self, fv: &FeatureVector) -> Result<Prediction, LearnError>;
    /// Updates the model with one labelled sample.
    fn learn(&mut self, fv: &FeatureVector, label: ClassLabel) -> Result<(), LearnError>;
    /// Decision trees whose paths explain predictions; `None` for models
    /// without them.
    fn decision_trees(&self) -> Option<Vec<&HoeffdingTree>> {
        None
    }
}

/// `sqrt(R^2 ln(1/delta) / (2n))`.
pub fn hoeffding_bound(range: f64, delta: f64, n: f64) -> Result<f64, LearnError> {
    if !(range > 0.0 && range.is_finite()) {
        return Err(LearnError::InvalidParameter(format!("range must be positive, got {range}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(LearnError::InvalidParameter(format!("confidence must lie in (0, 1), got {delta}")));
    }
    if !(n >= 1.0) {
        return Err(LearnError::InvalidParameter(format!("observation count must be at least 1, got {n}")));
    }
    Ok((range * range * (1.0 / delta).ln() / (2.0 * n)).sqrt())
}

pub(crate) fn check_schema(expected: &[FeatureName], fv: &FeatureVector) -> Result<(), LearnError> {
    let found = fv.names();
    if std::ptr::eq(expected, found) || expected == found {
        return Ok(());
    }
    let position = expected.iter().zip(found).take_while(|(a, b)| a == b).count();
    Err(LearnError::SchemaMismatch { expected: expected.len(), found: found.len(), position })
}

/// The four learner families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelFamily {
    Gnb,
    Htc,
    Hatc,
    Arfc,
}

impl ModelFamily {
    pub const ALL: [ModelFamily; 4] = [ModelFamily::Gnb, ModelFamily::Htc, ModelFamily::Hatc, ModelFamily::Arfc];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelFamily::Gnb => "gnb",
            ModelFamily::Htc => "htc",
            ModelFamily::Hatc => "hatc",
            ModelFamily::Arfc => "arfc",
        }
    }

    pub fn is_tree_based(self) -> bool {
        self != ModelFamily::Gnb
    }
}

impl fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelFamily {
    type Err = LearnError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ModelFamily::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| LearnError::InvalidParameter(format!("unknown model family {s:?}")))
    }
}

/// Tunable hyperparameters, named as in the tuning grids. Unset values take
/// the family default.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hyperparameters {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub depth: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tiethreshold: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub maxsize: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub models: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub features: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
}

impl Hyperparameters {
    /// Best values reported for each family.
    pub fn defaults(family: ModelFamily) -> Self {
        match family {
            ModelFamily::Gnb => Self::default(),
            ModelFamily::Htc => Self { depth: Some(50), tiethreshold: Some(0.5), maxsize: Some(50.0), ..Self::default() },
            ModelFamily::Hatc => Self { depth: Some(50), tiethreshold: Some(0.5), maxsize: Some(100.0), ..Self::default() },
            ModelFamily::Arfc => Self { models: Some(50), features: Some(50), lambda: Some(50.0), ..Self::default() },
        }
    }

    /// Values set here override `base`.
    pub fn overlay(&self, base: &Self) -> Self {
        Self {
            depth: self.depth.or(base.depth),
            tiethreshold: self.tiethreshold.or(base.tiethreshold),
            maxsize: self.maxsize.or(base.maxsize),
            models: self.models.or(base.models),
            features: self.features.or(base.features),
            lambda: self.lambda.or(base.lambda),
        }
    }

    /// Rejects hyperparameters the family does not have.
    pub fn validate_for(&self, family: ModelFamily) -> Result<(), LearnError> {
        let tree = self.depth.is_some() || self.tiethreshold.is_some() || self.maxsize.is_some();
        let forest = self.models.is_some() || self.features.is_some() || self.lambda.is_some();
        let bad = match family {
            ModelFamily::Gnb => tree || forest,
            ModelFamily::Htc | ModelFamily::Hatc => forest,
            ModelFamily::Arfc => tree,
        };
        if bad {
            return Err(LearnError::InvalidParameter(format!("hyperparameters {self} do not apply to {family}")));
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        *self == Self::default()
    }
}

impl fmt::Display for Hyperparameters {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        if let Some(v) = self.depth {
            parts.push(format!("depth={v}"));
        }
        if let Some(v) = self.tiethreshold {
            parts.push(format!("tiethreshold={v}"));
        }
        if let Some(v) = self.maxsize {
            parts.push(format!("maxsize={v}"));
        }
        if let Some(v) = self.models {
            parts.push(format!("models={v}"));
        }
        if let Some(v) = self.features {
            parts.push(format!("features={v}"));
        }
        if let Some(v) = self.lambda {
            parts.push(format!("lambda={v}"));
        }
        if parts.is_empty() {
            f.write_str("(none)")
        } else {
            f.write_str(&parts.join(" "))
        }
    }
}

/// Model family plus every setting needed to build a fresh instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub family: ModelFamily,
    #[serde(default)]
    pub hyperparameters: Hyperparameters,
    #[serde(default)]
    pub seed: u64,
    /// Fading factor of forest member accuracies; `None` selects lifetime
    /// ratios.
    #[serde(default = "default_decay")]
    pub accuracy_decay: Option<f64>,
    /// Train forest members on the thread pool.
    #[serde(default)]
    pub parallel: bool,
}

fn default_decay() -> Option<f64> {
    ForestParams::default().accuracy_decay
}

impl ModelSpec {
    pub fn new(family: ModelFamily) -> Self {
        Self { family, hyperparameters: Hyperparameters::default(), seed: 0, accuracy_decay: default_decay(), parallel: false }
    }

    pub fn with_hyperparameters(mut self, h: Hyperparameters) -> Self {
        self.hyperparameters = h;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Hyperparameters after filling unset values with family defaults.
    pub fn resolved(&self) -> Hyperparameters {
        self.hyperparameters.overlay(&Hyperparameters::defaults(self.family))
    }

    pub fn tree_params(&self) -> TreeParams {
        let h = self.resolved();
        let base = TreeParams::default();
        TreeParams {
            depth_limit: h.depth.unwrap_or(base.depth_limit),
            tie_threshold: h.tiethreshold.unwrap_or(base.tie_threshold),
            max_size: h.maxsize.unwrap_or(base.max_size),
            adaptive: self.family == ModelFamily::Hatc,
            seed: self.seed,
            ..base
        }
    }

    pub fn forest_params(&self) -> ForestParams {
        let h = self.resolved();
        let base = ForestParams::default();
        ForestParams {
            n_models: h.models.unwrap_or(base.n_models),
            max_features: h.features.unwrap_or(base.max_features),
            lambda: h.lambda.unwrap_or(base.lambda),
            accuracy_decay: self.accuracy_decay,
            parallel: self.parallel,
            seed: self.seed,
            ..base
        }
    }

    pub fn build(&self) -> Result<Model, LearnError> {
        self.hyperparameters.validate_for(self.family)?;
        Ok(match self.family {
            ModelFamily::Gnb => Model::Gnb(GaussianNb::new()),
            ModelFamily::Htc => Model::Htc(HoeffdingTree::new(self.tree_params())?),
            ModelFamily::Hatc => Model::Hatc(HoeffdingTree::new(self.tree_params())?),
            ModelFamily::Arfc => Model::Arfc(AdaptiveRandomForest::new(self.forest_params())?),
        })
    }
}

/// Any of the four learners.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", content = "state", rename_all = "lowercase")]
pub enum Model {
    Gnb(GaussianNb),
    Htc(HoeffdingTree),
    Hatc(HoeffdingTree),
    Arfc(AdaptiveRandomForest),
}

impl Model {
    pub fn family(&self) -> ModelFamily {
        match self {
            Model::Gnb(_) => ModelFamily::Gnb,
            Model::Htc(_) => ModelFamily::Htc,
            Model::Hatc(_) => ModelFamily::Hatc,
            Model::Arfc(_) => ModelFamily::Arfc,
        }
    }

    fn inner(&self) -> &dyn Classifier {
        match self {
            Model::Gnb(m) => m,
            Model::Htc(m) | Model::Hatc(m) => m,
            Model::Arfc(m) => m,
        }
    }

    fn inner_mut(&mut self) -> &mut dyn Classifier {
        match self {
            Model::Gnb(m) => m,
            Model::Htc(m) | Model::Hatc(m) => m,
            Model::Arfc(m) => m,
        }
    }
}

impl Classifier for Model {
    fn predict(&self, fv: &FeatureVector) -> Result<Prediction, LearnError> {
        self.inner().predict(fv)
    }

    fn learn(&mut self, fv: &FeatureVector, label: ClassLabel) -> Result<(), LearnError> {
        self.inner_mut().learn(fv, label)
    }

    fn decision_trees(&self) -> Option<Vec<&HoeffdingTree>> {
        self.inner().decision_trees()
    }
}

impl Classifier for Box<dyn Classifier + Send> {
    fn predict(&self, fv: &FeatureVector) -> Result<Prediction, LearnError> {
        (**self).predict(fv)
    }

    fn learn(&mut self, fv: &FeatureVector, label: ClassLabel) -> Result<(), LearnError> {
        (**self).learn(fv, label)
    }

    fn decision_trees(&self) -> Option<Vec<&HoeffdingTree>> {
        (**self).decision_trees()
    }
}

/// Current checkpoint format version.
pub const CHECKPOINT_VERSION: u32 = 1;

/// Versioned snapshot of a model, sufficient to resume learning exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub model: Model,
}

impl Checkpoint {
    pub fn new(model: Model) -> Self {
        Self { version: CHECKPOINT_VERSION, model }
    }

    pub fn to_json(&self) -> Result<String, LearnError> {
        serde_json::to_string(self).map_err(|e| LearnError::Checkpoint(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self, LearnError> {
        let mut de = serde_json::Deserializer::from_str(text);
        de.disable_recursion_limit();
        let cp = Self::deserialize(&mut de).map_err(|e| LearnError::Checkpoint(e.to_string()))?;
        de.end().map_err(|e| LearnError::Checkpoint(e.to_string()))?;
        if cp.version != CHECKPOINT_VERSION {
            return Err(LearnError::Checkpoint(format!("unsupported checkpoint version {}", cp.version)));
        }
        Ok(cp)
    }

    pub fn save(&self, path: &Path) -> Result<(), LearnError> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, LearnError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
