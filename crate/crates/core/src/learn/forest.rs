//! Adaptive random forest: online bagging of randomised Hoeffding trees with
//! per-tree change detection and accuracy-weighted voting.

use super::adwin::{DriftSignal, WarnDrift, DELTA_DRIFT, DELTA_WARN};
use super::tree::{HoeffdingTree, TreeParams};
use super::{check_schema, Classifier, LearnError, Prediction};
use crate::features::{FeatureName, FeatureVector};
use crate::sensor::{argmax_class, ClassLabel, N_CLASSES};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Forest hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForestParams {
    /// Number of trees.
    pub n_models: usize,
    /// Size of the random feature subset each leaf may split on.
    pub max_features: usize,
    /// Poisson rate of the per-tree resampling weights.
    pub lambda: f64,
    /// Fading factor of the per-tree test-then-train accuracy; `None`
    /// keeps the lifetime ratio.
    pub accuracy_decay: Option<f64>,
    pub delta_warn: f64,
    pub delta_drift: f64,
    /// Train trees on the rayon pool (results are identical either way).
    pub parallel: bool,
    pub seed: u64,
    /// Parameters of every member tree; `subspace` is overridden by
    /// `max_features`.
    pub tree: TreeParams,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_models: 50,
            max_features: 50,
            lambda: 50.0,
            accuracy_decay: Some(0.999),
            delta_warn: DELTA_WARN,
            delta_drift: DELTA_DRIFT,
            parallel: false,
            seed: 0,
            tree: TreeParams { tie_threshold: 0.05, max_size: 100.0, ..TreeParams::default() },
        }
    }
}

impl ForestParams {
    pub fn validate(&self) -> Result<(), LearnError> {
        let bad = |what: &str| Err(LearnError::InvalidParameter(what.to_string()));
        if self.n_models == 0 {
            return bad("the forest needs at least one tree");
        }
        if self.max_features == 0 {
            return bad("max_features must be positive");
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be positive");
        }
        if let Some(d) = self.accuracy_decay {
            if !(d > 0.0 && d <= 1.0) {
                return bad("accuracy_decay must lie in (0, 1]");
            }
        }
        if !(self.delta_warn > 0.0 && self.delta_warn < 1.0 && self.delta_drift > 0.0 && self.delta_drift < 1.0) {
            return bad("detector confidences must lie in (0, 1)");
        }
        self.member_params().validate()
    }

    fn member_params(&self) -> TreeParams {
        TreeParams { subspace: Some(self.max_features), ..self.tree.clone() }
    }
}

/// One ensemble member with its detectors and voting weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Member {
    tree: HoeffdingTree,
    background: Option<HoeffdingTree>,
    detector: WarnDrift,
    correct: f64,
    evaluated: f64,
    rng: ChaCha8Rng,
    warnings: u64,
    drifts: u64,
}

impl Member {
    fn new(params: &ForestParams, index: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        rng.set_stream(index as u64);
        let tree = Self::fresh_tree(params, &mut rng);
        Self {
            tree,
            background: None,
            detector: WarnDrift::new(params.delta_warn, params.delta_drift),
            correct: 0.0,
            evaluated: 0.0,
            rng,
            warnings: 0,
            drifts: 0,
        }
    }

    fn fresh_tree(params: &ForestParams, rng: &mut ChaCha8Rng) -> HoeffdingTree {
        HoeffdingTree::with_rng(params.member_params(), ChaCha8Rng::seed_from_u64(rng.next_u64()))
    }

    pub fn tree(&self) -> &HoeffdingTree {
        &self.tree
    }

    pub fn background(&self) -> Option<&HoeffdingTree> {
        self.background.as_ref()
    }

    /// Test-then-train accuracy used as the voting weight.
    pub fn weight(&self) -> f64 {
        if self.evaluated > 0.0 {
            self.correct / self.evaluated
        } else {
            0.0
        }
    }

    pub fn warnings(&self) -> u64 {
        self.warnings
    }

    pub fn drifts(&self) -> u64 {
        self.drifts
    }

    fn learn(&mut self, params: &ForestParams, poisson: &Poisson<f64>, x: &[f64], label: ClassLabel) {
        let correct = self.tree.predict_values(x).is_ok_and(|p| p.label == label);
        let decay = params.accuracy_decay.unwrap_or(1.0);
        self.correct = decay * self.correct + f64::from(u8::from(correct));
        self.evaluated = decay * self.evaluated + 1.0;
        match self.detector.update(f64::from(u8::from(!correct))) {
            DriftSignal::Warning => {
                self.warnings += 1;
                self.background = Some(Self::fresh_tree(params, &mut self.rng));
                self.detector.reset_warning();
            }
            DriftSignal::Drift => {
                self.drifts += 1;
                self.tree = match self.background.take() {
                    Some(bg) => bg,
                    None => Self::fresh_tree(params, &mut self.rng),
                };
                self.detector.reset();
                self.correct = 0.0;
                self.evaluated = 0.0;
            }
            DriftSignal::Stable => {}
        }
        let k = poisson.sample(&mut self.rng);
        if k > 0.0 {
            if let Some(bg) = self.background.as_mut() {
                bg.learn_values(x, label, k);
            }
            self.tree.learn_values(x, label, k);
        }
    }
}

/// Sums voter weights per class; the heaviest class wins, ties going to the
/// lowest class ordinal.
pub fn weighted_vote(votes: &[(ClassLabel, f64)]) -> Result<Prediction, LearnError> {
    if votes.is_empty() {
        return Err(LearnError::NotReady);
    }
    let mut scores = [0.0; N_CLASSES];
    for (label, weight) in votes {
        scores[label.ordinal()] += weight;
    }
    Ok(Prediction { label: argmax_class(&scores), scores })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveRandomForest {
    params: ForestParams,
    features: Option<Vec<FeatureName>>,
    members: Vec<Member>,
}

impl AdaptiveRandomForest {
    pub fn new(params: ForestParams) -> Result<Self, LearnError> {
        params.validate()?;
        let members = (0..params.n_models).map(|i| Member::new(&params, i)).collect();
        Ok(Self { params, features: None, members })
    }

    pub fn params(&self) -> &ForestParams {
        &self.params
    }

    pub fn members(&self) -> &[Member] {
        &self.members
    }

    pub fn feature_names(&self) -> Option<&[FeatureName]> {
        self.features.as_deref()
    }

    /// Foreground trees in member order.
    pub fn trees(&self) -> impl Iterator<Item = &HoeffdingTree> {
        self.members.iter().map(|m| &m.tree)
    }

    /// Weighted vote on raw feature values of the learned schema.
    pub fn predict_values(&self, x: &[f64]) -> Result<Prediction, LearnError> {
        let votes: Vec<(ClassLabel, f64)> = self
            .members
            .iter()
            .filter_map(|m| m.tree.predict_values(x).ok().map(|p| (p.label, m.weight())))
            .collect();
        weighted_vote(&votes)
    }

    pub fn learn_values(&mut self, x: &[f64], label: ClassLabel) {
        let poisson = Poisson::new(self.params.lambda).expect("validated lambda");
        let params = &self.params;
        if params.parallel {
            self.members.par_iter_mut().for_each(|m| m.learn(params, &poisson, x, label));
        } else {
            self.members.iter_mut().for_each(|m| m.learn(params, &poisson, x, label));
        }
    }
}

impl Classifier for AdaptiveRandomForest {
    fn predict(&self, fv: &FeatureVector) -> Result<Prediction, LearnError> {
        let features = self.features.as_deref().ok_or(LearnError::NotReady)?;
        check_schema(features, fv)?;
        self.predict_values(fv.values())
    }

    fn learn(&mut self, fv: &FeatureVector, label: ClassLabel) -> Result<(), LearnError> {
        match &self.features {
            Some(f) => check_schema(f, fv)?,
            None => self.features = Some(fv.names().to_vec()),
        }
        self.learn_values(fv.values(), label);
        Ok(())
    }

    fn decision_trees(&self) -> Option<Vec<&HoeffdingTree>> {
        Some(self.trees().collect())
    }
}
