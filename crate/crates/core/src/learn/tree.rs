//! Hoeffding tree with Gaussian numeric split statistics, optionally with
//! per-node change detection and background subtrees.

use super::adwin::{DriftSignal, WarnDrift, DELTA_DRIFT, DELTA_WARN};
use super::{check_schema, hoeffding_bound, Classifier, LearnError, Prediction};
use crate::features::{FeatureName, FeatureVector};
use crate::sensor::{argmax_class, ClassLabel, N_CLASSES};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Hyperparameters shared by the plain and adaptive trees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TreeParams {
    /// Maximum depth; the root sits at depth 0.
    pub depth_limit: usize,
    /// Tie threshold: split when the Hoeffding bound drops below it.
    pub tie_threshold: f64,
    /// Budget for active-leaf statistics, in units of 10^6 bytes.
    pub max_size: f64,
    /// Weight a leaf accumulates between split evaluations.
    pub grace_period: f64,
    /// Confidence of the Hoeffding bound.
    pub delta: f64,
    /// Candidate thresholds per feature between the observed min and max.
    pub split_points: usize,
    /// Smallest share of the leaf weight each branch must receive.
    pub min_branch_fraction: f64,
    /// Monitor internal nodes and grow background subtrees.
    pub adaptive: bool,
    pub delta_warn: f64,
    pub delta_drift: f64,
    /// Samples a background subtree must be evaluated on before it may
    /// replace its node.
    pub background_min_samples: u64,
    /// Samples after which a background subtree that still does not beat
    /// its drifted node is discarded.
    pub background_patience: u64,
    /// When set, each new leaf observes a random subset of this many
    /// features (capped at the feature count).
    pub subspace: Option<usize>,
    pub seed: u64,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self {
            depth_limit: 50,
            tie_threshold: 0.5,
            max_size: 50.0,
            grace_period: 200.0,
            delta: 1e-7,
            split_points: 10,
            min_branch_fraction: 0.01,
            adaptive: false,
            delta_warn: DELTA_WARN,
            delta_drift: DELTA_DRIFT,
            background_min_samples: 30,
            background_patience: 300,
            subspace: None,
            seed: 0,
        }
    }
}

impl TreeParams {
    pub fn validate(&self) -> Result<(), LearnError> {
        let bad = |what: &str| Err(LearnError::InvalidParameter(what.to_string()));
        if !(self.tie_threshold >= 0.0) {
            return bad("tie_threshold must be non-negative");
        }
        if !(self.max_size > 0.0) {
            return bad("max_size must be positive");
        }
        if !(self.grace_period > 0.0) {
            return bad("grace_period must be positive");
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad("delta must lie in (0, 1)");
        }
        if self.split_points == 0 {
            return bad("split_points must be positive");
        }
        if !(self.delta_warn > 0.0 && self.delta_warn < 1.0 && self.delta_drift > 0.0 && self.delta_drift < 1.0) {
            return bad("detector confidences must lie in (0, 1)");
        }
        if self.subspace == Some(0) {
            return bad("subspace size must be positive");
        }
        Ok(())
    }
}

/// Weighted running Gaussian of one feature within one class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
struct Gaussian {
    weight: f64,
    mean: f64,
    m2: f64,
    min: f64,
    max: f64,
}

impl Gaussian {
    fn update(&mut self, x: f64, w: f64) {
        if self.weight == 0.0 {
            self.min = x;
            self.max = x;
        } else {
            self.min = self.min.min(x);
            self.max = self.max.max(x);
        }
        self.weight += w;
        let delta = x - self.mean;
        self.mean += w * delta / self.weight;
        self.m2 += w * delta * (x - self.mean);
    }

    fn std(&self) -> f64 {
        if self.weight > 1.0 {
            (self.m2 / (self.weight - 1.0)).max(0.0).sqrt()
        } else {
            0.0
        }
    }

    /// Weight expected at or below `x`.
    fn weight_below(&self, x: f64) -> f64 {
        if self.weight == 0.0 || x < self.min {
            return 0.0;
        }
        if x >= self.max {
            return self.weight;
        }
        let sd = self.std();
        let cdf = if sd > 0.0 {
            0.5 * libm::erfc(-(x - self.mean) / (sd * std::f64::consts::SQRT_2))
        } else if x >= self.mean {
            1.0
        } else {
            0.0
        };
        self.weight * cdf
    }
}

/// Per-class Gaussians of one feature at one leaf.
type Observer = [Gaussian; N_CLASSES];

/// Bytes charged per observed feature of an active leaf.
const OBSERVER_BYTES: usize = std::mem::size_of::<Observer>() + std::mem::size_of::<u32>();
/// Fixed bytes charged per active leaf.
const LEAF_BYTES: usize = 128;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Leaf {
    depth: usize,
    class_counts: [f64; N_CLASSES],
    weight_at_last_attempt: f64,
    /// Observed feature positions; `None` means all features.
    subset: Option<Vec<u32>>,
    /// Split statistics; `None` while the leaf is deactivated.
    observers: Option<Vec<Observer>>,
}

impl Leaf {
    fn new(depth: usize, class_counts: [f64; N_CLASSES], subset: Option<Vec<u32>>) -> Self {
        let total = class_counts.iter().sum();
        Self { depth, class_counts, weight_at_last_attempt: total, subset, observers: None }
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn class_counts(&self) -> &[f64; N_CLASSES] {
        &self.class_counts
    }

    pub fn total_weight(&self) -> f64 {
        self.class_counts.iter().sum()
    }

    pub fn is_active(&self) -> bool {
        self.observers.is_some()
    }

    /// Positions of the features this leaf may split on (`None`: all).
    pub fn observed_features(&self) -> Option<&[u32]> {
        self.subset.as_deref()
    }

    /// Weight this leaf would misclassify under its majority vote.
    fn promise(&self) -> f64 {
        self.total_weight() - self.class_counts.iter().copied().fold(0.0, f64::max)
    }

    fn observed_len(&self, n_features: usize) -> usize {
        self.subset.as_ref().map_or(n_features, Vec::len)
    }

    fn activate(&mut self, n_features: usize) {
        if self.observers.is_none() {
            self.observers = Some(vec![Observer::default(); self.observed_len(n_features)]);
        }
    }

    fn feature_at(&self, slot: usize) -> usize {
        self.subset.as_ref().map_or(slot, |s| s[slot] as usize)
    }

    fn update(&mut self, x: &[f64], class: usize, w: f64) {
        self.class_counts[class] += w;
        if let Some(observers) = &mut self.observers {
            match &self.subset {
                None => {
                    for (obs, &v) in observers.iter_mut().zip(x) {
                        obs[class].update(v, w);
                    }
                }
                Some(subset) => {
                    for (obs, &f) in observers.iter_mut().zip(subset) {
                        obs[class].update(x[f as usize], w);
                    }
                }
            }
        }
    }

    fn is_pure(&self) -> bool {
        self.class_counts.iter().filter(|&&c| c > 0.0).count() <= 1
    }
}

/// State of an internal node's change monitor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeMonitor {
    detector: WarnDrift,
    background: Option<Box<Node>>,
    drift_pending: bool,
    /// Samples evaluated since the background subtree started.
    compared: u64,
    background_errors: u64,
    node_errors: u64,
}

impl NodeMonitor {
    fn new(params: &TreeParams) -> Self {
        Self {
            detector: WarnDrift::new(params.delta_warn, params.delta_drift),
            background: None,
            drift_pending: false,
            compared: 0,
            background_errors: 0,
            node_errors: 0,
        }
    }

    pub fn background(&self) -> Option<&Node> {
        self.background.as_deref()
    }

    /// True from a warning until the drift it announced is resolved.
    pub fn in_warning(&self) -> bool {
        self.background.is_some()
    }

    fn clear_background(&mut self) {
        self.background = None;
        self.drift_pending = false;
        self.compared = 0;
        self.background_errors = 0;
        self.node_errors = 0;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    depth: usize,
    feature: u32,
    threshold: f64,
    left: Box<Node>,
    right: Box<Node>,
    monitor: Option<NodeMonitor>,
}

impl Split {
    pub fn feature(&self) -> usize {
        self.feature as usize
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn left(&self) -> &Node {
        &self.left
    }

    pub fn right(&self) -> &Node {
        &self.right
    }

    pub fn monitor(&self) -> Option<&NodeMonitor> {
        self.monitor.as_ref()
    }

    /// `x <= threshold` goes left.
    pub fn goes_right(&self, x: &[f64]) -> bool {
        x[self.feature as usize] > self.threshold
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf(Leaf),
    Split(Split),
}

impl Node {
    /// Leaf with the given class counts, for assembling a tree by hand (see
    /// [`HoeffdingTree::from_structure`]).
    pub fn leaf(class_counts: [f64; N_CLASSES]) -> Node {
        Node::Leaf(Leaf::new(0, class_counts, None))
    }

    /// Internal node sending `x[feature] > threshold` right.
    pub fn split(feature: usize, threshold: f64, left: Node, right: Node) -> Node {
        Node::Split(Split {
            depth: 0,
            feature: feature as u32,
            threshold,
            left: Box::new(left),
            right: Box::new(right),
            monitor: None,
        })
    }

    /// Fixes depths, attaches monitors and checks feature positions of a
    /// hand-assembled subtree; returns the summed leaf class counts.
    fn assemble(&mut self, depth: usize, params: &TreeParams, n_features: usize) -> Result<[f64; N_CLASSES], LearnError> {
        match self {
            Node::Leaf(leaf) => {
                leaf.depth = depth;
                Ok(leaf.class_counts)
            }
            Node::Split(s) => {
                if s.feature as usize >= n_features {
                    return Err(LearnError::InvalidParameter(format!(
                        "split on feature {} but the schema has {n_features} features",
                        s.feature
                    )));
                }
                s.depth = depth;
                s.monitor = params.adaptive.then(|| NodeMonitor::new(params));
                let l = s.left.assemble(depth + 1, params, n_features)?;
                let r = s.right.assemble(depth + 1, params, n_features)?;
                Ok(std::array::from_fn(|i| l[i] + r[i]))
            }
        }
    }

    /// The leaf `x` is routed to from this node.
    pub fn leaf_for(&self, x: &[f64]) -> &Leaf {
        let mut node = self;
        loop {
            match node {
                Node::Leaf(l) => return l,
                Node::Split(s) => node = if s.goes_right(x) { &s.right } else { &s.left },
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Node::Leaf(_) => 0,
            Node::Split(s) => 1 + s.left.depth().max(s.right.depth()),
        }
    }

    pub fn n_nodes(&self) -> usize {
        match self {
            Node::Leaf(_) => 1,
            Node::Split(s) => 1 + s.left.n_nodes() + s.right.n_nodes(),
        }
    }

    pub fn n_leaves(&self) -> usize {
        match self {
            Node::Leaf(_) => 1,
            Node::Split(s) => s.left.n_leaves() + s.right.n_leaves(),
        }
    }

    /// Visits every leaf, including those of background subtrees.
    fn leaves_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Leaf>) {
        match self {
            Node::Leaf(l) => out.push(l),
            Node::Split(s) => {
                if let Some(bg) = s.monitor.as_mut().and_then(|m| m.background.as_deref_mut()) {
                    bg.leaves_mut(out);
                }
                s.left.leaves_mut(out);
                s.right.leaves_mut(out);
            }
        }
    }

    fn leaves<'a>(&'a self, out: &mut Vec<&'a Leaf>) {
        match self {
            Node::Leaf(l) => out.push(l),
            Node::Split(s) => {
                if let Some(bg) = s.monitor.as_ref().and_then(|m| m.background.as_deref()) {
                    bg.leaves(out);
                }
                s.left.leaves(out);
                s.right.leaves(out);
            }
        }
    }

    fn for_each_split<'a>(&'a self, f: &mut impl FnMut(&'a Split)) {
        if let Node::Split(s) = self {
            f(s);
            if let Some(bg) = s.monitor.as_ref().and_then(|m| m.background.as_deref()) {
                bg.for_each_split(f);
            }
            s.left.for_each_split(f);
            s.right.for_each_split(f);
        }
    }
}

/// One internal node on a routing path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathStep {
    pub feature: usize,
    pub threshold: f64,
    pub went_right: bool,
}

/// Record of a split decision, kept when split logging is enabled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitEvent {
    pub weight: f64,
    pub best_merit: f64,
    pub second_merit: f64,
    pub bound: f64,
    pub tie_threshold: f64,
    pub feature: usize,
    pub threshold: f64,
}

/// Candidate split of one feature.
#[derive(Debug, Clone, Copy)]
struct Candidate {
    merit: f64,
    feature: Option<usize>,
    threshold: f64,
    left: [f64; N_CLASSES],
    right: [f64; N_CLASSES],
}

/// Mutable context threaded through one learning step.
struct Step<'a> {
    params: &'a TreeParams,
    n_features: usize,
    rng: &'a mut ChaCha8Rng,
    structure_changed: bool,
    splits: &'a mut u64,
    replacements: &'a mut u64,
    split_log: Option<&'a mut Vec<SplitEvent>>,
}

impl Step<'_> {
    fn new_leaf(&mut self, depth: usize, counts: [f64; N_CLASSES]) -> Leaf {
        let subset = self.params.subspace.map(|m| {
            let m = m.min(self.n_features);
            let mut idx: Vec<u32> =
                rand::seq::index::sample(&mut *self.rng, self.n_features, m).into_iter().map(|i| i as u32).collect();
            idx.sort_unstable();
            idx
        });
        let mut leaf = Leaf::new(depth, counts, subset);
        leaf.activate(self.n_features);
        leaf
    }
}

/// Information entropy (bits) of a class distribution.
fn entropy(dist: &[f64; N_CLASSES]) -> f64 {
    let total: f64 = dist.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    dist.iter().filter(|&&c| c > 0.0).map(|&c| -(c / total) * (c / total).log2()).sum()
}

fn info_gain(pre: &[f64; N_CLASSES], left: &[f64; N_CLASSES], right: &[f64; N_CLASSES], min_fraction: f64) -> f64 {
    let (wl, wr): (f64, f64) = (left.iter().sum(), right.iter().sum());
    let total = wl + wr;
    if total <= 0.0 || wl / total < min_fraction || wr / total < min_fraction {
        return f64::NEG_INFINITY;
    }
    entropy(pre) - (wl / total) * entropy(left) - (wr / total) * entropy(right)
}

fn best_candidate_for(obs: &Observer, pre: &[f64; N_CLASSES], feature: usize, params: &TreeParams) -> Option<Candidate> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for g in obs.iter().filter(|g| g.weight > 0.0) {
        lo = lo.min(g.min);
        hi = hi.max(g.max);
    }
    if !(lo < hi) {
        return None;
    }
    let n = params.split_points;
    let mut best: Option<Candidate> = None;
    for i in 0..n {
        let threshold = lo + (hi - lo) * (i + 1) as f64 / (n + 1) as f64;
        let mut left = [0.0; N_CLASSES];
        let mut right = [0.0; N_CLASSES];
        for c in 0..N_CLASSES {
            let below = obs[c].weight_below(threshold);
            left[c] = below;
            right[c] = obs[c].weight - below;
        }
        let merit = info_gain(pre, &left, &right, params.min_branch_fraction);
        if merit.is_finite() && best.is_none_or(|b| merit > b.merit) {
            best = Some(Candidate { merit, feature: Some(feature), threshold, left, right });
        }
    }
    best
}

/// Evaluates the leaf's split candidates; returns the replacement node when
/// the split criterion is met.
fn attempt_split(leaf: &Leaf, step: &mut Step<'_>) -> Option<Node> {
    let params = step.params;
    let observers = leaf.observers.as_ref()?;
    let pre = leaf.class_counts;
    let mut candidates: Vec<Candidate> = observers
        .iter()
        .enumerate()
        .filter_map(|(slot, obs)| best_candidate_for(obs, &pre, leaf.feature_at(slot), params))
        .collect();
    candidates.push(Candidate { merit: 0.0, feature: None, threshold: 0.0, left: pre, right: [0.0; N_CLASSES] });
    // Stable: equal merits keep feature order, the null split last among them.
    candidates.sort_by(|a, b| b.merit.total_cmp(&a.merit));
    let best = candidates[0];
    let Some(&second) = candidates.get(1) else {
        return None;
    };
    let n_classes = pre.iter().filter(|&&c| c > 0.0).count().max(2);
    let range = (n_classes as f64).log2();
    let bound = hoeffding_bound(range, params.delta, leaf.total_weight()).ok()?;
    let feature = best.feature?;
    if !(best.merit > 0.0 && (best.merit - second.merit > bound || bound < params.tie_threshold)) {
        return None;
    }
    if let Some(log) = step.split_log.as_deref_mut() {
        log.push(SplitEvent {
            weight: leaf.total_weight(),
            best_merit: best.merit,
            second_merit: second.merit,
            bound,
            tie_threshold: params.tie_threshold,
            feature,
            threshold: best.threshold,
        });
    }
    let depth = leaf.depth + 1;
    let left = Node::Leaf(step.new_leaf(depth, best.left));
    let right = Node::Leaf(step.new_leaf(depth, best.right));
    *step.splits += 1;
    step.structure_changed = true;
    Some(Node::Split(Split {
        depth: leaf.depth,
        feature: feature as u32,
        threshold: best.threshold,
        left: Box::new(left),
        right: Box::new(right),
        monitor: params.adaptive.then(|| NodeMonitor::new(params)),
    }))
}

fn majority(counts: &[f64; N_CLASSES]) -> usize {
    argmax_class(counts).ordinal()
}

/// Trains `node` on one sample; `error` is this subtree's 0/1 loss on it.
fn learn_node(node: &mut Node, x: &[f64], class: usize, w: f64, error: bool, step: &mut Step<'_>) {
    match node {
        Node::Leaf(leaf) => {
            leaf.update(x, class, w);
            let params = step.params;
            if leaf.is_active()
                && leaf.depth < params.depth_limit
                && leaf.total_weight() - leaf.weight_at_last_attempt >= params.grace_period
                && !leaf.is_pure()
            {
                leaf.weight_at_last_attempt = leaf.total_weight();
                if let Some(split) = attempt_split(leaf, step) {
                    *node = split;
                }
            }
        }
        Node::Split(split) => {
            if let Some(monitor) = split.monitor.as_mut() {
                if monitor_step(monitor, split.depth, x, class, w, error, step) {
                    let bg = monitor.background.take().expect("replacement needs a background subtree");
                    *node = *bg;
                    *step.replacements += 1;
                    step.structure_changed = true;
                    return;
                }
            }
            let child = if split.goes_right(x) { &mut split.right } else { &mut split.left };
            learn_node(child, x, class, w, error, step);
        }
    }
}

/// Updates a node monitor; returns true when the background subtree should
/// replace the node.
fn monitor_step(
    monitor: &mut NodeMonitor,
    depth: usize,
    x: &[f64],
    class: usize,
    w: f64,
    error: bool,
    step: &mut Step<'_>,
) -> bool {
    let signal = monitor.detector.update(f64::from(u8::from(error)));
    if signal != DriftSignal::Stable && monitor.background.is_none() {
        let leaf = step.new_leaf(depth, [0.0; N_CLASSES]);
        monitor.background = Some(Box::new(Node::Leaf(leaf)));
        step.structure_changed = true;
    }
    match signal {
        DriftSignal::Warning => monitor.detector.reset_warning(),
        DriftSignal::Drift => {
            monitor.detector.reset();
            monitor.drift_pending = true;
        }
        DriftSignal::Stable => {}
    }
    let Some(bg) = monitor.background.as_deref_mut() else {
        return false;
    };
    let bg_leaf = bg.leaf_for(x);
    let bg_error = bg_leaf.total_weight() <= 0.0 || majority(&bg_leaf.class_counts) != class;
    monitor.compared += 1;
    monitor.background_errors += u64::from(bg_error);
    monitor.node_errors += u64::from(error);
    learn_node(bg, x, class, w, bg_error, step);
    if monitor.drift_pending && monitor.compared >= step.params.background_min_samples {
        if monitor.background_errors < monitor.node_errors {
            return true;
        }
        if monitor.compared >= step.params.background_patience {
            monitor.clear_background();
            step.structure_changed = true;
        }
    }
    false
}

/// Incremental decision tree over a fixed feature schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoeffdingTree {
    params: TreeParams,
    features: Option<Vec<FeatureName>>,
    root: Option<Node>,
    class_counts: [f64; N_CLASSES],
    rng: ChaCha8Rng,
    splits: u64,
    replacements: u64,
    #[serde(skip)]
    split_log: Option<Vec<SplitEvent>>,
}

impl HoeffdingTree {
    pub fn new(params: TreeParams) -> Result<Self, LearnError> {
        params.validate()?;
        let rng = ChaCha8Rng::seed_from_u64(params.seed);
        Ok(Self::with_rng(params, rng))
    }

    pub(crate) fn with_rng(params: TreeParams, rng: ChaCha8Rng) -> Self {
        Self { params, features: None, root: None, class_counts: [0.0; N_CLASSES], rng, splits: 0, replacements: 0, split_log: None }
    }

    /// Tree with a given structure over `features`, ready to predict and to
    /// keep learning.
    pub fn from_structure(params: TreeParams, features: Vec<FeatureName>, mut root: Node) -> Result<Self, LearnError> {
        let mut tree = Self::new(params)?;
        let n_features = features.len();
        tree.class_counts = root.assemble(0, &tree.params, n_features)?;
        tree.features = Some(features);
        tree.root = Some(root);
        tree.enforce_budget(n_features);
        Ok(tree)
    }

    pub fn params(&self) -> &TreeParams {
        &self.params
    }

    pub fn root(&self) -> Option<&Node> {
        self.root.as_ref()
    }

    pub fn feature_names(&self) -> Option<&[FeatureName]> {
        self.features.as_deref()
    }

    pub fn splits(&self) -> u64 {
        self.splits
    }

    /// Number of background subtrees promoted over their nodes.
    pub fn replacements(&self) -> u64 {
        self.replacements
    }

    pub fn depth(&self) -> usize {
        self.root.as_ref().map_or(0, Node::depth)
    }

    pub fn n_leaves(&self) -> usize {
        self.root.as_ref().map_or(0, Node::n_leaves)
    }

    /// Starts recording every split decision with its bound.
    pub fn enable_split_log(&mut self) {
        self.split_log.get_or_insert_with(Vec::new);
    }

    pub fn split_log(&self) -> &[SplitEvent] {
        self.split_log.as_deref().unwrap_or(&[])
    }

    /// All leaves, including those of background subtrees.
    pub fn all_leaves(&self) -> Vec<&Leaf> {
        let mut out = Vec::new();
        if let Some(root) = &self.root {
            root.leaves(&mut out);
        }
        out
    }

    /// Bytes charged to the statistics of active leaves.
    pub fn active_bytes(&self) -> usize {
        let n = self.features.as_ref().map_or(0, Vec::len);
        self.all_leaves().iter().filter(|l| l.is_active()).map(|l| Self::leaf_bytes(l, n)).sum()
    }

    pub fn budget_bytes(&self) -> usize {
        (self.params.max_size * 1e6) as usize
    }

    fn leaf_bytes(leaf: &Leaf, n_features: usize) -> usize {
        LEAF_BYTES + leaf.observed_len(n_features) * OBSERVER_BYTES
    }

    /// Visits every internal node, including those of background subtrees.
    pub fn for_each_split<'a>(&'a self, mut f: impl FnMut(&'a Split)) {
        if let Some(root) = &self.root {
            root.for_each_split(&mut f);
        }
    }

    /// Internal nodes from the root to the leaf `x` is routed to.
    pub fn path(&self, x: &[f64]) -> Vec<PathStep> {
        let mut steps = Vec::new();
        let mut node = self.root.as_ref();
        while let Some(Node::Split(s)) = node {
            let went_right = s.goes_right(x);
            steps.push(PathStep { feature: s.feature as usize, threshold: s.threshold, went_right });
            node = Some(if went_right { &s.right } else { &s.left });
        }
        steps
    }

    /// Prediction on raw feature values of the learned schema.
    pub fn predict_values(&self, x: &[f64]) -> Result<Prediction, LearnError> {
        let root = self.root.as_ref().ok_or(LearnError::NotReady)?;
        let leaf = root.leaf_for(x);
        let counts = if leaf.total_weight() > 0.0 { leaf.class_counts } else { self.class_counts };
        Ok(Prediction { label: argmax_class(&counts), scores: counts })
    }

    /// Trains on raw feature values with sample weight `w`.
    pub fn learn_values(&mut self, x: &[f64], label: ClassLabel, w: f64) {
        if w <= 0.0 {
            return;
        }
        let n_features = x.len();
        let class = label.ordinal();
        let error = self.predict_values(x).map_or(true, |p| p.label != label);
        let mut step = Step {
            params: &self.params,
            n_features,
            rng: &mut self.rng,
            structure_changed: false,
            splits: &mut self.splits,
            replacements: &mut self.replacements,
            split_log: self.split_log.as_mut(),
        };
        let root = match self.root.as_mut() {
            Some(root) => root,
            None => {
                step.structure_changed = true;
                self.root.insert(Node::Leaf(step.new_leaf(0, [0.0; N_CLASSES])))
            }
        };
        learn_node(root, x, class, w, error, &mut step);
        let changed = step.structure_changed;
        self.class_counts[class] += w;
        if changed {
            self.enforce_budget(n_features);
        }
    }

    /// Keeps the most promising leaves active within the memory budget.
    fn enforce_budget(&mut self, n_features: usize) {
        let budget = self.budget_bytes();
        let Some(root) = self.root.as_mut() else { return };
        let mut leaves = Vec::new();
        root.leaves_mut(&mut leaves);
        let total: usize = leaves.iter().map(|l| Self::leaf_bytes(l, n_features)).sum();
        if total <= budget {
            for leaf in leaves {
                leaf.activate(n_features);
            }
            return;
        }
        let mut order: Vec<usize> = (0..leaves.len()).collect();
        order.sort_by(|&a, &b| leaves[b].promise().total_cmp(&leaves[a].promise()));
        let mut used = 0;
        let mut keep = vec![false; leaves.len()];
        for i in order {
            let bytes = Self::leaf_bytes(leaves[i], n_features);
            if used + bytes <= budget {
                used += bytes;
                keep[i] = true;
            }
        }
        for (leaf, keep) in leaves.into_iter().zip(keep) {
            if keep {
                leaf.activate(n_features);
            } else {
                leaf.observers = None;
            }
        }
    }
}

impl Classifier for HoeffdingTree {
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
        self.learn_values(fv.values(), label, 1.0);
        Ok(())
    }

    fn decision_trees(&self) -> Option<Vec<&HoeffdingTree>> {
        Some(vec![self])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf(counts: [f64; N_CLASSES]) -> Box<Node> {
        Box::new(Node::Leaf(Leaf::new(1, counts, None)))
    }

    #[test]
    fn routing_sends_ties_left() {
        let tree = Node::Split(Split {
            depth: 0,
            feature: 0,
            threshold: 0.5,
            left: leaf([3.0, 0.0, 0.0, 0.0]),
            right: leaf([0.0, 0.0, 2.0, 0.0]),
            monitor: None,
        });
        assert_eq!(tree.leaf_for(&[0.5]).class_counts()[0], 3.0);
        assert_eq!(tree.leaf_for(&[0.5000001]).class_counts()[2], 2.0);
    }

    #[test]
    fn entropy_and_gain() {
        assert_eq!(entropy(&[1.0, 1.0, 0.0, 0.0]), 1.0);
        assert_eq!(entropy(&[4.0, 0.0, 0.0, 0.0]), 0.0);
        let pre = [5.0, 5.0, 0.0, 0.0];
        assert_eq!(info_gain(&pre, &[5.0, 0.0, 0.0, 0.0], &[0.0, 5.0, 0.0, 0.0], 0.01), 1.0);
        assert_eq!(info_gain(&pre, &[10.0, 10.0, 0.0, 0.0], &[0.0; 4], 0.01), f64::NEG_INFINITY);
    }

    #[test]
    fn gaussian_weight_below_respects_range() {
        let mut g = Gaussian::default();
        for x in [1.0, 2.0, 3.0] {
            g.update(x, 1.0);
        }
        assert_eq!(g.weight_below(0.5), 0.0);
        assert_eq!(g.weight_below(3.0), 3.0);
        assert!((g.weight_below(2.0) - 1.5).abs() < 1e-12);
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        for p in [
            TreeParams { delta: 0.0, ..TreeParams::default() },
            TreeParams { max_size: 0.0, ..TreeParams::default() },
            TreeParams { split_points: 0, ..TreeParams::default() },
            TreeParams { subspace: Some(0), ..TreeParams::default() },
        ] {
            assert!(matches!(HoeffdingTree::new(p), Err(LearnError::InvalidParameter(_))));
        }
    }
}
