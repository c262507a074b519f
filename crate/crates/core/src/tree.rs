//! The dividing tree: local GP leaves under axis-aligned soft splits.
//!
//! Nodes are addressed by heap index: the children of node `i` are `2i+1`
//! (low side of the split) and `2i+2` (high side). A point reaches the high
//! child with probability `p_i(x)` and the low child with `1 - p_i(x)`, and the
//! probability of a leaf is the product of these step probabilities along its
//! branch. Predictions mix the leaf posteriors with those weights.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DlgpError, Result};
use crate::exec::{self, Execution};
use crate::kernel::Hyperparameters;
use crate::local_gp::LocalModel;
use crate::partition::{DivisionRule, DivisionStrategy};

pub type HeapIndex = u64;

/// Consecutive divisions allowed within one update.
pub const MAX_DIVISIONS_PER_UPDATE: usize = 64;
/// Re-draws of a division's random assignment before falling back to a median split.
pub const MAX_ASSIGNMENT_RETRIES: usize = 16;

const SNAPSHOT_FORMAT: &str = "dlgp-tree";
const SNAPSHOT_VERSION: u32 = 1;

/// Static tree settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeConfig {
    /// Maximum number of points held by a leaf.
    pub capacity: usize,
    /// Overlap width as a fraction of the split dimension's range.
    pub theta: f64,
    pub strategy: DivisionStrategy,
}

impl Default for TreeConfig {
    fn default() -> Self {
        Self { capacity: 100, theta: 0.05, strategy: DivisionStrategy::Mean }
    }
}

impl TreeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.capacity < 2 {
            return Err(DlgpError::InvalidArgument(format!("capacity must be at least 2, got {}", self.capacity)));
        }
        if !(self.theta >= 0.0 && self.theta.is_finite()) {
            return Err(DlgpError::InvalidArgument(format!("theta must be non-negative, got {}", self.theta)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Internal(DivisionRule),
    Leaf(LocalModel),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    /// Training points inserted so far.
    pub n_total: u64,
    pub division_count: u64,
    /// Points that fell inside the overlap band, summed over all divisions.
    pub overlap_point_count: u64,
    pub leaf_count: u64,
}

/// Mixture predictive mean and variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictiveDistribution {
    pub mean: f64,
    pub variance: f64,
}

/// One leaf's weighted contribution to a prediction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeafPrediction {
    pub index: HeapIndex,
    pub probability: f64,
    pub mean: f64,
    pub variance: f64,
}

impl PredictiveDistribution {
    /// Combines weighted leaf posteriors:
    /// `μ = Σ p μ_j`, `σ² = Σ p (σ_j² + μ_j²) - μ²`, clamped at zero.
    pub fn from_mixture(parts: &[LeafPrediction]) -> Self {
        let mut mean = 0.0;
        let mut second = 0.0;
        for part in parts {
            mean += part.probability * part.mean;
            second += part.probability * (part.variance + part.mean * part.mean);
        }
        Self { mean, variance: (second - mean * mean).max(0.0) }
    }
}

#[inline]
fn low_child(i: HeapIndex) -> Result<HeapIndex> {
    i.checked_mul(2).and_then(|v| v.checked_add(1)).ok_or(DlgpError::TreeTooDeep)
}

#[inline]
fn high_child(i: HeapIndex) -> Result<HeapIndex> {
    i.checked_mul(2).and_then(|v| v.checked_add(2)).ok_or(DlgpError::TreeTooDeep)
}

/// Streaming regression model for one output target.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DlgpTree {
    hp: Hyperparameters,
    config: TreeConfig,
    seed: u64,
    stream: u64,
    rng: ChaCha8Rng,
    counters: Counters,
    nodes: BTreeMap<HeapIndex, Node>,
}

// Compares generator positions rather than buffered blocks, which differ
// between a live generator and one restored from a snapshot.
impl PartialEq for DlgpTree {
    fn eq(&self, other: &Self) -> bool {
        self.hp == other.hp
            && self.config == other.config
            && self.seed == other.seed
            && self.stream == other.stream
            && self.rng.get_seed() == other.rng.get_seed()
            && self.rng.get_stream() == other.rng.get_stream()
            && self.rng.get_word_pos() == other.rng.get_word_pos()
            && self.counters == other.counters
            && self.nodes == other.nodes
    }
}

impl DlgpTree {
    /// Empty tree drawing its random assignments from stream 0 of `seed`.
    pub fn new(hp: Hyperparameters, config: TreeConfig, seed: u64) -> Result<Self> {
        Self::with_stream(hp, config, seed, 0)
    }

    /// Empty tree drawing from ChaCha8 stream `stream` of `seed`. Trees sharing
    /// a seed but not a stream draw independent sequences.
    pub fn with_stream(hp: Hyperparameters, config: TreeConfig, seed: u64, stream: u64) -> Result<Self> {
        hp.validate()?;
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Ok(Self { hp, config, seed, stream, rng, counters: Counters::default(), nodes: BTreeMap::new() })
    }

    pub fn hyperparameters(&self) -> &Hyperparameters {
        &self.hp
    }

    pub fn config(&self) -> &TreeConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn counters(&self) -> Counters {
        self.counters
    }

    pub fn dim(&self) -> usize {
        self.hp.dim()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, i: HeapIndex) -> Option<&Node> {
        self.nodes.get(&i)
    }

    /// All nodes in heap-index order.
    pub fn nodes(&self) -> impl Iterator<Item = (HeapIndex, &Node)> {
        self.nodes.iter().map(|(i, n)| (*i, n))
    }

    /// Leaves in heap-index order.
    pub fn leaves(&self) -> impl Iterator<Item = (HeapIndex, &LocalModel)> {
        self.nodes.iter().filter_map(|(i, n)| match n {
            Node::Leaf(m) => Some((*i, m)),
            Node::Internal(_) => None,
        })
    }

    /// Depth of the deepest leaf (root has depth 0).
    pub fn depth(&self) -> u32 {
        self.leaves().map(|(i, _)| (i + 1).ilog2()).max().unwrap_or(0)
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        self.hp.check_dim(x.len())?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(DlgpError::InvalidArgument("non-finite input".into()));
        }
        Ok(())
    }

    /// Draws one branch step at internal node `i`.
    fn step(&mut self, i: HeapIndex, rule: &DivisionRule, x: &[f64]) -> Result<HeapIndex> {
        let p = rule.probability(x);
        let high = if p <= 0.0 {
            false
        } else if p >= 1.0 {
            true
        } else {
            self.rng.random::<f64>() < p
        };
        if high { high_child(i) } else { low_child(i) }
    }

    /// Samples a branch from `start` down to a leaf.
    fn descend(&mut self, start: HeapIndex, x: &[f64]) -> Result<HeapIndex> {
        let mut i = start;
        loop {
            match self.nodes.get(&i) {
                Some(Node::Internal(rule)) => {
                    let rule = *rule;
                    i = self.step(i, &rule, x)?;
                }
                Some(Node::Leaf(_)) => return Ok(i),
                None => unreachable!("internal node {i} without children"),
            }
        }
    }

    fn leaf_mut(&mut self, i: HeapIndex) -> &mut LocalModel {
        match self.nodes.get_mut(&i) {
            Some(Node::Leaf(m)) => m,
            _ => unreachable!("node {i} is not a leaf"),
        }
    }

    /// Adds one training pair. Samples a branch to a leaf, dividing full
    /// leaves on the way, and inserts the pair into the reached leaf.
    pub fn update(&mut self, x: &[f64], y: f64) -> Result<()> {
        self.check_input(x)?;
        if !y.is_finite() {
            return Err(DlgpError::InvalidArgument("non-finite target".into()));
        }
        if self.nodes.is_empty() {
            let model = LocalModel::fit_with_capacity(x, &[y], &self.hp, self.config.capacity)?;
            self.nodes.insert(0, Node::Leaf(model));
            self.counters.leaf_count = 1;
            self.counters.n_total = 1;
            return Ok(());
        }
        let mut i = self.descend(0, x)?;
        let mut divisions = 0;
        while self.leaf_mut(i).len() >= self.config.capacity {
            if divisions == MAX_DIVISIONS_PER_UPDATE {
                return Err(DlgpError::DegenerateDivision(divisions));
            }
            self.divide_leaf(i)?;
            divisions += 1;
            i = self.descend(i, x)?;
        }
        let hp = self.hp.clone();
        self.leaf_mut(i).insert(&hp, x, y)?;
        self.counters.n_total += 1;
        Ok(())
    }

    /// Splits leaf `i` into two children and refits both from scratch.
    ///
    /// Each point goes to the high child with probability `p_i(x)`. If one
    /// child would be empty the whole assignment is re-drawn; after
    /// [`MAX_ASSIGNMENT_RETRIES`] failures the points are split at the median
    /// along the split dimension.
    pub fn divide_leaf(&mut self, i: HeapIndex) -> Result<()> {
        let (lo_idx, hi_idx) = (low_child(i)?, high_child(i)?);
        let model = match self.nodes.get(&i) {
            Some(Node::Leaf(m)) if m.len() >= 2 => m,
            Some(Node::Leaf(_)) => {
                return Err(DlgpError::InvalidArgument(format!("leaf {i} has fewer than two points")))
            }
            _ => return Err(DlgpError::InvalidArgument(format!("node {i} is not a leaf"))),
        };
        let d = self.hp.dim();
        let n = model.len();
        let rule = DivisionRule::compute(model.inputs(), d, self.config.theta, self.config.strategy)?;
        let probs: Vec<f64> = (0..n).map(|k| rule.probability(model.input(k))).collect();
        let in_band = (0..n).filter(|&k| rule.in_overlap(model.input(k))).count() as u64;

        let mut to_high = vec![false; n];
        let mut balanced = false;
        for _ in 0..=MAX_ASSIGNMENT_RETRIES {
            let mut highs = 0;
            for (h, &p) in to_high.iter_mut().zip(&probs) {
                *h = if p <= 0.0 {
                    false
                } else if p >= 1.0 {
                    true
                } else {
                    self.rng.random::<f64>() < p
                };
                highs += *h as usize;
            }
            if highs > 0 && highs < n {
                balanced = true;
                break;
            }
        }
        if !balanced {
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| model.input(a)[rule.split_dim].total_cmp(&model.input(b)[rule.split_dim]));
            for (rank, &k) in order.iter().enumerate() {
                to_high[k] = rank >= n / 2;
            }
        }

        let mut parts = [(Vec::new(), Vec::new()), (Vec::new(), Vec::new())];
        for (k, &h) in to_high.iter().enumerate() {
            let (xs, ys) = &mut parts[h as usize];
            xs.extend_from_slice(model.input(k));
            ys.push(model.targets()[k]);
        }
        let cap = self.config.capacity;
        let low = LocalModel::fit_with_capacity(&parts[0].0, &parts[0].1, &self.hp, cap)?;
        let high = LocalModel::fit_with_capacity(&parts[1].0, &parts[1].1, &self.hp, cap)?;

        self.nodes.insert(i, Node::Internal(rule));
        self.nodes.insert(lo_idx, Node::Leaf(low));
        self.nodes.insert(hi_idx, Node::Leaf(high));
        self.counters.division_count += 1;
        self.counters.overlap_point_count += in_band;
        self.counters.leaf_count += 1;
        Ok(())
    }

    /// Marginal probability of leaf `j` at `x`: the product of step
    /// probabilities from the root down to `j`.
    pub fn leaf_probability(&self, j: HeapIndex, x: &[f64]) -> Result<f64> {
        self.check_input(x)?;
        match self.nodes.get(&j) {
            Some(Node::Leaf(_)) => Ok(self.branch_probability(j, x)),
            _ => Err(DlgpError::InvalidArgument(format!("node {j} is not a leaf"))),
        }
    }

    fn branch_probability(&self, j: HeapIndex, x: &[f64]) -> f64 {
        let mut path = Vec::new();
        let mut k = j;
        while k > 0 {
            path.push(k);
            k = (k - 1) / 2;
        }
        let mut prob = 1.0;
        for &child in path.iter().rev() {
            let parent = (child - 1) / 2;
            let Some(Node::Internal(rule)) = self.nodes.get(&parent) else {
                unreachable!("parent {parent} of {child} is not internal")
            };
            let p = rule.probability(x);
            prob *= if child % 2 == 0 { p } else { 1.0 - p };
        }
        prob
    }

    /// `(leaf index, probability)` for every leaf in heap-index order,
    /// including those with probability zero.
    pub fn leaf_probabilities(&self, x: &[f64]) -> Result<Vec<(HeapIndex, f64)>> {
        self.check_input(x)?;
        Ok(self.leaves().map(|(j, _)| (j, self.branch_probability(j, x))).collect())
    }

    /// Leaves with positive probability at `x`, found by descending only into
    /// children whose step probability is non-zero. Order is depth-first,
    /// low child first.
    fn active_leaves(&self, x: &[f64]) -> Vec<(HeapIndex, f64, &LocalModel)> {
        let mut out = Vec::new();
        if self.nodes.is_empty() {
            return out;
        }
        let mut stack = vec![(0 as HeapIndex, 1.0)];
        while let Some((i, prob)) = stack.pop() {
            match &self.nodes[&i] {
                Node::Leaf(m) => out.push((i, prob, m)),
                Node::Internal(rule) => {
                    let p = rule.probability(x);
                    // heap indices of existing children never overflow
                    if p > 0.0 {
                        stack.push((2 * i + 2, prob * p));
                    }
                    if p < 1.0 {
                        stack.push((2 * i + 1, prob * (1.0 - p)));
                    }
                }
            }
        }
        out
    }

    /// Number of leaves with positive probability at `x`.
    pub fn active_leaf_count(&self, x: &[f64]) -> Result<usize> {
        self.check_input(x)?;
        Ok(self.active_leaves(x).len())
    }

    /// Posterior of every active leaf at `x`.
    pub fn mixture_components(&self, x: &[f64], exec: Execution) -> Result<Vec<LeafPrediction>> {
        self.check_input(x)?;
        if self.nodes.is_empty() {
            return Err(DlgpError::ModelEmpty);
        }
        let active = self.active_leaves(x);
        Ok(exec::map(exec, &active, |&(index, probability, m)| {
            let (mean, variance) = m.predict(&self.hp, x);
            LeafPrediction { index, probability, mean, variance }
        }))
    }

    /// Mixture prediction over the active leaves.
    pub fn predict(&self, x: &[f64]) -> Result<PredictiveDistribution> {
        self.predict_with(x, Execution::Sequential)
    }

    /// As [`DlgpTree::predict`], optionally evaluating the leaf posteriors on
    /// the thread pool. The reduction order is fixed.
    pub fn predict_with(&self, x: &[f64], exec: Execution) -> Result<PredictiveDistribution> {
        Ok(PredictiveDistribution::from_mixture(&self.mixture_components(x, exec)?))
    }

    /// Mixture mean only; skips the triangular solves of the variance.
    pub fn predict_mean(&self, x: &[f64]) -> Result<f64> {
        self.check_input(x)?;
        if self.nodes.is_empty() {
            return Err(DlgpError::ModelEmpty);
        }
        Ok(self
            .active_leaves(x)
            .into_iter()
            .map(|(_, p, m)| p * m.predict_mean(&self.hp, x))
            .sum())
    }

    /// Prediction that falls back to the prior `N(0, σ_f²)` on an empty tree.
    pub fn predict_or_prior(&self, x: &[f64]) -> Result<PredictiveDistribution> {
        if self.nodes.is_empty() {
            self.check_input(x)?;
            return Ok(PredictiveDistribution { mean: 0.0, variance: self.hp.signal_variance });
        }
        self.predict(x)
    }

    /// Unpruned prediction visiting every leaf with its branch probability.
    /// Used to check the pruned traversal.
    pub fn predict_full(&self, x: &[f64]) -> Result<PredictiveDistribution> {
        self.check_input(x)?;
        if self.nodes.is_empty() {
            return Err(DlgpError::ModelEmpty);
        }
        let parts: Vec<LeafPrediction> = self
            .leaves()
            .map(|(index, m)| {
                let (mean, variance) = m.predict(&self.hp, x);
                LeafPrediction { index, probability: self.branch_probability(index, x), mean, variance }
            })
            .collect();
        Ok(PredictiveDistribution::from_mixture(&parts))
    }

    /// Predictions for row-major `xs`, one per row.
    pub fn predict_many(&self, xs: &[f64], exec: Execution) -> Result<Vec<PredictiveDistribution>> {
        let d = self.dim();
        if xs.len() % d != 0 {
            return Err(DlgpError::DimensionMismatch { expected: d, got: xs.len() % d });
        }
        exec::map_chunks(exec, xs, d, |x| self.predict(x)).into_iter().collect()
    }

    /// Checks the structural invariants of the tree.
    pub fn check_invariants(&self) -> Result<()> {
        let fail = |msg: String| Err(DlgpError::InvalidArgument(msg));
        let mut leaves = 0u64;
        let mut internal = 0u64;
        let mut points = 0u64;
        for (&i, node) in &self.nodes {
            if i > 0 && !matches!(self.nodes.get(&((i - 1) / 2)), Some(Node::Internal(_))) {
                return fail(format!("node {i} has no internal parent"));
            }
            match node {
                Node::Internal(rule) => {
                    internal += 1;
                    if rule.split_dim >= self.dim() || !(rule.overlap >= 0.0) {
                        return fail(format!("node {i} has an invalid rule"));
                    }
                    let has = |c: Result<HeapIndex>| c.ok().is_some_and(|c| self.nodes.contains_key(&c));
                    if !has(low_child(i)) || !has(high_child(i)) {
                        return fail(format!("internal node {i} is missing a child"));
                    }
                }
                Node::Leaf(m) => {
                    leaves += 1;
                    points += m.len() as u64;
                    m.check_shape()?;
                    if m.dim() != self.dim() || m.len() > self.config.capacity {
                        return fail(format!("leaf {i} has invalid size"));
                    }
                }
            }
        }
        if !self.nodes.is_empty() && !self.nodes.contains_key(&0) {
            return fail("missing root".into());
        }
        if leaves != self.counters.leaf_count
            || points != self.counters.n_total
            || (leaves > 0 && internal + 1 != leaves)
            || internal != self.counters.division_count
        {
            return fail("counters do not match the node store".into());
        }
        Ok(())
    }

    /// Writes a versioned JSON snapshot from which the stream can resume
    /// bit-identically (including the random generator position).
    pub fn save_snapshot<W: Write>(&self, writer: W) -> Result<()> {
        #[derive(Serialize)]
        struct Snapshot<'a> {
            format: &'a str,
            version: u32,
            tree: &'a DlgpTree,
        }
        let snap = Snapshot { format: SNAPSHOT_FORMAT, version: SNAPSHOT_VERSION, tree: self };
        serde_json::to_writer(writer, &snap).map_err(|e| DlgpError::InvalidArgument(format!("snapshot: {e}")))
    }

    pub fn load_snapshot<R: Read>(reader: R) -> Result<Self> {
        #[derive(Deserialize)]
        struct Snapshot {
            format: String,
            version: u32,
            tree: DlgpTree,
        }
        let snap: Snapshot =
            serde_json::from_reader(reader).map_err(|e| DlgpError::InvalidArgument(format!("snapshot: {e}")))?;
        if snap.format != SNAPSHOT_FORMAT || snap.version != SNAPSHOT_VERSION {
            return Err(DlgpError::InvalidArgument(format!(
                "unsupported snapshot {} v{}",
                snap.format, snap.version
            )));
        }
        snap.tree.hp.validate()?;
        snap.tree.config.validate()?;
        snap.tree.check_invariants()?;
        Ok(snap.tree)
    }
}

/// One independent tree per output target over a shared input stream.
///
/// Tree `t` draws from stream `t` of the shared seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiTargetDlgp {
    trees: Vec<DlgpTree>,
}

impl MultiTargetDlgp {
    pub fn new(hps: Vec<Hyperparameters>, config: TreeConfig, seed: u64) -> Result<Self> {
        if hps.is_empty() {
            return Err(DlgpError::InvalidArgument("at least one target is required".into()));
        }
        let d = hps[0].dim();
        let trees = hps
            .into_iter()
            .enumerate()
            .map(|(t, hp)| {
                hp.check_dim(d)?;
                DlgpTree::with_stream(hp, config, seed, t as u64)
            })
            .collect::<Result<_>>()?;
        Ok(Self { trees })
    }

    pub fn trees(&self) -> &[DlgpTree] {
        &self.trees
    }

    pub fn targets(&self) -> usize {
        self.trees.len()
    }

    pub fn update(&mut self, x: &[f64], ys: &[f64], exec: Execution) -> Result<()> {
        if ys.len() != self.trees.len() {
            return Err(DlgpError::DimensionMismatch { expected: self.trees.len(), got: ys.len() });
        }
        exec::try_for_each_mut(exec, &mut self.trees, |t, tree| tree.update(x, ys[t]))
    }

    /// Learns a block of rows: row-major `xs` and row-major `ys` with one
    /// column per target. Each tree consumes the whole block, so parallel
    /// execution splits work per target rather than per row.
    pub fn update_batch(&mut self, xs: &[f64], ys: &[f64], exec: Execution) -> Result<()> {
        let (d, m) = (self.trees[0].dim(), self.trees.len());
        if xs.len() % d != 0 || ys.len() != xs.len() / d * m {
            return Err(DlgpError::DimensionMismatch { expected: xs.len() / d * m, got: ys.len() });
        }
        exec::try_for_each_mut(exec, &mut self.trees, |t, tree| {
            xs.chunks_exact(d).zip(ys.chunks_exact(m)).try_for_each(|(x, y)| tree.update(x, y[t]))
        })
    }

    pub fn predict(&self, x: &[f64], exec: Execution) -> Result<Vec<PredictiveDistribution>> {
        exec::map(exec, &self.trees, |tree| tree.predict(x)).into_iter().collect()
    }
}
