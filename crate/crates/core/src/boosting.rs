//! Second-order gradient tree boosting with exact greedy split finding.
//!
//! Each round receives per-observation first- and second-order terms
//! `(g_i, h_i)` from a [`LossSpec`], grows one regression tree against the
//! penalized quadratic objective
//!
//! ```text
//! Σ_j [ G_j w_j + ½ (H_j + λ) w_j² ] + γ |T|
//! ```
//!
//! and appends it with shrinkage `η`. Leaf weights are `-G/(H+λ)` and a
//! split is scored by
//! `½ [G_l²/(H_l+λ) + G_r²/(H_r+λ) - G²/(H+λ)] - γ`.

use std::collections::VecDeque;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Covariates;
use crate::losses::LossSpec;
use crate::{Error, Result};

/// Split gains below this fraction of the children's score magnitude are
/// rounding noise and treated as zero. Two gains closer than this are ties.
const RELATIVE_GAIN_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    /// Number of boosting rounds `K`.
    pub rounds: usize,
    /// Shrinkage `η` in `(0, 1]`.
    pub eta: f64,
    pub max_depth: usize,
    /// Per-leaf cost `γ`.
    #[serde(default)]
    pub gamma: f64,
    /// L2 penalty `λ` on leaf weights.
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default)]
    pub min_child_hessian: f64,
}

fn default_lambda() -> f64 {
    1.0
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            rounds: 100,
            eta: 0.1,
            max_depth: 3,
            gamma: 0.0,
            lambda: 1.0,
            min_child_hessian: 0.0,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.rounds < 1 {
            return bad("rounds must be >= 1".into());
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return bad(format!("shrinkage {} outside (0, 1]", self.eta));
        }
        if self.max_depth < 1 {
            return bad("max_depth must be >= 1".into());
        }
        for (name, v) in [
            ("gamma", self.gamma),
            ("lambda", self.lambda),
            ("min_child_hessian", self.min_child_hessian),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        Ok(())
    }
}

/// Per-observation first-order (`g`) and second-order (`h`) terms.
#[derive(Debug, Clone, PartialEq)]
pub struct GradHess {
    pub g: Vec<f64>,
    pub h: Vec<f64>,
}

impl GradHess {
    pub fn len(&self) -> usize {
        self.g.len()
    }

    pub fn is_empty(&self) -> bool {
        self.g.is_empty()
    }

    /// Position of the first entry that is non-finite or has negative hessian.
    pub fn first_invalid(&self) -> Option<usize> {
        (0..self.g.len()).find(|&i| !(self.g[i].is_finite() && self.h[i].is_finite() && self.h[i] >= 0.0))
    }
}

/// Optimal leaf output `-G / (H + λ)`.
pub fn fit_leaf_weight(grad_sum: f64, hess_sum: f64, lambda: f64) -> Result<f64> {
    let denom = hess_sum + lambda;
    if denom == 0.0 {
        return Err(Error::ZeroDenominator("H + lambda in leaf weight"));
    }
    Ok(-grad_sum / denom)
}

#[inline]
fn score(grad_sum: f64, hess_sum: f64, lambda: f64) -> f64 {
    grad_sum * grad_sum / (hess_sum + lambda)
}

/// Loss reduction from splitting a node into the given children.
pub fn split_gain(
    grad_left: f64,
    hess_left: f64,
    grad_right: f64,
    hess_right: f64,
    lambda: f64,
    gamma: f64,
) -> Result<f64> {
    if hess_left + lambda <= 0.0 || hess_right + lambda <= 0.0 || hess_left + hess_right + lambda <= 0.0 {
        return Err(Error::ZeroDenominator("H + lambda in split gain"));
    }
    Ok(0.5
        * (score(grad_left, hess_left, lambda) + score(grad_right, hess_right, lambda)
            - score(grad_left + grad_right, hess_left + hess_right, lambda))
        - gamma)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitCandidate {
    pub feature: usize,
    pub threshold: f64,
    pub gain: f64,
}

/// A tree node. Rows with `x[feature] < threshold` go left.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        weight: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub nodes: Vec<Node>,
}

impl RegressionTree {
    pub fn single_leaf(weight: f64) -> Self {
        Self {
            nodes: vec![Node::Leaf { weight }],
        }
    }

    /// Structure map `q`: node index of the leaf reached by `x`.
    pub fn leaf_index(&self, x: &[f64]) -> usize {
        let mut idx = 0;
        loop {
            match self.nodes[idx] {
                Node::Leaf { .. } => return idx,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => idx = if x[feature] < threshold { left } else { right },
            }
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        match self.nodes[self.leaf_index(x)] {
            Node::Leaf { weight } => weight,
            Node::Split { .. } => unreachable!(),
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], idx: usize) -> usize {
            match nodes[idx] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }

    fn max_feature(&self) -> Option<usize> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                Node::Split { feature, .. } => Some(*feature),
                Node::Leaf { .. } => None,
            })
            .max()
    }
}

/// Additive tree model `base_score + η Σ_k tree_k(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostedEnsemble {
    pub base_score: f64,
    pub eta: f64,
    pub trees: Vec<RegressionTree>,
    /// Covariate width the model was trained on.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_features: Option<usize>,
}

impl BoostedEnsemble {
    pub fn empty(eta: f64, n_features: usize) -> Self {
        Self {
            base_score: 0.0,
            eta,
            trees: Vec::new(),
            n_features: Some(n_features),
        }
    }

    /// Trees are accumulated one at a time, `f ← f + η·tree(x)`, which is the
    /// same arithmetic the trainer uses for its running predictions.
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        let width = self.required_width();
        if x.len() < width || self.n_features.is_some_and(|p| p != x.len()) {
            return Err(Error::DimensionMismatch {
                expected: self.n_features.unwrap_or(width),
                got: x.len(),
            });
        }
        Ok(self.predict_unchecked(x))
    }

    pub(crate) fn predict_unchecked(&self, x: &[f64]) -> f64 {
        self.trees
            .iter()
            .fold(self.base_score, |acc, tree| acc + self.eta * tree.predict(x))
    }

    fn required_width(&self) -> usize {
        self.trees
            .iter()
            .filter_map(RegressionTree::max_feature)
            .max()
            .map_or(0, |f| f + 1)
    }

    pub fn rounds(&self) -> usize {
        self.trees.len()
    }

    /// The first `rounds` trees. Training is stagewise, so this equals the
    /// ensemble trained with `rounds` iterations.
    pub fn truncated(&self, rounds: usize) -> Self {
        Self {
            base_score: self.base_score,
            eta: self.eta,
            trees: self.trees.iter().take(rounds).cloned().collect(),
            n_features: self.n_features,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }
}

/// Training rows gathered into local columns, each with a presorted order.
/// Feature order never changes across rounds, so sorting happens once per
/// training run.
pub(crate) struct SortedColumns {
    cols: Vec<Vec<f64>>,
    order: Vec<Vec<u32>>,
}

impl SortedColumns {
    pub(crate) fn new(x: &Covariates, rows: &[usize]) -> Self {
        let cols: Vec<Vec<f64>> = (0..x.n_cols())
            .map(|j| {
                let col = x.column(j);
                rows.iter().map(|&i| col[i]).collect()
            })
            .collect();
        let order = cols
            .iter()
            .map(|col| {
                let mut idx: Vec<u32> = (0..col.len() as u32).collect();
                idx.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]).then(a.cmp(&b)));
                idx
            })
            .collect();
        Self { cols, order }
    }

    fn len(&self) -> usize {
        self.order.first().map_or(0, Vec::len)
    }
}

#[inline]
fn midpoint(lo: f64, hi: f64) -> f64 {
    let mid = lo + (hi - lo) * 0.5;
    // adjacent floats: the midpoint may round onto `lo`
    if mid <= lo {
        hi
    } else {
        mid
    }
}

fn sums(positions: &[u32], gh: &GradHess) -> (f64, f64) {
    positions.iter().fold((0.0, 0.0), |(g, h), &k| {
        (g + gh.g[k as usize], h + gh.h[k as usize])
    })
}

/// Exact greedy scan over every feature of one node. `orders[j]` lists the
/// node's positions sorted by feature `j`.
fn best_split_sorted(
    cols: &[Vec<f64>],
    orders: &[Vec<u32>],
    gh: &GradHess,
    grad_total: f64,
    hess_total: f64,
    params: &HyperParams,
) -> Option<SplitCandidate> {
    let lambda = params.lambda;
    let parent = score(grad_total, hess_total, lambda);
    if !(hess_total + lambda > 0.0) {
        return None;
    }
    let mut best: Option<SplitCandidate> = None;
    for (feature, order) in orders.iter().enumerate() {
        let col = &cols[feature];
        let (mut gl, mut hl) = (0.0, 0.0);
        for w in order.windows(2) {
            let (cur, next) = (w[0] as usize, w[1] as usize);
            gl += gh.g[cur];
            hl += gh.h[cur];
            let (lo, hi) = (col[cur], col[next]);
            if !(lo < hi) {
                continue;
            }
            let gr = grad_total - gl;
            let hr = hess_total - hl;
            if hl < params.min_child_hessian || hr < params.min_child_hessian {
                continue;
            }
            if !(hl + lambda > 0.0 && hr + lambda > 0.0) {
                continue;
            }
            let children = score(gl, hl, lambda) + score(gr, hr, lambda);
            let gain = 0.5 * (children - parent) - params.gamma;
            if !(gain > RELATIVE_GAIN_FLOOR * 0.5 * children) {
                continue;
            }
            // scan order is feature, then threshold: gains equal up to
            // rounding keep the earlier candidate
            if best.is_none_or(|b| gain - b.gain > RELATIVE_GAIN_FLOOR * 0.5 * children) {
                best = Some(SplitCandidate {
                    feature,
                    threshold: midpoint(lo, hi),
                    gain,
                });
            }
        }
    }
    best
}

/// Best split of `rows` over all features, if any has positive gain.
///
/// `grad_hess` is aligned with `rows`. Candidate thresholds are midpoints
/// between consecutive distinct values; ties go to the lower feature index,
/// then the smaller threshold.
pub fn find_best_split(
    x: &Covariates,
    rows: &[usize],
    grad_hess: &GradHess,
    params: &HyperParams,
) -> Option<SplitCandidate> {
    assert_eq!(rows.len(), grad_hess.len(), "grad_hess must align with rows");
    let sorted = SortedColumns::new(x, rows);
    let (g, h) = sums(&sorted.order[0], grad_hess);
    best_split_sorted(&sorted.cols, &sorted.order, grad_hess, g, h, params)
}

/// One accepted split during tree growth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitEvent {
    pub node: usize,
    pub depth: usize,
    pub feature: usize,
    pub threshold: f64,
    pub gain: f64,
}

pub(crate) struct GrownTree {
    pub tree: RegressionTree,
    /// Leaf weight reached by each local position.
    pub fitted: Vec<f64>,
    pub events: Vec<SplitEvent>,
}

pub(crate) fn grow_sorted(sorted: &SortedColumns, gh: &GradHess, params: &HyperParams) -> GrownTree {
    let m = sorted.len();
    let mut nodes = vec![Node::Leaf { weight: 0.0 }];
    let mut fitted = vec![0.0; m];
    let mut events = Vec::new();
    let mut queue = VecDeque::new();
    queue.push_back((0usize, 0usize, sorted.order.clone()));
    let mut goes_left = vec![false; m];

    while let Some((idx, depth, orders)) = queue.pop_front() {
        let (g, h) = sums(&orders[0], gh);
        let split = if depth < params.max_depth && orders[0].len() > 1 {
            best_split_sorted(&sorted.cols, &orders, gh, g, h, params)
        } else {
            None
        };
        match split {
            Some(s) => {
                let col = &sorted.cols[s.feature];
                for &k in &orders[0] {
                    goes_left[k as usize] = col[k as usize] < s.threshold;
                }
                let (left, right): (Vec<Vec<u32>>, Vec<Vec<u32>>) = orders
                    .iter()
                    .map(|o| o.iter().partition::<Vec<u32>, _>(|&&k| goes_left[k as usize]))
                    .unzip();
                let (l, r) = (nodes.len(), nodes.len() + 1);
                nodes[idx] = Node::Split {
                    feature: s.feature,
                    threshold: s.threshold,
                    left: l,
                    right: r,
                };
                nodes.push(Node::Leaf { weight: 0.0 });
                nodes.push(Node::Leaf { weight: 0.0 });
                events.push(SplitEvent {
                    node: idx,
                    depth,
                    feature: s.feature,
                    threshold: s.threshold,
                    gain: s.gain,
                });
                queue.push_back((l, depth + 1, left));
                queue.push_back((r, depth + 1, right));
            }
            None => {
                // H + λ = 0 only happens when every h (and hence g) is zero
                let weight = fit_leaf_weight(g, h, params.lambda).unwrap_or(0.0);
                nodes[idx] = Node::Leaf { weight };
                for &k in &orders[0] {
                    fitted[k as usize] = weight;
                }
            }
        }
    }
    GrownTree {
        tree: RegressionTree { nodes },
        fitted,
        events,
    }
}

/// Grows one tree depth-wise on `rows` (with `grad_hess` aligned to `rows`).
pub fn grow_tree(
    x: &Covariates,
    rows: &[usize],
    grad_hess: &GradHess,
    params: &HyperParams,
) -> RegressionTree {
    grow_tree_traced(x, rows, grad_hess, params).0
}

/// Like [`grow_tree`], also returning every accepted split in growth order.
pub fn grow_tree_traced(
    x: &Covariates,
    rows: &[usize],
    grad_hess: &GradHess,
    params: &HyperParams,
) -> (RegressionTree, Vec<SplitEvent>) {
    assert_eq!(rows.len(), grad_hess.len(), "grad_hess must align with rows");
    assert!(!rows.is_empty(), "cannot grow a tree on zero rows");
    let grown = grow_sorted(&SortedColumns::new(x, rows), grad_hess, params);
    (grown.tree, grown.events)
}

/// Forward stagewise boosting on `rows` of `x`; the loss is aligned with
/// `rows`.
///
/// Stops before `params.rounds` only when every gradient is exactly zero,
/// since all later trees would then be single zero-weight leaves.
pub fn train(
    x: &Covariates,
    rows: &[usize],
    loss: &LossSpec,
    params: &HyperParams,
) -> Result<BoostedEnsemble> {
    params.validate()?;
    if rows.is_empty() {
        return Err(Error::InvalidArgument("no training rows".into()));
    }
    if loss.len() != rows.len() {
        return Err(Error::DimensionMismatch {
            expected: rows.len(),
            got: loss.len(),
        });
    }
    let sorted = SortedColumns::new(x, rows);
    let mut ensemble = BoostedEnsemble::empty(params.eta, x.n_cols());
    let mut preds = vec![ensemble.base_score; rows.len()];
    for round in 1..=params.rounds {
        let gh = loss.grad_hess(&preds);
        if let Some(k) = gh.first_invalid() {
            return Err(Error::NonFiniteGradient {
                round,
                observation: rows[k],
            });
        }
        if gh.g.iter().all(|&g| g == 0.0) {
            break;
        }
        let grown = grow_sorted(&sorted, &gh, params);
        for (p, w) in preds.iter_mut().zip(&grown.fitted) {
            *p += params.eta * w;
        }
        ensemble.trees.push(grown.tree);
    }
    Ok(ensemble)
}
