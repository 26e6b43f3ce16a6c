//! Gini decision trees and the tree ensembles built on them: random forest,
//! random uniform forest and multi-class AdaBoost (SAMME).
//!
//! Labels are class indices `0..n_classes`. Vote ties always resolve to the
//! smallest class index.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::persist;

/// How a node picks its cut-point on each candidate feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SplitMode {
    /// Exhaustive search over midpoints of sorted distinct values.
    Best,
    /// One cut drawn uniformly between the feature's min and max at the node.
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    /// `None` grows the tree until leaves are pure or cannot be split.
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
    /// Candidate features per node; `None` uses every feature.
    pub mtry: Option<usize>,
    pub mode: SplitMode,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams {
            max_depth: None,
            min_leaf: 1,
            mtry: None,
            mode: SplitMode::Best,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    /// `x[feature] <= threshold` goes left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        counts: Vec<usize>,
        class: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<Node>,
    pub n_classes: usize,
    pub dim: usize,
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
}

fn argmax_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn validate(x: &[Vec<f64>], y: &[usize]) -> Result<(usize, usize)> {
    if x.is_empty() {
        return Err(Error::Training("no training samples".into()));
    }
    if x.len() != y.len() {
        return Err(Error::Dimension(format!("{} rows but {} labels", x.len(), y.len())));
    }
    let dim = x[0].len();
    if dim == 0 {
        return Err(Error::Dimension("zero-length feature vectors".into()));
    }
    for row in x {
        if row.len() != dim {
            return Err(Error::Dimension(format!("row length {} != {}", row.len(), dim)));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("non-finite feature value".into()));
        }
    }
    let n_classes = y.iter().max().copied().unwrap_or(0) + 1;
    Ok((dim, n_classes))
}

struct Builder<'a> {
    x: &'a [Vec<f64>],
    y: &'a [usize],
    w: Option<&'a [f64]>,
    n_classes: usize,
    dim: usize,
    params: TreeParams,
    nodes: Vec<Node>,
}

struct Cut {
    feature: usize,
    threshold: f64,
    impurity: f64,
}

impl Builder<'_> {
    fn weight(&self, i: usize) -> f64 {
        self.w.map_or(1.0, |w| w[i])
    }

    fn class_weights(&self, idx: &[usize]) -> Vec<f64> {
        let mut cw = vec![0.0; self.n_classes];
        for &i in idx {
            cw[self.y[i]] += self.weight(i);
        }
        cw
    }

    fn leaf(&self, idx: &[usize]) -> Node {
        let mut counts = vec![0usize; self.n_classes];
        for &i in idx {
            counts[self.y[i]] += 1;
        }
        Node::Leaf {
            counts,
            class: argmax_first(&self.class_weights(idx)),
        }
    }

    /// Weighted Gini of the two children, summed (not normalized by the parent weight).
    fn split_impurity(left: &[f64], right: &[f64]) -> f64 {
        let part = |cw: &[f64]| {
            let t: f64 = cw.iter().sum();
            if t <= 0.0 {
                0.0
            } else {
                t - cw.iter().map(|c| c * c).sum::<f64>() / t
            }
        };
        part(left) + part(right)
    }

    fn best_cut(&self, idx: &[usize], feature: usize) -> Option<Cut> {
        let mut order: Vec<usize> = idx.to_vec();
        order.sort_by(|&a, &b| self.x[a][feature].total_cmp(&self.x[b][feature]));
        let total = self.class_weights(idx);
        let mut left = vec![0.0; self.n_classes];
        let min_leaf = self.params.min_leaf.max(1);
        let mut best: Option<Cut> = None;
        for k in 0..order.len() - 1 {
            let i = order[k];
            left[self.y[i]] += self.weight(i);
            let a = self.x[i][feature];
            let b = self.x[order[k + 1]][feature];
            if a == b || k + 1 < min_leaf || order.len() - k - 1 < min_leaf {
                continue;
            }
            let right: Vec<f64> = total.iter().zip(&left).map(|(t, l)| t - l).collect();
            let imp = Self::split_impurity(&left, &right);
            if best.as_ref().is_none_or(|c| imp < c.impurity) {
                let mut threshold = a + (b - a) / 2.0;
                if threshold >= b {
                    threshold = a;
                }
                best = Some(Cut {
                    feature,
                    threshold,
                    impurity: imp,
                });
            }
        }
        best
    }

    fn uniform_cut(&self, idx: &[usize], feature: usize, rng: &mut ChaCha8Rng) -> Option<Cut> {
        let (lo, hi) = idx.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
            (lo.min(self.x[i][feature]), hi.max(self.x[i][feature]))
        });
        if lo >= hi {
            return None;
        }
        let threshold = rng.random_range(lo..hi);
        let mut left = vec![0.0; self.n_classes];
        let mut right = vec![0.0; self.n_classes];
        let mut n_left = 0;
        for &i in idx {
            if self.x[i][feature] <= threshold {
                left[self.y[i]] += self.weight(i);
                n_left += 1;
            } else {
                right[self.y[i]] += self.weight(i);
            }
        }
        let min_leaf = self.params.min_leaf.max(1);
        if n_left < min_leaf || idx.len() - n_left < min_leaf {
            return None;
        }
        Some(Cut {
            feature,
            threshold,
            impurity: Self::split_impurity(&left, &right),
        })
    }

    fn non_constant(&self, idx: &[usize], feature: usize) -> bool {
        let first = self.x[idx[0]][feature];
        idx.iter().any(|&i| self.x[i][feature] != first)
    }

    fn choose(&self, idx: &[usize], rng: &mut ChaCha8Rng) -> Option<Cut> {
        let mtry = self.params.mtry.unwrap_or(self.dim).clamp(1, self.dim);
        let mut features: Vec<usize> = (0..self.dim).collect();
        if mtry < self.dim {
            features.shuffle(rng);
        }
        // Constant features do not count toward mtry; keep drawing past them.
        let mut visited = 0;
        let mut best: Option<Cut> = None;
        for f in features {
            if visited == mtry {
                break;
            }
            if !self.non_constant(idx, f) {
                continue;
            }
            visited += 1;
            let cut = match self.params.mode {
                SplitMode::Best => self.best_cut(idx, f),
                SplitMode::Uniform => self.uniform_cut(idx, f, rng),
            };
            if let Some(c) = cut {
                if best.as_ref().is_none_or(|b| c.impurity < b.impurity) {
                    best = Some(c);
                }
            }
        }
        best
    }

    fn build(&mut self, root: Vec<usize>, rng: &mut ChaCha8Rng) {
        self.nodes.push(self.leaf(&root));
        let mut stack = vec![(0usize, root, 0usize)];
        while let Some((slot, idx, depth)) = stack.pop() {
            let pure = {
                let first = self.y[idx[0]];
                idx.iter().all(|&i| self.y[i] == first)
            };
            let depth_ok = self.params.max_depth.is_none_or(|d| depth < d);
            if pure || !depth_ok || idx.len() < 2 * self.params.min_leaf.max(1) {
                continue;
            }
            let Some(cut) = self.choose(&idx, rng) else {
                continue;
            };
            let (l, r): (Vec<usize>, Vec<usize>) =
                idx.iter().partition(|&&i| self.x[i][cut.feature] <= cut.threshold);
            let left = self.nodes.len();
            self.nodes.push(self.leaf(&l));
            let right = self.nodes.len();
            self.nodes.push(self.leaf(&r));
            self.nodes[slot] = Node::Split {
                feature: cut.feature,
                threshold: cut.threshold,
                left,
                right,
            };
            stack.push((right, r, depth + 1));
            stack.push((left, l, depth + 1));
        }
    }
}

/// Grows a tree on the samples listed in `idx` (repeats allowed, as in a bootstrap).
fn grow(
    x: &[Vec<f64>],
    y: &[usize],
    w: Option<&[f64]>,
    idx: Vec<usize>,
    n_classes: usize,
    params: TreeParams,
    rng: &mut ChaCha8Rng,
) -> DecisionTree {
    let dim = x[0].len();
    let mut b = Builder {
        x,
        y,
        w,
        n_classes,
        dim,
        params,
        nodes: Vec::new(),
    };
    b.build(idx, rng);
    DecisionTree {
        nodes: b.nodes,
        n_classes,
        dim,
        max_depth: params.max_depth,
        min_leaf: params.min_leaf,
    }
}

/// Trains one tree on every sample with unit weights.
pub fn train_tree(x: &[Vec<f64>], y: &[usize], params: &TreeParams, seed: u64) -> Result<DecisionTree> {
    train_tree_weighted(x, y, None, params, seed)
}

pub fn train_tree_weighted(
    x: &[Vec<f64>],
    y: &[usize],
    weights: Option<&[f64]>,
    params: &TreeParams,
    seed: u64,
) -> Result<DecisionTree> {
    let (_, n_classes) = validate(x, y)?;
    if let Some(w) = weights {
        if w.len() != x.len() || w.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Input("weights must be finite, non-negative, one per sample".into()));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(grow(x, y, weights, (0..x.len()).collect(), n_classes, *params, &mut rng))
}

impl DecisionTree {
    fn leaf_index(&self, x: &[f64]) -> usize {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if x[*feature] <= *threshold { *left } else { *right },
                Node::Leaf { .. } => return at,
            }
        }
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        if x.len() != self.dim {
            return Err(Error::Dimension(format!("expected {} features, got {}", self.dim, x.len())));
        }
        match &self.nodes[self.leaf_index(x)] {
            Node::Leaf { class, .. } => Ok(*class),
            Node::Split { .. } => unreachable!(),
        }
    }

    /// Node index of the leaf that `x` lands in.
    pub fn route(&self, x: &[f64]) -> Result<usize> {
        if x.len() != self.dim {
            return Err(Error::Dimension(format!("expected {} features, got {}", self.dim, x.len())));
        }
        Ok(self.leaf_index(x))
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }

    pub fn depth(&self) -> usize {
        fn go(t: &DecisionTree, at: usize) -> usize {
            match &t.nodes[at] {
                Node::Split { left, right, .. } => 1 + go(t, *left).max(go(t, *right)),
                Node::Leaf { .. } => 0,
            }
        }
        go(self, 0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EnsembleKind {
    RandomForest,
    RandomUniformForest,
    AdaBoost,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeEnsembleModel {
    pub kind: EnsembleKind,
    pub trees: Vec<DecisionTree>,
    pub weights: Vec<f64>,
    pub mtry: usize,
    pub oob_error: Option<f64>,
    pub n_classes: usize,
    pub dim: usize,
}

/// Default feature-subset size, ⌊√d⌋ (at least 1).
pub fn default_mtry(dim: usize) -> usize {
    ((dim as f64).sqrt().floor() as usize).max(1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestOptions {
    pub n_trees: usize,
    pub mtry: Option<usize>,
    pub seed: u64,
    /// Off only for testing: each tree then sees the full training set.
    pub bootstrap: bool,
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
}

impl ForestOptions {
    pub fn new(n_trees: usize, seed: u64) -> Self {
        ForestOptions {
            n_trees,
            mtry: None,
            seed,
            bootstrap: true,
            max_depth: None,
            min_leaf: 1,
        }
    }
}

pub fn train_random_forest(
    x: &[Vec<f64>],
    y: &[usize],
    n_trees: usize,
    mtry: Option<usize>,
    seed: u64,
) -> Result<TreeEnsembleModel> {
    let opts = ForestOptions {
        mtry,
        ..ForestOptions::new(n_trees, seed)
    };
    train_forest(x, y, EnsembleKind::RandomForest, &opts).map(|(m, _)| m)
}

pub fn train_random_uniform_forest(
    x: &[Vec<f64>],
    y: &[usize],
    n_trees: usize,
    mtry: Option<usize>,
    seed: u64,
) -> Result<TreeEnsembleModel> {
    let opts = ForestOptions {
        mtry,
        ..ForestOptions::new(n_trees, seed)
    };
    train_forest(x, y, EnsembleKind::RandomUniformForest, &opts).map(|(m, _)| m)
}

/// Trains a bagging ensemble and returns it with its OOB error curve
/// (`(n_trees, error)` after each added tree; empty without bootstrap).
pub fn train_forest(
    x: &[Vec<f64>],
    y: &[usize],
    kind: EnsembleKind,
    opts: &ForestOptions,
) -> Result<(TreeEnsembleModel, Vec<(usize, f64)>)> {
    let (dim, n_classes) = validate(x, y)?;
    if opts.n_trees == 0 {
        return Err(Error::Parameter("n_trees must be at least 1".into()));
    }
    let mode = match kind {
        EnsembleKind::RandomForest => SplitMode::Best,
        EnsembleKind::RandomUniformForest => SplitMode::Uniform,
        EnsembleKind::AdaBoost => return Err(Error::Parameter("AdaBoost is not a bagging ensemble".into())),
    };
    let mtry = opts.mtry.unwrap_or_else(|| default_mtry(dim));
    if mtry == 0 || mtry > dim {
        return Err(Error::Parameter(format!("mtry {mtry} outside 1..={dim}")));
    }
    let params = TreeParams {
        max_depth: opts.max_depth,
        min_leaf: opts.min_leaf,
        mtry: Some(mtry),
        mode,
    };
    let n = x.len();
    let mut master = ChaCha8Rng::seed_from_u64(opts.seed);
    let seeds: Vec<u64> = (0..opts.n_trees).map(|_| master.random()).collect();
    let grown: Vec<(DecisionTree, Vec<bool>)> = seeds
        .par_iter()
        .map(|&s| {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let mut in_bag = vec![!opts.bootstrap; n];
            let idx: Vec<usize> = if opts.bootstrap {
                (0..n)
                    .map(|_| {
                        let i = rng.random_range(0..n);
                        in_bag[i] = true;
                        i
                    })
                    .collect()
            } else {
                (0..n).collect()
            };
            (grow(x, y, None, idx, n_classes, params, &mut rng), in_bag)
        })
        .collect();

    let mut curve = Vec::new();
    if opts.bootstrap {
        let mut votes = vec![vec![0.0; n_classes]; n];
        for (t, (tree, in_bag)) in grown.iter().enumerate() {
            for i in 0..n {
                if !in_bag[i] {
                    votes[i][tree.predict(&x[i])?] += 1.0;
                }
            }
            let mut voted = 0usize;
            let mut wrong = 0usize;
            for i in 0..n {
                if votes[i].iter().any(|&v| v > 0.0) {
                    voted += 1;
                    if argmax_first(&votes[i]) != y[i] {
                        wrong += 1;
                    }
                }
            }
            let err = if voted == 0 { f64::NAN } else { wrong as f64 / voted as f64 };
            curve.push((t + 1, err));
        }
    }
    let oob_error = curve.last().map(|&(_, e)| e).filter(|e| e.is_finite());
    let trees: Vec<DecisionTree> = grown.into_iter().map(|(t, _)| t).collect();
    let model = TreeEnsembleModel {
        kind,
        weights: vec![1.0; trees.len()],
        trees,
        mtry,
        oob_error,
        n_classes,
        dim,
    };
    Ok((model, curve))
}

/// OOB error after each added tree of a random forest with `n_trees_max` trees.
pub fn oob_error_curve(
    x: &[Vec<f64>],
    y: &[usize],
    n_trees_max: usize,
    mtry: Option<usize>,
    seed: u64,
) -> Result<Vec<(usize, f64)>> {
    let opts = ForestOptions {
        mtry,
        ..ForestOptions::new(n_trees_max, seed)
    };
    train_forest(x, y, EnsembleKind::RandomForest, &opts).map(|(_, c)| c)
}

/// Elbow of an OOB curve: the first `n` whose error improved by less than
/// 0.25 percentage points over the previous 10 trees. Falls back to the last
/// point when no such `n` exists.
pub fn select_n_trees(curve: &[(usize, f64)]) -> Option<usize> {
    const WINDOW: usize = 10;
    const MIN_GAIN: f64 = 0.0025;
    for k in WINDOW..curve.len() {
        if curve[k - WINDOW].1 - curve[k].1 < MIN_GAIN {
            return Some(curve[k].0);
        }
    }
    curve.last().map(|&(n, _)| n)
}

pub fn oob_curve_csv(curve: &[(usize, f64)]) -> String {
    let mut out = String::from("n_trees,oob_error\n");
    for (n, e) in curve {
        out.push_str(&format!("{n},{e}\n"));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoostRound {
    /// Weighted training error of the accepted tree on the round's weights.
    pub error: f64,
    pub beta: f64,
    /// Sum of sample weights after the update.
    pub weight_sum: f64,
    /// Resample-and-retry attempts before this tree was accepted.
    pub retries: usize,
}

pub const ADABOOST_ROUNDS: usize = 100;
pub const ADABOOST_DEPTH: usize = 3;
const MAX_RETRIES: usize = 10;
const MIN_ERROR: f64 = 1e-10;

pub fn train_adaboost(
    x: &[Vec<f64>],
    y: &[usize],
    n_rounds: usize,
    base_depth: usize,
    seed: u64,
) -> Result<TreeEnsembleModel> {
    train_adaboost_detailed(x, y, n_rounds, base_depth, seed).map(|(m, _)| m)
}

pub fn train_adaboost_detailed(
    x: &[Vec<f64>],
    y: &[usize],
    n_rounds: usize,
    base_depth: usize,
    seed: u64,
) -> Result<(TreeEnsembleModel, Vec<BoostRound>)> {
    let (dim, n_classes) = validate(x, y)?;
    if n_rounds == 0 {
        return Err(Error::Parameter("n_rounds must be at least 1".into()));
    }
    let n = x.len();
    let mut present = vec![false; n_classes];
    for &c in y {
        present[c] = true;
    }
    let k = present.iter().filter(|&&p| p).count();
    let params = TreeParams {
        max_depth: Some(base_depth),
        min_leaf: 1,
        mtry: None,
        mode: SplitMode::Best,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = vec![1.0 / n as f64; n];
    let mut trees = Vec::new();
    let mut betas = Vec::new();
    let mut rounds = Vec::new();

    let misclassified = |tree: &DecisionTree| -> Vec<bool> {
        (0..n).map(|i| tree.predict(&x[i]).map(|p| p != y[i]).unwrap_or(true)).collect()
    };

    for _ in 0..n_rounds {
        if k < 2 {
            let tree = grow(x, y, Some(&w), (0..n).collect(), n_classes, params, &mut rng);
            trees.push(tree);
            betas.push(1.0);
            rounds.push(BoostRound {
                error: 0.0,
                beta: 1.0,
                weight_sum: 1.0,
                retries: 0,
            });
            break;
        }
        let limit = 1.0 - 1.0 / k as f64;
        let mut tree = grow(x, y, Some(&w), (0..n).collect(), n_classes, params, &mut rng);
        let mut miss = misclassified(&tree);
        let mut err: f64 = (0..n).filter(|&i| miss[i]).map(|i| w[i]).sum();
        let mut retries = 0;
        while err >= limit && retries < MAX_RETRIES {
            retries += 1;
            let idx = weighted_resample(&w, &mut rng);
            tree = grow(x, y, None, idx, n_classes, params, &mut rng);
            miss = misclassified(&tree);
            err = (0..n).filter(|&i| miss[i]).map(|i| w[i]).sum();
        }
        if err >= limit {
            if trees.is_empty() {
                // Nothing better than chance was found; keep one tree so the model can predict.
                trees.push(tree);
                betas.push(1.0);
                rounds.push(BoostRound {
                    error: err,
                    beta: 1.0,
                    weight_sum: 1.0,
                    retries,
                });
            }
            break;
        }
        let perfect = err <= 0.0;
        let e = err.max(MIN_ERROR);
        let beta = ((1.0 - e) / e).ln() + ((k - 1) as f64).ln();
        trees.push(tree);
        betas.push(beta);
        if perfect {
            rounds.push(BoostRound {
                error: err,
                beta,
                weight_sum: w.iter().sum(),
                retries,
            });
            break;
        }
        let boost = beta.exp();
        for i in 0..n {
            if miss[i] {
                w[i] *= boost;
            }
        }
        let total: f64 = w.iter().sum();
        for v in w.iter_mut() {
            *v /= total;
        }
        rounds.push(BoostRound {
            error: err,
            beta,
            weight_sum: w.iter().sum(),
            retries,
        });
    }
    let model = TreeEnsembleModel {
        kind: EnsembleKind::AdaBoost,
        trees,
        weights: betas,
        mtry: dim,
        oob_error: None,
        n_classes,
        dim,
    };
    Ok((model, rounds))
}

fn weighted_resample(w: &[f64], rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut cdf = Vec::with_capacity(w.len());
    let mut acc = 0.0;
    for &v in w {
        acc += v;
        cdf.push(acc);
    }
    (0..w.len())
        .map(|_| {
            let u = rng.random::<f64>() * acc;
            cdf.partition_point(|&c| c <= u).min(w.len() - 1)
        })
        .collect()
}

impl TreeEnsembleModel {
    /// Per-class vote totals (tree weight per vote).
    pub fn votes(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim {
            return Err(Error::Dimension(format!("expected {} features, got {}", self.dim, x.len())));
        }
        let mut votes = vec![0.0; self.n_classes];
        for (tree, w) in self.trees.iter().zip(&self.weights) {
            votes[tree.predict(x)?] += w;
        }
        Ok(votes)
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        self.votes(x).map(|v| argmax_first(&v))
    }

    pub fn to_text(&self) -> String {
        persist::to_text(ENSEMBLE_FORMAT, ENSEMBLE_VERSION, self)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        persist::from_text(ENSEMBLE_FORMAT, ENSEMBLE_VERSION, text)
    }
}

pub fn ensemble_predict(model: &TreeEnsembleModel, x: &[f64]) -> Result<usize> {
    model.predict(x)
}

/// Weighted vote over `(class, weight)` pairs; ties go to the smallest class.
pub fn weighted_vote(votes: &[(usize, f64)], n_classes: usize) -> usize {
    let mut totals = vec![0.0; n_classes];
    for &(c, w) in votes {
        totals[c] += w;
    }
    argmax_first(&totals)
}

const ENSEMBLE_FORMAT: &str = "hep2-ensemble";
const ENSEMBLE_VERSION: u32 = 1;

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    fn blobs(seed: u64, per_class: usize, centers: &[[f64; 2]], spread: f64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, spread).unwrap();
        let mut x = Vec::new();
        let mut y = Vec::new();
        for _ in 0..per_class {
            for (c, m) in centers.iter().enumerate() {
                x.push(vec![
                    m[0] + noise.sample(&mut rng),
                    m[1] + noise.sample(&mut rng),
                    noise.sample(&mut rng),
                    noise.sample(&mut rng),
                ]);
                y.push(c);
            }
        }
        (x, y)
    }

    fn leaf_counts(tree: &DecisionTree) -> Vec<(usize, Vec<usize>)> {
        tree.nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match n {
                Node::Leaf { counts, .. } => Some((i, counts.clone())),
                _ => None,
            })
            .collect()
    }

    #[test]
    fn pure_labels_single_leaf() {
        let x = vec![vec![0.0], vec![1.0], vec![2.0]];
        let t = train_tree(&x, &[1, 1, 1], &TreeParams::default(), 0).unwrap();
        assert_eq!(t.nodes.len(), 1);
        let f = train_random_uniform_forest(&x, &[1, 1, 1], 5, None, 3).unwrap();
        assert!(f.trees.iter().all(|t| t.nodes.len() == 1));
    }

    #[test]
    fn one_dimensional_split() {
        let x = vec![vec![0.0], vec![1.0]];
        let t = train_tree(&x, &[0, 1], &TreeParams::default(), 0).unwrap();
        assert_eq!(t.nodes.len(), 3);
        match &t.nodes[0] {
            Node::Split { threshold, .. } => assert!(*threshold > 0.0 && *threshold < 1.0),
            _ => panic!("root should split"),
        }
        for (_, counts) in leaf_counts(&t) {
            assert_eq!(counts.iter().filter(|&&c| c > 0).count(), 1);
        }
    }

    #[test]
    fn xor_depth_two() {
        // Any first split leaves a 1:1 mix on each side; the second level separates it.
        let x = vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![0.0, 1.0], vec![1.0, 0.0]];
        let y = vec![0, 0, 1, 1];
        let params = TreeParams {
            max_depth: Some(2),
            ..TreeParams::default()
        };
        let t = train_tree(&x, &y, &params, 0).unwrap();
        assert_eq!(t.depth(), 2);
        for (xi, &yi) in x.iter().zip(&y) {
            assert_eq!(t.predict(xi).unwrap(), yi);
        }
    }

    #[test]
    fn empty_data_is_an_error() {
        assert!(matches!(train_tree(&[], &[], &TreeParams::default(), 0), Err(Error::Training(_))));
        assert!(train_random_forest(&[vec![0.0]], &[0], 0, None, 0).is_err());
        assert!(train_adaboost(&[vec![0.0]], &[0], 0, 3, 0).is_err());
    }

    #[test]
    fn single_tree_forest_equals_tree() {
        let (x, y) = blobs(4, 30, &[[0.0, 0.0], [1.0, 1.0], [0.0, 2.0]], 0.6);
        let opts = ForestOptions {
            mtry: Some(4),
            bootstrap: false,
            ..ForestOptions::new(1, 9)
        };
        let (f, curve) = train_forest(&x, &y, EnsembleKind::RandomForest, &opts).unwrap();
        assert!(curve.is_empty());
        assert_eq!(f.oob_error, None);
        let t = train_tree(&x, &y, &TreeParams::default(), 0).unwrap();
        assert_eq!(f.trees[0].nodes, t.nodes);
        let (probe, _) = blobs(5, 20, &[[0.5, 0.5], [0.0, 1.0], [1.0, 2.0]], 1.0);
        for p in &probe {
            assert_eq!(f.predict(p).unwrap(), t.predict(p).unwrap());
        }
    }

    #[test]
    fn forests_are_deterministic() {
        let (x, y) = blobs(6, 25, &[[0.0, 0.0], [1.5, 1.5]], 0.7);
        for kind in [EnsembleKind::RandomForest, EnsembleKind::RandomUniformForest] {
            let opts = ForestOptions::new(15, 42);
            let a = train_forest(&x, &y, kind, &opts).unwrap();
            let b = train_forest(&x, &y, kind, &opts).unwrap();
            assert_eq!(a.0, b.0);
            assert_eq!(a.1, b.1);
            let c = train_forest(&x, &y, kind, &ForestOptions::new(15, 43)).unwrap();
            assert_ne!(a.0.trees, c.0.trees);
        }
    }

    #[test]
    fn oob_error_on_separable_blobs() {
        let (x, y) = blobs(7, 100, &[[0.0, 0.0], [3.0, 3.0]], 0.6);
        let f = train_random_forest(&x, &y, 50, None, 1).unwrap();
        let oob = f.oob_error.unwrap();
        assert!(oob < 0.10, "oob {oob}");
        let (hx, hy) = blobs(8, 100, &[[0.0, 0.0], [3.0, 3.0]], 0.6);
        let wrong = hx.iter().zip(&hy).filter(|(xi, &yi)| f.predict(xi).unwrap() != yi).count();
        let holdout = wrong as f64 / hx.len() as f64;
        assert!(holdout < 0.10, "holdout {holdout}");
        assert!((oob - holdout).abs() < 0.05);
    }

    #[test]
    fn oob_curve_shape_and_prefix() {
        let (x, y) = blobs(10, 60, &[[0.0, 0.0], [1.2, 1.2], [0.0, 2.4]], 0.6);
        let curve = oob_error_curve(&x, &y, 60, None, 5).unwrap();
        assert_eq!(curve.len(), 60);
        assert_eq!(curve, oob_error_curve(&x, &y, 60, None, 5).unwrap());
        // Early trees leave many samples with few OOB votes; the tail should be lower.
        let head: f64 = curve[..5].iter().map(|p| p.1).sum::<f64>() / 5.0;
        let tail: f64 = curve[50..].iter().map(|p| p.1).sum::<f64>() / 10.0;
        assert!(tail <= head + 1e-12, "head {head} tail {tail}");
        let short = oob_error_curve(&x, &y, 20, None, 5).unwrap();
        assert_eq!(short[..], curve[..20]);
        assert_eq!(oob_error_curve(&x, &y, 1, None, 5).unwrap().len(), 1);
        let csv = oob_curve_csv(&short);
        assert!(csv.starts_with("n_trees,oob_error\n1,"));
    }

    #[test]
    fn elbow_rule() {
        // 0.5/(n-10) - 0.5/n = 5/(n(n-10)) drops below 0.0025 once n(n-10) > 2000.
        let mut curve: Vec<(usize, f64)> = (1..=80).map(|n| (n, 0.5 / n as f64)).collect();
        assert_eq!(select_n_trees(&curve), Some(51));
        curve.truncate(5);
        assert_eq!(select_n_trees(&curve), Some(5));
        let flat: Vec<(usize, f64)> = (1..=30).map(|n| (n, 0.1)).collect();
        assert_eq!(select_n_trees(&flat), Some(11));
        assert_eq!(select_n_trees(&[]), None);
    }

    #[test]
    fn vote_rules() {
        assert_eq!(weighted_vote(&[(0, 1.0), (0, 1.0), (1, 1.0)], 2), 0);
        assert_eq!(weighted_vote(&[(3, 1.0), (1, 1.0), (3, 1.0), (1, 1.0)], 4), 1);
        assert_eq!(weighted_vote(&[(0, 2.0), (1, 1.0)], 2), 0);
        let leaf = |c: usize| DecisionTree {
            nodes: vec![Node::Leaf {
                counts: vec![0; 4],
                class: c,
            }],
            n_classes: 4,
            dim: 1,
            max_depth: None,
            min_leaf: 1,
        };
        let mut m = TreeEnsembleModel {
            kind: EnsembleKind::RandomForest,
            trees: vec![leaf(0), leaf(0), leaf(1)],
            weights: vec![1.0; 3],
            mtry: 1,
            oob_error: None,
            n_classes: 4,
            dim: 1,
        };
        assert_eq!(ensemble_predict(&m, &[0.0]).unwrap(), 0);
        m.trees = vec![leaf(3), leaf(1), leaf(1), leaf(3)];
        m.weights = vec![1.0; 4];
        assert_eq!(m.predict(&[0.0]).unwrap(), 1);
        m.kind = EnsembleKind::AdaBoost;
        m.trees = vec![leaf(2), leaf(0)];
        m.weights = vec![2.0, 1.0];
        assert_eq!(m.predict(&[0.0]).unwrap(), 2);
        assert!(matches!(m.predict(&[0.0, 1.0]), Err(Error::Dimension(_))));
    }

    #[test]
    fn adaboost_stops_on_perfect_round() {
        let (x, y) = blobs(11, 30, &[[0.0, 0.0], [5.0, 5.0]], 0.3);
        let (m, rounds) = train_adaboost_detailed(&x, &y, 50, 3, 0).unwrap();
        assert_eq!(m.trees.len(), 1);
        assert_eq!(rounds.len(), 1);
        assert!(m.weights[0] > 0.0);
        for (xi, &yi) in x.iter().zip(&y) {
            assert_eq!(m.predict(xi).unwrap(), yi);
        }
    }

    #[test]
    fn adaboost_rounds_keep_a_distribution() {
        let (x, y) = blobs(12, 40, &[[0.0, 0.0], [1.0, 0.5], [0.5, 1.0]], 0.7);
        let (m, rounds) = train_adaboost_detailed(&x, &y, 30, 2, 1).unwrap();
        assert!(m.trees.len() > 1);
        assert_eq!(m.trees.len(), m.weights.len());
        for r in &rounds {
            assert!((r.weight_sum - 1.0).abs() < 1e-12);
            assert!(r.error < 1.0 - 1.0 / 3.0);
            assert!(r.beta > 0.0);
        }
        assert!(m.weights.iter().all(|&b| b > 0.0));
        let train_acc = x.iter().zip(&y).filter(|(xi, &yi)| m.predict(xi).unwrap() == yi).count() as f64
            / x.len() as f64;
        let first = train_tree_weighted(
            &x,
            &y,
            None,
            &TreeParams {
                max_depth: Some(2),
                ..TreeParams::default()
            },
            0,
        )
        .unwrap();
        let base_acc = x.iter().zip(&y).filter(|(xi, &yi)| first.predict(xi).unwrap() == yi).count() as f64
            / x.len() as f64;
        assert!(train_acc >= base_acc);
    }

    #[test]
    fn uniform_trees_are_less_correlated() {
        let (x, y) = blobs(13, 60, &[[0.0, 0.0], [1.0, 1.0]], 0.8);
        let (probe, _) = blobs(14, 100, &[[0.0, 0.0], [1.0, 1.0]], 0.9);
        let mean_corr = |m: &TreeEnsembleModel| {
            let preds: Vec<Vec<f64>> = m
                .trees
                .iter()
                .map(|t| probe.iter().map(|p| t.predict(p).unwrap() as f64).collect())
                .collect();
            let mut total = 0.0;
            let mut pairs = 0.0;
            for a in 0..preds.len() {
                for b in a + 1..preds.len() {
                    total += pearson(&preds[a], &preds[b]);
                    pairs += 1.0;
                }
            }
            total / pairs
        };
        let rf = train_random_forest(&x, &y, 30, None, 21).unwrap();
        let ruf = train_random_uniform_forest(&x, &y, 30, None, 21).unwrap();
        let (a, b) = (mean_corr(&ruf), mean_corr(&rf));
        assert!(a <= b, "uniform {a} vs standard {b}");
    }

    fn pearson(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        if va == 0.0 || vb == 0.0 {
            if va == vb {
                1.0
            } else {
                0.0
            }
        } else {
            cov / (va * vb).sqrt()
        }
    }

    #[test]
    fn ensemble_text_round_trip() {
        let (x, y) = blobs(15, 20, &[[0.0, 0.0], [1.0, 1.0]], 0.5);
        let f = train_random_forest(&x, &y, 4, None, 2).unwrap();
        assert_eq!(TreeEnsembleModel::from_text(&f.to_text()).unwrap(), f);
        let bad = f.to_text().replace("hep2-ensemble", "hep2-other");
        assert!(matches!(TreeEnsembleModel::from_text(&bad), Err(Error::Version { .. })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn routing_reproduces_leaf_counts(
            seed in 0u64..1000,
            n in 2usize..40,
            uniform in any::<bool>(),
            depth in prop::option::of(1usize..6),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..3).map(|_| (rng.random_range(0..5) as f64) * 0.5).collect())
                .collect();
            let y: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
            let params = TreeParams {
                max_depth: depth,
                mtry: Some(2),
                mode: if uniform { SplitMode::Uniform } else { SplitMode::Best },
                ..TreeParams::default()
            };
            let t = train_tree(&x, &y, &params, seed).unwrap();
            let mut routed: std::collections::HashMap<usize, Vec<usize>> = Default::default();
            for (xi, &yi) in x.iter().zip(&y) {
                routed.entry(t.route(xi).unwrap()).or_insert_with(|| vec![0; t.n_classes])[yi] += 1;
            }
            for (leaf, counts) in leaf_counts(&t) {
                let expected = routed.remove(&leaf).unwrap_or_else(|| vec![0; t.n_classes]);
                prop_assert_eq!(counts, expected);
            }
            prop_assert!(routed.is_empty());
            for node in &t.nodes {
                if let Node::Split { left, right, .. } = node {
                    prop_assert!(*left < t.nodes.len() && *right < t.nodes.len() && left != right);
                }
            }
            if let Some(d) = depth {
                prop_assert!(t.depth() <= d);
            }
        }

        #[test]
        fn boosting_weights_stay_normalized(seed in 0u64..1000) {
            let (x, y) = blobs(seed, 15, &[[0.0, 0.0], [0.7, 0.7], [0.0, 1.4]], 0.8);
            let (m, rounds) = train_adaboost_detailed(&x, &y, 8, 1, seed).unwrap();
            prop_assert!(!m.trees.is_empty());
            for r in rounds {
                prop_assert!((r.weight_sum - 1.0).abs() < 1e-12);
            }
        }
    }
}
