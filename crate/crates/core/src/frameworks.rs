//! Multi-class topologies built from binary SVMs and tree ensembles.
//!
//! Single-stage kinds (one-vs-one, tree ensembles) output one class per
//! sample. Two-stage kinds (one-vs-rest and the two hierarchies) first run
//! per-class verification blocks, each of which may accept the sample; a
//! resolver then picks among the accepting classes. A sample no block accepts
//! is rejected.
//!
//! Classes are indices `0..n_classes` in [`ClassLabel`] order. Binary models
//! vote for their first class on a non-negative score.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{fit_zscore, pool_indices, NormalizationStats, POOL_MEAN, POOL_VARIANCE};
use crate::labels::ClassLabel;
use crate::svm::{grid_search_with, SelectionMetric, SolverOptions, SvmModel, TrainGrid};
use crate::trees::{
    select_n_trees, train_adaboost, train_forest, EnsembleKind, ForestOptions, TreeEnsembleModel, ADABOOST_DEPTH,
    ADABOOST_ROUNDS,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FrameworkKind {
    OneVsOne,
    OneVsRest,
    HierCascade,
    HierCommon,
    RandomForest,
    RandomUniformForest,
    AdaBoost,
}

impl FrameworkKind {
    pub const ALL: [FrameworkKind; 7] = [
        FrameworkKind::OneVsOne,
        FrameworkKind::OneVsRest,
        FrameworkKind::HierCascade,
        FrameworkKind::HierCommon,
        FrameworkKind::RandomForest,
        FrameworkKind::RandomUniformForest,
        FrameworkKind::AdaBoost,
    ];

    pub fn short(self) -> &'static str {
        match self {
            FrameworkKind::OneVsOne => "ovo",
            FrameworkKind::OneVsRest => "ovr",
            FrameworkKind::HierCascade => "cascade",
            FrameworkKind::HierCommon => "common-hier",
            FrameworkKind::RandomForest => "rf",
            FrameworkKind::RandomUniformForest => "ruf",
            FrameworkKind::AdaBoost => "adaboost",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.short() == s)
    }

    pub fn is_two_stage(self) -> bool {
        matches!(
            self,
            FrameworkKind::OneVsRest | FrameworkKind::HierCascade | FrameworkKind::HierCommon
        )
    }

    /// Whether the kind reads the scalar pool instead of the full feature vector.
    pub fn uses_pool(self) -> bool {
        self == FrameworkKind::HierCascade
    }
}

/// Second-stage choice for two-stage kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ResolverChoice {
    Score,
    Pairwise,
}

impl ResolverChoice {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "score" => Some(ResolverChoice::Score),
            "pairwise" => Some(ResolverChoice::Pairwise),
            _ => None,
        }
    }

    pub fn short(self) -> &'static str {
        match self {
            ResolverChoice::Score => "score",
            ResolverChoice::Pairwise => "pairwise",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ResolverKind {
    None,
    /// Largest one-vs-rest decision score.
    SvmScore,
    /// Largest mean sub-block score.
    AvgSvmScore,
    PairwiseBlocks,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameworkSpec {
    pub kind: FrameworkKind,
    pub resolver: Option<ResolverChoice>,
}

impl FrameworkSpec {
    /// Two-stage kinds default to score resolution; other kinds reject a resolver.
    pub fn new(kind: FrameworkKind, resolver: Option<ResolverChoice>) -> Result<Self> {
        if resolver.is_some() && !kind.is_two_stage() {
            return Err(Error::Parameter(format!("{} takes no resolver", kind.short())));
        }
        let resolver = if kind.is_two_stage() {
            Some(resolver.unwrap_or(ResolverChoice::Score))
        } else {
            None
        };
        Ok(FrameworkSpec { kind, resolver })
    }

    pub fn label(&self) -> String {
        match self.resolver {
            Some(r) => format!("{}+{}", self.kind.short(), r.short()),
            None => self.kind.short().to_string(),
        }
    }
}

/// Feature views for a set of samples: the high-dimensional vector used by
/// most kinds and the scalar pool used by the cascade.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SampleSet {
    pub full: Vec<Vec<f64>>,
    /// Empty when no cascade is trained.
    pub pool: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn subset(&self, idx: &[usize]) -> SampleSet {
        SampleSet {
            full: idx.iter().map(|&i| self.full[i].clone()).collect(),
            pool: if self.pool.is_empty() {
                Vec::new()
            } else {
                idx.iter().map(|&i| self.pool[i].clone()).collect()
            },
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    pub fn pool_row(&self, i: usize) -> &[f64] {
        self.pool.get(i).map_or(&[], |r| r.as_slice())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub n_classes: usize,
    pub grid: TrainGrid,
    /// Grid for each of the 210 subset searches in a cascade sub-block.
    pub cascade_grid: TrainGrid,
    pub solver: SolverOptions,
    /// Metric for pairwise models (one-vs-one and the pairwise resolver).
    pub pair_metric: SelectionMetric,
    /// Metric for first-stage verification blocks.
    pub first_stage_metric: SelectionMetric,
    pub seed: u64,
    pub n_trees_max: usize,
    pub adaboost_rounds: usize,
    pub adaboost_depth: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            n_classes: ClassLabel::COUNT,
            grid: TrainGrid::default(),
            cascade_grid: TrainGrid::default(),
            solver: SolverOptions::default(),
            pair_metric: SelectionMetric::BalancedAccuracy,
            first_stage_metric: SelectionMetric::PositiveWeighted(0.75),
            seed: 0,
            n_trees_max: 200,
            adaboost_rounds: ADABOOST_ROUNDS,
            adaboost_depth: ADABOOST_DEPTH,
        }
    }
}

/// Binary SVM separating class `a` (score ≥ 0) from class `b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairModel {
    pub a: usize,
    pub b: usize,
    /// Input columns the SVM reads; `None` means the whole vector.
    pub features: Option<Vec<usize>>,
    pub svm: SvmModel,
    pub c: f64,
    pub gamma: f64,
    pub validation_score: f64,
}

impl PairModel {
    /// Decision score, positive toward `a`.
    pub fn score(&self, x: &[f64]) -> Result<f64> {
        match &self.features {
            None => self.svm.decision_score(x),
            Some(cols) => {
                if let Some(&bad) = cols.iter().find(|&&c| c >= x.len()) {
                    return Err(Error::Dimension(format!("column {bad} outside a {}-vector", x.len())));
                }
                let picked: Vec<f64> = cols.iter().map(|&c| x[c]).collect();
                self.svm.decision_score(&picked)
            }
        }
    }

    /// Score signed toward class `c` (which must be `a` or `b`).
    pub fn score_toward(&self, c: usize, x: &[f64]) -> Result<f64> {
        let s = self.score(x)?;
        Ok(if c == self.a { s } else { -s })
    }

    pub fn winner(&self, x: &[f64]) -> Result<usize> {
        Ok(if self.score(x)? >= 0.0 { self.a } else { self.b })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OvrBlock {
    pub owner: usize,
    pub svm: SvmModel,
    pub c: f64,
    pub gamma: f64,
    pub validation_score: f64,
}

/// Owner-vs-each-opponent chain; accepts only when every sub-block votes for the owner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationBlock {
    pub owner: usize,
    /// Opponents in ascending class order; `a` is always the owner.
    pub subs: Vec<PairModel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FrameworkBody {
    OneVsOne(Vec<PairModel>),
    OneVsRest(Vec<OvrBlock>),
    Hierarchy(Vec<VerificationBlock>),
    Ensemble(TreeEnsembleModel),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Resolver {
    None,
    Score,
    Pairwise(Vec<PairModel>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameworkModel {
    pub kind: FrameworkKind,
    pub n_classes: usize,
    pub body: FrameworkBody,
    pub resolver: Resolver,
    /// Fitted on the training rows of the full view.
    pub full_norm: NormalizationStats,
    /// Fitted on the training rows of the pool view (cascade only).
    pub pool_norm: Option<NormalizationStats>,
}

/// What happened to one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    /// Classes whose first-stage block accepted, ascending. Single-stage
    /// kinds report their prediction here.
    pub accepted: Vec<usize>,
    /// Per-class first-stage score (`NaN` where a kind has none).
    pub scores: Vec<f64>,
    /// Classes still standing after the second stage (a subset of `accepted`).
    pub survivors: Vec<usize>,
    /// Final class, or `None` for a rejection.
    pub assigned: Option<usize>,
}

impl Outcome {
    fn single(class: usize, scores: Vec<f64>) -> Self {
        Outcome {
            accepted: vec![class],
            scores,
            survivors: vec![class],
            assigned: Some(class),
        }
    }
}

/// First-stage result of a two-stage framework.
#[derive(Debug, Clone, PartialEq)]
pub struct FirstStageOutcome {
    pub accepted: Vec<usize>,
    pub scores: Vec<f64>,
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

/// Per-class draw counts for the negatives of block `target`: each other
/// class contributes `round(α N_j)` with `α = N_i / Σ_{j≠i} N_j`, and the
/// largest class absorbs the rounding so the draws total `N_i` when possible.
pub fn balanced_negative_sample(counts: &[usize], target: usize) -> Result<Vec<usize>> {
    if target >= counts.len() {
        return Err(Error::Parameter(format!("class {target} outside {} classes", counts.len())));
    }
    let n_i = counts[target];
    if n_i == 0 {
        return Err(Error::InsufficientData(format!("class {target} has no samples")));
    }
    let others: usize = counts.iter().enumerate().filter(|&(j, _)| j != target).map(|(_, &n)| n).sum();
    let mut draws = vec![0usize; counts.len()];
    if others == 0 {
        return Ok(draws);
    }
    let alpha = n_i as f64 / others as f64;
    for (j, &n) in counts.iter().enumerate() {
        if j != target {
            draws[j] = ((alpha * n as f64).round() as usize).min(n);
        }
    }
    let want = n_i.min(others);
    let mut order: Vec<usize> = (0..counts.len()).filter(|&j| j != target).collect();
    // Largest class first; ties to the smallest index.
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    for &j in &order {
        let total: usize = draws.iter().sum();
        if total == want {
            break;
        }
        if total < want {
            draws[j] = (draws[j] + (want - total)).min(counts[j]);
        } else {
            draws[j] -= (total - want).min(draws[j]);
        }
    }
    Ok(draws)
}

/// Every subset of size 3 to 6 of the 8-scalar cascade pool, smaller sizes first.
pub fn cascade_subsets() -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for size in 3..=6 {
        let mut combo: Vec<usize> = (0..size).collect();
        loop {
            out.push(combo.clone());
            let mut i = size;
            while i > 0 && combo[i - 1] == 8 - size + i - 1 {
                i -= 1;
            }
            if i == 0 {
                break;
            }
            combo[i - 1] += 1;
            for k in i..size {
                combo[k] = combo[k - 1] + 1;
            }
        }
    }
    out
}

/// The 8 pool columns a cascade sub-block may draw from: the two classes'
/// scalar triplets, then masked mean and variance.
pub fn cascade_candidates(owner: usize, opponent: usize) -> Result<[usize; 8]> {
    let class = |i: usize| {
        ClassLabel::from_index(i).ok_or_else(|| Error::Parameter(format!("class index {i} has no scalar pool")))
    };
    let a = pool_indices(class(owner)?);
    let b = pool_indices(class(opponent)?);
    Ok([a[0], a[1], a[2], b[0], b[1], b[2], POOL_MEAN, POOL_VARIANCE])
}

fn check_classes(labels: &[usize], n_classes: usize, what: &str) -> Result<()> {
    let mut seen = vec![false; n_classes];
    for &l in labels {
        if l >= n_classes {
            return Err(Error::Input(format!("label {l} outside {n_classes} classes")));
        }
        seen[l] = true;
    }
    if let Some(missing) = seen.iter().position(|&s| !s) {
        return Err(Error::Training(format!("class {} missing from {what} data", missing + 1)));
    }
    Ok(())
}

fn class_indices(labels: &[usize], n_classes: usize) -> Vec<Vec<usize>> {
    let mut by_class = vec![Vec::new(); n_classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    by_class
}

struct Normalized {
    train: SampleSet,
    val: SampleSet,
    full_norm: NormalizationStats,
    pool_norm: Option<NormalizationStats>,
}

fn normalize(train: &SampleSet, val: &SampleSet, with_pool: bool) -> Result<Normalized> {
    let full_norm = fit_zscore(&train.full, "train")?;
    let pool_norm = if with_pool {
        if train.pool.len() != train.len() || val.pool.len() != val.len() {
            return Err(Error::Input("cascade training needs the scalar pool view".into()));
        }
        Some(fit_zscore(&train.pool, "train")?)
    } else {
        None
    };
    let apply = |s: &SampleSet| -> Result<SampleSet> {
        Ok(SampleSet {
            full: full_norm.apply_rows(&s.full)?,
            pool: match &pool_norm {
                Some(p) => p.apply_rows(&s.pool)?,
                None => Vec::new(),
            },
            labels: s.labels.clone(),
        })
    };
    Ok(Normalized {
        train: apply(train)?,
        val: apply(val)?,
        full_norm: full_norm.clone(),
        pool_norm: pool_norm.clone(),
    })
}

fn pick_rows(rows: &[Vec<f64>], idx: &[usize], cols: Option<&[usize]>) -> Vec<Vec<f64>> {
    idx.iter()
        .map(|&i| match cols {
            None => rows[i].clone(),
            Some(c) => c.iter().map(|&k| rows[i][k]).collect(),
        })
        .collect()
}

/// Grid-tuned SVM for `a` (+1) against `b` (−1) on the given view.
#[allow(clippy::too_many_arguments)]
fn fit_pair(
    train_rows: &[Vec<f64>],
    train_by_class: &[Vec<usize>],
    val_rows: &[Vec<f64>],
    val_by_class: &[Vec<usize>],
    a: usize,
    b: usize,
    cols: Option<&[usize]>,
    grid: &TrainGrid,
    metric: SelectionMetric,
    solver: SolverOptions,
) -> Result<PairModel> {
    let tr_idx: Vec<usize> = train_by_class[a].iter().chain(&train_by_class[b]).copied().collect();
    let tr_y: Vec<i8> = tr_idx.iter().map(|i| if train_by_class[a].contains(i) { 1 } else { -1 }).collect();
    let va_idx: Vec<usize> = val_by_class[a].iter().chain(&val_by_class[b]).copied().collect();
    let va_y: Vec<i8> = (0..va_idx.len()).map(|k| if k < val_by_class[a].len() { 1 } else { -1 }).collect();
    let r = grid_search_with(
        &pick_rows(train_rows, &tr_idx, cols),
        &tr_y,
        &pick_rows(val_rows, &va_idx, cols),
        &va_y,
        grid,
        metric,
        solver,
    )?;
    Ok(PairModel {
        a,
        b,
        features: cols.map(|c| c.to_vec()),
        svm: r.model,
        c: r.c,
        gamma: r.gamma,
        validation_score: r.score,
    })
}

fn all_pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b))).collect()
}

/// 15 (for 6 classes) grid-tuned pairwise SVMs on the full view. Inputs must
/// already be normalized.
fn pairwise_models(train: &SampleSet, val: &SampleSet, cfg: &TrainConfig) -> Result<Vec<PairModel>> {
    let tr = class_indices(&train.labels, cfg.n_classes);
    let va = class_indices(&val.labels, cfg.n_classes);
    all_pairs(cfg.n_classes)
        .par_iter()
        .map(|&(a, b)| fit_pair(&train.full, &tr, &val.full, &va, a, b, None, &cfg.grid, cfg.pair_metric, cfg.solver))
        .collect()
}

fn validate_sets(train: &SampleSet, val: &SampleSet, cfg: &TrainConfig) -> Result<()> {
    if cfg.n_classes < 2 {
        return Err(Error::Parameter("need at least two classes".into()));
    }
    for (s, what) in [(train, "training"), (val, "validation")] {
        if s.full.len() != s.labels.len() {
            return Err(Error::Dimension(format!("{what}: {} rows vs {} labels", s.full.len(), s.labels.len())));
        }
        check_classes(&s.labels, cfg.n_classes, what)?;
    }
    cfg.grid.validate()?;
    Ok(())
}

pub fn train_one_vs_one(train: &SampleSet, val: &SampleSet, cfg: &TrainConfig) -> Result<FrameworkModel> {
    validate_sets(train, val, cfg)?;
    let n = normalize(train, val, false)?;
    let pairs = pairwise_models(&n.train, &n.val, cfg)?;
    Ok(FrameworkModel {
        kind: FrameworkKind::OneVsOne,
        n_classes: cfg.n_classes,
        body: FrameworkBody::OneVsOne(pairs),
        resolver: Resolver::None,
        full_norm: n.full_norm,
        pool_norm: None,
    })
}

pub fn train_one_vs_rest(train: &SampleSet, val: &SampleSet, cfg: &TrainConfig) -> Result<FrameworkModel> {
    validate_sets(train, val, cfg)?;
    let n = normalize(train, val, false)?;
    let k = cfg.n_classes;
    let tr = class_indices(&n.train.labels, k);
    let counts: Vec<usize> = tr.iter().map(Vec::len).collect();
    let mut master = ChaCha8Rng::seed_from_u64(cfg.seed);
    let seeds: Vec<u64> = (0..k).map(|_| master.random()).collect();
    let blocks: Vec<OvrBlock> = (0..k)
        .into_par_iter()
        .map(|owner| {
            let draws = balanced_negative_sample(&counts, owner)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seeds[owner]);
            let mut idx = tr[owner].clone();
            let mut y = vec![1i8; idx.len()];
            for (j, &d) in draws.iter().enumerate() {
                if j == owner || d == 0 {
                    continue;
                }
                let mut pool = tr[j].clone();
                pool.shuffle(&mut rng);
                idx.extend_from_slice(&pool[..d]);
                y.extend(std::iter::repeat_n(-1i8, d));
            }
            let val_y: Vec<i8> = n.val.labels.iter().map(|&l| if l == owner { 1 } else { -1 }).collect();
            let r = grid_search_with(
                &pick_rows(&n.train.full, &idx, None),
                &y,
                &n.val.full,
                &val_y,
                &cfg.grid,
                cfg.first_stage_metric,
                cfg.solver,
            )?;
            Ok(OvrBlock {
                owner,
                svm: r.model,
                c: r.c,
                gamma: r.gamma,
                validation_score: r.score,
            })
        })
        .collect::<Result<_>>()?;
    Ok(FrameworkModel {
        kind: FrameworkKind::OneVsRest,
        n_classes: k,
        body: FrameworkBody::OneVsRest(blocks),
        resolver: Resolver::Score,
        full_norm: n.full_norm,
        pool_norm: None,
    })
}

/// Hierarchy with every sub-block on the full view.
pub fn train_hier_common(train: &SampleSet, val: &SampleSet, cfg: &TrainConfig) -> Result<FrameworkModel> {
    validate_sets(train, val, cfg)?;
    let n = normalize(train, val, false)?;
    let k = cfg.n_classes;
    let tr = class_indices(&n.train.labels, k);
    let va = class_indices(&n.val.labels, k);
    let blocks = (0..k)
        .into_par_iter()
        .map(|owner| {
            let subs = (0..k)
                .filter(|&j| j != owner)
                .map(|j| {
                    fit_pair(
                        &n.train.full,
                        &tr,
                        &n.val.full,
                        &va,
                        owner,
                        j,
                        None,
                        &cfg.grid,
                        cfg.first_stage_metric,
                        cfg.solver,
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(VerificationBlock { owner, subs })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FrameworkModel {
        kind: FrameworkKind::HierCommon,
        n_classes: k,
        body: FrameworkBody::Hierarchy(blocks),
        resolver: Resolver::Score,
        full_norm: n.full_norm,
        pool_norm: None,
    })
}

/// Hierarchy whose sub-blocks each use the best 3 to 6 scalar subset of their
/// 8-scalar candidate pool, chosen on validation data.
pub fn train_cascade(train: &SampleSet, val: &SampleSet, cfg: &TrainConfig) -> Result<FrameworkModel> {
    validate_sets(train, val, cfg)?;
    cfg.cascade_grid.validate()?;
    let n = normalize(train, val, true)?;
    let k = cfg.n_classes;
    let tr = class_indices(&n.train.labels, k);
    let va = class_indices(&n.val.labels, k);
    let subsets = cascade_subsets();
    let jobs: Vec<(usize, usize)> = (0..k).flat_map(|o| (0..k).filter(move |&j| j != o).map(move |j| (o, j))).collect();
    let subs: Vec<PairModel> = jobs
        .par_iter()
        .map(|&(owner, j)| {
            let cand = cascade_candidates(owner, j)?;
            let fits: Vec<Option<PairModel>> = subsets
                .par_iter()
                .map(|s| {
                    let cols: Vec<usize> = s.iter().map(|&p| cand[p]).collect();
                    match fit_pair(
                        &n.train.pool,
                        &tr,
                        &n.val.pool,
                        &va,
                        owner,
                        j,
                        Some(&cols),
                        &cfg.cascade_grid,
                        cfg.first_stage_metric,
                        cfg.solver,
                    ) {
                        Ok(m) => Ok(Some(m)),
                        Err(Error::Training(_)) => Ok(None),
                        Err(e) => Err(e),
                    }
                })
                .collect::<Result<_>>()?;
            // First strictly best in enumeration order: smaller subsets win ties.
            let mut best: Option<PairModel> = None;
            for m in fits.into_iter().flatten() {
                if best.as_ref().is_none_or(|b| m.validation_score > b.validation_score) {
                    best = Some(m);
                }
            }
            best.ok_or_else(|| Error::Training(format!("no cascade subset trained for {} vs {}", owner + 1, j + 1)))
        })
        .collect::<Result<_>>()?;
    let mut blocks: Vec<VerificationBlock> = (0..k).map(|owner| VerificationBlock { owner, subs: Vec::new() }).collect();
    for m in subs {
        blocks[m.a].subs.push(m);
    }
    Ok(FrameworkModel {
        kind: FrameworkKind::HierCascade,
        n_classes: k,
        body: FrameworkBody::Hierarchy(blocks),
        resolver: Resolver::Score,
        full_norm: n.full_norm,
        pool_norm: n.pool_norm,
    })
}

/// Bagged forests use the OOB elbow to pick the tree count; AdaBoost runs
/// its configured rounds. The validation split is not used.
pub fn train_tree_framework(
    kind: FrameworkKind,
    train: &SampleSet,
    val: &SampleSet,
    cfg: &TrainConfig,
) -> Result<FrameworkModel> {
    validate_sets(train, val, cfg)?;
    let n = normalize(train, val, false)?;
    let ensemble = match kind {
        FrameworkKind::RandomForest | FrameworkKind::RandomUniformForest => {
            let ek = if kind == FrameworkKind::RandomForest {
                EnsembleKind::RandomForest
            } else {
                EnsembleKind::RandomUniformForest
            };
            let opts = ForestOptions::new(cfg.n_trees_max, cfg.seed);
            let (mut model, curve) = train_forest(&n.train.full, &n.train.labels, ek, &opts)?;
            if let Some(keep) = select_n_trees(&curve) {
                // Per-tree seeds are drawn in sequence, so a prefix is the smaller forest.
                model.trees.truncate(keep);
                model.weights.truncate(keep);
                model.oob_error = curve.get(keep - 1).map(|p| p.1).filter(|e| e.is_finite());
            }
            model
        }
        FrameworkKind::AdaBoost => train_adaboost(
            &n.train.full,
            &n.train.labels,
            cfg.adaboost_rounds,
            cfg.adaboost_depth,
            cfg.seed,
        )?,
        other => return Err(Error::Parameter(format!("{} is not a tree framework", other.short()))),
    };
    Ok(FrameworkModel {
        kind,
        n_classes: cfg.n_classes,
        body: FrameworkBody::Ensemble(ensemble),
        resolver: Resolver::None,
        full_norm: n.full_norm,
        pool_norm: None,
    })
}

/// 15 second-stage pairwise SVMs on the full view.
pub fn train_second_stage_pairwise(
    train: &SampleSet,
    val: &SampleSet,
    full_norm: &NormalizationStats,
    cfg: &TrainConfig,
) -> Result<Resolver> {
    validate_sets(train, val, cfg)?;
    let apply = |s: &SampleSet| -> Result<SampleSet> {
        Ok(SampleSet {
            full: full_norm.apply_rows(&s.full)?,
            pool: Vec::new(),
            labels: s.labels.clone(),
        })
    };
    Ok(Resolver::Pairwise(pairwise_models(&apply(train)?, &apply(val)?, cfg)?))
}

/// Trains the framework named by `spec`.
pub fn train_framework(spec: &FrameworkSpec, train: &SampleSet, val: &SampleSet, cfg: &TrainConfig) -> Result<FrameworkModel> {
    let mut model = match spec.kind {
        FrameworkKind::OneVsOne => train_one_vs_one(train, val, cfg)?,
        FrameworkKind::OneVsRest => train_one_vs_rest(train, val, cfg)?,
        FrameworkKind::HierCascade => train_cascade(train, val, cfg)?,
        FrameworkKind::HierCommon => train_hier_common(train, val, cfg)?,
        k => train_tree_framework(k, train, val, cfg)?,
    };
    if spec.resolver == Some(ResolverChoice::Pairwise) {
        model.resolver = train_second_stage_pairwise(train, val, &model.full_norm, cfg)?;
    }
    Ok(model)
}

/// Max-win over pairwise votes. Vote ties go to the larger summed score
/// (signed toward each tied class), then to the smallest class index.
pub fn one_vs_one_vote(n_classes: usize, pair_scores: &[(usize, usize, f64)]) -> usize {
    let mut votes = vec![0usize; n_classes];
    let mut confidence = vec![0.0; n_classes];
    for &(a, b, s) in pair_scores {
        votes[if s >= 0.0 { a } else { b }] += 1;
        confidence[a] += s;
        confidence[b] -= s;
    }
    let top = votes.iter().copied().max().unwrap_or(0);
    let tied: Vec<usize> = (0..n_classes).filter(|&c| votes[c] == top).collect();
    let mut best = tied[0];
    for &c in &tied[1..] {
        if confidence[c] > confidence[best] {
            best = c;
        }
    }
    best
}

/// Highest score among the accepting classes; `None` when nothing accepted.
pub fn resolve_by_score(outcome: &FirstStageOutcome) -> Option<usize> {
    let mut best: Option<usize> = None;
    for &c in &outcome.accepted {
        if best.is_none_or(|b| outcome.scores[c] > outcome.scores[b]) {
            best = Some(c);
        }
    }
    best
}

/// Pairwise resolution. Returns the winner and whether the pairwise blocks
/// decided it (false means the score fallback was used).
pub fn resolve_pairwise(
    pairs: &[PairModel],
    outcome: &FirstStageOutcome,
    x_full: &[f64],
) -> Result<Option<(usize, bool)>> {
    match outcome.accepted.len() {
        0 => return Ok(None),
        1 => return Ok(Some((outcome.accepted[0], true))),
        _ => {}
    }
    let find = |a: usize, b: usize| {
        pairs
            .iter()
            .find(|p| (p.a == a && p.b == b) || (p.a == b && p.b == a))
            .ok_or_else(|| Error::Input(format!("no pairwise block for classes {} and {}", a + 1, b + 1)))
    };
    let acc = &outcome.accepted;
    let mut wins = vec![0usize; acc.len()];
    for i in 0..acc.len() {
        for j in i + 1..acc.len() {
            let w = find(acc[i], acc[j])?.winner(x_full)?;
            if w == acc[i] {
                wins[i] += 1;
            } else {
                wins[j] += 1;
            }
        }
    }
    if let Some(k) = wins.iter().position(|&w| w == acc.len() - 1) {
        return Ok(Some((acc[k], true)));
    }
    Ok(resolve_by_score(outcome).map(|c| (c, false)))
}

impl FrameworkModel {
    pub fn resolver_kind(&self) -> ResolverKind {
        match (&self.resolver, self.kind) {
            (Resolver::None, _) => ResolverKind::None,
            (Resolver::Pairwise(_), _) => ResolverKind::PairwiseBlocks,
            (Resolver::Score, FrameworkKind::OneVsRest) => ResolverKind::SvmScore,
            (Resolver::Score, _) => ResolverKind::AvgSvmScore,
        }
    }

    /// Binary model count: 15 for one-vs-one, 6 for one-vs-rest, 30 for the
    /// hierarchies, tree count for ensembles.
    pub fn block_count(&self) -> usize {
        match &self.body {
            FrameworkBody::OneVsOne(p) => p.len(),
            FrameworkBody::OneVsRest(b) => b.len(),
            FrameworkBody::Hierarchy(b) => b.iter().map(|v| v.subs.len()).sum(),
            FrameworkBody::Ensemble(e) => e.trees.len(),
        }
    }

    fn prepare(&self, full: &[f64], pool: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let f = self.full_norm.apply(full)?;
        let p = match &self.pool_norm {
            Some(n) => n.apply(pool)?,
            None => Vec::new(),
        };
        Ok((f, p))
    }

    /// First-stage acceptance for two-stage kinds, on raw (unnormalized) features.
    pub fn first_stage(&self, full: &[f64], pool: &[f64]) -> Result<FirstStageOutcome> {
        let (f, p) = self.prepare(full, pool)?;
        self.first_stage_prepared(&f, &p)
    }

    fn first_stage_prepared(&self, f: &[f64], p: &[f64]) -> Result<FirstStageOutcome> {
        let mut scores = vec![f64::NAN; self.n_classes];
        let mut accepted = Vec::new();
        match &self.body {
            FrameworkBody::OneVsRest(blocks) => {
                for b in blocks {
                    let s = b.svm.decision_score(f)?;
                    scores[b.owner] = s;
                    if s >= 0.0 {
                        accepted.push(b.owner);
                    }
                }
            }
            FrameworkBody::Hierarchy(blocks) => {
                let view = if self.kind == FrameworkKind::HierCascade { p } else { f };
                for b in blocks {
                    let mut all = true;
                    let mut total = 0.0;
                    for sub in &b.subs {
                        let s = sub.score(view)?;
                        total += s;
                        all &= s >= 0.0;
                    }
                    scores[b.owner] = total / b.subs.len() as f64;
                    if all {
                        accepted.push(b.owner);
                    }
                }
            }
            _ => return Err(Error::Parameter(format!("{} has no first stage", self.kind.short()))),
        }
        accepted.sort_unstable();
        Ok(FirstStageOutcome { accepted, scores })
    }

    /// Full prediction on raw features. `pool` may be empty unless the model is a cascade.
    pub fn predict(&self, full: &[f64], pool: &[f64]) -> Result<Outcome> {
        let (f, p) = self.prepare(full, pool)?;
        match &self.body {
            FrameworkBody::OneVsOne(pairs) => {
                let scored = pairs
                    .iter()
                    .map(|m| Ok((m.a, m.b, m.score(&f)?)))
                    .collect::<Result<Vec<_>>>()?;
                Ok(Outcome::single(one_vs_one_vote(self.n_classes, &scored), vec![f64::NAN; self.n_classes]))
            }
            FrameworkBody::Ensemble(e) => {
                let votes = e.votes(&f)?;
                Ok(Outcome::single(argmax_first(&votes), votes))
            }
            _ => {
                let first = self.first_stage_prepared(&f, &p)?;
                let (assigned, survivors) = match &self.resolver {
                    Resolver::Pairwise(pairs) if first.accepted.len() > 1 => {
                        let r = resolve_pairwise(pairs, &first, &f)?.map(|(c, _)| c);
                        (r, r.into_iter().collect())
                    }
                    _ => (resolve_by_score(&first), first.accepted.clone()),
                };
                Ok(Outcome {
                    accepted: first.accepted,
                    scores: first.scores,
                    survivors,
                    assigned,
                })
            }
        }
    }

    /// Predicts every sample of `set` in parallel.
    pub fn predict_set(&self, set: &SampleSet) -> Result<Vec<Outcome>> {
        (0..set.len())
            .into_par_iter()
            .map(|i| self.predict(&set.full[i], set.pool_row(i)))
            .collect()
    }
}
