//! Classification metrics and the multi-seed experiment runner.
//!
//! Per class `i` with `N_i` test samples and `FS_i` non-`i` test samples:
//!
//! * TP: `(N_i − misses)/N_i`, a miss being any final assignment other than `i`
//!   (rejections included).
//! * FP: `WC(i)/FS_i`, `WC(i)` counting non-`i` samples assigned to `i`; the
//!   overall FP is the mean over classes.
//! * CTP / ATP: the true block accepted alone / together with others.
//! * OTP: `N_i` minus the samples missed at either stage (the true class was
//!   not accepted, or did not survive the second stage).
//! * OFP: non-`i` samples accepted by block `i`, surviving the second stage and
//!   assigned to `i`, over `FS_i`.
//!
//! All rates are percentages. The F-score is the macro F1 over the classes
//! present in the test set.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frameworks::{
    train_framework, train_second_stage_pairwise, FrameworkSpec, Outcome, ResolverChoice, SampleSet, TrainConfig,
};
use crate::labels::{ClassLabel, IntensityTag};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeRecord {
    pub truth: usize,
    pub accepted: Vec<usize>,
    pub survivors: Vec<usize>,
    pub assigned: Option<usize>,
    pub tag: IntensityTag,
}

impl OutcomeRecord {
    pub fn new(truth: usize, outcome: &Outcome, tag: IntensityTag) -> Self {
        OutcomeRecord {
            truth,
            accepted: outcome.accepted.clone(),
            survivors: outcome.survivors.clone(),
            assigned: outcome.assigned,
            tag,
        }
    }

    /// Single-stage record: the prediction is the only accepted class.
    pub fn single(truth: usize, assigned: usize, tag: IntensityTag) -> Self {
        OutcomeRecord {
            truth,
            accepted: vec![assigned],
            survivors: vec![assigned],
            assigned: Some(assigned),
            tag,
        }
    }
}

fn class_count(records: &[OutcomeRecord], class: usize) -> usize {
    records.iter().filter(|r| r.truth == class).count()
}

fn pct(num: usize, den: usize) -> f64 {
    num as f64 / den as f64 * 100.0
}

/// Per-class true-positive rate from final assignments.
pub fn tp_rate(records: &[OutcomeRecord], class: usize) -> Result<f64> {
    let n = class_count(records, class);
    if n == 0 {
        return Err(Error::UndefinedMetric(format!("no test samples of class {}", class + 1)));
    }
    let misses = records.iter().filter(|r| r.truth == class && r.assigned != Some(class)).count();
    Ok(pct(n - misses, n))
}

/// Per-class false-positive rate `WC(i)/FS_i`.
pub fn class_fp_rate(records: &[OutcomeRecord], class: usize) -> Result<f64> {
    let fs = records.len() - class_count(records, class);
    if fs == 0 {
        return Err(Error::UndefinedMetric(format!("no samples outside class {}", class + 1)));
    }
    let wc = records.iter().filter(|r| r.truth != class && r.assigned == Some(class)).count();
    Ok(pct(wc, fs))
}

/// Overall false-positive rate: the mean of `WC(i)/FS_i` over the `n_classes` classes.
pub fn fp_rate(records: &[OutcomeRecord], n_classes: usize) -> Result<f64> {
    let present = (0..n_classes).filter(|&c| class_count(records, c) > 0).count();
    if present < 2 {
        return Err(Error::UndefinedMetric("false-positive rate needs at least two classes".into()));
    }
    let mut total = 0.0;
    for c in 0..n_classes {
        total += class_fp_rate(records, c)?;
    }
    Ok(total / n_classes as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub n_test: usize,
    pub tp: f64,
    pub fp: f64,
    pub ctp: f64,
    pub atp: f64,
    /// First-stage OTP: the true block accepted (CTP + ATP).
    pub first_otp: f64,
    /// First-stage OFP: non-class samples accepted by this block.
    pub first_ofp: f64,
    pub otp: f64,
    pub ofp: f64,
    /// Samples of this class no block accepted, as a percentage.
    pub rejected: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageMetrics {
    /// `None` for classes absent from the test set.
    pub per_class: Vec<Option<ClassMetrics>>,
    pub avg_tp: f64,
    /// The overall FP formula (mean of per-class `WC(i)/FS_i`).
    pub fp: f64,
    pub avg_ctp: f64,
    pub avg_atp: f64,
    pub avg_first_otp: f64,
    pub avg_first_ofp: f64,
    pub avg_otp: f64,
    pub avg_ofp: f64,
    pub rejected: f64,
    pub macro_f: f64,
    pub n_test: usize,
}

pub fn stage_metrics(records: &[OutcomeRecord], n_classes: usize) -> Result<StageMetrics> {
    if records.is_empty() {
        return Err(Error::UndefinedMetric("empty outcome table".into()));
    }
    if let Some(r) = records.iter().find(|r| r.truth >= n_classes) {
        return Err(Error::Input(format!("class {} outside {n_classes} classes", r.truth + 1)));
    }
    let total = records.len();
    let mut per_class = Vec::with_capacity(n_classes);
    for c in 0..n_classes {
        let n = class_count(records, c);
        if n == 0 {
            per_class.push(None);
            continue;
        }
        let fs = total - n;
        let own = || records.iter().filter(move |r| r.truth == c);
        let others = || records.iter().filter(move |r| r.truth != c);
        let ctp = own().filter(|r| r.accepted == [c]).count();
        let atp = own().filter(|r| r.accepted.len() > 1 && r.accepted.contains(&c)).count();
        let stage_miss = own()
            .filter(|r| !r.accepted.contains(&c) || !r.survivors.contains(&c))
            .count();
        let first_fa = others().filter(|r| r.accepted.contains(&c)).count();
        let final_fa = others()
            .filter(|r| r.accepted.contains(&c) && r.survivors.contains(&c) && r.assigned == Some(c))
            .count();
        let rejected = own().filter(|r| r.accepted.is_empty()).count();
        let hits = own().filter(|r| r.assigned == Some(c)).count();
        let assigned = records.iter().filter(|r| r.assigned == Some(c)).count();
        let wc = assigned - hits;
        let precision = if assigned == 0 { 0.0 } else { hits as f64 / assigned as f64 };
        let recall = hits as f64 / n as f64;
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        let rate = |k: usize| if fs == 0 { 0.0 } else { pct(k, fs) };
        per_class.push(Some(ClassMetrics {
            n_test: n,
            tp: pct(hits, n),
            fp: rate(wc),
            ctp: pct(ctp, n),
            atp: pct(atp, n),
            first_otp: pct(ctp + atp, n),
            first_ofp: rate(first_fa),
            otp: pct(n - stage_miss, n),
            ofp: rate(final_fa),
            rejected: pct(rejected, n),
            precision,
            recall,
            f1,
        }));
    }
    let present: Vec<&ClassMetrics> = per_class.iter().flatten().collect();
    let avg = |f: fn(&ClassMetrics) -> f64| present.iter().map(|m| f(m)).sum::<f64>() / present.len() as f64;
    let fp = if present.len() >= 2 { fp_rate(records, n_classes)? } else { 0.0 };
    Ok(StageMetrics {
        avg_tp: avg(|m| m.tp),
        fp,
        avg_ctp: avg(|m| m.ctp),
        avg_atp: avg(|m| m.atp),
        avg_first_otp: avg(|m| m.first_otp),
        avg_first_ofp: avg(|m| m.first_ofp),
        avg_otp: avg(|m| m.otp),
        avg_ofp: avg(|m| m.ofp),
        rejected: pct(records.iter().filter(|r| r.accepted.is_empty()).count(), total),
        macro_f: avg(|m| m.f1),
        per_class,
        n_test: total,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TestFilter {
    All,
    IntermediatesOnly,
}

impl TestFilter {
    pub fn keeps(self, tag: IntensityTag) -> bool {
        match self {
            TestFilter::All => true,
            TestFilter::IntermediatesOnly => tag == IntensityTag::Intermediate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub test_fraction: f64,
    pub seeds: Vec<u64>,
    pub test_filter: TestFilter,
}

pub const DEFAULT_SEEDS: [u64; 5] = [11, 23, 37, 41, 53];

impl Default for ExperimentPlan {
    fn default() -> Self {
        ExperimentPlan {
            train_fraction: 0.4,
            val_fraction: 0.3,
            test_fraction: 0.3,
            seeds: DEFAULT_SEEDS.to_vec(),
            test_filter: TestFilter::All,
        }
    }
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<()> {
        let f = [self.train_fraction, self.val_fraction, self.test_fraction];
        if f.iter().any(|&v| !(v > 0.0 && v < 1.0)) || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Parameter("split fractions must be in (0,1) and sum to 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Parameter("at least one seed is required".into()));
        }
        let mut s = self.seeds.clone();
        s.sort_unstable();
        s.dedup();
        if s.len() != self.seeds.len() {
            return Err(Error::Parameter("seeds must be distinct".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Shuffles each (class, tag) stratum and cuts it by the plan's fractions
/// (rounded; the test part takes the remainder). Index lists come back sorted.
pub fn stratified_split(labels: &[usize], tags: &[IntensityTag], plan: &ExperimentPlan, seed: u64) -> Result<Split> {
    plan.validate()?;
    if labels.len() != tags.len() {
        return Err(Error::Dimension(format!("{} labels vs {} tags", labels.len(), tags.len())));
    }
    let mut strata: BTreeMap<(usize, IntensityTag), Vec<usize>> = BTreeMap::new();
    for (i, (&l, &t)) in labels.iter().zip(tags).enumerate() {
        strata.entry((l, t)).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = Split {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for idx in strata.values_mut() {
        idx.shuffle(&mut rng);
        let n = idx.len() as f64;
        let n_train = (plan.train_fraction * n).round() as usize;
        let n_val = ((plan.val_fraction * n).round() as usize).min(idx.len() - n_train);
        split.train.extend_from_slice(&idx[..n_train]);
        split.val.extend_from_slice(&idx[n_train..n_train + n_val]);
        split.test.extend_from_slice(&idx[n_train + n_val..]);
    }
    let classes: std::collections::BTreeSet<usize> = labels.iter().copied().collect();
    for &c in &classes {
        for (part, name) in [(&split.train, "training"), (&split.val, "validation"), (&split.test, "test")] {
            if !part.iter().any(|&i| labels[i] == c) {
                return Err(Error::Split(format!(
                    "class {} has too few samples to fill the {name} split",
                    c + 1
                )));
            }
        }
    }
    split.train.sort_unstable();
    split.val.sort_unstable();
    split.test.sort_unstable();
    Ok(split)
}

/// Raw (unnormalized) features with intensity tags, one row per cell.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExperimentData {
    pub samples: SampleSet,
    pub tags: Vec<IntensityTag>,
    pub n_classes: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation (0 for a single seed).
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> MeanStd {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        MeanStd { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub metrics: StageMetrics,
    pub records: Vec<OutcomeRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub framework: String,
    pub test_filter: TestFilter,
    pub runs: Vec<SeedRun>,
}

const ROW_FIELDS: [(&str, fn(&ClassMetrics) -> f64); 8] = [
    ("TP", |m| m.tp),
    ("FP", |m| m.fp),
    ("CTP", |m| m.ctp),
    ("ATP", |m| m.atp),
    ("OTP1", |m| m.first_otp),
    ("OFP1", |m| m.first_ofp),
    ("OTP", |m| m.otp),
    ("OFP", |m| m.ofp),
];

const AVG_FIELDS: [fn(&StageMetrics) -> f64; 8] = [
    |s| s.avg_tp,
    |s| s.fp,
    |s| s.avg_ctp,
    |s| s.avg_atp,
    |s| s.avg_first_otp,
    |s| s.avg_first_ofp,
    |s| s.avg_otp,
    |s| s.avg_ofp,
];

impl ExperimentReport {
    fn across(&self, f: impl Fn(&StageMetrics) -> f64) -> MeanStd {
        MeanStd::of(&self.runs.iter().map(|r| f(&r.metrics)).collect::<Vec<_>>())
    }

    pub fn macro_f(&self) -> MeanStd {
        self.across(|m| m.macro_f)
    }

    pub fn otp(&self) -> MeanStd {
        self.across(|m| m.avg_otp)
    }

    pub fn ofp(&self) -> MeanStd {
        self.across(|m| m.avg_ofp)
    }

    pub fn tp(&self) -> MeanStd {
        self.across(|m| m.avg_tp)
    }

    pub fn fp(&self) -> MeanStd {
        self.across(|m| m.fp)
    }

    fn class_stat(&self, class: usize, f: fn(&ClassMetrics) -> f64) -> Option<MeanStd> {
        let v: Vec<f64> = self
            .runs
            .iter()
            .filter_map(|r| r.metrics.per_class.get(class).and_then(|m| m.as_ref()).map(f))
            .collect();
        (!v.is_empty()).then(|| MeanStd::of(&v))
    }

    /// Per-class rows, an Avg row and the F-score, each cell `mean ± std`.
    /// The Avg FP cell is the overall FP; per-class FP cells are `WC(i)/FS_i`.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let n_classes = self.runs.first().map_or(0, |r| r.metrics.per_class.len());
        let _ = writeln!(out, "{} ({} seeds, test: {:?})", self.framework, self.runs.len(), self.test_filter);
        let _ = write!(out, "{:<8}", "Class");
        for (name, _) in ROW_FIELDS {
            let _ = write!(out, " {name:>16}");
        }
        out.push('\n');
        for c in 0..n_classes {
            let label = ClassLabel::from_index(c).map_or_else(|| format!("{}", c + 1), |l| l.short().to_string());
            let _ = write!(out, "{label:<8}");
            for (_, f) in ROW_FIELDS {
                match self.class_stat(c, f) {
                    Some(s) => {
                        let _ = write!(out, " {:>16}", format!("{:.2} ± {:.2}", s.mean, s.std));
                    }
                    None => {
                        let _ = write!(out, " {:>16}", "-");
                    }
                }
            }
            out.push('\n');
        }
        let _ = write!(out, "{:<8}", "Avg");
        for f in AVG_FIELDS {
            let s = self.across(f);
            let _ = write!(out, " {:>16}", format!("{:.2} ± {:.2}", s.mean, s.std));
        }
        out.push('\n');
        let f = self.macro_f();
        let _ = writeln!(out, "F-score  {:.4} ± {:.4}", f.mean, f.std);
        out
    }

    /// One row per (seed, class) plus an `avg` row per seed.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("framework,seed,class,n_test,tp,fp,ctp,atp,otp1,ofp1,otp,ofp,rejected,f1\n");
        for run in &self.runs {
            for (c, m) in run.metrics.per_class.iter().enumerate() {
                if let Some(m) = m {
                    let _ = writeln!(
                        out,
                        "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                        self.framework,
                        run.seed,
                        c + 1,
                        m.n_test,
                        m.tp,
                        m.fp,
                        m.ctp,
                        m.atp,
                        m.first_otp,
                        m.first_ofp,
                        m.otp,
                        m.ofp,
                        m.rejected,
                        m.f1
                    );
                }
            }
            let s = &run.metrics;
            let _ = writeln!(
                out,
                "{},{},avg,{},{},{},{},{},{},{},{},{},{},{}",
                self.framework,
                run.seed,
                s.n_test,
                s.avg_tp,
                s.fp,
                s.avg_ctp,
                s.avg_atp,
                s.avg_first_otp,
                s.avg_first_ofp,
                s.avg_otp,
                s.avg_ofp,
                s.rejected,
                s.macro_f
            );
        }
        out
    }
}

/// One row per framework: OTP, OFP and F-score as `mean ± std`.
pub fn comparison_table(reports: &[ExperimentReport]) -> String {
    let mut out = format!("{:<22} {:>16} {:>16} {:>18}\n", "Framework", "OTP", "OFP", "F-score");
    for r in reports {
        let (o, p, f) = (r.otp(), r.ofp(), r.macro_f());
        let _ = writeln!(
            out,
            "{:<22} {:>16} {:>16} {:>18}",
            r.framework,
            format!("{:.2} ± {:.2}", o.mean, o.std),
            format!("{:.2} ± {:.2}", p.mean, p.std),
            format!("{:.4} ± {:.4}", f.mean, f.std)
        );
    }
    out
}

pub fn comparison_csv(reports: &[ExperimentReport]) -> String {
    let mut out = String::from("framework,otp_mean,otp_std,ofp_mean,ofp_std,f_mean,f_std\n");
    for r in reports {
        let (o, p, f) = (r.otp(), r.ofp(), r.macro_f());
        let _ = writeln!(out, "{},{},{},{},{},{},{}", r.framework, o.mean, o.std, p.mean, p.std, f.mean, f.std);
    }
    out
}

/// Runs every spec over every seed. Two-stage specs of the same kind share
/// one trained first stage per seed; only the resolver differs.
pub fn run_comparison(
    plan: &ExperimentPlan,
    data: &ExperimentData,
    specs: &[FrameworkSpec],
    cfg: &TrainConfig,
) -> Result<Vec<ExperimentReport>> {
    plan.validate()?;
    if data.samples.len() != data.tags.len() {
        return Err(Error::Dimension("one intensity tag per sample is required".into()));
    }
    let cfg = TrainConfig {
        n_classes: data.n_classes,
        ..cfg.clone()
    };
    let per_seed: Vec<Vec<SeedRun>> = plan
        .seeds
        .par_iter()
        .map(|&seed| run_seed(plan, data, specs, &cfg, seed))
        .collect::<Result<_>>()?;
    Ok(specs
        .iter()
        .enumerate()
        .map(|(k, spec)| ExperimentReport {
            framework: spec.label(),
            test_filter: plan.test_filter,
            runs: per_seed.iter().map(|runs| runs[k].clone()).collect(),
        })
        .collect())
}

pub fn run_experiment(
    plan: &ExperimentPlan,
    data: &ExperimentData,
    spec: &FrameworkSpec,
    cfg: &TrainConfig,
) -> Result<ExperimentReport> {
    Ok(run_comparison(plan, data, std::slice::from_ref(spec), cfg)?.remove(0))
}

fn run_seed(
    plan: &ExperimentPlan,
    data: &ExperimentData,
    specs: &[FrameworkSpec],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<Vec<SeedRun>> {
    let split = stratified_split(&data.samples.labels, &data.tags, plan, seed)?;
    let train = data.samples.subset(&split.train);
    let val = data.samples.subset(&split.val);
    let test_idx: Vec<usize> = split
        .test
        .iter()
        .copied()
        .filter(|&i| plan.test_filter.keeps(data.tags[i]))
        .collect();
    if test_idx.is_empty() {
        return Err(Error::Split("test filter left no samples".into()));
    }
    let test = data.samples.subset(&test_idx);
    let cfg = TrainConfig { seed, ..cfg.clone() };
    let mut bases: Vec<(FrameworkSpec, crate::frameworks::FrameworkModel)> = Vec::new();
    let mut runs = Vec::with_capacity(specs.len());
    for spec in specs {
        let base_spec = FrameworkSpec {
            resolver: spec.resolver.map(|_| ResolverChoice::Score),
            ..*spec
        };
        let base = match bases.iter().find(|(s, _)| *s == base_spec) {
            Some((_, m)) => m.clone(),
            None => {
                let m = train_framework(&base_spec, &train, &val, &cfg)?;
                bases.push((base_spec, m.clone()));
                m
            }
        };
        let mut model = base;
        if spec.resolver == Some(ResolverChoice::Pairwise) {
            model.resolver = train_second_stage_pairwise(&train, &val, &model.full_norm, &cfg)?;
        }
        let outcomes = model.predict_set(&test)?;
        let records: Vec<OutcomeRecord> = outcomes
            .iter()
            .zip(&test_idx)
            .map(|(o, &i)| OutcomeRecord::new(data.samples.labels[i], o, data.tags[i]))
            .collect();
        let metrics = stage_metrics(&records, cfg.n_classes)?;
        runs.push(SeedRun { seed, metrics, records });
    }
    Ok(runs)
}
