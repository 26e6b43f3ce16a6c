//! Acceptance gates. Each gate returns a [`GateOutcome`]; the runner shares
//! the phantom bench and trained reports between gates.

use std::fmt;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hep2_core::data::{experiment_data, extract_features, generate_phantoms, load_dataset, phantom_specs, DatasetManifest};
use hep2_core::eval::{
    class_fp_rate, fp_rate, run_comparison, stage_metrics, tp_rate, ExperimentData, ExperimentPlan, ExperimentReport,
    TestFilter,
};
use hep2_core::features::{
    extract_all, fit_zscore, CellFeatures, ExtractorConfig, FeatureSetKind, CLASS_SPECIFIC_LEN, COMBINED_LEN,
    POOL_LEN, TEXTURE_LEN,
};
use hep2_core::frameworks::{FrameworkKind, FrameworkSpec, ResolverChoice, TrainConfig};
use hep2_core::imaging::{count_holes, euler_number, label_components, BinaryImage, Connectivity, GrayImage};
use hep2_core::svm::{train_binary_svm_detailed, KernelParams, SolverOptions};

use crate::oracle::{self, Grid};
use crate::tables::hand_tables;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Pass,
    Fail,
    Skip,
}

#[derive(Debug, Clone)]
pub struct GateOutcome {
    pub id: u8,
    pub name: &'static str,
    pub status: Status,
    pub detail: String,
    pub elapsed: Duration,
}

impl fmt::Display for GateOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self.status {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Skip => "SKIP",
        };
        write!(
            f,
            "[{tag}] {:>2} {:<32} {} ({:.1} s)",
            self.id,
            self.name,
            self.detail,
            self.elapsed.as_secs_f64()
        )
    }
}

pub const GATE_NAMES: [&str; 10] = [
    "morphology oracle",
    "svm optimality",
    "normalization identity",
    "metric identities",
    "resolution conservation",
    "feature layout",
    "phantom end-to-end",
    "feature-set ordering",
    "intermediates-only robustness",
    "reference dataset",
];

/// Environment variable naming a labelled dataset directory for gate 10.
pub const DATASET_ENV: &str = "HEP2_DATASET";

pub const REFERENCE_OVO_OTP: f64 = 97.68;
pub const REFERENCE_OVO_OFP: f64 = 0.40;
pub const REFERENCE_ADABOOST_OTP: f64 = 98.18;

#[derive(Debug, Clone)]
pub struct SuiteOptions {
    pub phantoms_per_class: usize,
    pub phantom_seed: u64,
    pub plan: ExperimentPlan,
    pub dataset: Option<PathBuf>,
    pub train: TrainConfig,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        SuiteOptions {
            phantoms_per_class: 200,
            phantom_seed: 2014,
            plan: ExperimentPlan::default(),
            dataset: std::env::var_os(DATASET_ENV).map(PathBuf::from),
            train: TrainConfig::default(),
        }
    }
}

/// Phantom cells with every feature view extracted once.
pub struct PhantomBench {
    pub manifest: DatasetManifest,
    pub features: Vec<CellFeatures>,
}

impl PhantomBench {
    pub fn build(per_class: usize, seed: u64) -> hep2_core::Result<Self> {
        let manifest = generate_phantoms(&phantom_specs(per_class, seed))?;
        let features = extract_features(&manifest, &ExtractorConfig::default())?;
        Ok(PhantomBench { manifest, features })
    }

    pub fn data(&self, kind: FeatureSetKind) -> ExperimentData {
        experiment_data(&self.manifest, &self.features, kind)
    }
}

fn outcome(id: u8, start: Instant, pass: bool, detail: String) -> GateOutcome {
    GateOutcome {
        id,
        name: GATE_NAMES[id as usize - 1],
        status: if pass { Status::Pass } else { Status::Fail },
        detail,
        elapsed: start.elapsed(),
    }
}

fn failed(id: u8, start: Instant, err: impl fmt::Display) -> GateOutcome {
    outcome(id, start, false, format!("error: {err}"))
}

pub fn gate_morphology(n_images: usize, seed: u64) -> GateOutcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mismatches = 0;
    let mut first = String::new();
    for k in 0..n_images {
        let (w, h) = (rng.random_range(1..=32), rng.random_range(1..=32));
        let density = rng.random_range(0.15..0.85);
        let cells: Vec<bool> = (0..w * h).map(|_| rng.random_bool(density)).collect();
        let g = Grid {
            width: w,
            height: h,
            cells: cells.clone(),
        };
        let bin = BinaryImage::new(w, h, cells).expect("consistent size");
        let got = (
            label_components(&bin, Connectivity::Eight).len(),
            count_holes(&bin),
            euler_number(&bin),
        );
        let want = (oracle::components(&g), oracle::holes(&g), oracle::euler(&g));
        if got != want {
            mismatches += 1;
            if first.is_empty() {
                first = format!("; image {k} ({w}x{h}): got {got:?}, oracle {want:?}");
            }
        }
    }
    let elapsed = start.elapsed();
    outcome(
        1,
        start,
        mismatches == 0 && elapsed < Duration::from_secs(30),
        format!("{n_images} images, {mismatches} mismatches{first}"),
    )
}

pub fn gate_svm(n_problems: usize, seed: u64) -> GateOutcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut worst_rel, mut worst_kkt) = (0.0f64, 0.0f64);
    for p in 0..n_problems {
        let n = rng.random_range(4..=40);
        let x: Vec<Vec<f64>> = (0..n)
            .map(|_| vec![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)])
            .collect();
        // Noisy linear rule so some problems overlap.
        let mut y: Vec<i8> = x
            .iter()
            .map(|v| if v[0] + 0.5 * v[1] + rng.random_range(-0.8..0.8) > 0.0 { 1 } else { -1 })
            .collect();
        y[0] = 1;
        y[1] = -1;
        let c = [0.1, 1.0, 10.0][p % 3];
        let gamma = [0.5, 1.0, 2.0][(p / 3) % 3];
        let kernel = KernelParams::rbf(gamma).expect("positive gamma");
        let opts = SolverOptions {
            tol: 1e-6,
            max_iter: None,
        };
        let (model, report) = match train_binary_svm_detailed(&x, &y, c, kernel, opts) {
            Ok(r) => r,
            Err(e) => return failed(2, start, format!("problem {p}: {e}")),
        };
        let k: Vec<Vec<f64>> = x.iter().map(|a| x.iter().map(|b| kernel.eval(a, b)).collect()).collect();
        let yf: Vec<f64> = y.iter().map(|&v| v as f64).collect();
        let (_, qp_obj) = oracle::svm_dual_qp(&k, &yf, c, 20_000);
        let rel = (report.dual_objective - qp_obj).abs() / qp_obj.abs().max(1e-12);
        let kkt = oracle::kkt_residual(&k, &yf, &report.alpha, model.bias, c);
        worst_rel = worst_rel.max(rel);
        worst_kkt = worst_kkt.max(kkt);
    }
    let elapsed = start.elapsed();
    outcome(
        2,
        start,
        worst_rel <= 1e-3 && worst_kkt <= 1e-3 && elapsed < Duration::from_secs(60),
        format!("{n_problems} problems, max relative dual gap {worst_rel:.2e}, max KKT residual {worst_kkt:.2e}"),
    )
}

pub fn gate_normalization(seed: u64) -> GateOutcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut worst_mean, mut worst_std) = (0.0f64, 0.0f64);
    let mut constant_ok = true;
    for trial in 0..20 {
        let n = rng.random_range(2..=200);
        let d = rng.random_range(1..=30);
        let scale = 10f64.powi(rng.random_range(-3..=6));
        let mut rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0) * scale + scale).collect())
            .collect();
        if trial % 2 == 0 {
            let v = rng.random_range(-5.0..5.0);
            rows.iter_mut().for_each(|r| r[0] = v);
        }
        let stats = match fit_zscore(&rows, "gate") {
            Ok(s) => s,
            Err(e) => return failed(3, start, e),
        };
        let z = stats.apply_rows(&rows).expect("same width");
        for j in 0..d {
            let col: Vec<f64> = z.iter().map(|r| r[j]).collect();
            if stats.constant[j] {
                constant_ok &= col.iter().all(|&v| v == 0.0);
                continue;
            }
            let mean = col.iter().sum::<f64>() / n as f64;
            let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
            worst_mean = worst_mean.max(mean.abs());
            worst_std = worst_std.max((sd - 1.0).abs());
        }
    }
    outcome(
        3,
        start,
        worst_mean < 1e-9 && worst_std < 1e-9 && constant_ok,
        format!("20 matrices, max |mean| {worst_mean:.1e}, max |stdev-1| {worst_std:.1e}"),
    )
}

pub fn gate_metrics() -> GateOutcome {
    let start = Instant::now();
    let close = |got: f64, (num, den): (u32, u32), scale: f64| (got - scale * num as f64 / den as f64).abs() <= 1e-12;
    let mut problems = Vec::new();
    let tables = hand_tables();
    for t in &tables {
        let m = match stage_metrics(&t.records, t.n_classes) {
            Ok(m) => m,
            Err(e) => return failed(4, start, format!("{}: {e}", t.name)),
        };
        for (c, want) in t.per_class.iter().enumerate() {
            match (want, &m.per_class[c]) {
                (None, None) => {}
                (Some(w), Some(got)) => {
                    let values = [
                        got.tp,
                        got.fp,
                        got.ctp,
                        got.atp,
                        got.first_otp,
                        got.otp,
                        got.first_ofp,
                        got.ofp,
                    ];
                    let names = ["TP", "FP", "CTP", "ATP", "OTP1", "OTP", "OFP1", "OFP"];
                    for k in 0..8 {
                        if !close(values[k], w[k], 100.0) {
                            problems.push(format!("{} class {} {}: {}", t.name, c + 1, names[k], values[k]));
                        }
                    }
                    if (got.ctp + got.atp - got.first_otp).abs() > 1e-12 {
                        problems.push(format!("{} class {}: CTP+ATP != OTP1", t.name, c + 1));
                    }
                    if tp_rate(&t.records, c).ok() != Some(got.tp) {
                        problems.push(format!("{} class {}: tp_rate disagrees", t.name, c + 1));
                    }
                    if !class_fp_rate(&t.records, c).is_ok_and(|v| close(v, w[1], 100.0)) {
                        problems.push(format!("{} class {}: class_fp_rate", t.name, c + 1));
                    }
                }
                _ => problems.push(format!("{} class {}: presence differs", t.name, c + 1)),
            }
        }
        if !close(m.macro_f, t.macro_f, 1.0) {
            problems.push(format!("{} macro F {}", t.name, m.macro_f));
        }
        if !fp_rate(&t.records, t.n_classes).is_ok_and(|v| close(v, t.fp_overall, 1.0)) || !close(m.fp, t.fp_overall, 1.0)
        {
            problems.push(format!("{} overall FP {}", t.name, m.fp));
        }
    }
    let detail = if problems.is_empty() {
        format!("{} tables match", tables.len())
    } else {
        format!("{} mismatches, first: {}", problems.len(), problems[0])
    };
    outcome(4, start, problems.is_empty(), detail)
}

pub fn gate_layout(bench: &PhantomBench, seed: u64) -> GateOutcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = ExtractorConfig::default();
    let mut feats: Vec<CellFeatures> = bench.features.clone();
    // Random images with disk and square masks of assorted sizes.
    for k in 0..40 {
        let size = rng.random_range(24..=90);
        let img = GrayImage::new(size, size, (0..size * size).map(|_| rng.random::<f64>()).collect()).expect("size");
        let r = rng.random_range(3.0..size as f64 / 2.0);
        let c = size as f64 / 2.0;
        let bits = (0..size * size)
            .map(|i| {
                let (y, x) = ((i / size) as f64, (i % size) as f64);
                if k % 2 == 0 {
                    (y - c).powi(2) + (x - c).powi(2) <= r * r
                } else {
                    (y - c).abs() <= r && (x - c).abs() <= r
                }
            })
            .collect();
        let mask = BinaryImage::new(size, size, bits).expect("size");
        match extract_all(&img, &mask, &cfg) {
            Ok(f) => feats.push(f),
            Err(e) => return failed(6, start, e),
        }
    }
    let bad = feats
        .iter()
        .filter(|f| {
            f.view(FeatureSetKind::ClassSpecific).values.len() != CLASS_SPECIFIC_LEN
                || f.view(FeatureSetKind::Texture).values.len() != TEXTURE_LEN
                || f.view(FeatureSetKind::Combined).values.len() != COMBINED_LEN
                || f.pool.len() != POOL_LEN
        })
        .count();
    let constants_ok = (CLASS_SPECIFIC_LEN, TEXTURE_LEN, COMBINED_LEN) == (128, 140, 177);
    outcome(
        6,
        start,
        bad == 0 && constants_ok,
        format!("{} cells, {bad} with a wrong length (128/140/177)", feats.len()),
    )
}

/// Reports shared by the phantom gates.
struct PhantomReports {
    ovo_cs: ExperimentReport,
    adaboost_cs: ExperimentReport,
    ruf_cs: ExperimentReport,
    ovr_score: ExperimentReport,
    hier_score: ExperimentReport,
}

fn spec(kind: FrameworkKind) -> FrameworkSpec {
    let resolver = kind.is_two_stage().then_some(ResolverChoice::Score);
    FrameworkSpec::new(kind, resolver).expect("valid spec")
}

fn phantom_reports(bench: &PhantomBench, opts: &SuiteOptions) -> hep2_core::Result<PhantomReports> {
    let specs = [
        spec(FrameworkKind::OneVsOne),
        spec(FrameworkKind::AdaBoost),
        spec(FrameworkKind::RandomUniformForest),
        spec(FrameworkKind::OneVsRest),
        spec(FrameworkKind::HierCommon),
    ];
    let mut r = run_comparison(&opts.plan, &bench.data(FeatureSetKind::ClassSpecific), &specs, &opts.train)?.into_iter();
    Ok(PhantomReports {
        ovo_cs: r.next().expect("five reports"),
        adaboost_cs: r.next().expect("five reports"),
        ruf_cs: r.next().expect("five reports"),
        ovr_score: r.next().expect("five reports"),
        hier_score: r.next().expect("five reports"),
    })
}

fn gate_resolution(reports: &PhantomReports, start: Instant) -> GateOutcome {
    let mut violations = Vec::new();
    for report in [&reports.ovr_score, &reports.hier_score] {
        for run in &report.runs {
            let m = &run.metrics;
            let mut ok = m.avg_otp == m.avg_first_otp && m.avg_ofp <= m.avg_first_ofp;
            for c in m.per_class.iter().flatten() {
                ok &= c.otp == c.first_otp && c.ofp <= c.first_ofp;
            }
            if !ok {
                violations.push(format!(
                    "{} seed {}: OTP {:.2} -> {:.2}, OFP {:.2} -> {:.2}",
                    report.framework, run.seed, m.avg_first_otp, m.avg_otp, m.avg_first_ofp, m.avg_ofp
                ));
            }
        }
    }
    let n = reports.ovr_score.runs.len() + reports.hier_score.runs.len();
    let detail = match violations.first() {
        None => format!("{n} runs (ovr, common-hier), OTP unchanged and OFP not increased"),
        Some(v) => format!("{} violations, first: {v}", violations.len()),
    };
    outcome(5, start, violations.is_empty(), detail)
}

fn gate_end_to_end(reports: &PhantomReports, start: Instant) -> GateOutcome {
    let f = reports.ovo_cs.macro_f().mean;
    let ofp = reports.ovo_cs.ofp().mean;
    let fa = reports.adaboost_cs.macro_f().mean;
    let fr = reports.ruf_cs.macro_f().mean;
    let elapsed = start.elapsed();
    outcome(
        7,
        start,
        f >= 0.95 && ofp <= 2.0 && fa >= f - 0.02 && fr >= f - 0.02 && elapsed < Duration::from_secs(600),
        format!("ovo F {f:.4} OFP {ofp:.2}%, adaboost F {fa:.4}, ruf F {fr:.4}"),
    )
}

fn gate_ordering(
    bench: &PhantomBench,
    reports: &PhantomReports,
    opts: &SuiteOptions,
    start: Instant,
) -> GateOutcome {
    let data = bench.data(FeatureSetKind::Texture);
    let texture = match run_comparison(&opts.plan, &data, &[spec(FrameworkKind::OneVsOne)], &opts.train) {
        Ok(mut r) => r.remove(0),
        Err(e) => return failed(8, start, e),
    };
    let (cs, tex) = (reports.ovo_cs.macro_f().mean, texture.macro_f().mean);
    outcome(
        8,
        start,
        cs - tex >= 0.01,
        format!("class-specific F {cs:.4} vs texture F {tex:.4} (margin {:+.4})", cs - tex),
    )
}

fn gate_intermediates(bench: &PhantomBench, reports: &PhantomReports, opts: &SuiteOptions, start: Instant) -> GateOutcome {
    let plan = ExperimentPlan {
        test_filter: TestFilter::IntermediatesOnly,
        ..opts.plan.clone()
    };
    let data = bench.data(FeatureSetKind::ClassSpecific);
    let inter = match run_comparison(&plan, &data, &[spec(FrameworkKind::OneVsOne)], &opts.train) {
        Ok(mut r) => r.remove(0),
        Err(e) => return failed(9, start, e),
    };
    let (all, only) = (reports.ovo_cs.macro_f().mean, inter.macro_f().mean);
    outcome(
        9,
        start,
        all - only <= 0.03,
        format!("all-samples F {all:.4}, intermediates-only F {only:.4} (drop {:.4})", all - only),
    )
}

pub fn gate_dataset(path: Option<&PathBuf>, opts: &SuiteOptions) -> GateOutcome {
    let start = Instant::now();
    let Some(path) = path.filter(|p| p.is_dir()) else {
        return GateOutcome {
            id: 10,
            name: GATE_NAMES[9],
            status: Status::Skip,
            detail: format!("no dataset ({DATASET_ENV} unset or not a directory)"),
            elapsed: start.elapsed(),
        };
    };
    let run = || -> hep2_core::Result<(f64, f64, f64)> {
        let manifest = load_dataset(path)?;
        let features = extract_features(&manifest, &ExtractorConfig::default())?;
        let data = experiment_data(&manifest, &features, FeatureSetKind::ClassSpecific);
        let specs = [spec(FrameworkKind::OneVsOne), spec(FrameworkKind::AdaBoost)];
        let r = run_comparison(&opts.plan, &data, &specs, &opts.train)?;
        Ok((r[0].otp().mean, r[0].ofp().mean, r[1].otp().mean))
    };
    match run() {
        Ok((otp, ofp, ada)) => outcome(
            10,
            start,
            (otp - REFERENCE_OVO_OTP).abs() <= 2.0
                && (ofp - REFERENCE_OVO_OFP).abs() <= 0.5
                && (ada - REFERENCE_ADABOOST_OTP).abs() <= 2.0,
            format!("ovo OTP {otp:.2} OFP {ofp:.2}, adaboost OTP {ada:.2}"),
        ),
        Err(e) => failed(10, start, e),
    }
}

/// Runs the requested gates (1..=10) in order.
pub fn run_gates(ids: &[u8], opts: &SuiteOptions, mut report: impl FnMut(&GateOutcome)) -> Vec<GateOutcome> {
    let mut out = Vec::new();
    let mut push = |g: GateOutcome| {
        report(&g);
        out.push(g);
    };
    let wants = |id: u8| ids.contains(&id);
    if wants(1) {
        push(gate_morphology(1000, 1));
    }
    if wants(2) {
        push(gate_svm(50, 2));
    }
    if wants(3) {
        push(gate_normalization(3));
    }
    if wants(4) {
        push(gate_metrics());
    }
    let phantom_ids = [5u8, 6, 7, 8, 9];
    if phantom_ids.iter().any(|&i| wants(i)) {
        let start = Instant::now();
        match PhantomBench::build(opts.phantoms_per_class, opts.phantom_seed) {
            Err(e) => {
                for id in phantom_ids.into_iter().filter(|&i| wants(i)) {
                    push(failed(id, start, format!("phantom bench: {e}")));
                }
            }
            Ok(bench) => {
                let needs_reports = [5u8, 7, 8, 9].iter().any(|&i| wants(i));
                let reports = if needs_reports {
                    Some(phantom_reports(&bench, opts).map_err(|e| e.to_string()))
                } else {
                    None
                };
                let shared = start.elapsed();
                // Gates that reuse the shared training report its time too.
                let since = |extra: Duration| Instant::now().checked_sub(extra).unwrap_or_else(Instant::now);
                if wants(5) {
                    push(match &reports {
                        Some(Ok(r)) => gate_resolution(r, since(shared)),
                        Some(Err(e)) => failed(5, start, e),
                        None => unreachable!(),
                    });
                }
                if wants(6) {
                    push(gate_layout(&bench, 6));
                }
                if wants(7) {
                    push(match &reports {
                        Some(Ok(r)) => gate_end_to_end(r, since(shared)),
                        Some(Err(e)) => failed(7, start, e),
                        None => unreachable!(),
                    });
                }
                if wants(8) {
                    push(match &reports {
                        Some(Ok(r)) => gate_ordering(&bench, r, opts, Instant::now()),
                        Some(Err(e)) => failed(8, start, e),
                        None => unreachable!(),
                    });
                }
                if wants(9) {
                    push(match &reports {
                        Some(Ok(r)) => gate_intermediates(&bench, r, opts, Instant::now()),
                        Some(Err(e)) => failed(9, start, e),
                        None => unreachable!(),
                    });
                }
            }
        }
    }
    if wants(10) {
        push(gate_dataset(opts.dataset.as_ref(), opts));
    }
    out
}

pub fn all_passed(outcomes: &[GateOutcome]) -> bool {
    outcomes.iter().all(|g| g.status != Status::Fail)
}
