//! `hep2`: batch experiments on HEp-2 cell images.
//!
//! Exit codes: 0 success, 1 runtime failure (including a failed self-test
//! gate), 2 usage error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand};
use serde_json::{json, Value};

use hep2_core::data::{
    experiment_data, export_features, extract_features, generate_phantoms, load_dataset, load_model, phantom_specs,
    save_dataset, save_model, DatasetManifest, TrainedModel, PHANTOM_NOISE,
};
use hep2_core::eval::{
    comparison_csv, comparison_table, run_comparison, stage_metrics, stratified_split, ExperimentPlan, ExperimentReport,
    OutcomeRecord, SeedRun, TestFilter, DEFAULT_SEEDS,
};
use hep2_core::features::{ExtractorConfig, FeatureSetKind};
use hep2_core::frameworks::{train_framework, FrameworkKind, FrameworkSpec, ResolverChoice, TrainConfig};
use hep2_core::svm::TrainGrid;
use hep2_core::ClassLabel;
use hep2_verify::gates::{all_passed, run_gates, SuiteOptions};

const RUN_MANIFEST: &str = "run.json";
const RUN_FORMAT: &str = "hep2-run";
const RUN_VERSION: u32 = 1;

#[derive(Parser, Debug)]
#[command(name = "hep2", version, about = "HEp-2 staining-pattern classification experiments")]
#[command(arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic phantom dataset (PNG images, masks and gt.csv).
    PhantomGen(PhantomGenArgs),
    /// Extract feature vectors to CSV.
    Extract(ExtractArgs),
    /// Train one framework on a split and save it.
    Train(TrainArgs),
    /// Multi-seed evaluation of one framework, or of a saved model.
    Evaluate(EvaluateArgs),
    /// Evaluate several frameworks on the same splits.
    Compare(CompareArgs),
    /// Run the acceptance gates.
    Selftest(SelftestArgs),
    /// Re-run the command recorded in a run manifest.
    Replay(ReplayArgs),
}

#[derive(Args, Debug)]
#[command(group(ArgGroup::new("source").required(true).args(["dataset", "phantoms"])))]
struct Source {
    /// Dataset directory with gt.csv, <id>.png and <id>_mask.png.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Generate this many phantoms per class instead of reading a dataset.
    #[arg(long, value_name = "N-PER-CLASS")]
    phantoms: Option<usize>,
    #[arg(long, default_value_t = 2014)]
    phantom_seed: u64,
}

#[derive(Args, Debug)]
struct Grid {
    /// Comma-separated C values for grid search.
    #[arg(long, value_delimiter = ',', value_name = "LIST")]
    grid_c: Option<Vec<f64>>,
    /// Comma-separated RBF gamma values for grid search.
    #[arg(long, value_delimiter = ',', value_name = "LIST")]
    grid_gamma: Option<Vec<f64>>,
}

#[derive(Args, Debug)]
struct PhantomGenArgs {
    #[arg(long, value_name = "N-PER-CLASS")]
    phantoms: usize,
    #[arg(long, default_value_t = 2014)]
    phantom_seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ExtractArgs {
    #[command(flatten)]
    source: Source,
    /// Feature set; all three when omitted.
    #[arg(long, value_parser = parse_features)]
    features: Option<FeatureSetKind>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    source: Source,
    #[arg(long, value_parser = parse_features, default_value = "cs")]
    features: FeatureSetKind,
    #[arg(long, value_parser = parse_framework)]
    framework: FrameworkKind,
    #[arg(long, value_parser = parse_resolver)]
    resolver: Option<ResolverChoice>,
    /// Split seed; only the first value is used.
    #[arg(long, value_delimiter = ',', default_value = "11")]
    seeds: Vec<u64>,
    #[command(flatten)]
    grid: Grid,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
#[command(group(ArgGroup::new("what").required(true).args(["framework", "model"])))]
struct EvaluateArgs {
    #[command(flatten)]
    source: Source,
    #[arg(long, value_parser = parse_features, default_value = "cs")]
    features: FeatureSetKind,
    #[arg(long, value_parser = parse_framework)]
    framework: Option<FrameworkKind>,
    #[arg(long, value_parser = parse_resolver)]
    resolver: Option<ResolverChoice>,
    /// Evaluate a saved model on every record instead of training.
    #[arg(long, conflicts_with_all = ["framework", "resolver", "seeds", "grid_c", "grid_gamma"])]
    model: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Restrict test metrics to intermediate-contrast samples.
    #[arg(long)]
    test_intermediates_only: bool,
    #[command(flatten)]
    grid: Grid,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct CompareArgs {
    #[command(flatten)]
    source: Source,
    #[arg(long, value_parser = parse_features, default_value = "cs")]
    features: FeatureSetKind,
    /// Comma-separated framework labels such as `ovo,ovr+pairwise,rf`;
    /// every framework and resolver when omitted.
    #[arg(long, value_delimiter = ',', value_parser = parse_spec)]
    frameworks: Option<Vec<FrameworkSpec>>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    test_intermediates_only: bool,
    #[command(flatten)]
    grid: Grid,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SelftestArgs {
    /// Comma-separated gate numbers (1-10); all when omitted.
    #[arg(long, value_delimiter = ',', value_parser = clap::value_parser!(u8).range(1..=10))]
    only: Option<Vec<u8>>,
    /// Labelled dataset for gate 10.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ReplayArgs {
    manifest: PathBuf,
    /// Write to this directory instead of the recorded one.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_features(s: &str) -> Result<FeatureSetKind, String> {
    FeatureSetKind::parse(s).ok_or_else(|| format!("unknown feature set {s:?} (cs, texture, combined)"))
}

fn parse_framework(s: &str) -> Result<FrameworkKind, String> {
    FrameworkKind::parse(s).ok_or_else(|| {
        let names: Vec<&str> = FrameworkKind::ALL.iter().map(|k| k.short()).collect();
        format!("unknown framework {s:?} ({})", names.join(", "))
    })
}

fn parse_resolver(s: &str) -> Result<ResolverChoice, String> {
    ResolverChoice::parse(s).ok_or_else(|| format!("unknown resolver {s:?} (score, pairwise)"))
}

fn parse_spec(s: &str) -> Result<FrameworkSpec, String> {
    let (kind, resolver) = match s.split_once('+') {
        Some((k, r)) => (parse_framework(k)?, Some(parse_resolver(r)?)),
        None => (parse_framework(s)?, None),
    };
    FrameworkSpec::new(kind, resolver).map_err(|e| e.to_string())
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<hep2_core::Error> for Failure {
    fn from(e: hep2_core::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type CliResult<T> = Result<T, Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::Runtime(format!("{}: {e}", path.display()))
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    dispatch(argv)
}

fn dispatch(argv: Vec<String>) -> ExitCode {
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            // Help and version requests print and succeed; parse errors are usage errors.
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::PhantomGen(a) => phantom_gen(a, &argv),
        Command::Extract(a) => extract(a, &argv),
        Command::Train(a) => train(a, &argv),
        Command::Evaluate(a) => evaluate(a, &argv),
        Command::Compare(a) => compare(a, &argv),
        Command::Selftest(a) => selftest(a, &argv),
        Command::Replay(a) => return replay(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            eprintln!("run `hep2 help` for usage");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}

fn resolve_grid(g: &Grid) -> CliResult<TrainGrid> {
    let d = TrainGrid::default();
    TrainGrid::new(
        g.grid_c.clone().unwrap_or(d.c_values),
        g.grid_gamma.clone().unwrap_or(d.gamma_values),
    )
    .map_err(|e| usage(e.to_string()))
}

fn resolve_plan(seeds: Option<&[u64]>, intermediates_only: bool) -> CliResult<ExperimentPlan> {
    let plan = ExperimentPlan {
        seeds: seeds.map_or_else(|| DEFAULT_SEEDS.to_vec(), <[u64]>::to_vec),
        test_filter: if intermediates_only {
            TestFilter::IntermediatesOnly
        } else {
            TestFilter::All
        },
        ..ExperimentPlan::default()
    };
    plan.validate().map_err(|e| usage(e.to_string()))?;
    Ok(plan)
}

fn check_source(s: &Source) -> CliResult<()> {
    if let Some(d) = &s.dataset {
        if !d.is_dir() {
            return Err(usage(format!("dataset directory {} does not exist", d.display())));
        }
    }
    if s.phantoms == Some(0) {
        return Err(usage("--phantoms must be positive"));
    }
    Ok(())
}

fn load_source(s: &Source) -> CliResult<DatasetManifest> {
    let manifest = match (&s.dataset, s.phantoms) {
        (Some(dir), _) => {
            let m = load_dataset(dir)?;
            for skip in &m.skipped {
                eprintln!("warning: skipped {}: {}", skip.id, skip.reason);
            }
            m
        }
        (None, Some(n)) => generate_phantoms(&phantom_specs(n, s.phantom_seed))?,
        (None, None) => unreachable!("clap requires a source"),
    };
    if manifest.is_empty() {
        return Err(Failure::Runtime("the dataset has no usable records".into()));
    }
    Ok(manifest)
}

fn source_json(s: &Source) -> Value {
    match (&s.dataset, s.phantoms) {
        (Some(d), _) => json!({ "dataset": d }),
        (None, Some(n)) => json!({
            "phantoms_per_class": n,
            "phantom_seed": s.phantom_seed,
            "phantom_noise": PHANTOM_NOISE,
        }),
        (None, None) => Value::Null,
    }
}

fn grid_json(g: &TrainGrid) -> Value {
    json!({ "c": g.c_values, "gamma": g.gamma_values })
}

fn plan_json(p: &ExperimentPlan) -> Value {
    json!({
        "train_fraction": p.train_fraction,
        "val_fraction": p.val_fraction,
        "test_fraction": p.test_fraction,
        "seeds": p.seeds,
        "test_filter": format!("{:?}", p.test_filter),
    })
}

fn prepare_out(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))
}

fn write_file(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| io_failure(path, e))
}

/// Records everything needed to re-run the command.
fn write_run_manifest(out: &Path, argv: &[String], config: Value) -> CliResult<()> {
    let layouts: Vec<Value> = [FeatureSetKind::ClassSpecific, FeatureSetKind::Texture, FeatureSetKind::Combined]
        .iter()
        .map(|k| json!({ "features": k.short(), "layout": k.layout_id(), "len": k.len() }))
        .collect();
    let manifest = json!({
        "format": RUN_FORMAT,
        "version": RUN_VERSION,
        "tool_version": env!("CARGO_PKG_VERSION"),
        "argv": argv.get(1..).unwrap_or_default(),
        "config": config,
        "feature_layouts": layouts,
    });
    let text = serde_json::to_string_pretty(&manifest).expect("json value serializes");
    write_file(&out.join(RUN_MANIFEST), &text)
}

fn phantom_gen(a: PhantomGenArgs, argv: &[String]) -> CliResult<()> {
    if a.phantoms < 1 {
        return Err(usage("--phantoms must be positive"));
    }
    prepare_out(&a.out)?;
    let manifest = generate_phantoms(&phantom_specs(a.phantoms, a.phantom_seed))?;
    save_dataset(&manifest, &a.out)?;
    write_run_manifest(
        &a.out,
        argv,
        json!({
            "command": "phantom-gen",
            "phantoms_per_class": a.phantoms,
            "phantom_seed": a.phantom_seed,
            "phantom_noise": PHANTOM_NOISE,
        }),
    )?;
    print!("{}", manifest.summary());
    println!("wrote {} cells to {}", manifest.len(), a.out.display());
    Ok(())
}

fn extract(a: ExtractArgs, argv: &[String]) -> CliResult<()> {
    check_source(&a.source)?;
    let kinds = match a.features {
        Some(k) => vec![k],
        None => vec![FeatureSetKind::ClassSpecific, FeatureSetKind::Texture, FeatureSetKind::Combined],
    };
    prepare_out(&a.out)?;
    let manifest = load_source(&a.source)?;
    let cfg = ExtractorConfig::default();
    for &k in &kinds {
        let path = a.out.join(format!("features_{}.csv", k.short()));
        export_features(&manifest, k, &cfg, &path)?;
        println!("wrote {} ({} rows, {} features)", path.display(), manifest.len(), k.len());
    }
    write_run_manifest(
        &a.out,
        argv,
        json!({
            "command": "extract",
            "source": source_json(&a.source),
            "features": kinds.iter().map(|k| k.short()).collect::<Vec<_>>(),
            "extractor": serde_json::to_value(&cfg).expect("config serializes"),
        }),
    )
}

fn train(a: TrainArgs, argv: &[String]) -> CliResult<()> {
    check_source(&a.source)?;
    let spec = FrameworkSpec::new(a.framework, a.resolver).map_err(|e| usage(e.to_string()))?;
    let grid = resolve_grid(&a.grid)?;
    let plan = resolve_plan(Some(&a.seeds[..1]), false)?;
    let seed = plan.seeds[0];
    prepare_out(&a.out)?;
    let manifest = load_source(&a.source)?;
    let extractor = ExtractorConfig::default();
    let features = extract_features(&manifest, &extractor)?;
    let data = experiment_data(&manifest, &features, a.features);
    let split = stratified_split(&data.samples.labels, &data.tags, &plan, seed)?;
    let cfg = TrainConfig {
        grid: grid.clone(),
        seed,
        ..TrainConfig::default()
    };
    let model = train_framework(
        &spec,
        &data.samples.subset(&split.train),
        &data.samples.subset(&split.val),
        &cfg,
    )?;
    let test = data.samples.subset(&split.test);
    let records: Vec<OutcomeRecord> = model
        .predict_set(&test)?
        .iter()
        .zip(&split.test)
        .map(|(o, &i)| OutcomeRecord::new(data.samples.labels[i], o, data.tags[i]))
        .collect();
    let report = ExperimentReport {
        framework: spec.label(),
        test_filter: TestFilter::All,
        runs: vec![SeedRun {
            seed,
            metrics: stage_metrics(&records, ClassLabel::COUNT)?,
            records,
        }],
    };
    let trained = TrainedModel {
        spec,
        features: a.features,
        extractor: extractor.clone(),
        model,
    };
    let model_dir = a.out.join("model");
    save_model(&model_dir, &trained)?;
    write_file(&a.out.join("test_report.txt"), &report.to_table())?;
    write_file(&a.out.join("test_report.csv"), &report.to_csv())?;
    write_run_manifest(
        &a.out,
        argv,
        json!({
            "command": "train",
            "source": source_json(&a.source),
            "framework": spec.label(),
            "features": a.features.short(),
            "grid": grid_json(&grid),
            "plan": plan_json(&plan),
            "extractor": serde_json::to_value(&extractor).expect("config serializes"),
        }),
    )?;
    print!("{}", report.to_table());
    println!("saved model to {}", model_dir.display());
    Ok(())
}

fn evaluate(a: EvaluateArgs, argv: &[String]) -> CliResult<()> {
    check_source(&a.source)?;
    if let Some(dir) = &a.model {
        return evaluate_saved(dir, &a, argv);
    }
    let kind = a.framework.expect("clap requires --framework or --model");
    let spec = FrameworkSpec::new(kind, a.resolver).map_err(|e| usage(e.to_string()))?;
    let grid = resolve_grid(&a.grid)?;
    let plan = resolve_plan(a.seeds.as_deref(), a.test_intermediates_only)?;
    prepare_out(&a.out)?;
    let manifest = load_source(&a.source)?;
    let features = extract_features(&manifest, &ExtractorConfig::default())?;
    let data = experiment_data(&manifest, &features, a.features);
    let cfg = TrainConfig {
        grid: grid.clone(),
        ..TrainConfig::default()
    };
    let report = run_comparison(&plan, &data, &[spec], &cfg)?.remove(0);
    write_file(&a.out.join("report.txt"), &report.to_table())?;
    write_file(&a.out.join("report.csv"), &report.to_csv())?;
    write_run_manifest(
        &a.out,
        argv,
        json!({
            "command": "evaluate",
            "source": source_json(&a.source),
            "framework": spec.label(),
            "features": a.features.short(),
            "grid": grid_json(&grid),
            "plan": plan_json(&plan),
        }),
    )?;
    print!("{}", report.to_table());
    Ok(())
}

fn evaluate_saved(dir: &Path, a: &EvaluateArgs, argv: &[String]) -> CliResult<()> {
    let trained = load_model(dir)?;
    let filter = if a.test_intermediates_only {
        TestFilter::IntermediatesOnly
    } else {
        TestFilter::All
    };
    prepare_out(&a.out)?;
    let manifest = load_source(&a.source)?;
    let features = extract_features(&manifest, &trained.extractor)?;
    let data = experiment_data(&manifest, &features, trained.features);
    let outcomes = trained.model.predict_set(&data.samples)?;
    let records: Vec<OutcomeRecord> = outcomes
        .iter()
        .enumerate()
        .filter(|(i, _)| filter.keeps(data.tags[*i]))
        .map(|(i, o)| OutcomeRecord::new(data.samples.labels[i], o, data.tags[i]))
        .collect();
    if records.is_empty() {
        return Err(Failure::Runtime("the test filter left no samples".into()));
    }
    let report = ExperimentReport {
        framework: trained.spec.label(),
        test_filter: filter,
        runs: vec![SeedRun {
            seed: 0,
            metrics: stage_metrics(&records, ClassLabel::COUNT)?,
            records,
        }],
    };
    write_file(&a.out.join("report.txt"), &report.to_table())?;
    write_file(&a.out.join("report.csv"), &report.to_csv())?;
    write_run_manifest(
        &a.out,
        argv,
        json!({
            "command": "evaluate",
            "source": source_json(&a.source),
            "model": dir,
            "framework": trained.spec.label(),
            "features": trained.features.short(),
            "test_filter": format!("{filter:?}"),
        }),
    )?;
    print!("{}", report.to_table());
    Ok(())
}

fn all_specs() -> Vec<FrameworkSpec> {
    let mut specs = Vec::new();
    for kind in FrameworkKind::ALL {
        if kind.is_two_stage() {
            for r in [ResolverChoice::Score, ResolverChoice::Pairwise] {
                specs.push(FrameworkSpec::new(kind, Some(r)).expect("two-stage kinds take a resolver"));
            }
        } else {
            specs.push(FrameworkSpec::new(kind, None).expect("single-stage kinds take no resolver"));
        }
    }
    specs
}

fn compare(a: CompareArgs, argv: &[String]) -> CliResult<()> {
    check_source(&a.source)?;
    let specs = a.frameworks.clone().unwrap_or_else(all_specs);
    let grid = resolve_grid(&a.grid)?;
    let plan = resolve_plan(a.seeds.as_deref(), a.test_intermediates_only)?;
    prepare_out(&a.out)?;
    let manifest = load_source(&a.source)?;
    let features = extract_features(&manifest, &ExtractorConfig::default())?;
    let data = experiment_data(&manifest, &features, a.features);
    let cfg = TrainConfig {
        grid: grid.clone(),
        ..TrainConfig::default()
    };
    let reports = run_comparison(&plan, &data, &specs, &cfg)?;
    let table = comparison_table(&reports);
    write_file(&a.out.join("comparison.txt"), &table)?;
    write_file(&a.out.join("comparison.csv"), &comparison_csv(&reports))?;
    for r in &reports {
        let name = r.framework.replace('+', "_");
        write_file(&a.out.join(format!("report_{name}.txt")), &r.to_table())?;
        write_file(&a.out.join(format!("report_{name}.csv")), &r.to_csv())?;
    }
    write_run_manifest(
        &a.out,
        argv,
        json!({
            "command": "compare",
            "source": source_json(&a.source),
            "frameworks": specs.iter().map(FrameworkSpec::label).collect::<Vec<_>>(),
            "features": a.features.short(),
            "grid": grid_json(&grid),
            "plan": plan_json(&plan),
        }),
    )?;
    print!("{table}");
    Ok(())
}

fn selftest(a: SelftestArgs, argv: &[String]) -> CliResult<()> {
    if let Some(d) = &a.dataset {
        if !d.is_dir() {
            return Err(usage(format!("dataset directory {} does not exist", d.display())));
        }
    }
    let ids = a.only.clone().unwrap_or_else(|| (1..=10).collect());
    let mut opts = SuiteOptions::default();
    if a.dataset.is_some() {
        opts.dataset = a.dataset.clone();
    }
    let mut lines = String::new();
    let outcomes = run_gates(&ids, &opts, |g| {
        println!("{g}");
        lines.push_str(&format!("{g}\n"));
    });
    if let Some(out) = &a.out {
        prepare_out(out)?;
        write_file(&out.join("selftest.txt"), &lines)?;
        write_run_manifest(
            out,
            argv,
            json!({
                "command": "selftest",
                "gates": ids,
                "phantoms_per_class": opts.phantoms_per_class,
                "phantom_seed": opts.phantom_seed,
                "plan": plan_json(&opts.plan),
                "dataset": opts.dataset,
            }),
        )?;
    }
    if all_passed(&outcomes) {
        Ok(())
    } else {
        Err(Failure::Runtime("one or more acceptance gates failed".into()))
    }
}

fn replay(a: ReplayArgs) -> ExitCode {
    let fail = |m: String| {
        eprintln!("error: {m}");
        ExitCode::from(1)
    };
    let text = match fs::read_to_string(&a.manifest) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: {}: {e}", a.manifest.display());
            return ExitCode::from(2);
        }
    };
    let value: Value = match serde_json::from_str(&text) {
        Ok(v) => v,
        Err(e) => return fail(format!("{}: {e}", a.manifest.display())),
    };
    if value["format"] != RUN_FORMAT || value["version"] != RUN_VERSION {
        return fail(format!(
            "{}: not a {RUN_FORMAT} v{RUN_VERSION} manifest",
            a.manifest.display()
        ));
    }
    let Some(args) = value["argv"].as_array() else {
        return fail(format!("{}: missing argv", a.manifest.display()));
    };
    let mut argv: Vec<String> = vec!["hep2".into()];
    argv.extend(args.iter().filter_map(|v| v.as_str().map(String::from)));
    if argv.get(1).map(String::as_str) == Some("replay") {
        return fail("refusing to replay a replay".into());
    }
    if let Some(out) = a.out {
        let out = out.to_string_lossy().into_owned();
        match argv.iter().position(|s| s == "--out") {
            Some(i) if i + 1 < argv.len() => argv[i + 1] = out,
            _ => match argv.iter().position(|s| s.starts_with("--out=")) {
                Some(i) => argv[i] = format!("--out={out}"),
                None => argv.extend(["--out".to_string(), out]),
            },
        }
    }
    dispatch(argv)
}
