use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use slicedrift::harness::ReportFormat;
use slicedrift::{
    detect_drift, emit_report, find_weak_slices, load_dataset, load_unlabeled, permute_distort, rebalance_mcr, run_goal1,
    run_goal2, save_dataset, slice_summary, stratified_split, synthetic, Dataset, FeatureSchema, Goal,
    Goal1ExperimentConfig, Goal2ExperimentConfig, PermutationConfig, RebalanceConfig, Setting, SliceFinderConfig,
    SliceSet,
};

#[derive(Parser)]
#[command(name = "slicedrift", version, about = "Label-free drift detection through weak data slices")]
struct Cli {
    /// Drop features with fewer than this many minority values when loading data
    #[arg(long, global = true, value_name = "MIN_MINORITY_COUNT")]
    drop_low_variance: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Find weak slices on a labeled baseline and save them as JSON
    Slice(SliceArgs),
    /// Test a deployment dataset for drift (exit 0: none, 2: drift, 1: error)
    Detect(DetectArgs),
    /// Write a distorted copy of a dataset
    #[command(subcommand)]
    Distort(DistortCommand),
    /// Run a seeded detection experiment from a JSON config
    Experiment(ExperimentArgs),
    /// Stratified 50-50 split into baseline and deployment files
    Split(SplitArgs),
    /// Write a synthetic labeled dataset with planted weak regions
    Synth(SynthArgs),
}

#[derive(Args)]
struct Input {
    /// CSV data file
    #[arg(long)]
    data: PathBuf,
    /// JSON feature schema
    #[arg(long)]
    schema: PathBuf,
}

#[derive(Args)]
struct SliceArgs {
    #[command(flatten)]
    input: Input,
    /// Output slice set
    #[arg(long, short)]
    out: PathBuf,
    #[arg(long)]
    min_support: Option<usize>,
    #[arg(long, default_value_t = 0.05)]
    filter_alpha: f64,
    #[arg(long, default_value_t = 2)]
    max_order: usize,
    /// Print summary statistics of the slice set
    #[arg(long)]
    summary: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum GoalArg {
    /// Two-sided test for any change in slice sizes
    #[value(alias = "goal1")]
    DistributionChange,
    /// One-sided test for growth of weak slices
    #[value(alias = "goal2")]
    McrDegradation,
}

impl From<GoalArg> for Goal {
    fn from(g: GoalArg) -> Self {
        match g {
            GoalArg::DistributionChange => Goal::DistributionChange,
            GoalArg::McrDegradation => Goal::McrDegradation,
        }
    }
}

#[derive(Args)]
struct DetectArgs {
    /// Slice set from `slicedrift slice`
    #[arg(long)]
    slices: PathBuf,
    #[command(flatten)]
    input: Input,
    #[arg(long, value_enum, default_value = "distribution-change")]
    goal: GoalArg,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long)]
    no_continuity_correction: bool,
    /// Write the per-slice report as JSON
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Subcommand)]
enum DistortCommand {
    /// Permute values within random rows and columns
    Permute(PermuteArgs),
    /// Resample to scale the misclassification odds by k
    Rebalance(RebalanceArgs),
}

#[derive(Args)]
struct Output {
    /// Output CSV
    #[arg(long, short)]
    out: PathBuf,
    /// Output schema (default: next to the CSV with a .schema.json suffix)
    #[arg(long)]
    out_schema: Option<PathBuf>,
}

#[derive(Args)]
struct PermuteArgs {
    #[command(flatten)]
    input: Input,
    #[command(flatten)]
    output: Output,
    /// E1, E2 or E3
    #[arg(long)]
    setting: Setting,
    /// Row proportion in (0, 1]
    #[arg(long)]
    r: f64,
    /// Column proportion in (0, 1]
    #[arg(long)]
    c: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Allow permutations that leave a column unchanged
    #[arg(long)]
    allow_unchanged: bool,
}

#[derive(Args)]
struct RebalanceArgs {
    #[command(flatten)]
    input: Input,
    #[command(flatten)]
    output: Output,
    /// Odds multiplier
    #[arg(long)]
    k: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum Experiment {
    Goal1,
    Goal2,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Json,
    Csv,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(value_enum)]
    experiment: Experiment,
    /// JSON config; relative data paths resolve against its directory
    #[arg(long)]
    config: PathBuf,
    /// Overrides master_seed
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, short)]
    out: PathBuf,
    /// Report format (default: from the output extension, else json)
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
}

#[derive(Args)]
struct SplitArgs {
    #[command(flatten)]
    input: Input,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory for baseline.csv, deployment.csv and their schemas
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 10_000)]
    rows: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    output: Output,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: &Cli) -> Result<ExitCode> {
    let low_variance = cli.drop_low_variance;
    match &cli.command {
        Command::Slice(a) => slice(a, low_variance),
        Command::Detect(a) => detect(a, low_variance),
        Command::Distort(DistortCommand::Permute(a)) => {
            let d = load_labeled(&a.input, low_variance)?;
            let mut cfg = PermutationConfig::new(a.setting, a.r, a.c, a.seed);
            cfg.force_different = !a.allow_unchanged;
            if cfg.is_pure_row_permutation(d.schema().num_features()) {
                log::warn!("E2 over every column only reorders rows");
            }
            write_output(&permute_distort(&d, &cfg)?, &a.output)
        }
        Command::Distort(DistortCommand::Rebalance(a)) => {
            let d = load_labeled(&a.input, low_variance)?;
            let out = rebalance_mcr(&d, &RebalanceConfig { k: a.k, seed: a.seed })?;
            eprintln!(
                "misclassification rate {:.4} -> {:.4}",
                d.misclassification_rate()?,
                out.misclassification_rate()?
            );
            write_output(&out, &a.output)
        }
        Command::Experiment(a) => experiment(a, low_variance),
        Command::Split(a) => {
            let d = load_labeled(&a.input, low_variance)?;
            let pair = stratified_split(&d, a.seed)?;
            std::fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
            for (name, part) in [("baseline", &pair.baseline), ("deployment", &pair.deployment)] {
                save_dataset(
                    part,
                    a.out_dir.join(format!("{name}.csv")),
                    a.out_dir.join(format!("{name}.schema.json")),
                )?;
            }
            println!("baseline {} rows, deployment {} rows", pair.baseline.len(), pair.deployment.len());
            Ok(ExitCode::SUCCESS)
        }
        Command::Synth(a) => write_output(&synthetic::planted_weakness(a.rows, a.seed)?, &a.output),
    }
}

fn read_schema(path: &Path) -> Result<FeatureSchema> {
    Ok(FeatureSchema::from_json_file(path)?)
}

fn load_labeled(input: &Input, low_variance: Option<usize>) -> Result<Dataset> {
    let d = load_dataset(&input.data, &read_schema(&input.schema)?)?;
    drop_columns(d, low_variance)
}

fn drop_columns(d: Dataset, low_variance: Option<usize>) -> Result<Dataset> {
    match low_variance {
        Some(min) => {
            let before = d.schema().num_features();
            let kept = d.drop_low_variance(min)?;
            log::info!("kept {} of {before} features", kept.schema().num_features());
            Ok(kept)
        }
        None => Ok(d),
    }
}

fn write_output(d: &Dataset, out: &Output) -> Result<ExitCode> {
    let schema = out
        .out_schema
        .clone()
        .unwrap_or_else(|| out.out.with_extension("schema.json"));
    save_dataset(d, &out.out, &schema)?;
    Ok(ExitCode::SUCCESS)
}

fn slice(a: &SliceArgs, low_variance: Option<usize>) -> Result<ExitCode> {
    let d = load_labeled(&a.input, low_variance)?;
    let cfg = SliceFinderConfig {
        min_support: a.min_support,
        filter_alpha: a.filter_alpha,
        max_order: a.max_order,
        ..Default::default()
    };
    let source = a.input.data.display().to_string();
    let s = find_weak_slices(&d, &cfg, &source)?;
    s.to_json_file(&a.out)?;
    println!("{} weak slices written to {}", s.len(), a.out.display());
    if a.summary {
        println!("{}", serde_json::to_string_pretty(&slice_summary(&s, &d)?)?);
    }
    Ok(ExitCode::SUCCESS)
}

fn detect(a: &DetectArgs, low_variance: Option<usize>) -> Result<ExitCode> {
    let s = SliceSet::from_json_file(&a.slices)?;
    let d = load_unlabeled(&a.input.data, &read_schema(&a.input.schema)?)?;
    let d = drop_columns(d, low_variance)?;
    let report = detect_drift(&s, &d, a.goal.into(), a.alpha, !a.no_continuity_correction)?;
    if let Some(path) = &a.report {
        let file = std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(file), &report)?;
    }
    println!("{}", report.summary_line());
    Ok(if report.drift_detected { ExitCode::from(2) } else { ExitCode::SUCCESS })
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if !p.as_os_str().is_empty() && p.is_relative() {
        *p = base.join(&*p);
    }
}

fn experiment(a: &ExperimentArgs, low_variance: Option<usize>) -> Result<ExitCode> {
    let text = std::fs::read_to_string(&a.config).with_context(|| format!("reading {}", a.config.display()))?;
    let base = a.config.parent().unwrap_or(Path::new("."));
    let format = match a.format {
        Some(FormatArg::Json) => ReportFormat::Json,
        Some(FormatArg::Csv) => ReportFormat::Csv,
        None => match a.out.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => ReportFormat::Csv,
            _ => ReportFormat::Json,
        },
    };
    let grid = match a.experiment {
        Experiment::Goal1 => {
            let mut cfg: Goal1ExperimentConfig = serde_json::from_str(&text).context("parsing goal1 config")?;
            resolve(base, &mut cfg.data.dataset);
            resolve(base, &mut cfg.data.schema);
            if let Some(seed) = a.seed {
                cfg.master_seed = seed;
            }
            if low_variance.is_some() {
                cfg.data.drop_low_variance = low_variance;
            }
            run_goal1(&cfg)?
        }
        Experiment::Goal2 => {
            let mut cfg: Goal2ExperimentConfig = serde_json::from_str(&text).context("parsing goal2 config")?;
            resolve(base, &mut cfg.data.dataset);
            resolve(base, &mut cfg.data.schema);
            if let Some(seed) = a.seed {
                cfg.master_seed = seed;
            }
            if low_variance.is_some() {
                cfg.data.drop_low_variance = low_variance;
            }
            run_goal2(&cfg)?
        }
    };
    if grid.cells.iter().all(|c| c.comparisons == 0) {
        bail!("no comparisons were run ({} splits skipped)", grid.skipped_splits.len());
    }
    emit_report(&grid, format, &a.out)?;
    for s in &grid.skipped_splits {
        log::warn!("split {} skipped: {}", s.split_index, s.reason);
    }
    println!("{} cells written to {}", grid.cells.len(), a.out.display());
    Ok(ExitCode::SUCCESS)
}
