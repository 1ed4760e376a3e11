use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use clues_core::datagen::{gen_bundle, BundleSpec, PollutionPlan, Regime};
use clues_core::eval::{full_pipeline, run_comparison, ComparisonOutput, ExperimentConfig};
use clues_core::merging::{merge, MergeMethod, MergeWeights};
use clues_core::model::PollutionKind;
use clues_core::scoring::{score_samples, DataInfConfig, ScoreVariant, Scorer, ScoringConfig};

use crate::bundle::{read_bundle, write_bundle};
use crate::ckpt::{load_adapter, load_trajectory, save_adapter, MergeRecord};
use crate::config::{load_experiment, ConfigError};
use crate::exec::{RayonExecutor, WallClock};
use crate::report::{load_report, write_outputs, write_tables};

#[derive(Debug, Parser)]
#[command(
    name = "clues",
    version,
    about = "Collaborative data-quality control for distributed fine-tuning"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic client bundle.
    Gen(GenArgs),
    /// Run the full workflow for one configuration.
    Run(RunArgs),
    /// Run mixed / oracle / selected arms side by side.
    Compare(RunArgs),
    /// Score one client of a persisted bundle against a trajectory.
    Score(ScoreArgs),
    /// Merge persisted adapters.
    Merge(MergeArgs),
    /// Re-render a report as CSV tables.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum RegimeArg {
    Iid,
    DomainHet,
    QualityHet,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum KindArg {
    LabelSubstitution,
    Truncation,
    NoiseInjection,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, value_enum, default_value = "iid")]
    pub regime: RegimeArg,
    /// Per-client pollution ratios (or one ratio for every client).
    #[arg(long, value_delimiter = ',', default_value = "0.4")]
    pub ratios: Vec<f64>,
    /// Number of clients; defaults to the number of ratios, or 4.
    #[arg(long)]
    pub clients: Option<usize>,
    #[arg(long, default_value_t = 500)]
    pub n: usize,
    #[arg(long, value_enum, default_value = "label-substitution")]
    pub kind: KindArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ScorerArg {
    Clues,
    Loss,
    Datainf,
    Random,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum VariantArg {
    Sgd,
    Adam,
    Adamw,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    /// Trajectory directory as written by `run`/`compare`.
    #[arg(long)]
    pub trajectory: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub client: u32,
    #[arg(long, value_enum, default_value = "clues")]
    pub scorer: ScorerArg,
    #[arg(long, value_enum, default_value = "sgd")]
    pub variant: VariantArg,
    /// Layer to restrict the score to (default: first adapted layer).
    #[arg(long)]
    pub layer: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MethodArg {
    Linear,
    TaskArithmetic,
    Ties,
}

#[derive(Debug, Args)]
pub struct MergeArgs {
    #[arg(long, value_enum, default_value = "linear")]
    pub method: MethodArg,
    #[arg(long, default_value_t = 0.2)]
    pub density: f64,
    /// Merge weights, normalized to sum to one (default uniform).
    #[arg(long, value_delimiter = ',')]
    pub weights: Option<Vec<f64>>,
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(short = 'o', long = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// `report.json`, or a run directory containing one.
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

/// Exit status for an error: 2 for configuration problems, 1 otherwise.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<ConfigError>().is_some() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<clues_core::Error>() {
            if matches!(e.root(), clues_core::Error::Config(_)) {
                return 2;
            }
        }
    }
    1
}

pub fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen(a) => gen(a),
        Command::Run(a) => run(a, false),
        Command::Compare(a) => run(a, true),
        Command::Score(a) => score(a),
        Command::Merge(a) => merge_cmd(a),
        Command::Report(a) => report(a),
    }
}

fn gen(a: GenArgs) -> Result<()> {
    let regime = match a.regime {
        RegimeArg::Iid => Regime::Iid,
        RegimeArg::DomainHet => Regime::DomainHet,
        RegimeArg::QualityHet => Regime::QualityHet,
    };
    let kind = match a.kind {
        KindArg::LabelSubstitution => PollutionKind::LabelSubstitution,
        KindArg::Truncation => PollutionKind::Truncation,
        KindArg::NoiseInjection => PollutionKind::NoiseInjection,
    };
    let clients = a.clients.unwrap_or(if a.ratios.len() > 1 { a.ratios.len() } else { 4 });
    let mut plan = PollutionPlan::uniform(0.0, kind, a.seed);
    plan.ratios = a.ratios;
    let spec = BundleSpec::new(regime, clients, a.n, plan, a.seed);
    let bundle = gen_bundle(&spec).map_err(|e| ConfigError(e.to_string()))?;
    write_bundle(&a.out, &bundle)?;
    println!("wrote {} clients to {}", bundle.clients.len(), a.out.display());
    Ok(())
}

fn run(a: RunArgs, compare: bool) -> Result<()> {
    let cfg: ExperimentConfig = load_experiment(&a.config)?;
    let out_dir = a
        .out
        .or_else(|| cfg.output_dir.as_ref().map(PathBuf::from))
        .ok_or_else(|| ConfigError("no output directory: pass --out or set output_dir".into()))?;
    let exec = RayonExecutor::from_env()?;
    let clock = WallClock::start();
    let out: ComparisonOutput = if compare {
        run_comparison(&exec, &clock, &cfg)?
    } else {
        full_pipeline(&exec, &clock, &cfg)?
    };
    write_outputs(&out_dir, &out)?;
    for arm in &out.report.arms {
        match (&arm.error, arm.final_val_loss) {
            (Some(e), _) => println!("{:<24} failed: {e}", arm.name),
            (None, Some(l)) => println!("{:<24} final val loss {l:.6}", arm.name),
            (None, None) => println!("{:<24} done", arm.name),
        }
    }
    println!("report written to {}", out_dir.display());
    Ok(())
}

fn score(a: ScoreArgs) -> Result<()> {
    let bundle = read_bundle(&a.bundle)?;
    let traj = load_trajectory(&a.trajectory).with_context(|| format!("loading {}", a.trajectory.display()))?;
    let client = bundle
        .clients
        .iter()
        .find(|c| c.client_id == a.client)
        .ok_or_else(|| ConfigError(format!("bundle has no client {}", a.client)))?;
    let scorer = match a.scorer {
        ScorerArg::Clues => {
            let variant = match a.variant {
                VariantArg::Sgd => ScoreVariant::SgdDot,
                VariantArg::Adam => ScoreVariant::AdamDot,
                VariantArg::Adamw => ScoreVariant::AdamWDot,
            };
            let mut cfg = ScoringConfig::new(variant);
            cfg.layer = a.layer;
            Scorer::Clues(cfg)
        }
        ScorerArg::Loss => Scorer::Loss,
        ScorerArg::Datainf => Scorer::DataInf(DataInfConfig::default()),
        ScorerArg::Random => Scorer::Random { seed: a.seed },
    };
    let exec = RayonExecutor::from_env()?;
    let scores = score_samples(
        &exec,
        &scorer,
        &client.samples,
        &client.samples,
        &bundle.validation,
        &traj,
    )?;
    let mut w = csv::Writer::from_path(&a.out)?;
    w.write_record(["client_id", "sample_id", "score"])?;
    for s in &scores {
        w.write_record([a.client.to_string(), s.sample_id.to_string(), s.score.to_string()])?;
    }
    w.flush()?;
    println!("scored {} samples", scores.len());
    Ok(())
}

fn merge_cmd(a: MergeArgs) -> Result<()> {
    let adapters = a
        .inputs
        .iter()
        .map(|p| {
            load_adapter(p)
                .map(|(ad, _)| ad)
                .with_context(|| format!("loading {}", p.display()))
        })
        .collect::<Result<Vec<_>>>()?;
    let weights = match &a.weights {
        Some(w) if w.len() != adapters.len() => {
            return Err(ConfigError(format!("{} weights for {} adapters", w.len(), adapters.len())).into())
        }
        Some(w) => MergeWeights {
            weights: w.clone(),
            policy: clues_core::merging::WeightPolicy::SumToOne,
        },
        None => MergeWeights::uniform(adapters.len()),
    }
    .resolved()?;
    let method = match a.method {
        MethodArg::Linear => MergeMethod::Linear,
        MethodArg::TaskArithmetic => MergeMethod::TaskArithmetic,
        MethodArg::Ties => MergeMethod::Ties { density: a.density },
    };
    let merged = merge(&adapters, &method, &weights)?;
    let record = MergeRecord {
        method,
        weights,
        inputs: a.inputs.iter().map(|p| p.display().to_string()).collect(),
    };
    save_adapter(&a.out, &merged, Some(record))?;
    println!("merged {} adapters into {}", adapters.len(), a.out.display());
    Ok(())
}

fn report(a: ReportArgs) -> Result<()> {
    let path: &Path = &a.report;
    let file = if path.is_dir() {
        path.join(crate::report::REPORT_FILE)
    } else {
        path.to_path_buf()
    };
    let report = load_report(&file)?;
    if report.schema_version != clues_core::eval::SCHEMA_VERSION {
        bail!("unsupported report schema version {}", report.schema_version);
    }
    write_tables(&a.out, &report)?;
    println!("tables written to {}", a.out.display());
    Ok(())
}
