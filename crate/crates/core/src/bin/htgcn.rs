use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use htgcn::config::RunConfig;
use htgcn::datagen::{generate_series, GenConfig};
use htgcn::gradcheck_toy::{run_gradient_check, TOY_STEP};
use htgcn::series_io::{read_series, write_series};
use htgcn::trainer::{evaluate_checkpoint, export_embeddings, train_to_dir, Checkpoint, MaskSelection, Session};

const GRADCHECK_TOLERANCE: f64 = 1e-5;

#[derive(Parser)]
#[command(name = "htgcn", version, about = "Temporal heterogeneous graph community detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic temporal heterogeneous SBM series as JSON lines.
    Generate(GenerateArgs),
    /// Train on a series; writes checkpoint.json, metrics.json, epochs.jsonl.
    Train(TrainArgs),
    /// Score a checkpoint on a series and print the metrics JSON.
    Evaluate(EvaluateArgs),
    /// Write final-snapshot embeddings as TSV.
    Export(ExportArgs),
    /// Finite-difference check of the training gradient on a toy window.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long = "out")]
    out: PathBuf,
    #[arg(long, default_value_t = 3)]
    node_types: u32,
    #[arg(long, default_value_t = 3)]
    edge_types: u32,
    #[arg(long, default_value_t = 3)]
    communities: usize,
    /// Comma-separated node count per type.
    #[arg(long, value_delimiter = ',', default_values_t = [300usize, 150, 30])]
    nodes: Vec<usize>,
    #[arg(long, default_value_t = 3)]
    steps: usize,
    #[arg(long, default_value_t = 0.2)]
    p_in: f64,
    #[arg(long, default_value_t = 0.01)]
    p_out: f64,
    #[arg(long, default_value_t = 0.1)]
    churn: f64,
    #[arg(long, default_value_t = 0.05)]
    migration: f64,
    #[arg(long, default_value_t = 16)]
    feature_dim: usize,
    #[arg(long, default_value_t = 1.0)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    labeled_type: u32,
}

#[derive(Args)]
struct TrainArgs {
    /// Flat `key = value` config file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long = "in")]
    input: Option<PathBuf>,
    #[arg(long = "out")]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    label_rate: Option<f64>,
    /// Comma-separated `a1-e1-a2-e2-a3` meta-paths.
    #[arg(long)]
    meta_paths: Option<String>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    attention_dim: Option<usize>,
    #[arg(long)]
    communities: Option<usize>,
    #[arg(long)]
    target_type: Option<u32>,
    #[arg(long)]
    pair_cap: Option<usize>,
    #[arg(long)]
    keep_self_pairs: bool,
    #[arg(long)]
    attention_rescale: bool,
    /// Disable the residual compressed aggregation (convolution only).
    #[arg(long)]
    no_rescac: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    /// train, heldout or all
    #[arg(long, default_value = "heldout")]
    mask: MaskSelection,
    /// Also write the metrics JSON here.
    #[arg(long = "out")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = TOY_STEP)]
    step: f64,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Train(#[from] htgcn::trainer::TrainError),
    #[error(transparent)]
    Config(#[from] htgcn::config::ConfigError),
    #[error(transparent)]
    Series(#[from] htgcn::series_io::SeriesError),
    #[error(transparent)]
    Datagen(#[from] htgcn::datagen::DatagenError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("missing required setting `{0}`")]
    Missing(&'static str),
    #[error("gradient check failed: max relative error {0:e} exceeds {GRADCHECK_TOLERANCE:e}")]
    GradientMismatch(f64),
}

impl CliError {
    fn kind(&self) -> &'static str {
        match self {
            Self::Train(_) => "train",
            Self::Config(_) => "config",
            Self::Series(_) => "series",
            Self::Datagen(_) => "datagen",
            Self::Io(_) => "io",
            Self::Missing(_) => "missing",
            Self::GradientMismatch(_) => "gradcheck",
        }
    }
}

fn run_config(args: &TrainArgs) -> Result<RunConfig, CliError> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    let mut set = |key: &str, value: Option<String>| value.map_or(Ok(()), |v| cfg.set(key, &v));
    set("seed", args.seed.map(|v| v.to_string()))?;
    set("window", args.window.map(|v| v.to_string()))?;
    set("lr", args.lr.map(|v| v.to_string()))?;
    set("epochs", args.epochs.map(|v| v.to_string()))?;
    set("label_rate", args.label_rate.map(|v| v.to_string()))?;
    set("meta_paths", args.meta_paths.clone())?;
    set("hidden", args.hidden.map(|v| v.to_string()))?;
    set("attention_dim", args.attention_dim.map(|v| v.to_string()))?;
    set("communities", args.communities.map(|v| v.to_string()))?;
    set("target_type", args.target_type.map(|v| v.to_string()))?;
    set("pair_cap", args.pair_cap.map(|v| v.to_string()))?;
    set("in", args.input.as_ref().map(|p| p.display().to_string()))?;
    set("out", args.out.as_ref().map(|p| p.display().to_string()))?;
    if args.keep_self_pairs {
        cfg.keep_self_pairs = true;
    }
    if args.attention_rescale {
        cfg.attention_rescale = true;
    }
    if args.no_rescac {
        cfg.use_rescac = false;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate(a) => {
            let cfg = GenConfig {
                node_type_count: a.node_types,
                edge_type_count: a.edge_types,
                community_count: a.communities,
                nodes_per_type: a.nodes,
                time_steps: a.steps,
                p_in: a.p_in,
                p_out: a.p_out,
                churn_rate: a.churn,
                migration_rate: a.migration,
                feature_dim: a.feature_dim,
                feature_noise: a.noise,
                labeled_type: a.labeled_type,
                seed: a.seed,
            };
            let series = generate_series(&cfg)?;
            write_series(&series, &a.out)?;
            info!("wrote {} snapshots to {}", series.len(), a.out.display());
        }
        Command::Train(a) => {
            let cfg = run_config(&a)?;
            let input = cfg.input.clone().ok_or(CliError::Missing("in"))?;
            let out = cfg.output_dir.clone().ok_or(CliError::Missing("out"))?;
            let series = read_series(&input)?;
            let session = Session::new(&cfg, &series)?;
            let (outcome, _) = train_to_dir(&session, &out)?;
            println!("{}", outcome.final_metrics.to_json());
        }
        Command::Evaluate(a) => {
            let checkpoint = Checkpoint::load(&a.checkpoint)?;
            let series = read_series(&a.input)?;
            let json = evaluate_checkpoint(&checkpoint, &series, a.mask)?.to_json();
            if let Some(out) = &a.out {
                std::fs::write(out, &json)?;
            }
            println!("{json}");
        }
        Command::Export(a) => {
            let checkpoint = Checkpoint::load(&a.checkpoint)?;
            let series = read_series(&a.input)?;
            export_embeddings(&checkpoint, &series, &a.out)?;
        }
        Command::Gradcheck(a) => {
            let report = run_gradient_check(a.seed, a.step)?;
            println!("max relative error: {:e} over {} entries", report.max_relative_error, report.entries_checked);
            if report.max_relative_error >= GRADCHECK_TOLERANCE {
                return Err(CliError::GradientMismatch(report.max_relative_error));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let body = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{body}");
            ExitCode::FAILURE
        }
    }
}
