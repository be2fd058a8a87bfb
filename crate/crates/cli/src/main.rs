//! `mavias`: dataset generation, bias discovery, training, evaluation and
//! diagnostics from one TOML configuration.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mavias::autodiff::OptimizerConfig;
use mavias::discovery::AggregationMode;
use mavias::pipeline::{self, PipelineError, RunConfig};
use mavias::trainer::TrainingMode;

#[derive(Parser)]
#[command(name = "mavias", version, about)]
struct Cli {
    /// Run configuration (TOML). Built-in defaults are used without one.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    discovery_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// More log output; repeat for more.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the configured synthetic dataset.
    Synth,
    /// Tag samples, filter relevant tags and embed the irrelevant ones.
    Discover(DiscoverArgs),
    /// Train a vanilla or bias-aware model.
    Train(TrainArgs),
    /// Open-set and closed-set group metrics on the test split.
    Eval(EvalArgs),
    /// Gradient-norm and bias-branch diagnostics on the train split.
    Diagnose(CheckpointArgs),
    /// Print the resolved configuration.
    Config,
}

#[derive(Args)]
struct DiscoverArgs {
    #[arg(long)]
    aggregation: Option<Aggregation>,
    #[arg(long)]
    max_in_flight: Option<usize>,
    #[arg(long)]
    retries: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Aggregation {
    Collectively,
    Separately,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Vanilla,
    Mavias,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Where to write the checkpoint.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args)]
struct CheckpointArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Model whose predictions define the biased tags.
    #[arg(long)]
    reference_checkpoint: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    checkpoints: CheckpointArgs,
    #[arg(long)]
    min_support: Option<usize>,
    #[arg(long)]
    top_k: Option<usize>,
    /// Also write per-sample logits as JSON lines.
    #[arg(long)]
    export_logits: bool,
}

fn apply_train(cfg: &mut RunConfig, a: &TrainArgs) -> Result<(), PipelineError> {
    let t = &mut cfg.train;
    let (alpha0, lambda0) = match t.mode {
        TrainingMode::Mavias { alpha, lambda } => (alpha, lambda),
        TrainingMode::Vanilla => (0.01, 0.5),
    };
    t.mode = match a.mode {
        Some(Mode::Vanilla) => TrainingMode::Vanilla,
        Some(Mode::Mavias) => TrainingMode::Mavias {
            alpha: alpha0,
            lambda: lambda0,
        },
        None => t.mode,
    };
    match &mut t.mode {
        TrainingMode::Mavias { alpha, lambda } => {
            *alpha = a.alpha.unwrap_or(*alpha);
            *lambda = a.lambda.unwrap_or(*lambda);
        }
        TrainingMode::Vanilla if a.alpha.is_some() || a.lambda.is_some() => {
            return Err(PipelineError::Config(
                "--alpha and --lambda need mavias mode".into(),
            ));
        }
        TrainingMode::Vanilla => {}
    }
    if let Some(e) = a.epochs {
        t.epochs = e;
    }
    if let Some(b) = a.batch_size {
        t.batch_size = b;
    }
    if let Some(new) = a.lr {
        match &mut t.optimizer {
            OptimizerConfig::Sgd { lr, .. } | OptimizerConfig::Adam { lr, .. } => *lr = new,
        }
    }
    if let Some(p) = &a.checkpoint {
        cfg.paths.checkpoint = Some(p.clone());
    }
    Ok(())
}

fn apply_checkpoints(cfg: &mut RunConfig, a: &CheckpointArgs) {
    if let Some(p) = &a.checkpoint {
        cfg.paths.checkpoint = Some(p.clone());
    }
    if let Some(p) = &a.reference_checkpoint {
        cfg.paths.reference_checkpoint = Some(p.clone());
    }
}

fn resolve(cli: &Cli) -> Result<RunConfig, PipelineError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(d) = &cli.data_dir {
        cfg.paths.data_dir = d.clone();
    }
    if let Some(d) = &cli.discovery_dir {
        cfg.paths.discovery_dir = d.clone();
    }
    if let Some(d) = &cli.out_dir {
        cfg.paths.out_dir = d.clone();
    }
    match &cli.command {
        Command::Discover(a) => {
            let d = &mut cfg.discover;
            if let Some(m) = a.aggregation {
                d.aggregation = match m {
                    Aggregation::Collectively => AggregationMode::Collectively,
                    Aggregation::Separately => AggregationMode::Separately,
                };
            }
            d.max_in_flight = a.max_in_flight.unwrap_or(d.max_in_flight);
            d.retries = a.retries.unwrap_or(d.retries);
        }
        Command::Train(a) => apply_train(&mut cfg, a)?,
        Command::Eval(a) => {
            apply_checkpoints(&mut cfg, &a.checkpoints);
            let e = &mut cfg.eval;
            e.min_support = a.min_support.unwrap_or(e.min_support);
            e.top_k = a.top_k.unwrap_or(e.top_k);
            e.export_logits |= a.export_logits;
        }
        Command::Diagnose(a) => apply_checkpoints(&mut cfg, a),
        Command::Synth | Command::Config => {}
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), PipelineError> {
    let cfg = resolve(cli)?;
    let mut out = std::io::stdout().lock();
    match cli.command {
        Command::Synth => pipeline::run_synth(&cfg, &mut out),
        Command::Discover(_) => pipeline::run_discover(&cfg, &mut out).map(drop),
        Command::Train(_) => pipeline::run_train(&cfg, &mut out).map(drop),
        Command::Eval(_) => pipeline::run_eval(&cfg, &mut out).map(drop),
        Command::Diagnose(_) => pipeline::run_diagnose(&cfg, &mut out).map(drop),
        Command::Config => {
            print!("{}", cfg.to_toml());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
