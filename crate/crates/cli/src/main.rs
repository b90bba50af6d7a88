mod config;
mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::PipelineConfig;
use stages::Failure;

#[derive(Parser)]
#[command(name = "stopmap", version, about = "Stop-map stereotype classification pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Pipeline config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config value by dotted key, e.g. train.learning_rate=1e-4.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Worker threads for fold-level parallelism.
    #[arg(long, default_value_t = 1, global = true)]
    jobs: usize,
    /// Output directory; replaces `out_dir` from the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Generate a synthetic dataset.
    Simulate,
    /// Detect stops and build histogram stacks.
    Featurize,
    /// Leave-one-cage-out training and evaluation of the network.
    TrainLoco,
    /// PCA with nearest-neighbour and SVM classifiers on the same folds.
    Baselines,
    /// Export class-averaged activation maps.
    Explain,
    /// Print the confusion matrix and accuracies of the last evaluation.
    Report,
}

impl Command {
    fn stage(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Featurize => "featurize",
            Command::TrainLoco => "train-loco",
            Command::Baselines => "baselines",
            Command::Explain => "explain",
            Command::Report => "report",
        }
    }
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let path = cli.config.as_ref().ok_or_else(|| Failure::config("--config is required"))?;
    let cfg = PipelineConfig::load(path, &cli.overrides, cli.out.as_deref()).map_err(Failure::config)?;
    let jobs = cli.jobs;
    match cli.command {
        Command::Simulate => stages::simulate_stage(&cfg, jobs),
        Command::Featurize => stages::featurize_stage(&cfg, jobs),
        Command::TrainLoco => stages::train_loco_stage(&cfg, jobs),
        Command::Baselines => stages::baselines_stage(&cfg, jobs),
        Command::Explain => stages::explain_stage(&cfg, jobs),
        Command::Report => stages::report_stage(&cfg),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error [{}]: {}", cli.command.stage(), f.message);
            ExitCode::from(f.code as u8)
        }
    }
}
