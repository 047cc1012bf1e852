use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hpscreen_cli::{CliError, Pipeline, PipelineConfig};

#[derive(Parser)]
#[command(name = "hpscreen", version, about = "Autoencoder-based screening of stained gastric slides")]
struct Cli {
    /// Pipeline configuration (TOML). Defaults apply to anything not set.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,

    /// Override a setting, e.g. `--set train.epochs=10`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,

    /// Working directory; overrides `paths.workdir`.
    #[arg(short, long, global = true)]
    workdir: Option<PathBuf>,

    /// Seed for every random stream (cohort, sampling, training, folds).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for per-slide work. Defaults to all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Run single-threaded so repeated runs produce byte-identical outputs.
    #[arg(long, global = true)]
    deterministic: bool,

    /// Suppress progress messages on stderr.
    #[arg(short, long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort with ground truth.
    Synth,
    /// Detect tissue and trace its borders on every slide.
    Segment,
    /// Draw training windows and enumerate evaluation windows.
    Sample,
    /// Train the autoencoder on windows of negative training slides.
    Train,
    /// Score every evaluation window.
    Score,
    /// Diagnose evaluation slides and export the ROC curve.
    Diagnose {
        /// Use this slide threshold instead of the ROC optimum.
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Patient-stratified k-fold evaluation.
    Evaluate,
    /// Run every stage in order.
    RunAll,
    /// Print the effective configuration as TOML.
    Config,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = PipelineConfig::load(cli.config.as_deref(), &cli.overrides)?;
    if let Some(w) = cli.workdir {
        cfg.paths.workdir = w;
    }
    if let Some(s) = cli.seed {
        cfg.set_all_seeds(s);
    }
    if let Command::Config = cli.command {
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    let threads = if cli.deterministic { Some(1) } else { cli.threads };
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    let p = Pipeline::new(cfg, cli.quiet)?;
    match cli.command {
        Command::Synth => p.synth(),
        Command::Segment => p.segment(),
        Command::Sample => p.sample(),
        Command::Train => p.train(),
        Command::Score => p.score(),
        Command::Diagnose { threshold } => p.diagnose(threshold),
        Command::Evaluate => p.evaluate().map(|_| ()),
        Command::RunAll => p.run_all().map(|_| ()),
        Command::Config => unreachable!("handled above"),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
