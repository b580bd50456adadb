use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use relaxo_cli::{
    load_experiment_config, load_train_config, run_compare, run_pipeline, run_train, Stage,
};

#[derive(Parser)]
#[command(
    name = "relaxo",
    about = "Quantitative parametric-mapping experiment harness"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// JSON experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides the config's out_dir).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Random seed (overrides the config's seed).
    #[arg(long)]
    seed: Option<u64>,
    /// Suppress progress output.
    #[arg(long)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Rasterize the phantom and synthesize the ground-truth contrast series.
    Phantom(CommonArgs),
    /// Generate the undersampling mask set.
    Mask(CommonArgs),
    /// Simulate the multi-coil, undersampled, noisy acquisition.
    Acquire(CommonArgs),
    /// Reconstruct the acquired contrasts.
    Recon(CommonArgs),
    /// Synthesize the unacquired contrasts.
    Generate(CommonArgs),
    /// Fit the relaxation map.
    Fit(CommonArgs),
    /// Compute metrics, statistics, and map images.
    Eval(CommonArgs),
    /// Run the full pipeline (phantom through eval).
    Pipeline(CommonArgs),
    /// Build a synthetic dataset and run the three-step training schedule.
    Train(CommonArgs),
    /// Aggregate completed experiment directories into a ranked table.
    Compare {
        /// Directory containing completed experiment output directories.
        #[arg(long)]
        config: PathBuf,
        /// Where to write the aggregate tables (defaults to the input dir).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        quiet: bool,
    },
}

fn run_stage(args: &CommonArgs, upto: Stage) -> anyhow::Result<()> {
    let mut cfg = load_experiment_config(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let out = args
        .out
        .clone()
        .or_else(|| cfg.out_dir.clone())
        .ok_or_else(|| anyhow::anyhow!("no output directory (set out_dir or pass --out)"))?;
    run_pipeline(&cfg, &out, upto, args.quiet)?;
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Phantom(a) => run_stage(&a, Stage::Phantom),
        Command::Mask(a) => run_stage(&a, Stage::Mask),
        Command::Acquire(a) => run_stage(&a, Stage::Acquire),
        Command::Recon(a) => run_stage(&a, Stage::Recon),
        Command::Generate(a) => run_stage(&a, Stage::Generate),
        Command::Fit(a) => run_stage(&a, Stage::Fit),
        Command::Eval(a) | Command::Pipeline(a) => run_stage(&a, Stage::Eval),
        Command::Train(a) => {
            let mut cfg = load_train_config(&a.config)?;
            if let Some(seed) = a.seed {
                cfg.seed = seed;
            }
            let out = a
                .out
                .clone()
                .or_else(|| cfg.out_dir.clone())
                .ok_or_else(|| anyhow::anyhow!("no output directory (set out_dir or pass --out)"))?;
            run_train(&cfg, &out, a.quiet)?;
            Ok(())
        }
        Command::Compare { config, out, quiet } => {
            let out = out.unwrap_or_else(|| config.clone());
            run_compare(&config, &out, quiet)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
