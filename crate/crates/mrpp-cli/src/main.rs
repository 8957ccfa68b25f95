//! Single entry point for the pipeline: map and dataset generation, imitation
//! training, evaluation, closed-loop rollouts, gradient verification, and
//! report assembly.
//!
//! Configuration precedence: built-in defaults < `--config file.json` <
//! command-line flags. The only environment overrides are `MRPP_OUT`
//! (fallback output path) and `MRPP_THREADS` (worker count). Exit codes:
//! 0 success, 2 usage, 3 data error, 4 numeric failure.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mrpp::config::RunConfig;
use mrpp::{Error, Result};

#[derive(Parser)]
#[command(name = "mrpp", version, about = "Multi-robot path planning with a geometric GNN")]
struct Cli {
    /// JSON config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for map-parallel stages (env MRPP_THREADS, default 1).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize one random map and write it as JSON.
    GenMap(commands::GenMapArgs),
    /// Generate an expert-labeled dataset with a 3:1:1 map split.
    GenDataset(commands::GenDatasetArgs),
    /// Train a model by imitation and write checkpoint + report.
    Train(commands::TrainArgs),
    /// Evaluate a checkpoint's accuracy on dataset splits.
    Eval(commands::EvalArgs),
    /// Run closed-loop episodes on fresh random maps.
    Rollout(commands::RolloutArgs),
    /// Gradient-check all ops and model variants.
    Gradcheck(commands::GradcheckArgs),
    /// Combine run artifacts into one summary.
    Report(commands::ReportArgs),
}

fn load_config(path: Option<&PathBuf>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::from_json_file(p),
        None => Ok(RunConfig::default()),
    }
}

fn resolve_threads(flag: Option<usize>) -> Result<usize> {
    if let Some(t) = flag {
        return Ok(t.max(1));
    }
    match std::env::var("MRPP_THREADS") {
        Ok(v) => v
            .parse::<usize>()
            .map(|t| t.max(1))
            .map_err(|_| Error::Config(format!("MRPP_THREADS is not a number: '{v}'"))),
        Err(_) => Ok(1),
    }
}

/// `--out`, else MRPP_OUT, else a usage error.
fn resolve_out(flag: Option<PathBuf>) -> Result<PathBuf> {
    flag.or_else(|| std::env::var_os("MRPP_OUT").map(PathBuf::from))
        .ok_or_else(|| Error::Config("an output path is required (--out or MRPP_OUT)".into()))
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(cli.config.as_ref())?;
    let threads = resolve_threads(cli.threads)?;
    match cli.command {
        Command::GenMap(args) => commands::gen_map(args, cfg),
        Command::GenDataset(args) => commands::gen_dataset(args, cfg, threads),
        Command::Train(args) => commands::train(args, cfg),
        Command::Eval(args) => commands::eval(args, cfg),
        Command::Rollout(args) => commands::rollout(args, cfg, threads),
        Command::Gradcheck(args) => commands::gradcheck(args),
        Command::Report(args) => commands::report(args),
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::NonFiniteLoss(_) | Error::NonFiniteGradient(_) | Error::NumericCheck(_) => 4,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
