//! Command-line experiment harness.
//!
//! Exit codes: 0 success, 1 a verification check failed, 2 configuration,
//! budget or usage error.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::builder::PossibleValuesParser;
use clap::{Args, Parser, Subcommand};

use commands::Failure;
use config::ExperimentConfig;
use output::OutDir;
use sofic_glauber::verify::Suite;

#[derive(Parser)]
#[command(name = "sofic-glauber", version, about = "Glauber dynamics on sofic approximations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Exact snapshots and sampled trajectories.
    Simulate(Common),
    /// Run a verification suite and write a JSON report.
    Verify {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = suite_names())]
        suite: String,
    },
    /// Local-similarity table of the configured actions.
    Sofic(Common),
    /// Free energy density estimate.
    Fed(Common),
    /// Gibbs diagnostics of a target measure.
    Diagnose(Common),
}

#[derive(Args)]
struct Common {
    /// JSON experiment configuration; optional for `verify`.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads; defaults to the machine's parallelism.
    #[arg(long)]
    workers: Option<usize>,
    /// Replaces every seed in the configuration.
    #[arg(long)]
    seed_override: Option<u64>,
}

fn suite_names() -> PossibleValuesParser {
    let mut names: Vec<&'static str> = Suite::ALL.iter().map(|s| s.name()).collect();
    names.push("all");
    PossibleValuesParser::new(names)
}

fn load(common: &Common, required: bool) -> Result<(ExperimentConfig, OutDir), Failure> {
    if let Some(k) = common.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
            .map_err(|e| format!("--workers: {e}"))?;
    }
    let mut cfg = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
            ExperimentConfig::parse(&text)?
        }
        None if required => return Err(Failure::Config("--config is required".into())),
        None => ExperimentConfig::parse("{}")?,
    };
    if let Some(seed) = common.seed_override {
        cfg.apply_seed_override(seed);
    }
    let out = OutDir::create(&common.out, cfg.hash())?;
    Ok((cfg, out))
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Simulate(c) => {
            let (cfg, out) = load(&c, true)?;
            commands::simulate(&cfg, &out)
        }
        Command::Verify { common, suite } => {
            let (cfg, out) = load(&common, false)?;
            commands::verify(&cfg, &suite, &out)
        }
        Command::Sofic(c) => {
            let (cfg, out) = load(&c, true)?;
            commands::sofic(&cfg, &out)
        }
        Command::Fed(c) => {
            let (cfg, out) = load(&c, true)?;
            commands::fed(&cfg, &out)
        }
        Command::Diagnose(c) => {
            let (cfg, out) = load(&c, true)?;
            commands::diagnose(&cfg, &out)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
