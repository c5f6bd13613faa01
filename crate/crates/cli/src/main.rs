use std::path::PathBuf;
use std::process::ExitCode;

use ckg_cli::config::ExperimentConfig;
use ckg_cli::error::{CliError, Result};
use ckg_cli::pipeline::run_stage;
use clap::Parser;

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

/// Context-aware traffic forecasting pipeline on a synthetic city.
#[derive(Debug, Parser)]
#[command(name = "ckg", version)]
struct Args {
    /// JSON experiment configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// synth, build-kg, embed, eval-mr, integrate, forecast, report or all.
    #[arg(long, default_value = "all")]
    stage: String,
    /// Overrides the configuration seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

fn run(args: Args) -> Result<()> {
    let mut cfg = match &args.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if args.jobs > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(args.jobs)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    let root = std::env::var_os("CKG_OUT").map(PathBuf::from).unwrap_or(cfg.output_dir.clone());
    run_stage(&args.stage, &cfg, &root)
}

fn main() -> ExitCode {
    match run(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.line());
            ExitCode::from(e.code() as u8)
        }
    }
}
