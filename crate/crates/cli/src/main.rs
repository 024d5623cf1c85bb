//! `hd-riskcast`: fit, evaluate and plan with time-to-diagnosis risk models.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context as _, Result};
use clap::{Parser, Subcommand};
use env_logger::Env;

use riskcast::config::{load_config, RunConfig};
use riskcast::error::ErrorClass;

mod commands;
mod output;

use commands::Context;

#[derive(Parser)]
#[command(name = "hd-riskcast", version, about)]
struct Cli {
    /// Run configuration (TOML)
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory; overrides `output_dir` from the config
    #[arg(long, global = true, value_name = "DIR", env = "HD_RISKCAST_OUT")]
    out: Option<PathBuf>,
    /// Seed for fold assignment and simulation; overrides the config
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Worker threads (all cores by default)
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Ingest and filter the input, then print baseline characteristics
    Validate,
    /// Fit or load every configured model on the analytic cohort
    Fit,
    /// Write per-subject risk scores
    Score,
    /// Uno's C profiles, global C and KM-adjusted ROC curves on the full cohort
    Evaluate,
    /// Event-stratified k-fold cross-validation
    Cv,
    /// Youden thresholds, diagnosis rates and per-arm sample sizes
    Enrich,
    /// Generate a synthetic cohort from the [simulate] table
    Simulate,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Validate => "validate",
            Command::Fit => "fit",
            Command::Score => "score",
            Command::Evaluate => "evaluate",
            Command::Cv => "cv",
            Command::Enrich => "enrich",
            Command::Simulate => "simulate",
        }
    }
}

fn load(cli: &Cli) -> std::result::Result<RunConfig, riskcast::Error> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| riskcast::Error::config("--config", "a config file is required"))?;
    let mut cfg = load_config(path).map_err(|e| match e {
        riskcast::Error::Io { path, source } => {
            riskcast::Error::config("--config", format!("cannot read {}: {source}", path.display()))
        }
        other => other,
    })?;
    if let Some(seed) = cli.seed {
        cfg.cv.seed = seed;
        if let Some(sim) = &mut cfg.simulate {
            sim.seed = seed;
        }
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("cannot configure the thread pool")?;
    }
    let cfg = load(&cli)?;
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    let mut ctx = Context::new(cfg, out)?;
    let text = match cli.command {
        Command::Validate => commands::validate(&mut ctx)?,
        Command::Fit => commands::fit(&mut ctx)?,
        Command::Score => commands::score(&mut ctx)?,
        Command::Evaluate => commands::evaluate(&mut ctx)?,
        Command::Cv => commands::cv(&mut ctx)?,
        Command::Enrich => commands::enrich(&mut ctx)?,
        Command::Simulate => commands::simulate_cmd(&mut ctx)?,
    };
    print!("{text}");
    ctx.finish(cli.command.name())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<riskcast::Error>()) {
        Some(e) => match e.class() {
            ErrorClass::Config => 2,
            ErrorClass::Data => 3,
            ErrorClass::Numerical => 4,
        },
        None => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
