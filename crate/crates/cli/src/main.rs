use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

mod commands;
mod config;
mod output;

use config::{Format, UsageError};

#[derive(Debug, Parser)]
#[command(
    name = "mupre",
    version,
    about = "Hyperparameter-transfer planning and checks for matrix-preconditioned optimizers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; MUPRE_OUT takes precedence.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Base seed, replacing the config's model seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for independent runs.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Write only this format instead of the config's list.
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print the per-layer hyperparameter plan for one model size.
    Plan {
        /// Width to plan for; the first configured width by default.
        #[arg(long)]
        width: Option<usize>,
        /// Depth to plan for; the first configured depth by default.
        #[arg(long)]
        depth: Option<usize>,
    },
    /// Feature-update size against width at the probe steps.
    Coordcheck,
    /// Final loss over widths and base learning rates.
    Lrsweep,
    /// Stable rank of every update against its bound.
    Rankscan,
    /// Feature-update size against depth for the residual MLP.
    Depthcheck,
    /// Closed-form oracles against the dense optimizer path.
    Oracle,
    /// Baseline compute needed to match each candidate point.
    Multiplier {
        /// CSV with `compute,loss` columns.
        #[arg(long)]
        baseline: PathBuf,
        /// CSV with `compute,loss` columns.
        #[arg(long)]
        candidate: PathBuf,
    },
}

pub struct Env {
    pub config: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub jobs: usize,
    pub format: Option<Format>,
}

impl Env {
    pub fn config_path(&self) -> Result<&Path> {
        self.config
            .as_deref()
            .ok_or_else(|| UsageError("this command needs --config".into()).into())
    }

    /// `MUPRE_OUT`, then `--out`, then the given fallback.
    pub fn out_dir(&self, fallback: Option<&Path>) -> Option<PathBuf> {
        std::env::var_os("MUPRE_OUT")
            .filter(|v| !v.is_empty())
            .map(PathBuf::from)
            .or_else(|| self.out.clone())
            .or_else(|| fallback.map(Path::to_path_buf))
    }
}

fn run(cli: Cli) -> Result<bool> {
    if cli.jobs == 0 {
        return Err(UsageError("--jobs must be at least 1".into()).into());
    }
    let env = Env {
        config: cli.config,
        out: cli.out,
        seed: cli.seed,
        jobs: cli.jobs,
        format: cli.format,
    };
    match cli.command {
        Command::Plan { width, depth } => commands::plan(&env, width, depth),
        Command::Coordcheck => commands::coordcheck(&env),
        Command::Lrsweep => commands::lrsweep(&env),
        Command::Rankscan => commands::rankscan(&env),
        Command::Depthcheck => commands::depthcheck(&env),
        Command::Oracle => commands::oracle(&env),
        Command::Multiplier {
            baseline,
            candidate,
        } => commands::multiplier(&env, &baseline, &candidate).context("multiplier"),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("check failed");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
