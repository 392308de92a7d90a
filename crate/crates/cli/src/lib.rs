//! Command-line surface for the sigfuse engine.
//!
//! Every command is driven by a TOML config (see [`config::RunConfig`]) and
//! writes only under the configured output directory. Exit codes: 0 on
//! success, 1 on a runtime failure, 2 on a usage or configuration error.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::config::{ConfigError, RunConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "sigfuse", version, about = "Sentiment/technical signal backtests and a TD3 portfolio allocator")]
pub struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides the config output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load and validate the input files and summarise the panel.
    Ingest,
    /// Run the rule-based combined-signal strategy for each sentiment weight.
    Backtest,
    /// Train the TD3 allocator on the training window.
    Train {
        /// Continue from a training checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a trained policy out of sample against buy-and-hold.
    Eval {
        /// Checkpoint to evaluate; defaults to the final training checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Factor regressions of strategy returns.
    Regress {
        /// `nav.csv` files to regress; defaults to every report under the output directory.
        #[arg(long = "report")]
        reports: Vec<PathBuf>,
    },
    /// Collect every strategy summary into one table.
    Report,
    /// Write a seeded synthetic data set and a config that uses it.
    Synth {
        /// Number of trading days.
        #[arg(long, default_value_t = 300)]
        days: usize,
        /// Number of tickers (ignored with --planted).
        #[arg(long, default_value_t = 20)]
        tickers: usize,
        /// Four-asset market where one asset carries a planted drift.
        #[arg(long)]
        planted: bool,
    },
}

enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Usage(e.to_string())
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

fn resolved_config(cli: &Cli, need_factors: bool) -> Result<RunConfig, Failure> {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| Failure::Usage("--config is required for this command".into()))?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    cfg.validate()?;
    cfg.check_inputs(need_factors)?;
    Ok(cfg)
}

fn dispatch(cli: &Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Synth { days, tickers, planted } => {
            let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("fixture"));
            let args = commands::SynthArgs {
                days: *days,
                tickers: *tickers,
                seed: cli.seed.unwrap_or(7),
                planted: *planted,
            };
            commands::cmd_synth(&dir, &args)?;
        }
        Command::Ingest => commands::cmd_ingest(&resolved_config(cli, false)?)?,
        Command::Backtest => commands::cmd_backtest(&resolved_config(cli, false)?)?,
        Command::Train { resume } => commands::cmd_train(&resolved_config(cli, false)?, resume.as_deref())?,
        Command::Eval { checkpoint } => commands::cmd_eval(&resolved_config(cli, false)?, checkpoint.as_deref())?,
        Command::Regress { reports } => commands::cmd_regress(&resolved_config(cli, true)?, reports)?,
        Command::Report => commands::cmd_report(&resolved_config(cli, false)?)?,
    }
    Ok(())
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(&cli) {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            EXIT_RUNTIME
        }
    }
}
