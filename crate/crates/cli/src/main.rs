//! `pcfi` command-line front end.
//!
//! Exit codes: 0 success, 2 usage or validation error, 3 I/O error,
//! 4 numerical invariant violation.

mod commands;

use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::error;

use pcfi::PcfiError;

#[derive(Debug, Parser)]
#[command(
    name = "pcfi",
    version,
    about = "Pseudo-confidence-based feature imputation for graphs"
)]
struct Cli {
    /// Only log errors.
    #[arg(long, short, global = true, conflicts_with = "verbose")]
    quiet: bool,

    /// More logging on stderr (repeat for debug output).
    #[arg(long, short, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a structural or uniform missing-value mask.
    Mask(commands::MaskArgs),
    /// Impute masked features.
    Impute(commands::ImputeArgs),
    /// Score imputed features against ground truth.
    Eval(commands::EvalArgs),
    /// Generate a synthetic dataset directory.
    Synth(commands::SynthArgs),
    /// Mask, impute with several methods and evaluate, over several seeds.
    Pipeline(commands::PipelineArgs),
}

/// Error carrying the process exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError {
            code: 2,
            message: message.into(),
        }
    }
}

impl From<PcfiError> for CliError {
    fn from(e: PcfiError) -> Self {
        let code = match e {
            PcfiError::Io { .. } => 3,
            PcfiError::Numerical(_) => 4,
            _ => 2,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

fn init_logging(cli: &Cli) {
    let level = if cli.quiet {
        log::LevelFilter::Error
    } else {
        match cli.verbose {
            0 => log::LevelFilter::Warn,
            1 => log::LevelFilter::Info,
            _ => log::LevelFilter::Debug,
        }
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .init();
}

fn init_threads() -> Result<(), CliError> {
    let threads = match std::env::var("PCFI_THREADS") {
        Ok(v) => v.trim().parse::<usize>().map_err(|_| {
            CliError::usage(format!(
                "PCFI_THREADS must be a non-negative integer, got {v:?}"
            ))
        })?,
        Err(_) => 0,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::usage(format!("cannot start worker pool: {e}")))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(&cli);
    let result = init_threads().and_then(|_| match cli.command {
        Command::Mask(args) => commands::mask(args),
        Command::Impute(args) => commands::impute(args),
        Command::Eval(args) => commands::eval(args),
        Command::Synth(args) => commands::synth(args),
        Command::Pipeline(args) => commands::pipeline(args),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{}", e.message);
            ExitCode::from(e.code)
        }
    }
}
