//! Batch experiment driver: `train`, `eval`, `sketchbench`, `gradcheck`
//! and `ablate` over the synthetic video tasks.
//!
//! Exit codes: 0 on success, 1 when a numeric step or a check fails, 2 for
//! usage and configuration errors.

pub mod commands;
pub mod config;
pub mod output;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use config::{ExperimentConfig, Split};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    /// A verification ran to completion and found a failure.
    #[error("{0}")]
    Check(String),
    #[error(transparent)]
    Core(#[from] actf_core::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use actf_core::Error as E;
        match self {
            CliError::Usage(_) => 2,
            CliError::Check(_) => 1,
            CliError::Core(E::Config(_) | E::Input(_) | E::Shape { .. } | E::Format { .. }) => 2,
            CliError::Core(_) => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "actf", version, about = "Attentive correlated temporal features on synthetic video tasks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Flat TOML configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Master seed (overrides the file).
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Output directory (overrides the file).
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Override one configuration key; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the configured variant; writes a checkpoint, the per-epoch report and final metrics.
    Train,
    /// Evaluate a checkpoint; writes per-class accuracy and per-video final fusion weights.
    Eval {
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        /// Dataset manifest; defaults to the configured test split.
        #[arg(long, value_name = "PATH")]
        dataset: Option<PathBuf>,
    },
    /// Approximation error of the compact bilinear sketch across sketch sizes.
    Sketchbench,
    /// Finite-difference audit of every differentiable operation and the full model.
    Gradcheck,
    /// Train every configured variant on the same data and compare them.
    Ablate,
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = config::load(cli.config.as_deref(), &cli.overrides, cli.seed, cli.out.as_deref())?;
    match &cli.command {
        Command::Train => {
            let o = commands::train(&cfg)?;
            println!(
                "{}: test accuracy {:.4}, train accuracy {:.4}",
                o.result.variant, o.result.test_acc, o.result.train_acc
            );
            println!("wrote {}, {}, {}", o.checkpoint.display(), o.report.display(), o.metrics.display());
        }
        Command::Eval { checkpoint, dataset } => {
            let o = commands::eval(&cfg, checkpoint, dataset.as_deref())?;
            println!("accuracy {:.4}", o.accuracy);
            println!("wrote {}, {}", o.per_class.display(), o.final_weights.display());
        }
        Command::Sketchbench => {
            let o = commands::sketchbench(&cfg)?;
            for r in &o.rows {
                println!("C={} d={}: median relative error {:.4}", r.c, r.d, r.median);
            }
            println!("wrote {}", o.table.display());
        }
        Command::Gradcheck => {
            let o = commands::gradcheck(&cfg)?;
            let failed = o.failures();
            println!("{} checks, {} failed; wrote {}", o.results.len(), failed.len(), o.table.display());
            if !failed.is_empty() {
                let names: Vec<String> = failed
                    .iter()
                    .map(|r| format!("{} (seed {}, rel. err {:.2e} >= {:e})", r.name, r.seed, r.rel_err, r.tol))
                    .collect();
                return Err(CliError::Check(format!("gradient check failed: {}", names.join(", "))));
            }
        }
        Command::Ablate => {
            let o = commands::ablate(&cfg)?;
            for r in &o.results {
                println!("{:<13} test {:.4}  train {:.4}", r.variant.name(), r.test_acc, r.train_acc);
            }
            println!("wrote {}", o.table.display());
        }
    }
    Ok(())
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn main_with_args<I, A>(args: I) -> i32
where
    I: IntoIterator<Item = A>,
    A: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
