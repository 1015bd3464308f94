//! Command-line front end: binds experiment manifests to the cost-curve,
//! optimum, sweep, report and sensitivity workflows.

pub mod commands;
pub mod error;
pub mod manifest;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::commands::RunContext;
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "fogplan", version, about = "Plan how much data to aggregate before distributed training")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Experiment manifest (TOML).
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output directory; overrides `out` in the manifest.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Master seed; overrides `seed` in the manifest.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Allow paper-scale sweeps.
    #[arg(long)]
    pub long: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Model cost at every feasible aggregation level.
    Curve(RunArgs),
    /// Optimal aggregation level per target accuracy.
    Optimize(RunArgs),
    /// Empirical DSVRG sweep over aggregation levels.
    Sweep(RunArgs),
    /// Model optimum as one parameter varies.
    Sensitivity(RunArgs),
    /// Compare a sweep directory with a model directory.
    Report {
        #[arg(long)]
        sweep: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn context(a: &RunArgs) -> Result<RunContext, CliError> {
    RunContext::new(&a.manifest, a.out.clone(), a.seed, a.long)
}

/// Runs one subcommand and returns the text to print on success.
pub fn run(cli: Cli) -> Result<String, CliError> {
    match cli.command {
        Command::Curve(a) => {
            let files = commands::cmd_curve(&context(&a)?)?;
            Ok(files.iter().map(|f| format!("wrote {}\n", f.display())).collect())
        }
        Command::Optimize(a) => {
            let entries = commands::cmd_optimize(&context(&a)?)?;
            Ok(entries
                .iter()
                .map(|e| {
                    format!(
                        "eps {:e}: gamma~ {:.6} gamma^ {:.6} m1 {} clamp {}\n",
                        e.epsilon,
                        e.numeric.gamma_unclamped,
                        e.numeric.gamma_hat,
                        e.numeric.m1_hat,
                        e.numeric.clamp
                    )
                })
                .collect())
        }
        Command::Sweep(a) => {
            let results = commands::cmd_sweep(&context(&a)?)?;
            Ok(results
                .iter()
                .map(|r| {
                    format!(
                        "eps {:e}: gamma* {:.3} gamma^ {:.3} overhead {} failed {} capped {}\n",
                        r.epsilon,
                        r.gamma_star,
                        r.gamma_hat,
                        r.overhead_pct.map_or("-".into(), |o| format!("{o:.1}%")),
                        r.failed_runs,
                        r.capped_runs
                    )
                })
                .collect())
        }
        Command::Sensitivity(a) => {
            let rows = commands::cmd_sensitivity(&context(&a)?)?;
            Ok(format!("wrote {} sensitivity rows\n", rows.len()))
        }
        Command::Report { sweep, model, out } => Ok(commands::cmd_report(&sweep, &model, &out)?.render()),
    }
}
