use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use sgd_dmft_cli::commands::{self, Overrides, VERSION};
use sgd_dmft_cli::ExperimentConfig;

#[derive(Parser)]
#[command(name = "sgd-dmft", version = VERSION, about = "DMFT for SGD on the teacher-student perceptron")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML config, or a run manifest (.json) to replay.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, env = "DMFT_OUT_DIR", default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the kernels; writes kernels.json and theory.csv.
    Solve {
        #[command(flatten)]
        common: Common,
        /// Paths per sweep.
        #[arg(long)]
        paths: Option<usize>,
        /// Convergence tolerance on the kernel change.
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Finite-dimensional runs; writes sim.csv and per-seed files.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Compare two step-indexed CSV tables.
    Compare {
        reference: PathBuf,
        candidate: PathBuf,
        #[arg(long, default_value_t = 0.03)]
        tol: f64,
        /// Also write compare.csv and a manifest here.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Exit non-zero when the comparison fails.
        #[arg(long)]
        strict: bool,
    },
    /// Scalar theory vs. sample-splitting gradient descent.
    Split {
        #[command(flatten)]
        common: Common,
        /// Tolerance of the verdict.
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long)]
        strict: bool,
    },
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Solve { common, paths, tol } => {
            let config = ExperimentConfig::load(&common.config)?;
            let o = Overrides {
                seed: common.seed,
                paths,
                tol,
            };
            let m = commands::solve(&config, &o, &common.out)?;
            let converged = m.converged.unwrap_or(false);
            println!(
                "solve: converged = {converged}, outputs in {}",
                common.out.display()
            );
        }
        Command::Simulate { common } => {
            let config = ExperimentConfig::load(&common.config)?;
            let o = Overrides {
                seed: common.seed,
                ..Overrides::default()
            };
            let m = commands::simulate(&config, &o, &common.out)?;
            println!(
                "simulate: {} files in {}",
                m.outputs.len(),
                common.out.display()
            );
        }
        Command::Compare {
            reference,
            candidate,
            tol,
            out,
            strict,
        } => {
            let cmp = commands::compare_files(&reference, &candidate, tol)?;
            print!("{}", cmp.report());
            if let Some(out) = out {
                commands::save_comparison(&cmp, &reference, &candidate, &out)?;
            }
            if strict && !cmp.passed {
                return Ok(ExitCode::from(1));
            }
        }
        Command::Split {
            common,
            tol,
            strict,
        } => {
            let config = ExperimentConfig::load(&common.config)?;
            let o = Overrides {
                seed: common.seed,
                tol,
                ..Overrides::default()
            };
            let outcome = commands::split(&config, &o, &common.out)?;
            print!("{}", outcome.comparison.report());
            if strict && !outcome.comparison.passed {
                return Ok(ExitCode::from(1));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
