//! `nsde`: config-driven experiment runner.
//!
//! Exit codes: 0 all pass, 1 a task with pass/fail semantics failed,
//! 2 configuration or registry error, 3 runtime fault.

// negated float comparisons like `!(x > 0.0)` reject NaN on purpose
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod config;
mod registry;
mod runner;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "nsde",
    version,
    about = "neutral functional SDE experiment runner"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every task in a config file and write the report bundle.
    Run {
        /// Path to the experiment config (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides the config).
        #[arg(long)]
        output: Option<PathBuf>,
        /// Worker threads for the Monte Carlo loops.
        #[arg(long)]
        workers: Option<usize>,
        /// Master seed override.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print the model, task and observable registries.
    List,
    /// Describe one task: summary, pass semantics, parameters.
    Describe { task: String },
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run {
            config,
            output,
            workers,
            seed,
        } => {
            if let Some(n) = workers {
                if let Err(e) = rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global()
                {
                    eprintln!("error: cannot configure {n} workers: {e}");
                    return ExitCode::from(3);
                }
            }
            match runner::run(&config, output.as_deref(), seed, workers) {
                Ok(outcome) if outcome.all_passed => ExitCode::SUCCESS,
                Ok(_) => {
                    eprintln!("one or more tasks failed their pass criteria");
                    ExitCode::from(1)
                }
                Err(runner::RunError::Validation(e)) => {
                    eprintln!("config error: {e:#}");
                    ExitCode::from(2)
                }
                Err(runner::RunError::Runtime(e)) => {
                    eprintln!("runtime fault: {e:#}");
                    ExitCode::from(3)
                }
            }
        }
        Command::List => {
            print!("{}", registry::render_list());
            ExitCode::SUCCESS
        }
        Command::Describe { task } => match registry::render_describe(&task) {
            Some(text) => {
                print!("{text}");
                ExitCode::SUCCESS
            }
            None => {
                eprintln!("unknown task '{task}' (see `nsde list`)");
                ExitCode::from(2)
            }
        },
    }
}
