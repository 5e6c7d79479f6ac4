//! Command-line driver for the feeder control toolkit: DER placement
//! ranking, reinforcement-learning training, deterministic evaluation,
//! classical search baselines, and a power-flow debug dump.

mod baseline;
mod common;
mod eval;
mod manifest;
mod pf;
mod place;
mod train;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use common::AppError;

#[derive(Debug, Parser)]
#[command(
    name = "vvo",
    version,
    about = "Volt-VAR control of radial feeders: siting, training, evaluation, baselines",
    after_help = "Exit codes: 0 success, 1 internal error, 2 usage or validation error.\n\
        VVO_THREADS caps rollout workers and the placement scoring pool."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Rank candidate buses for a new PV installation.
    Place(place::PlaceArgs),
    /// Train a control policy with the actor-learner runtime.
    Train(train::TrainArgs),
    /// Roll a trained checkpoint over one day, deterministically.
    Eval(eval::EvalArgs),
    /// Search the action space with a classical method.
    Baseline(baseline::BaselineArgs),
    /// Solve one power-flow case and print the voltage profile.
    Pf(pf::PfArgs),
}

fn dispatch(cli: Cli) -> Result<(), AppError> {
    common::configure_thread_pool();
    match cli.command {
        Command::Place(args) => place::run(&args),
        Command::Train(args) => train::run(&args),
        Command::Eval(args) => eval::run(&args),
        Command::Baseline(args) => baseline::run(&args),
        Command::Pf(args) => pf::run(&args),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(AppError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(AppError::Internal(err)) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
