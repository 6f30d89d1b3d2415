//! `fedflex`: generate benchmark instances, run the federated solver under a
//! chosen topology and exchange schedule, check against the central oracle and
//! compare synchronous with clustered asynchronous exchange.
//!
//! Exit codes: 0 success/converged, 1 output failure, 2 not converged,
//! 3 diverged, 4 invalid input, 5 message-count ordering violated (`compare`).

mod args;
mod commands;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command, Family};
use commands::{CliError, Outcome};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("FEDFLEX_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Generate(Family::Dispatch(a)) => commands::generate_dispatch(a),
        Command::Generate(Family::Loadsched(a)) => commands::generate_loadsched(a),
        Command::Solve(a) => commands::solve(a),
        Command::OracleCheck(a) => commands::oracle_check(a),
        Command::Compare(a) => commands::compare(a),
    };
    match result {
        Ok(outcome) => ExitCode::from(outcome.code()),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(e.code())
        }
    }
}

impl Outcome {
    fn code(self) -> u8 {
        match self {
            Outcome::Success => 0,
            Outcome::NotConverged => 2,
            Outcome::Diverged => 3,
            Outcome::OrderingViolated => 5,
        }
    }
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Output(_) => 1,
            CliError::Invalid(_) => 4,
        }
    }
}
