mod args;
mod commands;
mod manifest;

use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches};

use args::Cli;
use dualpt_core::Error;

/// 2: usage or input, 3: external service, 4: numerical failure.
fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Fetch { .. } | Error::Protocol { .. } => 3,
        Error::NonFinite(_) | Error::DegenerateMetric | Error::DegenerateVector => 4,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let matches = Cli::command().get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    match commands::run(cli.command, &matches) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
