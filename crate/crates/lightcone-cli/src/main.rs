//! Command-line front end for light-cone predictive state models: fit,
//! predict, evaluate, synthesize, bound-check, and extract, with replayable
//! per-run configuration and deterministic outputs.

mod config;
mod output;
mod run;

use std::process::ExitCode;

use clap::Parser;
use lightcone::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_UNSUPPORTED: u8 = 4;

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::InvalidParam(_) => EXIT_CONFIG,
        Error::Unsupported(_) => EXIT_UNSUPPORTED,
        _ => EXIT_DATA,
    }
}

fn main() -> ExitCode {
    let cli = run::Cli::parse();
    match run::execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
