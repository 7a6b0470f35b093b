use std::process::ExitCode;

use clap::Parser;
use isac_coop_cli::args::Cli;
use isac_coop_cli::commands;

fn main() -> ExitCode {
    match commands::run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
