mod args;
mod commands;
mod error;

use std::process::ExitCode;

use clap::error::ErrorKind as ClapKind;
use clap::Parser;

use crate::args::Cli;
use crate::error::{CliError, Result};

fn run() -> Result<()> {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ClapKind::DisplayHelp | ClapKind::DisplayVersion) => {
            print!("{e}");
            return Ok(());
        }
        Err(e) => {
            eprint!("{}", e.render());
            let first = e.to_string().lines().next().unwrap_or("invalid arguments").to_string();
            return Err(CliError::Usage(first.trim_start_matches("error: ").to_string()));
        }
    };
    let jobs = commands::common(&cli.command).jobs;
    if jobs == 0 {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build_global()
        .map_err(|e| CliError::Config(e.to_string()))?;
    commands::run(cli.command)
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.error_line());
            ExitCode::from(e.kind().code())
        }
    }
}
