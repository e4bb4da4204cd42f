//! `sfbox`: fit sparse functional data, rank curves, find outliers and draw
//! sparse functional boxplots from the command line.

mod args;
mod commands;
mod config;
mod error;
mod io;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use crate::args::Cli;
use crate::error::CliError;

fn run(argv: Vec<String>) -> Result<(), CliError> {
    let argv = config::expand(argv)?;
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return Ok(());
        }
        Err(e) => {
            let _ = e.print();
            return Err(CliError::Usage("invalid arguments".into()));
        }
    };
    if let Some(threads) = cli.threads {
        if threads == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        // fails only if a pool already exists, which cannot happen here
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    let resolved = config::resolved(&cli);
    eprintln!("# sfbox {} configuration\n{resolved}", cli.command.name());
    commands::run(&cli, &resolved)
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args_os().map(|a| a.to_string_lossy().into_owned()).collect();
    match run(argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("sfbox: {e}");
            ExitCode::from(e.code())
        }
    }
}
