mod args;
mod commands;
mod error;
mod output;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};
use error::CliError;

fn run(cli: Cli) -> Result<(), CliError> {
    let jobs = match &cli.command {
        Command::Weights(_) => 1,
        Command::Simulate(a) => a.jobs,
        Command::Validate(a) => a.jobs,
    };
    if jobs == 0 {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Io(format!("thread pool: {e}")))?;
    pool.install(|| match &cli.command {
        Command::Weights(a) => commands::weights(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Validate(a) => commands::validate(a),
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("chibar: {e}");
            e.exit_code()
        }
    }
}
