//! `mpaging`: experiments on paging with Markov-chain request models.
//!
//! Exit status is 0 on success, 1 when an audit check fails and 2 on usage
//! or input errors.

mod args;
mod commands;
mod config;

use std::process::ExitCode;

#[derive(Debug)]
pub enum CliError {
    Clap(clap::Error),
    Usage(String),
    Io(String),
    Check(String),
}

impl From<clap::Error> for CliError {
    fn from(e: clap::Error) -> Self {
        CliError::Clap(e)
    }
}

impl From<markov_paging::Error> for CliError {
    fn from(e: markov_paging::Error) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl CliError {
    fn report(self) -> ExitCode {
        match self {
            CliError::Clap(e) => {
                let _ = e.print();
                ExitCode::from(e.exit_code() as u8)
            }
            CliError::Usage(msg) | CliError::Io(msg) => {
                eprintln!("error: {msg}");
                ExitCode::from(2)
            }
            CliError::Check(msg) => {
                eprintln!("check failed: {msg}");
                ExitCode::from(1)
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = match config::parse(std::env::args_os().collect()) {
        Ok(cli) => cli,
        Err(e) => return e.report(),
    };
    if let Some(threads) = cli.threads {
        if threads == 0 {
            return CliError::Usage("--threads must be at least 1".into()).report();
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            return CliError::Usage(format!("--threads: {e}")).report();
        }
    }
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => e.report(),
    }
}
