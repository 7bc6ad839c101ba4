mod args;
mod commands;
mod error;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};
use error::CliError;

fn set_threads(threads: Option<usize>) -> Result<(), CliError> {
    if let Some(n) = threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Fit(a) => {
            set_threads(a.common.threads)?;
            commands::cmd_fit(&a)
        }
        Command::Path(a) => {
            set_threads(a.common.threads)?;
            commands::cmd_path(&a)
        }
        Command::Bootstrap(a) => {
            set_threads(a.common.threads)?;
            commands::cmd_bootstrap(&a)
        }
        Command::Simulate(a) => {
            set_threads(a.common.threads)?;
            commands::cmd_simulate(&a)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help and --version land here too and are not errors
            let failed = e.use_stderr();
            let _ = e.print();
            return if failed { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("icpch: {e}");
            e.exit_code()
        }
    }
}
