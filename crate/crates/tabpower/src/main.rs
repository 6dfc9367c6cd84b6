use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use tabpower::cli::{Cli, Sub};
use tabpower::config::Command;
use tabpower::error::CliError;
use tabpower::{commands, emit, io, runner};

fn run(cli: Cli) -> Result<(), CliError> {
    let (config, out, workers) = match cli.command {
        Sub::Power(a) => (a.resolve(Command::Power, None)?, a.out, a.workers),
        Sub::Simulate(a) => (a.resolve(Command::Simulate, None)?, a.out, a.workers),
        Sub::NullLaw(a) => (a.resolve(Command::NullLaw, None)?, a.out, a.workers),
        Sub::Reproduce { target, args } => {
            let out = args
                .out
                .clone()
                .or_else(|| Some(PathBuf::from(target.name())));
            (
                args.resolve(Command::Reproduce, Some(target))?,
                out,
                args.workers,
            )
        }
        Sub::Rerun {
            artifact,
            out,
            workers,
        } => {
            let text = std::fs::read_to_string(&artifact)?;
            (io::read_embedded_config(&text)?, out, workers)
        }
    };
    let pool = runner::pool(workers)?;
    let outputs = commands::execute(&config, &pool)?;
    emit(&outputs, out.as_deref())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
