//! Command-line front end and file formats for `tabpower-core`.

pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod fraction;
pub mod io;
pub mod runner;

use std::io::Write;
use std::path::Path;

use commands::Output;
use error::CliError;

/// Writes outputs into `dir`, or concatenates them to stdout.
pub fn emit(outputs: &[Output], dir: Option<&Path>) -> Result<(), CliError> {
    match dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            for o in outputs {
                std::fs::write(dir.join(&o.name), &o.contents)?;
            }
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            for o in outputs {
                stdout.write_all(o.contents.as_bytes())?;
            }
        }
    }
    Ok(())
}
