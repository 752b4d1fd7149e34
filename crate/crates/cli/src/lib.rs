//! Command-line front end: argument parsing, CSV ingestion, and the
//! subcommand drivers that write results to an output directory.

pub mod args;
pub mod io;
pub mod run;

use std::path::Path;

use thiserror::Error;

/// Exit status for a run that finished but whose fit did not converge.
pub const EXIT_NOT_CONVERGED: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Clap(#[from] clap::Error),
    #[error("usage: {0}")]
    Usage(String),
    #[error("i/o: {0}")]
    Io(String),
    #[error("input: {0}")]
    Data(String),
    #[error(transparent)]
    Model(shrinkhs_core::Error),
}

impl CliError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }

    /// 2 usage, 3 input or output, 5 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Clap(e) => e.exit_code(),
            CliError::Usage(_) => 2,
            CliError::Io(_) | CliError::Data(_) => 3,
            CliError::Model(_) => 5,
        }
    }
}

impl From<shrinkhs_core::Error> for CliError {
    fn from(e: shrinkhs_core::Error) -> Self {
        use shrinkhs_core::Error as E;
        match e {
            E::Dimension { .. } | E::EmptyDesign { .. } | E::Label { .. } => CliError::Data(e.to_string()),
            E::InvalidParam(msg) => CliError::Usage(msg),
            other => CliError::Model(other),
        }
    }
}

/// Worker count: the flag, else `SHRINKHS_THREADS`, else every core.
pub fn thread_count(flag: Option<usize>) -> Result<usize, CliError> {
    let n = match flag {
        Some(n) => n,
        None => match std::env::var("SHRINKHS_THREADS") {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| CliError::Usage(format!("SHRINKHS_THREADS must be a positive integer, got '{v}'")))?,
            Err(_) => std::thread::available_parallelism().map_or(1, |n| n.get()),
        },
    };
    if n == 0 {
        return Err(CliError::Usage("thread count must be at least 1".into()));
    }
    Ok(n)
}
