use std::io;
use std::path::PathBuf;

/// Errors surfaced by the command-line front end.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    /// A file that exists but cannot be parsed.
    #[error("{}: {message}", .path.display())]
    Format { path: PathBuf, message: String },
    /// One diagnostic per offending key.
    #[error("invalid configuration from {origin}:\n  {}", .problems.join("\n  "))]
    Config { origin: String, problems: Vec<String> },
    #[error("{0}")]
    Mismatch(String),
    #[error("{0}")]
    Usage(String),
    #[error("{failed} of {total} verification checks failed")]
    VerifyFailed { failed: usize, total: usize },
    #[error(transparent)]
    Core(#[from] tcl_core::Error),
}

pub type Result<T> = std::result::Result<T, CliError>;

impl CliError {
    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }

    pub(crate) fn format(path: impl Into<PathBuf>) -> impl FnOnce(String) -> CliError {
        let path = path.into();
        move |message| CliError::Format { path, message }
    }
}
