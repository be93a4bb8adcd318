//! Command failures and the exit code each class maps to.

use std::path::PathBuf;

use thiserror::Error;

/// Success.
pub const EXIT_OK: u8 = 0;
/// A verification check or a metric/training contract failed.
pub const EXIT_FAILURE: u8 = 1;
/// Bad flags, unknown names, or out-of-domain values.
pub const EXIT_USAGE: u8 = 2;
/// A file could not be read, written or parsed.
pub const EXIT_IO: u8 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{0}")]
    Failed(String),

    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },

    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{}: {source}", path.display())]
    File { path: PathBuf, source: gradfaith::Error },

    #[error(transparent)]
    Core(#[from] gradfaith::Error),
}

pub type CliResult<T> = Result<T, CliError>;

fn core_exit_code(e: &gradfaith::Error) -> u8 {
    use gradfaith::Error as E;
    match e {
        E::Config(_) | E::Input(_) => EXIT_USAGE,
        E::Io(_) | E::Format { .. } | E::Shape(_) => EXIT_IO,
        E::Contract(_) | E::Diverged { .. } => EXIT_FAILURE,
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Failed(_) => EXIT_FAILURE,
            CliError::Io { .. } | CliError::Parse { .. } => EXIT_IO,
            CliError::File { source, .. } | CliError::Core(source) => core_exit_code(source),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// Attaches the file a core error came from.
    pub fn file(path: impl Into<PathBuf>) -> impl FnOnce(gradfaith::Error) -> Self {
        let path = path.into();
        move |source| CliError::File { path, source }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_by_class() {
        assert_eq!(CliError::Usage("x".into()).exit_code(), EXIT_USAGE);
        assert_eq!(CliError::Failed("x".into()).exit_code(), EXIT_FAILURE);
        let io = std::io::Error::new(std::io::ErrorKind::NotFound, "gone");
        assert_eq!(CliError::io("a", io).exit_code(), EXIT_IO);
        let fmt = gradfaith::Error::Format {
            offset: 3,
            message: "bad".into(),
        };
        assert_eq!(CliError::file("a")(fmt).exit_code(), EXIT_IO);
        assert_eq!(
            CliError::from(gradfaith::Error::Config("c".into())).exit_code(),
            EXIT_USAGE
        );
        assert_eq!(
            CliError::from(gradfaith::Error::Diverged { epoch: 1, batch: 1 }).exit_code(),
            EXIT_FAILURE
        );
    }
}
