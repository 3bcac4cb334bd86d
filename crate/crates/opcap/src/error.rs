use std::io;
use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: file not found", .0.display())]
    MissingFile(PathBuf),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("configuration: {0}")]
    Config(String),
    #[error("{}: {message}", path.display())]
    Parse { path: PathBuf, message: String },
    #[error("{0}")]
    Data(String),
    #[error(transparent)]
    Core(#[from] opcap_core::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        let path = path.into();
        if source.kind() == io::ErrorKind::NotFound {
            Error::MissingFile(path)
        } else {
            Error::Io { path, source }
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.to_string(),
        }
    }

    /// Process exit status for this error. Usage errors reported by the
    /// argument parser exit with 2 before reaching here.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::MissingFile(_) => 3,
            Error::Config(_) | Error::Core(opcap_core::Error::InvalidConfig(_)) => 4,
            Error::Parse { .. } | Error::Data(_) | Error::Core(_) => 5,
            Error::Io { .. } => 1,
        }
    }
}
