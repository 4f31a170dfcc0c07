use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{0}")]
    Data(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] bicvm::Error),
}

impl CliError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// 0 success, 1 usage or configuration, 2 data, 3 internal invariant.
    pub fn exit_code(&self) -> i32 {
        use bicvm::Error as E;
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) | CliError::Io { .. } => 2,
            CliError::Core(e) => match e {
                E::Config(_) => 1,
                E::Shape { .. } => 3,
                E::Io { .. }
                | E::Alignment { .. }
                | E::Format { .. }
                | E::Index { .. }
                | E::Sampling(_)
                | E::Input(_)
                | E::Lookup { .. }
                | E::EmptyDocument => 2,
            },
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
