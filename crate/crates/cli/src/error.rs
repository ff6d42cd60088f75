use thiserror::Error;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{path}: {message}")]
    Parse { path: String, message: String },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] lcc_core::Error),
}

impl CliError {
    pub fn parse(path: impl std::fmt::Display, message: impl Into<String>) -> Self {
        CliError::Parse {
            path: path.to_string(),
            message: message.into(),
        }
    }

    pub fn io(path: impl std::fmt::Display, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_string(),
            source,
        }
    }

    /// 1 usage or parse, 2 numerical failure, 3 budget or acceptance cap.
    pub fn exit_code(&self) -> i32 {
        use lcc_core::Error as E;
        match self {
            CliError::Core(e) if e.is_numerical() => 2,
            CliError::Core(E::NotPositiveDefinite(_) | E::TooManyFailures { .. }) => 2,
            CliError::Core(E::AcceptanceTooLow { .. } | E::EmptySubsample) => 3,
            _ => 1,
        }
    }
}
