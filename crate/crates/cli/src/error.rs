use thiserror::Error;

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flag values or an inconsistent configuration.
    #[error("{0}")]
    Usage(String),

    /// Unreadable or malformed input, or a failed write.
    #[error("{context}: {source}")]
    Data {
        context: String,
        #[source]
        source: regionmask_core::Error,
    },

    #[error(transparent)]
    Core(#[from] regionmask_core::Error),

    #[error("{0}")]
    Csv(#[from] csv::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use regionmask_core::Error as E;
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(E::InvalidConfig(_) | E::OutOfRange(_)) => 2,
            CliError::Data { .. } | CliError::Core(_) | CliError::Csv(_) => 3,
        }
    }
}

/// Attaches a path or step to a core error and marks it as a data error.
pub(crate) trait Context<T> {
    fn context(self, what: impl FnOnce() -> String) -> Result<T>;
}

impl<T, E: Into<regionmask_core::Error>> Context<T> for std::result::Result<T, E> {
    fn context(self, what: impl FnOnce() -> String) -> Result<T> {
        self.map_err(|e| CliError::Data {
            context: what(),
            source: e.into(),
        })
    }
}
