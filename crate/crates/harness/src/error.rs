use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{context}: {source}")]
    Numerical {
        context: String,
        #[source]
        source: tnt_core::Error,
    },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("acceptance failure: {0}")]
    Acceptance(String),
}

impl HarnessError {
    /// Process exit code: 2 config, 3 numerical or i/o failure, 4 acceptance failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Numerical { .. } | HarnessError::Io { .. } => 3,
            HarnessError::Acceptance(_) => 4,
        }
    }

    pub(crate) fn numerical(context: impl Into<String>) -> impl FnOnce(tnt_core::Error) -> Self {
        let context = context.into();
        move |source| HarnessError::Numerical { context, source }
    }

    pub(crate) fn io(path: impl std::fmt::Display) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.to_string();
        move |source| HarnessError::Io { path, source }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
