use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config field `{field}`: {message}")]
    Config { field: String, message: String },
    #[error("config line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("missing input: {0}")]
    MissingInput(String),
    #[error(transparent)]
    Core(#[from] sedconc::Error),
    /// A verification command ran but its check did not pass.
    #[error("check failed: {0}")]
    CheckFailed(String),
}

impl CliError {
    /// 2 for configuration and input problems, 3 for numerical failures, 1 for I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config { .. } | Self::Syntax { .. } | Self::MissingInput(_) => 2,
            Self::Core(sedconc::Error::InvalidInput(_) | sedconc::Error::Format(_)) => 2,
            Self::Core(sedconc::Error::Numerical(_)) | Self::CheckFailed(_) => 3,
            Self::Core(sedconc::Error::Io(_)) => 1,
        }
    }
}

pub(crate) fn field_error(field: &str, message: impl Into<String>) -> CliError {
    CliError::Config {
        field: field.into(),
        message: message.into(),
    }
}
