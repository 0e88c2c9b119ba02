use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Model(#[from] fbl_relay::Error),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("{0} validation check(s) failed")]
    ValidationFailed(usize),
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    /// 1 usage, 2 accuracy, 3 validation.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Model(e) if e.is_accuracy() => 2,
            CliError::ValidationFailed(_) => 3,
            _ => 1,
        }
    }
}
