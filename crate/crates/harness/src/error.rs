use ipp3d_core::IppError;
use ipp3d_learn::LearnError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("bad data file: {0}")]
    Format(String),
    #[error(transparent)]
    Learn(#[from] LearnError),
    #[error(transparent)]
    Env(#[from] IppError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl HarnessError {
    /// Process exit status: 2 for configuration problems, 3 for numerical
    /// halts, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::Learn(LearnError::Config(_)) | Self::Env(IppError::Config(_)) => 2,
            Self::Learn(LearnError::Numerical(_))
            | Self::Learn(LearnError::Env(IppError::Numerical(_)))
            | Self::Env(IppError::Numerical(_)) => 3,
            Self::Learn(LearnError::Worker { source, .. }) if matches!(**source, LearnError::Numerical(_)) => 3,
            _ => 1,
        }
    }
}

impl From<csv::Error> for HarnessError {
    fn from(e: csv::Error) -> Self {
        Self::Format(e.to_string())
    }
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;
