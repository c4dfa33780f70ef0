use thiserror::Error;

#[derive(Debug, Error)]
pub enum IppError {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("index {index} out of range for {len} cells")]
    Index { index: usize, len: usize },
    #[error("numerical conditioning error: {0}")]
    Numerical(String),
    #[error("invalid action: node {action} is not adjacent to node {current}")]
    InvalidAction { action: usize, current: usize },
    #[error("state error: {0}")]
    State(String),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = IppError> = std::result::Result<T, E>;
