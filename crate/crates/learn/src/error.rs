use ipp3d_core::IppError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LearnError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid state: {0}")]
    State(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("bad checkpoint: {0}")]
    Format(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("worker {worker} failed after {episodes} complete episodes: {source}")]
    Worker {
        worker: usize,
        episodes: usize,
        #[source]
        source: Box<LearnError>,
    },
    #[error(transparent)]
    Env(#[from] IppError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = LearnError> = std::result::Result<T, E>;
