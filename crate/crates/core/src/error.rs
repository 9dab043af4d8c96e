use thiserror::Error;

/// Errors surfaced by model construction, rate evaluation and simulation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// No user ever reaches this chunk position, so normalized popularities
    /// are undefined there.
    #[error("chunk position {position} has zero watch probability")]
    DegenerateChunk { position: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("decode failure: {0}")]
    DecodeFailure(String),

    #[error("{users} active users exceeds the limit of {limit}")]
    TooManyUsers { users: usize, limit: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
