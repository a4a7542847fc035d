use std::io;

/// Errors produced by the streaming factorization library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-consecutive frame: expected t={expected}, got t={got}")]
    NonConsecutive { expected: u64, got: u64 },

    #[error("late arrival: event at t={t} is older than the emitted frontier t={frontier}")]
    LateArrival { t: u64, frontier: u64 },

    #[error("regime out of range: z={z}, g={g}")]
    RegimeOutOfRange { z: usize, g: usize },

    #[error("insufficient frames: {0}")]
    InsufficientFrames(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("invalid value: {0}")]
    InvalidValue(String),

    #[error("bad file format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
