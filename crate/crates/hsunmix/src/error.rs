use thiserror::Error;

/// Errors shared across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("arithmetic overflow while {0}")]
    Overflow(String),

    /// A dictionary or cube would not fit under the configured memory cap.
    #[error("allocation of {rows}x{cols} f64 entries ({required} bytes) exceeds the cap of {cap} bytes")]
    ResourceLimit {
        rows: usize,
        cols: usize,
        required: u64,
        cap: u64,
    },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("class {0} has no pixels")]
    EmptyClass(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
