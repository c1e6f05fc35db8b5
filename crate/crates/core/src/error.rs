use thiserror::Error;

/// Errors shared by all reconstruction modules.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or operator extents do not line up.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// A configuration value is invalid or inconsistent.
    #[error("config error: {0}")]
    Config(String),

    /// FFT extent is not a power of two.
    #[error("unsupported size: {0}")]
    UnsupportedSize(String),

    /// An operation was called outside its contract (e.g. non-scalar loss).
    #[error("contract error: {0}")]
    Contract(String),

    /// NaN/Inf encountered where finite values are required.
    #[error("numeric instability: {0}")]
    Numeric(String),

    /// Frame merge found phase-encode lines never sampled by any frame.
    #[error("incomplete coverage: ky lines never sampled: {missing:?}")]
    Coverage { missing: Vec<usize> },

    /// Training diverged; the message names the failing step.
    #[error("training diverged: {0}")]
    Diverged(String),

    /// A serialized tensor, checkpoint, or manifest is malformed.
    #[error("format error: {0}")]
    Format(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
