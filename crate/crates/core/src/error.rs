use thiserror::Error;

/// Errors raised by every fallible operation in the crate.
#[derive(Debug, Error)]
pub enum HbeError {
    #[error("invalid input: {0}")]
    Input(String),

    /// Arguments fall outside the region where a bound or theorem applies.
    #[error("outside the validity region: {0}")]
    Domain(String),

    #[error("configuration error: {0}")]
    Config(String),

    /// A finite resource (tables, samples) ran out before the procedure finished.
    #[error("resource exhausted after {samples_used} samples ({steps} relaxation steps): {detail}")]
    Exhausted {
        samples_used: u64,
        steps: u32,
        detail: String,
    },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("kmvm class {class}, query {query}")]
    Kmvm {
        class: usize,
        query: usize,
        #[source]
        source: Box<HbeError>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, HbeError>;

pub(crate) fn input<T>(msg: impl Into<String>) -> Result<T> {
    Err(HbeError::Input(msg.into()))
}

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(HbeError::Domain(msg.into()))
}
