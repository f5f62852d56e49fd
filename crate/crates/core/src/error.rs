use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("band index {band} out of range for {bands} bands")]
    BandOutOfRange { band: usize, bands: usize },

    #[error("not a permutation: {0}")]
    NotBijection(String),

    #[error("dense operator of {0} unknowns exceeds the 4096 guard")]
    SizeGuard(usize),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("format: {0}")]
    Format(String),

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("dtype mismatch: file holds {found}, expected {expected}")]
    DtypeMismatch { expected: String, found: String },

    #[error("config: {0}")]
    Config(String),

    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },

    #[error(transparent)]
    Autodiff(#[from] tensorgrad::AutodiffError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim(msg: impl Into<String>) -> Error {
    Error::Dimension(msg.into())
}
