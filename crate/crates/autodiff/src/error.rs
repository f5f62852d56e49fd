use thiserror::Error;

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("non-finite value produced by node {node} ({op})")]
    NonFinite { node: usize, op: &'static str },

    #[error("loss must be a single-element tensor, got shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("variable {0} does not belong to this graph")]
    UnknownVar(usize),

    #[error("missing input or parameter `{0}`")]
    Missing(String),

    #[error("parameter `{0}` registered twice")]
    DuplicateParam(String),

    #[error(
        "gradient check failed for `{param}`[{index}]: relative error {rel_err:.3e} exceeds {tolerance:.1e}"
    )]
    GradCheck {
        param: String,
        index: usize,
        rel_err: f64,
        tolerance: f64,
    },

    #[error("checkpoint format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, AutodiffError>;

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> AutodiffError {
    AutodiffError::ShapeMismatch {
        op,
        detail: detail.into(),
    }
}
