use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch, {lhs} vs {rhs}")]
    ShapeMismatch {
        op: &'static str,
        lhs: String,
        rhs: String,
    },
    #[error("{op}: {msg}")]
    Invalid { op: &'static str, msg: String },
    #[error("adam_step: parameter `{0}` has no gradient")]
    MissingGrad(String),
    #[error("backward: loss must be scalar, got {0}")]
    NonScalarLoss(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_mismatch(
    op: &'static str,
    lhs: &crate::Shape,
    rhs: &crate::Shape,
) -> Error {
    Error::ShapeMismatch {
        op,
        lhs: lhs.to_string(),
        rhs: rhs.to_string(),
    }
}

pub(crate) fn invalid(op: &'static str, msg: impl Into<String>) -> Error {
    Error::Invalid {
        op,
        msg: msg.into(),
    }
}
