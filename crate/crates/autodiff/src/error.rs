use thiserror::Error;

pub type Result<T> = std::result::Result<T, AdError>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AdError {
    #[error("{op}: shape error: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("{op}: parameter outside its domain: {detail}")]
    Domain { op: &'static str, detail: String },

    #[error("backward needs a single-element output, got shape {0:?}")]
    NonScalar(Vec<usize>),

    #[error("non-finite value in parameter {param} at element {index}")]
    NonFinite { param: usize, index: usize },

    #[error("unknown variable id {0}")]
    UnknownVar(usize),
}

impl AdError {
    pub(crate) fn shape(op: &'static str, detail: String) -> Self {
        AdError::Shape { op, detail }
    }

    pub(crate) fn domain(op: &'static str, detail: String) -> Self {
        AdError::Domain { op, detail }
    }
}
