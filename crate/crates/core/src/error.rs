use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("invalid parameter: {0}")]
    Parameter(String),
    /// An input violates a structural invariant (ordering, distinctness, monotonicity).
    #[error("invariant violated: {0}")]
    Logic(String),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub(crate) fn logic(msg: impl Into<String>) -> Self {
        Error::Logic(msg.into())
    }

    pub fn is_parameter(&self) -> bool {
        matches!(self, Error::Parameter(_))
    }
}
