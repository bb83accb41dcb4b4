use alloc::string::String;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// An argument lies outside the domain an operation is defined on.
    #[error("input outside the valid domain: {0}")]
    Domain(String),

    /// Structurally invalid input (bad shapes, NaN values, broken invariants).
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("blended skinning transform is singular (condition number {0:e})")]
    SingularSkinning(f64),

    /// A NaN or infinity appeared in a computed result.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("optimization diverged: {0}")]
    Diverged(String),
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::Invalid(msg.into())
}
