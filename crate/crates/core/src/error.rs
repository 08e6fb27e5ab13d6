use thiserror::Error;

/// Errors raised by the bound and simulation routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// One or more configuration invariants failed. Each entry names one violation.
    #[error("invalid configuration: {}", .0.join("; "))]
    Validation(Vec<String>),

    /// An argument lies outside the mathematical domain of a function.
    #[error("domain error: {0}")]
    Domain(String),

    /// A documented precondition of an operation does not hold.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// A numerical routine produced a non-finite or inconsistent result.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// The exhaustive decoder would have to enumerate too many subsets.
    #[error("brute-force guard exceeded: {0}")]
    Guard(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn precondition(msg: impl Into<String>) -> Self {
        Error::Precondition(msg.into())
    }
}
