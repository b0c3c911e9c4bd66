use thiserror::Error;

/// Errors raised anywhere in the laboratory.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpdeError {
    /// An argument is outside the domain where the operation is defined.
    #[error("domain error: {0}")]
    Domain(String),

    /// A configuration violates one of the standing hypotheses.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// The reaction term fails the dissipativity scan.
    #[error("dissipativity violated at z = {z}, h = {h}: {reason}")]
    Dissipativity { z: f64, h: f64, reason: String },

    /// A trajectory left the admissible region.
    #[error("blow-up at t = {time}: sup-norm {sup_norm:e}")]
    BlowUp { time: f64, sup_norm: f64 },

    /// A requested tolerance could not be reached within the sample budget.
    #[error("budget exhausted: {0}")]
    Budget(String),

    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, SpdeError>;

impl From<std::io::Error> for SpdeError {
    fn from(err: std::io::Error) -> Self {
        SpdeError::Io(err.to_string())
    }
}

pub(crate) fn domain_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(SpdeError::Domain(msg.into()))
}
