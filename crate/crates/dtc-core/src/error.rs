use thiserror::Error;

/// Errors produced by model construction, numerics and calibration routines.
#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value violates a documented invariant.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// An iterative numerical routine failed to converge or produced an
    /// out-of-contract result.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// State labeling or branch tracking lost its target state.
    #[error("state tracking failure: {0}")]
    Tracking(String),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    pub(crate) fn tracking(msg: impl Into<String>) -> Self {
        Error::Tracking(msg.into())
    }
}
