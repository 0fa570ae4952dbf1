//! Error taxonomy shared by every module.

use thiserror::Error;

/// Library-wide error type.
///
/// `Input` covers malformed or inconsistent user data, `Unsupported` covers
/// requests outside the implemented scope, and `Numerical` covers failures of
/// the numerics themselves (singular operators, non-convergence, overflow).
#[derive(Debug, Error)]
pub enum Error {
    #[error("input error: {0}")]
    Input(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI surface: 2 input, 3 unsupported, 4 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Input(_) => 2,
            Error::Unsupported(_) => 3,
            Error::Numerical(_) => 4,
        }
    }
}
