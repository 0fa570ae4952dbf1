//! Mean-square optimal and minimax-robust filtering for sequences with
//! periodically stationary generalized multiple seasonal increments.
//!
//! Pipeline: the increment operator turns the observed sequence into a
//! stationary vector sequence; spectral densities of signal and noise are
//! evaluated on a symmetric frequency grid; block Toeplitz operator systems
//! yield the optimal filter characteristic, taps, and mean-square error; the
//! minimax layer finds least favorable densities over uncertainty classes.

pub mod error;
pub mod exec;
pub mod filter;
pub mod increments;
pub mod lift;
pub mod minimax;
pub mod operators;
pub mod simulate;
pub mod spectral;

pub use error::{Error, Result};
