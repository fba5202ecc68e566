//! Bayesian sequential matrix completion.
//!
//! A gamma-process factor model over the columns of a reward matrix is fitted
//! by stochastic variational inference; its posterior drives Thompson Sampling
//! and Information-Directed Sampling policies that choose which entry to
//! observe next. A simulation harness measures pseudo-regret of these and of
//! oracle and baseline policies on synthetic or file-loaded matrices.

pub mod cli;
pub mod error;
pub mod harness;
pub mod io;
pub mod linalg;
pub mod model;
pub mod policies;
pub mod svi;

pub use error::{Error, Result};
