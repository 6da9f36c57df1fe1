//! Chance-constrained AC optimal power flow.
//!
//! The solver alternates a deterministic AC OPF with a recomputation of
//! uncertainty margins (analytical, Monte-Carlo or scenario based) until the
//! margins settle. A Monte-Carlo harness measures the empirical violation
//! probabilities of the resulting dispatch.

pub mod admittance;
pub mod case;
pub mod driver;
pub mod error;
pub mod ipm;
pub mod margins;
pub mod network;
pub mod opf;
pub mod polar;
pub mod powerflow;
pub mod report;
pub mod sensitivity;
pub mod sparse;
pub mod uncertainty;
pub mod validation;

pub use error::{Error, Result};

#[cfg(test)]
pub(crate) mod testutil;
