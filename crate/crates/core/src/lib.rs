//! Finite-blocklength throughput evaluation and reliability-constrained rate
//! scheduling for a two-hop decode-and-forward relay with outdated CSI.

pub mod channel;
pub mod error;
pub mod expected_error;
pub mod fbl;
pub mod quadrature;
pub mod scheduler_constant;
pub mod scheduler_optimal;
pub mod search;
pub mod sim;
pub mod special;
pub mod throughput;
pub mod validation;

pub use error::{Error, Result};
