//! Transfer-learning workbench for neural synthesis of 1:1 on-chip transformer
//! matching networks.

// NaN-rejecting checks are written as `!(x > 0.0)` on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod codec;
pub mod config;
pub mod error;
pub mod grid;
pub mod harness;
pub mod metrics;
pub mod nn;
pub mod report;
pub mod surrogate;

pub use error::{Error, Result};
