//! Gaussian state transfer into a three-mode quantum memory with syndrome
//! filtering and LQG feedback.

// Negated comparisons are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

pub mod closedloop;
pub mod control;
pub mod error;
pub mod estimation;
pub mod model;
pub mod numerics;
pub mod openloop;
pub mod scenario;
pub mod simulate;
pub mod sweep;
pub mod validation;

pub use error::{Error, Result};
