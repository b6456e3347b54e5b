//! Certified output bounds and complete verification for feedforward networks.
//!
//! A property is rewritten as a single-output network whose minimum over the
//! input domain must be non-negative. Lower bounds come from interval and
//! linear-bound propagation or from the dual solvers of the decomposition
//! relaxation; branch and bound decides the sign exactly.

// `!(a <= b)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod bab;
pub mod bounds;
pub mod branching;
pub mod decomposition;
pub mod dsg;
pub mod error;
pub mod experiments;
pub mod hulls;
pub mod instances;
pub mod network;
pub mod oracles;
pub mod propagation;
pub mod proximal;

pub use error::{Error, Result};
