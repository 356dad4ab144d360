//! Bayesian validation of linear computer codes through an encompassing
//! mixture of the pure code and the discrepancy-corrected code.

// `!(x > 0.0)` is the idiom used to reject NaN together with bad values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod gp;
pub mod harness;
pub mod linearize;
pub mod model;
pub mod oracle;
pub mod quadrature;
pub mod report;
pub mod rng;
pub mod sampler;
pub mod stats;

pub use error::{Error, Result};
pub use gp::BackendKind;
pub use model::{Dataset, LinearCode, MixtureState, PriorConfig};

/// `ln(2π)`.
pub const LN_2PI: f64 = 1.837_877_066_409_345_5;
