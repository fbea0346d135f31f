//! Constant-step stochastic gradient descent, its second-order modified
//! stochastic differential equation and the associated backward Kolmogorov
//! equation, together with the numerical experiments that compare them.

// `!(a > b)` is how validation rejects NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod cutoff;
pub mod error;
pub mod harness;
pub mod interp;
pub mod observable;
pub mod output;
pub mod pde;
pub mod problems;
pub mod quadrature;
pub mod rng;
pub mod sde;
pub mod semigroup;
pub mod sgd;
pub mod stats;

pub use cutoff::CutoffSpec;
pub use error::{Error, Result};
pub use observable::Observable;
pub use problems::{Family, ProblemConstants, ProblemSpec};
pub use stats::EstimateWithError;
