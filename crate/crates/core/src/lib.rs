//! Engine for studying in-context learning under spurious correlations:
//! sequence construction, a masked decoder transformer, spurious-feature
//! synthesis, conventional baselines, group metrics and experiment suites.

// `!(x > 0.0)` rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod data;
pub mod error;
pub mod eval;
pub mod experiments;
pub mod fsio;
pub mod graft;
pub mod linalg;
pub mod model;
pub mod rng;
pub mod seqbuild;

pub use error::{Error, Result};
