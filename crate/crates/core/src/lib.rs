//! Simultaneous Bayesian linear quantile regression with quantile-pyramid
//! priors.
//!
//! Conditional quantiles at a fixed set of levels are modelled as
//! hyperplanes through the quantile vectors at P+1 pivotal covariate
//! locations. Each pivotal quantile vector carries an independent
//! quantile-pyramid prior centred on a configurable distribution (Normal,
//! Generalized Pareto or Uniform), and the posterior is explored with a
//! Metropolis-within-Gibbs sampler whose proposals are confined to the
//! region where the quantile planes never cross over the convex hull of
//! the observed covariates.

// Full-precision coefficient tables and NaN-rejecting comparisons are load
// bearing in this crate.
#![allow(clippy::excessive_precision)]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod centering;
pub mod error;
pub mod geometry;
pub mod model;
pub mod pyramid;
pub mod sampler;
pub mod simplex;
pub mod special;

#[cfg(test)]
pub(crate) mod test_support;

pub use error::{PqrError, Result};
