//! Monte Carlo tools for strong approximation of partial sums of functionals
//! of Markov chains driven by iid innovations: random matrix cocycles,
//! Lipschitz autoregressive models, coupling coefficients, block truncation
//! schemes and Gaussian coupling.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod asip;
pub mod coeffs;
pub mod deviations;
pub mod error;
pub mod harness;
pub mod models;
pub mod numlin;
pub mod stats;
pub mod variance;

pub use error::{Error, Result};
