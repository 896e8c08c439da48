//! Fully Bayesian Gaussian-process probit classification.
//!
//! The crate builds Gaussian approximations (Laplace, expectation
//! propagation) to the latent posterior, turns them into an unbiased
//! importance-sampling estimate of the marginal likelihood, and uses that
//! estimate inside a pseudo-marginal Metropolis–Hastings sampler over the
//! covariance hyper-parameters. Reparameterized baseline samplers (SA, AA,
//! surrogate data), elliptical slice sampling for the latents, convergence
//! diagnostics and abstention-based evaluation scores are included.

pub mod approx;
pub mod diag;
pub mod error;
pub mod gp;
pub mod io;
pub mod pm;
pub mod predict;
pub mod samplers;

pub use error::{Error, Result};
