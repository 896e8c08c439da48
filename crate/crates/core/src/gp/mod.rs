//! Shared numerical substrate: data, covariance, probit likelihood and priors.

mod data;
mod hyper;
mod kernel;
pub mod linalg;
mod prior;
pub mod probit;

pub use data::Dataset;
pub use hyper::{CovarianceKind, Hyperparams};
pub use kernel::{build_kernel, covariance_matrix, cross_covariance, gp_log_density, kernel_eval, sample_gp_prior, KernelMatrix};
pub use prior::{gamma_log_pdf, log_prior_hyper, log_prior_hyper_with, GammaPrior, HyperPriors, ParamPrior};
pub use probit::{log_likelihood, loglik_grad, loglik_neg_hess_diag};
