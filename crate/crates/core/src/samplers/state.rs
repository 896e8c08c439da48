use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::approx::{ApproxConfig, ApproxMethod};
use crate::error::{Error, Result};
use crate::gp::probit::log_likelihood_unchecked;
use crate::gp::{build_kernel, CovarianceKind, Dataset, HyperPriors, Hyperparams, KernelMatrix};

/// Which θ-update the Gibbs sweep uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Scheme {
    Pm,
    Sa,
    Aa,
    Surr,
}

impl Scheme {
    pub fn tag(self) -> &'static str {
        match self {
            Scheme::Pm => "PM",
            Scheme::Sa => "SA",
            Scheme::Aa => "AA",
            Scheme::Surr => "SURR",
        }
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "PM" => Ok(Scheme::Pm),
            "SA" => Ok(Scheme::Sa),
            "AA" => Ok(Scheme::Aa),
            "SURR" => Ok(Scheme::Surr),
            _ => Err(Error::InvalidArgument(format!(
                "unknown scheme '{s}' (expected PM, SA, AA or SURR)"
            ))),
        }
    }
}

/// Which marginal enters the PM Hastings ratio.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MarginalSource {
    /// Importance-sampling estimate (the pseudo-marginal chain proper).
    Estimate,
    /// Deterministic approximate marginal of LA/EP (warm-start phase).
    Approximate,
}

/// Per-site variance construction for the surrogate-data scheme.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SurrSites {
    /// 1-d Laplace fit of each site: `1 / W` at the single-site mode.
    La,
    /// 1-d moment matching of each site against its prior marginal.
    Ep,
    /// Constant variance; used to probe limiting behavior.
    #[doc(hidden)]
    Fixed(f64),
}

/// Likelihood seen by the samplers. `Flat` replaces `p(y|f)` by 1 and exists
/// only so tests can check prior recovery.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LikelihoodHook {
    Probit,
    #[doc(hidden)]
    Flat,
}

impl LikelihoodHook {
    pub(crate) fn eval(self, y: &DVector<f64>, f: &DVector<f64>) -> f64 {
        match self {
            LikelihoodHook::Probit => log_likelihood_unchecked(y, f),
            LikelihoodHook::Flat => 0.0,
        }
    }
}

/// Everything a single transition needs besides the state and proposal.
#[derive(Debug, Clone, PartialEq)]
pub struct StepConfig {
    pub kind: CovarianceKind,
    pub priors: HyperPriors,
    pub approx_method: ApproxMethod,
    pub approx: ApproxConfig,
    pub n_imp: usize,
    pub marginal: MarginalSource,
    pub surr_sites: SurrSites,
    /// After an accepted PM move, replace `f` by one importance draw picked in
    /// proportion to its weight, so `(θ, f)` stays a joint posterior draw.
    pub refresh_latents: bool,
    #[doc(hidden)]
    pub likelihood: LikelihoodHook,
    #[doc(hidden)]
    pub prior_jacobian: bool,
    /// Fixes the uniform of the accept test; `None` draws it.
    #[doc(hidden)]
    pub forced_u: Option<f64>,
}

impl StepConfig {
    pub fn new(kind: CovarianceKind, priors: HyperPriors) -> Self {
        Self {
            kind,
            priors,
            approx_method: ApproxMethod::Ep,
            approx: ApproxConfig::default(),
            n_imp: 64,
            marginal: MarginalSource::Estimate,
            surr_sites: SurrSites::La,
            refresh_latents: true,
            likelihood: LikelihoodHook::Probit,
            prior_jacobian: true,
            forced_u: None,
        }
    }
}

/// Cached per-θ quantities of the surrogate-data parameterization.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrCache {
    pub site_vars: DVector<f64>,
    /// Factor of `K + S`.
    pub(crate) chol_a: DMatrix<f64>,
    pub(crate) log_det_a: f64,
    /// Factor `D` of `R = S − S (K + S)⁻¹ S`.
    pub(crate) chol_r: DMatrix<f64>,
}

/// The unit of MCMC progress: `(θ, f)` with everything cached for θ.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub hyper: Hyperparams,
    pub latents: DVector<f64>,
    /// Log marginal (estimate or approximation) for `hyper`; `None` forces a
    /// fresh evaluation at the next PM step.
    pub cached_log_p_tilde: Option<f64>,
    pub cached_km: KernelMatrix,
    pub(crate) surr: Option<SurrCache>,
}

impl ChainState {
    /// State at `hyper` with latents at zero.
    pub fn new(data: &Dataset, hyper: Hyperparams, kind: CovarianceKind) -> Result<Self> {
        let km = build_kernel(data.inputs(), &hyper, kind)?;
        Ok(Self {
            latents: DVector::zeros(data.n()),
            hyper,
            cached_log_p_tilde: None,
            cached_km: km,
            surr: None,
        })
    }

    /// Replaces the latents, keeping θ and its caches.
    pub fn with_latents(mut self, f: DVector<f64>) -> Result<Self> {
        if f.len() != self.latents.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} latents, got {}",
                self.latents.len(),
                f.len()
            )));
        }
        self.latents = f;
        Ok(self)
    }

    /// Forgets the cached marginal, e.g. after the labels changed.
    pub fn invalidate_estimate(&mut self) {
        self.cached_log_p_tilde = None;
    }
}

/// Work and failure counters accumulated across transitions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct StepCounters {
    pub cubic_ops: u64,
    pub failures: u64,
    /// Number of marginal evaluations (estimates or approximations).
    pub evaluations: u64,
}
