use libm::lgamma as ln_gamma;
use serde::{Deserialize, Serialize};

use super::Hyperparams;
use crate::error::{Error, Result};

/// Shape/rate Gamma distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaPrior {
    pub shape: f64,
    pub rate: f64,
}

impl GammaPrior {
    pub fn new(shape: f64, rate: f64) -> Result<Self> {
        if !(shape > 0.0 && rate > 0.0 && shape.is_finite() && rate.is_finite()) {
            return Err(Error::Domain(format!("Gamma prior needs shape, rate > 0 (got {shape}, {rate})")));
        }
        Ok(Self { shape, rate })
    }
}

/// `log Ga(x | a, b)` in the shape/rate parameterization.
pub fn gamma_log_pdf(x: f64, prior: &GammaPrior) -> Result<f64> {
    if !(x > 0.0) {
        return Err(Error::Domain(format!("Gamma density evaluated at non-positive {x}")));
    }
    let GammaPrior { shape: a, rate: b } = *prior;
    Ok(a * b.ln() - ln_gamma(a) + (a - 1.0) * x.ln() - b * x)
}

/// Log density of `ψ = log x` when `x ~ Ga(a, b)`: the Gamma density plus the
/// log-Jacobian `ψ`.
fn gamma_log_pdf_log_space(psi: f64, prior: &GammaPrior) -> f64 {
    let GammaPrior { shape: a, rate: b } = *prior;
    a * b.ln() - ln_gamma(a) + a * psi - b * psi.exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ParamPrior {
    Gamma(GammaPrior),
    /// Held at its initial value; never proposed.
    Fixed,
}

impl ParamPrior {
    pub fn is_fixed(&self) -> bool {
        matches!(self, ParamPrior::Fixed)
    }
}

/// Priors on σ and on every length-scale (shared across ARD dimensions).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperPriors {
    pub sigma: ParamPrior,
    pub lengthscale: ParamPrior,
}

impl HyperPriors {
    /// `τ ~ Ga(1, 1/√d)`, `σ ~ Ga(1.2, 0.2)`: the synthetic-data protocol.
    pub fn synthetic(d: usize) -> Self {
        Self {
            sigma: ParamPrior::Gamma(GammaPrior { shape: 1.2, rate: 0.2 }),
            lengthscale: ParamPrior::Gamma(GammaPrior {
                shape: 1.0,
                rate: 1.0 / (d as f64).sqrt(),
            }),
        }
    }

    /// Same length-scale prior with σ held fixed.
    pub fn fixed_sigma(d: usize) -> Self {
        Self {
            sigma: ParamPrior::Fixed,
            ..Self::synthetic(d)
        }
    }

    /// Mask over the ψ vector; `true` marks a parameter that is sampled.
    pub fn free_mask(&self, hyper: &Hyperparams) -> Vec<bool> {
        let mut m = vec![!self.sigma.is_fixed()];
        m.extend(std::iter::repeat(!self.lengthscale.is_fixed()).take(hyper.log_lengthscales.len()));
        m
    }

    /// Draws ψ from the prior; fixed entries are copied from `base`.
    pub fn sample<R: rand::Rng + ?Sized>(&self, base: &Hyperparams, rng: &mut R) -> Hyperparams {
        let draw = |p: &ParamPrior, current: f64, rng: &mut R| match p {
            ParamPrior::Gamma(g) => {
                let dist = rand_distr::Gamma::new(g.shape, 1.0 / g.rate).expect("validated prior");
                let x: f64 = rng.sample(dist);
                x.max(f64::MIN_POSITIVE).ln()
            }
            ParamPrior::Fixed => current,
        };
        let log_sigma = draw(&self.sigma, base.log_sigma, rng);
        let log_lengthscales = base.log_lengthscales.iter().map(|&c| draw(&self.lengthscale, c, rng)).collect();
        Hyperparams {
            log_sigma,
            log_lengthscales,
        }
    }
}

/// Log prior density over the free ψ-coordinates, Jacobian of the log
/// transform included.
pub fn log_prior_hyper(hyper: &Hyperparams, priors: &HyperPriors) -> f64 {
    log_prior_hyper_with(hyper, priors, true)
}

/// As [`log_prior_hyper`], optionally dropping the Jacobian term. Only the
/// Geweke mutation test uses `jacobian = false`.
pub fn log_prior_hyper_with(hyper: &Hyperparams, priors: &HyperPriors, jacobian: bool) -> f64 {
    let term = |p: &ParamPrior, psi: f64| match p {
        ParamPrior::Gamma(g) => {
            let v = gamma_log_pdf_log_space(psi, g);
            if jacobian {
                v
            } else {
                v - psi
            }
        }
        ParamPrior::Fixed => 0.0,
    };
    term(&priors.sigma, hyper.log_sigma)
        + hyper
            .log_lengthscales
            .iter()
            .map(|&psi| term(&priors.lengthscale, psi))
            .sum::<f64>()
}
