use std::f64::consts::TAU;

use nalgebra::DVector;
use rand::Rng;

use crate::gp::probit::log_likelihood_unchecked;
use crate::gp::{sample_gp_prior, Dataset, KernelMatrix};

/// One elliptical slice sampling update of `f` under the probit likelihood.
pub fn ell_ss_step<R: Rng + ?Sized>(f: &DVector<f64>, data: &Dataset, km: &KernelMatrix, rng: &mut R) -> DVector<f64> {
    let y = data.labels();
    ell_ss_step_with(f, km, |g| log_likelihood_unchecked(y, g), rng)
}

/// Elliptical slice sampling against an arbitrary log-likelihood; the prior
/// is `N(0, K)` through the factor in `km`.
pub fn ell_ss_step_with<R, L>(f: &DVector<f64>, km: &KernelMatrix, loglik: L, rng: &mut R) -> DVector<f64>
where
    R: Rng + ?Sized,
    L: Fn(&DVector<f64>) -> f64,
{
    let nu = sample_gp_prior(km, rng);
    let u: f64 = rng.random();
    let threshold = loglik(f) + u.ln();
    let mut angle = rng.random::<f64>() * TAU;
    let (mut lo, mut hi) = (angle - TAU, angle);
    loop {
        let candidate = f * angle.cos() + &nu * angle.sin();
        if loglik(&candidate) > threshold {
            return candidate;
        }
        if angle < 0.0 {
            lo = angle;
        } else {
            hi = angle;
        }
        // The bracket shrinks toward the current point, whose likelihood
        // always clears the threshold; only round-off can get here.
        if hi - lo < 1e-300 {
            return f.clone();
        }
        angle = lo + rng.random::<f64>() * (hi - lo);
    }
}
