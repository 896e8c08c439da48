//! Standard normal CDF in log space and the probit likelihood.

use libm::erfc;
use nalgebra::DVector;

use crate::error::{Error, Result};

const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Below this argument log Φ and the inverse Mills ratio switch to a
/// continued-fraction evaluation of the Mills ratio.
const TAIL_CUTOFF: f64 = -8.0;
const CF_TERMS: usize = 60;

pub fn norm_log_pdf(x: f64) -> f64 {
    -0.5 * x * x - HALF_LN_2PI
}

pub fn norm_pdf(x: f64) -> f64 {
    norm_log_pdf(x).exp()
}

pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// Continued fraction `t + 1/(t + 2/(t + 3/(...)))` started at depth `from`.
/// With `from = 1` this is the reciprocal Mills ratio φ(t)/Q(t).
fn mills_cf(t: f64, from: usize) -> f64 {
    let mut r = t;
    for k in (from..from + CF_TERMS).rev() {
        r = t + k as f64 / r;
    }
    r
}

/// `log Φ(x)`, accurate far into the lower tail.
pub fn log_norm_cdf(x: f64) -> f64 {
    if x > 5.0 {
        // Φ(x) = 1 - Q(x) with Q tiny.
        (-0.5 * erfc(x * FRAC_1_SQRT_2)).ln_1p()
    } else if x >= TAIL_CUTOFF {
        norm_cdf(x).ln()
    } else {
        norm_log_pdf(x) - mills_cf(-x, 1).ln()
    }
}

/// Returns `(r, r + x)` where `r = φ(x)/Φ(x)`. The second entry is computed
/// without cancellation in the lower tail, where `r ≈ -x`.
pub fn inv_mills(x: f64) -> (f64, f64) {
    if x >= TAIL_CUTOFF {
        let r = (norm_log_pdf(x) - log_norm_cdf(x)).exp();
        (r, r + x)
    } else {
        let t = -x;
        let tail = mills_cf(t, 2);
        // r = t + 1/tail
        (t + 1.0 / tail, 1.0 / tail)
    }
}

fn check_len(y: &DVector<f64>, f: &DVector<f64>) -> Result<()> {
    if y.len() != f.len() {
        return Err(Error::InvalidArgument(format!("{} labels vs {} latents", y.len(), f.len())));
    }
    Ok(())
}

/// `Σ_i log Φ(y_i f_i)`.
pub fn log_likelihood(y: &DVector<f64>, f: &DVector<f64>) -> Result<f64> {
    check_len(y, f)?;
    Ok(log_likelihood_unchecked(y, f))
}

pub(crate) fn log_likelihood_unchecked(y: &DVector<f64>, f: &DVector<f64>) -> f64 {
    y.iter().zip(f.iter()).map(|(&yi, &fi)| log_norm_cdf(yi * fi)).sum()
}

/// Gradient of the log-likelihood with respect to the latents.
pub fn loglik_grad(y: &DVector<f64>, f: &DVector<f64>) -> Result<DVector<f64>> {
    check_len(y, f)?;
    Ok(DVector::from_iterator(
        y.len(),
        y.iter().zip(f.iter()).map(|(&yi, &fi)| yi * inv_mills(yi * fi).0),
    ))
}

/// `W = -diag ∇∇ log p(y|f)`; strictly positive since log Φ is concave.
pub fn loglik_neg_hess_diag(y: &DVector<f64>, f: &DVector<f64>) -> Result<DVector<f64>> {
    check_len(y, f)?;
    Ok(DVector::from_iterator(
        y.len(),
        y.iter().zip(f.iter()).map(|(&yi, &fi)| {
            let (r, r_plus_z) = inv_mills(yi * fi);
            r * r_plus_z
        }),
    ))
}

/// Gradient and W in one pass.
pub(crate) fn grad_and_w(y: &DVector<f64>, f: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
    let n = y.len();
    let mut g = DVector::zeros(n);
    let mut w = DVector::zeros(n);
    for i in 0..n {
        let (r, rz) = inv_mills(y[i] * f[i]);
        g[i] = y[i] * r;
        w[i] = r * rz;
    }
    (g, w)
}
