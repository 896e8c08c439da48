use crate::error::{Error, Result};
use crate::gp::probit::{inv_mills, log_norm_cdf};

/// Zeroth (log), first and second central moments of `Φ(y f) N(f | m, v)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TiltedMoments {
    pub log_z: f64,
    pub mean: f64,
    pub var: f64,
}

/// Closed-form moments of a Gaussian cavity tilted by one probit site.
pub fn probit_tilted_moments(cavity_mean: f64, cavity_var: f64, y: f64) -> Result<TiltedMoments> {
    if !(cavity_var > 0.0) || !cavity_var.is_finite() {
        return Err(Error::Domain(format!("cavity variance must be positive, got {cavity_var}")));
    }
    if y != 1.0 && y != -1.0 {
        return Err(Error::InvalidArgument(format!("label {y} is not ±1")));
    }
    let denom = (1.0 + cavity_var).sqrt();
    let z = y * cavity_mean / denom;
    let (r, r_plus_z) = inv_mills(z);
    Ok(TiltedMoments {
        log_z: log_norm_cdf(z),
        mean: cavity_mean + y * cavity_var * r / denom,
        var: cavity_var - cavity_var * cavity_var * r * r_plus_z / (1.0 + cavity_var),
    })
}
