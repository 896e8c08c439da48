//! Gaussian approximations `q(f | y, θ) = N(μ_q, Σ_q)` to the latent posterior.

mod ep;
mod laplace;
mod moments;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::linalg::{cholesky_with_jitter, log_det_from_factor, lower_mul, solve_lower, solve_lower_transpose};
use crate::gp::{Dataset, KernelMatrix};

pub use ep::{ep_approx, ep_sweep_change, EpSites};
pub use laplace::laplace_approx;
pub use moments::{probit_tilted_moments, TiltedMoments};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ApproxMethod {
    #[serde(alias = "la")]
    Laplace,
    Ep,
}

impl ApproxMethod {
    pub fn tag(self) -> &'static str {
        match self {
            ApproxMethod::Laplace => "LA",
            ApproxMethod::Ep => "EP",
        }
    }
}

impl std::str::FromStr for ApproxMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "la" | "laplace" => Ok(ApproxMethod::Laplace),
            "ep" => Ok(ApproxMethod::Ep),
            other => Err(Error::InvalidArgument(format!("unknown approximation '{other}'"))),
        }
    }
}

/// Stopping rules shared by both approximations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApproxConfig {
    /// Converged once the squared norm of the change in the latent mean drops
    /// below `tol_factor · n`.
    pub tol_factor: f64,
    pub max_newton_iters: usize,
    pub max_ep_sweeps: usize,
    /// Laplace additionally requires `‖∇Ψ(f̂)‖∞` below this value.
    pub grad_tol: f64,
}

impl Default for ApproxConfig {
    fn default() -> Self {
        Self {
            tol_factor: 1e-4,
            max_newton_iters: 100,
            max_ep_sweeps: 200,
            grad_tol: 1e-6,
        }
    }
}

impl ApproxConfig {
    pub fn threshold(&self, n: usize) -> f64 {
        self.tol_factor * n as f64
    }
}

/// Square-root representation of `Σ_q`.
#[derive(Debug, Clone)]
enum CovFactor {
    /// `Σ = L Lᵀ`, `L` lower triangular.
    Dense(DMatrix<f64>),
    /// `Σ = L_K (I + L_Kᵀ W L_K)⁻¹ L_Kᵀ = L_K R⁻ᵀ R⁻¹ L_Kᵀ`. Sharing the prior's
    /// factor keeps `q` and `N(0, K)` consistent in directions where K is
    /// numerically singular; forming `Σ` densely and refactoring it does not.
    Whitened { l_k: DMatrix<f64>, r: DMatrix<f64> },
}

impl CovFactor {
    /// `F z` with `Σ = F Fᵀ`.
    fn apply(&self, z: &DVector<f64>) -> DVector<f64> {
        match self {
            CovFactor::Dense(l) => lower_mul(l, z),
            CovFactor::Whitened { l_k, r } => lower_mul(l_k, &solve_lower_transpose(r, z)),
        }
    }

    /// `F⁻¹ d`.
    fn whiten(&self, d: &DVector<f64>) -> DVector<f64> {
        match self {
            CovFactor::Dense(l) => solve_lower(l, d),
            CovFactor::Whitened { l_k, r } => r.tr_mul(&solve_lower(l_k, d)),
        }
    }

    /// `Fᵀ b`.
    fn tr_mul(&self, b: &DVector<f64>) -> DVector<f64> {
        match self {
            CovFactor::Dense(l) => l.tr_mul(b),
            CovFactor::Whitened { l_k, r } => solve_lower(r, &l_k.tr_mul(b)),
        }
    }

    fn log_det(&self) -> f64 {
        match self {
            CovFactor::Dense(l) => log_det_from_factor(l),
            CovFactor::Whitened { l_k, r } => log_det_from_factor(l_k) - log_det_from_factor(r),
        }
    }

    fn dense(&self) -> DMatrix<f64> {
        match self {
            CovFactor::Dense(l) => l.clone(),
            CovFactor::Whitened { l_k, r } => {
                let mut rt_inv = DMatrix::identity(r.nrows(), r.nrows());
                r.tr_solve_lower_triangular_mut(&mut rt_inv);
                l_k * rt_inv
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct GaussianApprox {
    pub mean: DVector<f64>,
    factor: CovFactor,
    cov_log_det: f64,
    pub log_approx_marginal: f64,
    pub method: Option<ApproxMethod>,
    pub iterations_used: usize,
    /// O(n³) operations spent building the approximation, excluding the
    /// kernel factorization itself.
    pub cubic_ops: u32,
}

impl GaussianApprox {
    /// Wraps a mean and covariance; the covariance is factorized with jitter.
    pub fn from_moments(
        mean: DVector<f64>,
        cov: &DMatrix<f64>,
        log_approx_marginal: f64,
        method: Option<ApproxMethod>,
        iterations_used: usize,
        cubic_ops: u32,
    ) -> Result<Self> {
        if cov.nrows() != mean.len() || !mean.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument("mean/covariance mismatch or non-finite mean".into()));
        }
        let sym = (cov + cov.transpose()) * 0.5;
        let scale = sym.diagonal().iter().fold(0.0_f64, |a, &v| a.max(v.abs())).max(f64::MIN_POSITIVE);
        let (cov_chol, _) = cholesky_with_jitter(&sym, scale)?;
        let factor = CovFactor::Dense(cov_chol);
        Ok(Self {
            cov_log_det: factor.log_det(),
            mean,
            factor,
            log_approx_marginal,
            method,
            iterations_used,
            cubic_ops: cubic_ops + 1,
        })
    }

    /// `N(mean, (K⁻¹ + W)⁻¹)` for non-negative site precisions `W`, built on
    /// the kernel's own factor.
    pub fn from_site_precisions(
        mean: DVector<f64>,
        km: &KernelMatrix,
        w: &DVector<f64>,
        log_approx_marginal: f64,
        method: Option<ApproxMethod>,
        iterations_used: usize,
        cubic_ops: u32,
    ) -> Result<Self> {
        let n = km.n();
        if mean.len() != n || w.len() != n || !mean.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument("mean/precision size mismatch or non-finite mean".into()));
        }
        if !w.iter().all(|v| *v >= 0.0 && v.is_finite()) {
            return Err(Error::Domain("site precisions must be non-negative and finite".into()));
        }
        let l_k = km.chol().clone();
        let mut m = l_k.clone();
        for (i, mut row) in m.row_iter_mut().enumerate() {
            row *= w[i].sqrt();
        }
        let mut a = m.tr_mul(&m);
        for i in 0..n {
            a[(i, i)] += 1.0;
        }
        let (r, _) = cholesky_with_jitter(&a, 1.0)?;
        let factor = CovFactor::Whitened { l_k, r };
        Ok(Self {
            cov_log_det: factor.log_det(),
            mean,
            factor,
            log_approx_marginal,
            method,
            iterations_used,
            cubic_ops: cubic_ops + 2,
        })
    }

    /// The GP prior `N(0, K)` viewed as an approximation.
    pub fn prior(km: &KernelMatrix) -> Self {
        Self {
            mean: DVector::zeros(km.n()),
            factor: CovFactor::Dense(km.chol().clone()),
            cov_log_det: km.log_det(),
            log_approx_marginal: 0.0,
            method: None,
            iterations_used: 0,
            cubic_ops: 0,
        }
    }

    /// Zero-covariance approximation, for interpolation-limit checks.
    #[doc(hidden)]
    pub fn degenerate(mean: DVector<f64>) -> Self {
        let n = mean.len();
        Self {
            mean,
            factor: CovFactor::Dense(DMatrix::zeros(n, n)),
            cov_log_det: f64::NEG_INFINITY,
            log_approx_marginal: 0.0,
            method: None,
            iterations_used: 0,
            cubic_ops: 0,
        }
    }

    pub fn n(&self) -> usize {
        self.mean.len()
    }

    /// A square root `F` of the covariance, `Σ = F Fᵀ`.
    pub fn cov_factor(&self) -> DMatrix<f64> {
        self.factor.dense()
    }

    /// `Fᵀ b`, so that `bᵀ Σ b = ‖Fᵀ b‖²`.
    pub fn cov_factor_tr_mul(&self, b: &DVector<f64>) -> DVector<f64> {
        self.factor.tr_mul(b)
    }

    pub fn cov(&self) -> DMatrix<f64> {
        let f = self.factor.dense();
        &f * f.transpose()
    }

    /// Maps a standard-normal vector `z` to `μ + F z` and returns the sample
    /// with its log density under `q`.
    pub fn transform(&self, z: &DVector<f64>) -> (DVector<f64>, f64) {
        let f = &self.mean + self.factor.apply(z);
        let logq = -0.5 * z.norm_squared() - 0.5 * self.cov_log_det - 0.5 * self.n() as f64 * LN_2PI;
        (f, logq)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (DVector<f64>, f64) {
        let z = DVector::from_fn(self.n(), |_, _| rng.sample(StandardNormal));
        self.transform(&z)
    }

    pub fn log_density(&self, f: &DVector<f64>) -> f64 {
        let z = self.factor.whiten(&(f - &self.mean));
        -0.5 * z.norm_squared() - 0.5 * self.cov_log_det - 0.5 * self.n() as f64 * LN_2PI
    }
}

/// Runs the requested approximation.
pub fn approximate(method: ApproxMethod, data: &Dataset, km: &KernelMatrix, config: &ApproxConfig) -> Result<GaussianApprox> {
    match method {
        ApproxMethod::Laplace => laplace_approx(data, km, config),
        ApproxMethod::Ep => ep_approx(data, km, config).map(|(q, _)| q),
    }
}

fn check_sizes(data: &Dataset, km: &KernelMatrix) -> Result<()> {
    if data.n() != km.n() {
        return Err(Error::InvalidArgument(format!(
            "dataset has {} points but kernel is {}x{}",
            data.n(),
            km.n(),
            km.n()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transform_density_matches_log_density() {
        let cov = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let q = GaussianApprox::from_moments(DVector::from_vec(vec![0.3, -0.2]), &cov, 0.0, None, 0, 0).unwrap();
        let (f, lq) = q.transform(&DVector::from_vec(vec![0.7, -1.1]));
        assert!((q.log_density(&f) - lq).abs() < 1e-12);
        assert!((q.cov() - cov).amax() < 1e-12);
    }

    #[test]
    fn site_precision_form_matches_dense_formula() {
        use crate::gp::{build_kernel, CovarianceKind, Hyperparams};
        let x = DMatrix::from_row_slice(3, 1, &[0.0, 0.4, 1.1]);
        let km = build_kernel(&x, &Hyperparams::isotropic(1.4, 0.6).unwrap(), CovarianceKind::Isotropic).unwrap();
        let w = DVector::from_vec(vec![0.3, 1.2, 0.0]);
        let mean = DVector::from_vec(vec![0.1, -0.5, 0.2]);
        let q = GaussianApprox::from_site_precisions(mean.clone(), &km, &w, 0.0, None, 0, 0).unwrap();
        let dense = (km.matrix().clone().try_inverse().unwrap() + DMatrix::from_diagonal(&w))
            .try_inverse()
            .unwrap();
        assert!((q.cov() - &dense).amax() < 1e-10);
        let (f, lq) = q.transform(&DVector::from_vec(vec![0.7, -1.1, 0.4]));
        assert!((q.log_density(&f) - lq).abs() < 1e-10);
        let d = GaussianApprox::from_moments(mean, &dense, 0.0, None, 0, 0).unwrap();
        assert!((d.log_density(&f) - lq).abs() < 1e-8);
        let b = DVector::from_vec(vec![0.2, -0.3, 0.9]);
        assert!((q.cov_factor_tr_mul(&b).norm_squared() - b.dot(&(&dense * &b))).abs() < 1e-10);
    }

    #[test]
    fn method_parsing() {
        assert_eq!("EP".parse::<ApproxMethod>().unwrap(), ApproxMethod::Ep);
        assert_eq!("la".parse::<ApproxMethod>().unwrap(), ApproxMethod::Laplace);
        assert!("vb".parse::<ApproxMethod>().is_err());
    }
}
