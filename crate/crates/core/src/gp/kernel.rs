use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use super::linalg::{cholesky_with_jitter, log_det_from_factor, lower_mul, solve_lower};
use super::{CovarianceKind, Hyperparams};
use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Squared-exponential covariance `σ exp(-½ Σ_k (xi_k - xj_k)² / τ_k²)`.
pub fn kernel_eval(xi: &[f64], xj: &[f64], hyper: &Hyperparams, kind: CovarianceKind) -> Result<f64> {
    if xi.len() != xj.len() || xi.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "input vectors of length {} and {}",
            xi.len(),
            xj.len()
        )));
    }
    hyper.check_kind(kind, xi.len())?;
    let inv = inverse_sq_lengthscales(hyper, xi.len());
    Ok(hyper.sigma() * (-0.5 * scaled_sq_dist(xi.iter().copied(), xj.iter().copied(), &inv)).exp())
}

fn inverse_sq_lengthscales(hyper: &Hyperparams, d: usize) -> Vec<f64> {
    let ls = &hyper.log_lengthscales;
    (0..d)
        .map(|k| {
            let psi = if ls.len() == 1 { ls[0] } else { ls[k] };
            (-2.0 * psi).exp()
        })
        .collect()
}

fn scaled_sq_dist(a: impl Iterator<Item = f64>, b: impl Iterator<Item = f64>, inv: &[f64]) -> f64 {
    a.zip(b).zip(inv).map(|((x, y), w)| (x - y) * (x - y) * w).sum()
}

/// Covariance matrix of the latents together with its Cholesky factor.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    k: DMatrix<f64>,
    chol: DMatrix<f64>,
    log_det: f64,
    jitter: f64,
}

impl KernelMatrix {
    /// Factorizes an arbitrary covariance matrix with the jitter policy.
    pub fn from_covariance(k: DMatrix<f64>) -> Result<Self> {
        if k.nrows() != k.ncols() || k.nrows() == 0 {
            return Err(Error::InvalidArgument("covariance must be square and non-empty".into()));
        }
        let scale = k.diagonal().iter().fold(0.0_f64, |a, &v| a.max(v.abs())).max(f64::MIN_POSITIVE);
        let (chol, jitter) = cholesky_with_jitter(&k, scale)?;
        let log_det = log_det_from_factor(&chol);
        Ok(Self { k, chol, log_det, jitter })
    }

    pub fn n(&self) -> usize {
        self.k.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.k
    }

    /// Lower factor `L` with `L Lᵀ = K + jitter·I`.
    pub fn chol(&self) -> &DMatrix<f64> {
        &self.chol
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// `L ν`: maps whitened variables to latents.
    pub fn whitened_to_latent(&self, nu: &DVector<f64>) -> DVector<f64> {
        lower_mul(&self.chol, nu)
    }

    /// `L⁻¹ f`: maps latents to whitened variables.
    pub fn latent_to_whitened(&self, f: &DVector<f64>) -> DVector<f64> {
        solve_lower(&self.chol, f)
    }
}

/// Builds `K_ij = k(x_i, x_j)` by evaluating the upper triangle and mirroring.
pub fn build_kernel(inputs: &DMatrix<f64>, hyper: &Hyperparams, kind: CovarianceKind) -> Result<KernelMatrix> {
    let k = covariance_matrix(inputs, hyper, kind)?;
    let scale = hyper.sigma().max(f64::MIN_POSITIVE);
    let (chol, jitter) = cholesky_with_jitter(&k, scale)?;
    let log_det = log_det_from_factor(&chol);
    Ok(KernelMatrix { k, chol, log_det, jitter })
}

/// The covariance matrix alone, without factorizing it.
pub fn covariance_matrix(inputs: &DMatrix<f64>, hyper: &Hyperparams, kind: CovarianceKind) -> Result<DMatrix<f64>> {
    let (n, d) = inputs.shape();
    if n == 0 {
        return Err(Error::InvalidArgument("no inputs".into()));
    }
    hyper.check_kind(kind, d)?;
    let inv = inverse_sq_lengthscales(hyper, d);
    let sigma = hyper.sigma();
    let xt = inputs.transpose();
    let mut k = DMatrix::zeros(n, n);
    for j in 0..n {
        k[(j, j)] = sigma;
        let xj = xt.column(j);
        for i in 0..j {
            let xi = xt.column(i);
            let v = sigma * (-0.5 * scaled_sq_dist(xi.iter().copied(), xj.iter().copied(), &inv)).exp();
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    Ok(k)
}

/// Covariances between every training row and one query point.
pub fn cross_covariance(inputs: &DMatrix<f64>, x: &[f64], hyper: &Hyperparams, kind: CovarianceKind) -> Result<DVector<f64>> {
    let (n, d) = inputs.shape();
    if x.len() != d {
        return Err(Error::InvalidArgument(format!("query has {} covariates, expected {d}", x.len())));
    }
    hyper.check_kind(kind, d)?;
    let inv = inverse_sq_lengthscales(hyper, d);
    let sigma = hyper.sigma();
    Ok(DVector::from_fn(n, |i, _| {
        sigma * (-0.5 * scaled_sq_dist(inputs.row(i).iter().copied(), x.iter().copied(), &inv)).exp()
    }))
}

/// `log N(f | 0, K)` through the factor.
pub fn gp_log_density(f: &DVector<f64>, km: &KernelMatrix) -> Result<f64> {
    if f.len() != km.n() {
        return Err(Error::InvalidArgument(format!(
            "latent length {} vs kernel size {}",
            f.len(),
            km.n()
        )));
    }
    let v = solve_lower(&km.chol, f);
    Ok(-0.5 * v.norm_squared() - 0.5 * km.log_det - 0.5 * km.n() as f64 * LN_2PI)
}

/// Draws `f = L ν` with `ν ~ N(0, I)`.
pub fn sample_gp_prior<R: Rng + ?Sized>(km: &KernelMatrix, rng: &mut R) -> DVector<f64> {
    let nu = DVector::from_fn(km.n(), |_, _| rng.sample(StandardNormal));
    km.whitened_to_latent(&nu)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::linalg::max_abs;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn iso(sigma: f64, tau: f64) -> Hyperparams {
        Hyperparams::isotropic(sigma, tau).unwrap()
    }

    #[test]
    fn kernel_diagonal_and_known_value() {
        let h = iso(2.08, 0.35);
        let x = [0.3, 0.7];
        assert_eq!(kernel_eval(&x, &x, &h, CovarianceKind::Isotropic).unwrap(), 2.08);
        // ‖xi − xj‖² = 2 with σ = τ = 1 gives e⁻¹.
        let v = kernel_eval(&[0.0, 0.0], &[1.0, 1.0], &iso(1.0, 1.0), CovarianceKind::Isotropic).unwrap();
        assert!((v - 0.367_879_441_171_442_3).abs() < 1e-15);
    }

    #[test]
    fn kernel_rejects_dimension_mismatch() {
        let h = iso(1.0, 1.0);
        assert!(kernel_eval(&[0.0], &[0.0, 1.0], &h, CovarianceKind::Isotropic).is_err());
        let ard = Hyperparams::from_natural(1.0, &[1.0, 2.0]).unwrap();
        assert!(kernel_eval(&[0.0; 3], &[0.0; 3], &ard, CovarianceKind::Ard).is_err());
    }

    #[test]
    fn kernel_symmetric_and_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let h = Hyperparams::from_natural(1.7, &[0.4, 2.0, 0.9]).unwrap();
        for _ in 0..100 {
            let a: Vec<f64> = (0..3).map(|_| rng.random::<f64>()).collect();
            let b: Vec<f64> = (0..3).map(|_| rng.random::<f64>()).collect();
            let kab = kernel_eval(&a, &b, &h, CovarianceKind::Ard).unwrap();
            let kba = kernel_eval(&b, &a, &h, CovarianceKind::Ard).unwrap();
            assert_eq!(kab, kba);
            assert!(kab > 0.0 && kab <= 1.7);
        }
    }

    #[test]
    fn scalar_kernel_matrix() {
        let x = DMatrix::from_element(1, 2, 0.5);
        let km = build_kernel(&x, &iso(3.0, 1.0), CovarianceKind::Isotropic).unwrap();
        let sigma = iso(3.0, 1.0).sigma();
        assert_eq!(km.matrix()[(0, 0)], sigma);
        assert!((km.chol()[(0, 0)] - sigma.sqrt()).abs() < 1e-15);
        assert!((km.log_det() - sigma.ln()).abs() < 1e-15);
        assert_eq!(km.jitter(), 0.0);
    }

    #[test]
    fn duplicate_rows_need_jitter() {
        let x = DMatrix::from_row_slice(3, 1, &[0.2, 0.2, 0.9]);
        let km = build_kernel(&x, &iso(1.0, 1.0), CovarianceKind::Isotropic).unwrap();
        assert!(km.jitter() > 0.0);
    }

    #[test]
    fn factor_reconstructs_and_matrix_is_mirrored() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = DMatrix::from_fn(5, 2, |_, _| rng.random::<f64>());
        let h = iso(2.08, 0.35);
        let km = build_kernel(&x, &h, CovarianceKind::Isotropic).unwrap();
        let k = km.matrix();
        assert_eq!(k, &k.transpose());
        let mut target = k.clone();
        for i in 0..5 {
            assert_eq!(target[(i, i)], 2.08);
            target[(i, i)] += km.jitter();
        }
        let recon = km.chol() * km.chol().transpose();
        assert!(max_abs(&(recon - target)) <= 1e-8 * max_abs(k));
        for i in 0..5 {
            for j in 0..5 {
                if i != j {
                    assert!(k[(i, j)] < 2.08);
                }
            }
        }
    }

    #[test]
    fn gp_log_density_known_values() {
        let km = KernelMatrix::from_covariance(DMatrix::identity(2, 2)).unwrap();
        let zero = DVector::zeros(2);
        assert!((gp_log_density(&zero, &km).unwrap() + LN_2PI).abs() < 1e-12);
        let e1 = DVector::from_vec(vec![1.0, 0.0]);
        assert!((gp_log_density(&e1, &km).unwrap() - (-0.5 - LN_2PI)).abs() < 1e-12);
        assert!(gp_log_density(&DVector::zeros(3), &km).is_err());
    }

    #[test]
    fn gp_log_density_matches_explicit_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = DMatrix::from_fn(4, 1, |i, _| i as f64 + 0.3 * rng.random::<f64>());
        let km = build_kernel(&x, &iso(1.3, 0.8), CovarianceKind::Isotropic).unwrap();
        let f = DVector::from_fn(4, |_, _| rng.random::<f64>() - 0.5);
        let kinv = km.matrix().clone().try_inverse().unwrap();
        let det = km.matrix().determinant();
        let oracle = -0.5 * (f.transpose() * kinv * &f)[(0, 0)] - 0.5 * det.ln() - 2.0 * LN_2PI;
        let got = gp_log_density(&f, &km).unwrap();
        assert!((got - oracle).abs() < 1e-10, "{got} vs {oracle} (jitter {})", km.jitter());
    }

    #[test]
    fn whitening_zero_and_round_trip() {
        let x = DMatrix::from_row_slice(3, 1, &[0.0, 0.5, 1.0]);
        let km = build_kernel(&x, &iso(1.0, 0.5), CovarianceKind::Isotropic).unwrap();
        assert_eq!(km.whitened_to_latent(&DVector::zeros(3)), DVector::zeros(3));
        let f = DVector::from_vec(vec![0.3, -1.0, 2.0]);
        let back = km.whitened_to_latent(&km.latent_to_whitened(&f));
        assert!((back - f).amax() < 1e-12);
    }
}
