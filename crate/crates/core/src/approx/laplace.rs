use nalgebra::{DMatrix, DVector};

use super::{check_sizes, ApproxConfig, ApproxMethod, GaussianApprox};
use crate::error::{Error, Result};
use crate::gp::linalg::{cholesky_with_jitter, solve_lower, solve_lower_transpose};
use crate::gp::probit::{grad_and_w, log_likelihood_unchecked};
use crate::gp::{Dataset, KernelMatrix};

const MAX_BACKTRACK: usize = 20;

/// Factor of `B = I + W^{1/2} K W^{1/2}`.
fn factor_b(k: &DMatrix<f64>, sw: &DVector<f64>) -> Result<DMatrix<f64>> {
    let n = k.nrows();
    let mut b = DMatrix::from_fn(n, n, |i, j| sw[i] * k[(i, j)] * sw[j]);
    for i in 0..n {
        b[(i, i)] += 1.0;
    }
    cholesky_with_jitter(&b, 1.0).map(|(l, _)| l)
}

/// Laplace approximation by Newton iterations in the `f = K a`
/// parameterization, so that K is never inverted.
pub fn laplace_approx(data: &Dataset, km: &KernelMatrix, config: &ApproxConfig) -> Result<GaussianApprox> {
    check_sizes(data, km)?;
    let n = data.n();
    let y = data.labels();
    let k = km.matrix();
    let threshold = config.threshold(n);

    let psi = |a: &DVector<f64>, f: &DVector<f64>| -0.5 * a.dot(f) + log_likelihood_unchecked(y, f);

    let mut f = DVector::zeros(n);
    let mut a = DVector::zeros(n);
    let mut obj = psi(&a, &f);
    let mut last_change = f64::INFINITY;
    let mut cubic_ops = 0u32;
    let mut iterations = 0usize;

    loop {
        let (g, w) = grad_and_w(y, &f);
        let grad_inf = (&g - &a).amax();
        if last_change < threshold && grad_inf < config.grad_tol {
            break;
        }
        if iterations == config.max_newton_iters {
            return Err(Error::Convergence {
                method: "laplace",
                iterations,
                last_change,
            });
        }
        iterations += 1;

        let sw = w.map(f64::sqrt);
        let lb = factor_b(k, &sw)?;
        cubic_ops += 1;
        let b = w.component_mul(&f) + &g;
        let kb = k * &b;
        let c = solve_lower(&lb, &sw.component_mul(&kb));
        let a_newton = &b - sw.component_mul(&solve_lower_transpose(&lb, &c));

        // Newton step with backtracking on Ψ; the full step is almost always taken.
        let mut step = 1.0;
        let mut a_new = a_newton.clone();
        let mut f_new = k * &a_new;
        let mut obj_new = psi(&a_new, &f_new);
        for _ in 0..MAX_BACKTRACK {
            if obj_new >= obj - 1e-10 * obj.abs().max(1.0) || !obj.is_finite() {
                break;
            }
            step *= 0.5;
            a_new = &a + (&a_newton - &a) * step;
            f_new = k * &a_new;
            obj_new = psi(&a_new, &f_new);
        }
        last_change = (&f_new - &f).norm_squared();
        f = f_new;
        a = a_new;
        obj = obj_new;
    }

    let (_, w) = grad_and_w(y, &f);
    let sw = w.map(f64::sqrt);
    let lb = factor_b(k, &sw)?;
    cubic_ops += 1;
    let log_marginal = obj - lb.diagonal().iter().map(|v| v.ln()).sum::<f64>();

    GaussianApprox::from_site_precisions(f, km, &w, log_marginal, Some(ApproxMethod::Laplace), iterations, cubic_ops)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::{build_kernel, loglik_grad, loglik_neg_hess_diag, CovarianceKind, Hyperparams};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_problem(seed: u64, n: usize) -> (Dataset, KernelMatrix) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random(), rng.random()]).collect();
        let labels: Vec<f64> = (0..n).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
        let data = Dataset::from_rows(&rows, &labels).unwrap();
        let km = build_kernel(
            data.inputs(),
            &Hyperparams::isotropic(2.08, 0.35).unwrap(),
            CovarianceKind::Isotropic,
        )
        .unwrap();
        (data, km)
    }

    #[test]
    fn mode_is_stationary() {
        for seed in 0..10 {
            let (data, km) = random_problem(seed, 10);
            let q = laplace_approx(&data, &km, &ApproxConfig::default()).unwrap();
            let kinv_f = crate::gp::linalg::chol_solve(km.chol(), &q.mean);
            let grad = loglik_grad(data.labels(), &q.mean).unwrap() - kinv_f;
            assert!(grad.amax() < 1e-6, "seed {seed}: {}", grad.amax());
        }
    }

    #[test]
    fn curvature_identity() {
        let (data, km) = random_problem(42, 8);
        let q = laplace_approx(&data, &km, &ApproxConfig::default()).unwrap();
        let w = loglik_neg_hess_diag(data.labels(), &q.mean).unwrap();
        let kinv = km.matrix().clone().try_inverse().unwrap();
        let neg_hess = kinv + DMatrix::from_diagonal(&w);
        let prec = q.cov().try_inverse().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..5 {
            let v = DVector::from_fn(8, |_, _| rng.random::<f64>() - 0.5);
            let lhs = (v.transpose() * &prec * &v)[(0, 0)];
            let rhs = (v.transpose() * &neg_hess * &v)[(0, 0)];
            assert!((lhs - rhs).abs() <= 1e-8 * rhs.abs(), "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn single_point_solves_stationarity_equation() {
        let data = Dataset::from_rows(&[vec![0.0]], &[1.0]).unwrap();
        let km = KernelMatrix::from_covariance(DMatrix::identity(1, 1)).unwrap();
        let q = laplace_approx(&data, &km, &ApproxConfig::default()).unwrap();
        // Bisection on f − φ(f)/Φ(f) = 0.
        let h = |f: f64| f - crate::gp::probit::inv_mills(f).0;
        let (mut lo, mut hi) = (0.0, 2.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if h(mid) < 0.0 {
                lo = mid
            } else {
                hi = mid
            }
        }
        assert!((q.mean[0] - 0.5 * (lo + hi)).abs() < 1e-7, "{} vs {}", q.mean[0], lo);
    }

    #[test]
    fn size_mismatch_rejected() {
        let (data, _) = random_problem(0, 4);
        let km = KernelMatrix::from_covariance(DMatrix::identity(3, 3)).unwrap();
        assert!(laplace_approx(&data, &km, &ApproxConfig::default()).is_err());
    }

    #[test]
    fn iteration_cap_is_reported() {
        let (data, km) = random_problem(3, 6);
        let config = ApproxConfig {
            max_newton_iters: 1,
            ..ApproxConfig::default()
        };
        assert!(matches!(laplace_approx(&data, &km, &config), Err(Error::Convergence { .. })));
    }
}
