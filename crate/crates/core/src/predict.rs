//! Predictive class probabilities: Gaussian-approximation integration and
//! Monte Carlo averaging over posterior samples.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;

use crate::approx::{approximate, ApproxConfig, ApproxMethod, GaussianApprox};
use crate::error::{Error, Result};
use crate::gp::linalg::{solve_lower, solve_lower_transpose};
use crate::gp::probit::norm_cdf;
use crate::gp::{build_kernel, cross_covariance, CovarianceKind, Dataset, Hyperparams, KernelMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PredictiveResult {
    pub prob_positive: f64,
    pub latent_mean: f64,
    pub latent_var: f64,
}

/// Latent predictive moments; `clamped` flags a variance that round-off
/// pushed below zero and was reset to zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatentPredictive {
    pub mean: f64,
    pub var: f64,
    pub clamped: bool,
}

fn clamp_var(v: f64) -> (f64, bool) {
    if v < 0.0 {
        (0.0, true)
    } else {
        (v, false)
    }
}

/// `m* = k*ᵀ K⁻¹ μ_q`, `s²* = k** − k*ᵀ K⁻¹ k* + k*ᵀ K⁻¹ Σ_q K⁻¹ k*`.
pub fn latent_predictive_gaussian(
    x_star: &[f64],
    data: &Dataset,
    km: &KernelMatrix,
    q: &GaussianApprox,
    hyper: &Hyperparams,
    kind: CovarianceKind,
) -> Result<LatentPredictive> {
    if km.n() != data.n() || q.n() != data.n() {
        return Err(Error::InvalidArgument("dataset, kernel and approximation sizes differ".into()));
    }
    let k_star = cross_covariance(data.inputs(), x_star, hyper, kind)?;
    let a = solve_lower(km.chol(), &k_star);
    let b = solve_lower_transpose(km.chol(), &a);
    let mean = b.dot(&q.mean);
    let c = q.cov_factor_tr_mul(&b);
    let (var, clamped) = clamp_var(hyper.sigma() - a.norm_squared() + c.norm_squared());
    Ok(LatentPredictive { mean, var, clamped })
}

/// `Φ(m* / √(1 + s²*))`.
pub fn probit_predictive(m_star: f64, s2_star: f64) -> Result<f64> {
    if !(s2_star >= 0.0) {
        return Err(Error::Domain(format!("predictive variance {s2_star} is negative")));
    }
    Ok(norm_cdf(m_star / (1.0 + s2_star).sqrt()))
}

/// One posterior sample with its factorized kernel, reused across test points.
struct CachedSample<'a> {
    f: &'a DVector<f64>,
    hyper: &'a Hyperparams,
    km: KernelMatrix,
}

impl CachedSample<'_> {
    /// `Φ(μ* / √(1 + β²*))` with `μ* = k*ᵀ K⁻¹ f`, `β²* = k** − k*ᵀ K⁻¹ k*`.
    fn predict(&self, data: &Dataset, kind: CovarianceKind, x: &[f64], clamps: &mut u64) -> Result<f64> {
        let k_star = cross_covariance(data.inputs(), x, self.hyper, kind)?;
        let a = solve_lower(self.km.chol(), &k_star);
        let mu = solve_lower(self.km.chol(), self.f).dot(&a);
        let (beta2, c) = clamp_var(self.hyper.sigma() - a.norm_squared());
        *clamps += c as u64;
        probit_predictive(mu, beta2)
    }
}

/// Monte Carlo predictive output plus the number of clamped variances.
#[derive(Debug, Clone, PartialEq)]
pub struct McPrediction {
    pub probs: Vec<f64>,
    pub clamps: u64,
}

/// Averages per-sample probit predictions over `(f, θ)` posterior samples
/// for a batch of test points. Each sample's kernel is factorized once.
pub fn mc_predictive(
    samples: &[(DVector<f64>, Hyperparams)],
    data: &Dataset,
    kind: CovarianceKind,
    x_stars: &[Vec<f64>],
) -> Result<McPrediction> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("no posterior samples".into()));
    }
    if let Some((f, _)) = samples.iter().find(|(f, _)| f.len() != data.n()) {
        return Err(Error::InvalidArgument(format!(
            "sample has {} latents, expected {}",
            f.len(),
            data.n()
        )));
    }
    let per_sample: Vec<(Vec<f64>, u64)> = samples
        .par_iter()
        .map(|(f, hyper)| -> Result<(Vec<f64>, u64)> {
            let s = CachedSample {
                f,
                hyper,
                km: build_kernel(data.inputs(), hyper, kind)?,
            };
            let mut clamps = 0;
            let p = x_stars
                .iter()
                .map(|x| s.predict(data, kind, x, &mut clamps))
                .collect::<Result<Vec<_>>>()?;
            Ok((p, clamps))
        })
        .collect::<Result<_>>()?;
    let m = samples.len() as f64;
    let mut probs = vec![0.0; x_stars.len()];
    let mut clamps = 0;
    for (p, c) in &per_sample {
        for (acc, v) in probs.iter_mut().zip(p) {
            *acc += v;
        }
        clamps += c;
    }
    probs.iter_mut().for_each(|p| *p /= m);
    Ok(McPrediction { probs, clamps })
}

/// Predictions at a single θ through its Gaussian approximation (EP-ML when
/// θ is the type-II estimate).
pub fn gaussian_predictions(
    data: &Dataset,
    hyper: &Hyperparams,
    kind: CovarianceKind,
    method: ApproxMethod,
    config: &ApproxConfig,
    x_stars: &[Vec<f64>],
) -> Result<Vec<PredictiveResult>> {
    let km = build_kernel(data.inputs(), hyper, kind)?;
    let q = approximate(method, data, &km, config)?;
    x_stars
        .iter()
        .map(|x| {
            let lp = latent_predictive_gaussian(x, data, &km, &q, hyper, kind)?;
            Ok(PredictiveResult {
                prob_positive: probit_predictive(lp.mean, lp.var)?,
                latent_mean: lp.mean,
                latent_var: lp.var,
            })
        })
        .collect()
}

/// Averages approximation-based predictions over θ-samples, recomputing the
/// approximation for every sample.
pub fn approx_mixture_predictive(
    thetas: &[Hyperparams],
    data: &Dataset,
    kind: CovarianceKind,
    method: ApproxMethod,
    config: &ApproxConfig,
    x_stars: &[Vec<f64>],
) -> Result<Vec<f64>> {
    if thetas.is_empty() {
        return Err(Error::InvalidArgument("no hyper-parameter samples".into()));
    }
    let per: Vec<Vec<PredictiveResult>> = thetas
        .par_iter()
        .map(|h| gaussian_predictions(data, h, kind, method, config, x_stars))
        .collect::<Result<_>>()?;
    let mut out = vec![0.0; x_stars.len()];
    for p in &per {
        for (acc, r) in out.iter_mut().zip(p) {
            *acc += r.prob_positive;
        }
    }
    let m = thetas.len() as f64;
    Ok(out.into_iter().map(|v| v / m).collect())
}

/// `point_id,prob_positive,method` rows.
pub fn predictions_to_csv(probs: &[f64], method: &str) -> String {
    let mut out = String::from("point_id,prob_positive,method\n");
    for (i, p) in probs.iter().enumerate() {
        out.push_str(&format!("{i},{p},{method}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::kernel_eval;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy(n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64 * 0.7 + 0.2 * rng.random::<f64>()]).collect();
        let labels: Vec<f64> = (0..n).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        Dataset::from_rows(&rows, &labels).unwrap()
    }

    #[test]
    fn probit_reference_values() {
        assert_eq!(probit_predictive(0.0, 2.0).unwrap(), 0.5);
        assert!((probit_predictive(1.0, 0.0).unwrap() - 0.841_344_746_068_542_9).abs() < 1e-12);
        assert!((probit_predictive(1.0, 3.0).unwrap() - 0.691_462_461_274_013_1).abs() < 1e-12);
        assert!(probit_predictive(1.0, -1e-3).is_err());
        assert!(probit_predictive(0.3, 1.0).unwrap() < probit_predictive(0.4, 1.0).unwrap());
    }

    #[test]
    fn interpolation_limit_at_training_point() {
        let data = toy(4, 1);
        let h = Hyperparams::isotropic(1.3, 0.9).unwrap();
        let km = build_kernel(data.inputs(), &h, CovarianceKind::Isotropic).unwrap();
        assert_eq!(km.jitter(), 0.0);
        let mu = DVector::from_vec(vec![0.4, -1.2, 0.8, 2.0]);
        let q = GaussianApprox::degenerate(mu.clone());
        let x: Vec<f64> = data.inputs().row(2).iter().copied().collect();
        let lp = latent_predictive_gaussian(&x, &data, &km, &q, &h, CovarianceKind::Isotropic).unwrap();
        assert!((lp.mean - 0.8).abs() < 1e-10);
        assert!(lp.var < 1e-10);
    }

    #[test]
    fn distant_point_reverts_to_prior() {
        let data = toy(4, 2);
        let h = Hyperparams::isotropic(1.7, 0.5).unwrap();
        let km = build_kernel(data.inputs(), &h, CovarianceKind::Isotropic).unwrap();
        let q = approximate(ApproxMethod::Ep, &data, &km, &ApproxConfig::default()).unwrap();
        let lp = latent_predictive_gaussian(&[1e4], &data, &km, &q, &h, CovarianceKind::Isotropic).unwrap();
        assert_eq!(lp.mean, 0.0);
        assert_eq!(lp.var, h.sigma());
    }

    #[test]
    fn matches_dense_formulas() {
        let data = toy(5, 3);
        let h = Hyperparams::isotropic(0.9, 1.1).unwrap();
        let kind = CovarianceKind::Isotropic;
        let km = build_kernel(data.inputs(), &h, kind).unwrap();
        let q = approximate(ApproxMethod::Laplace, &data, &km, &ApproxConfig::default()).unwrap();
        let x = [1.37];
        let lp = latent_predictive_gaussian(&x, &data, &km, &q, &h, kind).unwrap();
        let kinv: DMatrix<f64> = km.matrix().clone().try_inverse().unwrap();
        let ks = cross_covariance(data.inputs(), &x, &h, kind).unwrap();
        let kss = kernel_eval(&x, &x, &h, kind).unwrap();
        let m = (ks.transpose() * &kinv * &q.mean)[0];
        let s2 = kss - (ks.transpose() * &kinv * &ks)[0] + (ks.transpose() * &kinv * q.cov() * &kinv * &ks)[0];
        assert!((lp.mean - m).abs() < 1e-10);
        assert!((lp.var - s2).abs() < 1e-10);
    }

    #[test]
    fn mc_single_and_identical_samples() {
        let data = toy(5, 4);
        let h = Hyperparams::isotropic(1.1, 0.8).unwrap();
        let kind = CovarianceKind::Isotropic;
        let f = DVector::from_vec(vec![0.5, -0.3, 1.1, -0.9, 0.2]);
        let xs = vec![vec![0.9], vec![2.4]];
        let one = mc_predictive(&[(f.clone(), h.clone())], &data, kind, &xs).unwrap();
        let km = build_kernel(data.inputs(), &h, kind).unwrap();
        for (i, x) in xs.iter().enumerate() {
            let ks = cross_covariance(data.inputs(), x, &h, kind).unwrap();
            let a = solve_lower(km.chol(), &ks);
            let mu = solve_lower_transpose(km.chol(), &a).dot(&f);
            let p = probit_predictive(mu, h.sigma() - a.norm_squared()).unwrap();
            assert!((one.probs[i] - p).abs() < 1e-14);
        }
        let many = mc_predictive(&vec![(f, h); 7], &data, kind, &xs).unwrap();
        for (a, b) in many.probs.iter().zip(&one.probs) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(mc_predictive(&[], &data, kind, &xs).is_err());
    }

    #[test]
    fn mc_is_mean_of_single_sample_predictions() {
        let data = toy(6, 5);
        let kind = CovarianceKind::Isotropic;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let samples: Vec<(DVector<f64>, Hyperparams)> = (0..5)
            .map(|_| {
                let h = Hyperparams::isotropic(0.5 + rng.random::<f64>(), 0.5 + rng.random::<f64>()).unwrap();
                (DVector::from_fn(6, |_, _| rng.random::<f64>() - 0.5), h)
            })
            .collect();
        let xs = vec![vec![1.3], vec![-0.4]];
        let all = mc_predictive(&samples, &data, kind, &xs).unwrap();
        let singles: Vec<Vec<f64>> = samples
            .iter()
            .map(|s| mc_predictive(std::slice::from_ref(s), &data, kind, &xs).unwrap().probs)
            .collect();
        for j in 0..xs.len() {
            let mean = singles.iter().map(|s| s[j]).sum::<f64>() / samples.len() as f64;
            assert!((all.probs[j] - mean).abs() < 1e-14);
        }
    }

    #[test]
    fn label_negation_symmetry() {
        let data = toy(6, 6);
        let neg = data.with_labels(-data.labels()).unwrap();
        let h = Hyperparams::isotropic(1.4, 0.7).unwrap();
        let kind = CovarianceKind::Isotropic;
        let xs = vec![vec![0.8], vec![3.3]];
        for method in [ApproxMethod::Laplace, ApproxMethod::Ep] {
            let a = gaussian_predictions(&data, &h, kind, method, &ApproxConfig::default(), &xs).unwrap();
            let b = gaussian_predictions(&neg, &h, kind, method, &ApproxConfig::default(), &xs).unwrap();
            for (p, q) in a.iter().zip(&b) {
                assert!((p.prob_positive + q.prob_positive - 1.0).abs() < 1e-12);
            }
        }
        let f = DVector::from_vec(vec![0.3, -0.2, 1.0, -0.7, 0.1, 0.6]);
        let a = mc_predictive(&[(f.clone(), h.clone())], &data, kind, &xs).unwrap();
        let b = mc_predictive(&[(-f, h)], &neg, kind, &xs).unwrap();
        for (p, q) in a.probs.iter().zip(&b.probs) {
            assert!((p + q - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn csv_layout() {
        assert_eq!(predictions_to_csv(&[0.25], "pm"), "point_id,prob_positive,method\n0,0.25,pm\n");
    }
}
