//! Importance-sampling estimate of the marginal likelihood `p(y | θ)`.
//!
//! Draws `f_i ~ q(f | y, θ)` and averages `p(y|f_i) p(f_i|θ) / q(f_i)`. The
//! average is unbiased for `p(y|θ)`, which is what lets the pseudo-marginal
//! sampler target the exact hyper-parameter posterior.

use nalgebra::DVector;
use rand::Rng;
use serde::Serialize;

use crate::approx::{approximate, ApproxConfig, ApproxMethod, GaussianApprox};
use crate::error::{Error, Result};
use crate::gp::linalg::solve_lower;
use crate::gp::probit::log_likelihood_unchecked;
use crate::gp::{build_kernel, gamma_log_pdf, CovarianceKind, Dataset, HyperPriors, Hyperparams, KernelMatrix, ParamPrior};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PmEstimate {
    pub log_p_tilde: f64,
    pub n_imp: usize,
    /// `(Σw)² / Σw²` over the importance weights; informational only.
    pub ess_weights: f64,
}

/// `log Σ exp(v_i)`; `-∞` for an empty slice.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// `log( (1/N) Σ exp(v_i) )`.
pub fn log_mean_exp(values: &[f64]) -> f64 {
    log_sum_exp(values) - (values.len() as f64).ln()
}

/// Estimate with the probit likelihood of `data`.
pub fn importance_log_marginal<R: Rng + ?Sized>(
    data: &Dataset,
    km: &KernelMatrix,
    q: &GaussianApprox,
    n_imp: usize,
    rng: &mut R,
) -> Result<PmEstimate> {
    if data.n() != km.n() {
        return Err(Error::InvalidArgument("dataset and kernel sizes differ".into()));
    }
    let y = data.labels();
    importance_log_marginal_with(|f| log_likelihood_unchecked(y, f), km, q, n_imp, rng)
}

/// Estimate for an arbitrary log-likelihood of the latents.
pub fn importance_log_marginal_with<R, L>(loglik: L, km: &KernelMatrix, q: &GaussianApprox, n_imp: usize, rng: &mut R) -> Result<PmEstimate>
where
    R: Rng + ?Sized,
    L: Fn(&DVector<f64>) -> f64,
{
    if n_imp == 0 {
        return Err(Error::InvalidArgument("need at least one importance sample".into()));
    }
    if q.n() != km.n() {
        return Err(Error::InvalidArgument("approximation and kernel sizes differ".into()));
    }
    let n = km.n() as f64;
    let prior_norm = -0.5 * km.log_det() - 0.5 * n * LN_2PI;
    let log_weights: Vec<f64> = (0..n_imp)
        .map(|_| {
            let (f, log_q) = q.sample(rng);
            let v = solve_lower(km.chol(), &f);
            let log_prior = -0.5 * v.norm_squared() + prior_norm;
            loglik(&f) + log_prior - log_q
        })
        .collect();
    Ok(estimate_from_log_weights(&log_weights))
}

/// As [`importance_log_marginal`], additionally returning one importance
/// draw selected with probability proportional to its weight.
pub fn importance_log_marginal_select<R: Rng + ?Sized>(
    data: &Dataset,
    km: &KernelMatrix,
    q: &GaussianApprox,
    n_imp: usize,
    rng: &mut R,
) -> Result<(PmEstimate, DVector<f64>)> {
    if n_imp == 0 {
        return Err(Error::InvalidArgument("need at least one importance sample".into()));
    }
    if data.n() != km.n() || q.n() != km.n() {
        return Err(Error::InvalidArgument("dataset, kernel and approximation sizes differ".into()));
    }
    let y = data.labels();
    let n = km.n() as f64;
    let prior_norm = -0.5 * km.log_det() - 0.5 * n * LN_2PI;
    let mut draws = Vec::with_capacity(n_imp);
    let mut log_weights = Vec::with_capacity(n_imp);
    for _ in 0..n_imp {
        let (f, log_q) = q.sample(rng);
        let v = solve_lower(km.chol(), &f);
        log_weights.push(log_likelihood_unchecked(y, &f) - 0.5 * v.norm_squared() + prior_norm - log_q);
        draws.push(f);
    }
    let est = estimate_from_log_weights(&log_weights);
    let lse = log_sum_exp(&log_weights);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut pick = n_imp - 1;
    for (i, w) in log_weights.iter().enumerate() {
        acc += (w - lse).exp();
        if u < acc {
            pick = i;
            break;
        }
    }
    Ok((est, draws.swap_remove(pick)))
}

/// Conditional importance sampling: `f_fixed` takes one of the `n_imp`
/// slots and the rest are drawn from `q`. When `f_fixed ~ p(f | y, θ)` the
/// resulting estimate has the distribution the pseudo-marginal chain holds
/// for its incumbent, so it can replace a stale cached value exactly.
pub fn conditional_importance_log_marginal<R: Rng + ?Sized>(
    data: &Dataset,
    km: &KernelMatrix,
    q: &GaussianApprox,
    n_imp: usize,
    f_fixed: &DVector<f64>,
    rng: &mut R,
) -> Result<PmEstimate> {
    if n_imp == 0 {
        return Err(Error::InvalidArgument("need at least one importance sample".into()));
    }
    if data.n() != km.n() || q.n() != km.n() || f_fixed.len() != km.n() {
        return Err(Error::InvalidArgument(
            "dataset, kernel, approximation and latent sizes differ".into(),
        ));
    }
    let y = data.labels();
    let n = km.n() as f64;
    let prior_norm = -0.5 * km.log_det() - 0.5 * n * LN_2PI;
    let log_weight = |f: &DVector<f64>, log_q: f64| {
        let v = solve_lower(km.chol(), f);
        log_likelihood_unchecked(y, f) - 0.5 * v.norm_squared() + prior_norm - log_q
    };
    let mut log_weights = vec![log_weight(f_fixed, q.log_density(f_fixed))];
    for _ in 1..n_imp {
        let (f, log_q) = q.sample(rng);
        log_weights.push(log_weight(&f, log_q));
    }
    Ok(estimate_from_log_weights(&log_weights))
}

/// Reduces log importance weights to an estimate without exponentiating any
/// weight outside the log-sum-exp.
pub fn estimate_from_log_weights(log_weights: &[f64]) -> PmEstimate {
    let lse = log_sum_exp(log_weights);
    let doubled: Vec<f64> = log_weights.iter().map(|w| 2.0 * w).collect();
    PmEstimate {
        log_p_tilde: lse - (log_weights.len() as f64).ln(),
        n_imp: log_weights.len(),
        ess_weights: (2.0 * lse - log_sum_exp(&doubled)).exp(),
    }
}

/// One row of a posterior-versus-length-scale table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurveRow {
    pub tau: f64,
    pub mean: f64,
    pub q025: f64,
    pub q975: f64,
    pub method: ApproxMethod,
    pub n_imp: usize,
}

#[derive(Debug, Clone)]
pub struct CurveSpec<'a> {
    pub data: &'a Dataset,
    pub kind: CovarianceKind,
    /// σ is held at this value across the grid.
    pub sigma: f64,
    pub taus: &'a [f64],
    pub priors: HyperPriors,
    pub method: ApproxMethod,
    pub n_imp: usize,
    pub reps: usize,
    pub approx: ApproxConfig,
    /// Divide every column by the trapezoid area of the mean curve.
    pub normalize: bool,
}

/// Natural-scale log prior of the free parameters (no log-space Jacobian).
fn log_prior_natural(h: &Hyperparams, priors: &HyperPriors) -> Result<f64> {
    let mut lp = 0.0;
    if let ParamPrior::Gamma(g) = &priors.sigma {
        lp += gamma_log_pdf(h.sigma(), g)?;
    }
    if let ParamPrior::Gamma(g) = &priors.lengthscale {
        for t in h.lengthscales() {
            lp += gamma_log_pdf(t, g)?;
        }
    }
    Ok(lp)
}

/// Repeats the estimator at each grid value of τ and summarizes the spread of
/// `p̃(y|τ) p(τ)` across replications. The approximation is built once per
/// grid value; replications only redraw importance samples.
pub fn pm_posterior_curve<R: Rng + ?Sized>(spec: &CurveSpec<'_>, rng: &mut R) -> Result<Vec<CurveRow>> {
    posterior_curve_with(spec, rng, |km, rng| {
        let q = approximate(spec.method, spec.data, km, &spec.approx)?;
        (0..spec.reps)
            .map(|_| importance_log_marginal(spec.data, km, &q, spec.n_imp, rng).map(|e| e.log_p_tilde))
            .collect()
    })
}

/// Curve driver with a caller-supplied estimator returning `spec.reps` log
/// marginal estimates for the kernel at one grid value.
pub fn posterior_curve_with<R, F>(spec: &CurveSpec<'_>, rng: &mut R, mut estimates: F) -> Result<Vec<CurveRow>>
where
    R: Rng + ?Sized,
    F: FnMut(&KernelMatrix, &mut R) -> Result<Vec<f64>>,
{
    if spec.taus.is_empty() {
        return Err(Error::InvalidArgument("empty τ grid".into()));
    }
    if spec.reps == 0 {
        return Err(Error::InvalidArgument("need at least one replication".into()));
    }
    let d = spec.data.d();
    let mut rows = Vec::with_capacity(spec.taus.len());
    for &tau in spec.taus {
        let ls = vec![tau; spec.kind.num_lengthscales(d)];
        let hyper = Hyperparams::from_natural(spec.sigma, &ls)?;
        let km = build_kernel(spec.data.inputs(), &hyper, spec.kind)?;
        let log_prior = log_prior_natural(&hyper, &spec.priors)?;
        let mut values: Vec<f64> = estimates(&km, rng)?.into_iter().map(|lp| (lp + log_prior).exp()).collect();
        values.sort_by(|a, b| a.total_cmp(b));
        rows.push(CurveRow {
            tau,
            mean: values.iter().sum::<f64>() / values.len() as f64,
            q025: quantile_sorted(&values, 0.025),
            q975: quantile_sorted(&values, 0.975),
            method: spec.method,
            n_imp: spec.n_imp,
        });
    }
    if spec.normalize {
        let area: f64 = rows
            .windows(2)
            .map(|w| 0.5 * (w[0].mean + w[1].mean) * (w[1].tau - w[0].tau))
            .sum::<f64>()
            .abs();
        if area > 0.0 {
            for r in &mut rows {
                r.mean /= area;
                r.q025 /= area;
                r.q975 /= area;
            }
        }
    }
    Ok(rows)
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        m => {
            let pos = p.clamp(0.0, 1.0) * (m - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
        }
    }
}

/// CSV rendering with header `tau,mean,q025,q975,method,n_imp`.
pub fn curve_to_csv(rows: &[CurveRow]) -> String {
    let mut out = String::from("tau,mean,q025,q975,method,n_imp\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.tau,
            r.mean,
            r.q025,
            r.q975,
            r.method.tag(),
            r.n_imp
        ));
    }
    out
}
