//! θ-updates for the four schemes. Every step takes the state by mutable
//! reference, leaves it untouched on rejection and reports acceptance.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use super::proposal::ProposalConfig;
use super::state::{ChainState, LikelihoodHook, MarginalSource, StepConfig, StepCounters, SurrCache, SurrSites};
use crate::approx::approximate;
use crate::error::{Error, Result};
use crate::gp::linalg::{cholesky_with_jitter, log_det_from_factor, lower_mul, solve_lower, solve_lower_mat};
use crate::gp::probit::inv_mills;
use crate::gp::{build_kernel, covariance_matrix, gp_log_density, log_prior_hyper_with, Dataset, Hyperparams, KernelMatrix};
use crate::pm::{conditional_importance_log_marginal, importance_log_marginal_select, importance_log_marginal_with};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

fn log_prior(h: &Hyperparams, cfg: &StepConfig) -> f64 {
    log_prior_hyper_with(h, &cfg.priors, cfg.prior_jacobian)
}

fn propose_hyper<R: Rng + ?Sized>(state: &ChainState, cfg: &StepConfig, proposal: &ProposalConfig, rng: &mut R) -> Result<Hyperparams> {
    let psi = state.hyper.psi();
    if proposal.step_sizes.len() != psi.len() {
        return Err(Error::InvalidArgument(format!(
            "proposal has {} step sizes for {} hyper-parameters",
            proposal.step_sizes.len(),
            psi.len()
        )));
    }
    let free = cfg.priors.free_mask(&state.hyper);
    Hyperparams::from_psi(&proposal.propose(&psi, &free, rng))
}

/// MH accept test: `u < min(1, exp(log_ratio))`. NaN never accepts.
fn accept<R: Rng + ?Sized>(log_ratio: f64, cfg: &StepConfig, rng: &mut R) -> bool {
    let u = cfg.forced_u.unwrap_or_else(|| rng.random::<f64>());
    u < 1.0 && u.ln() < log_ratio
}

/// Log marginal at `km` plus, for the IS estimator, one weighted draw of `f`.
fn pm_marginal<R: Rng + ?Sized>(
    data: &Dataset,
    km: &KernelMatrix,
    cfg: &StepConfig,
    rng: &mut R,
    counters: &mut StepCounters,
) -> Result<(f64, Option<DVector<f64>>)> {
    let q = approximate(cfg.approx_method, data, km, &cfg.approx)?;
    counters.cubic_ops += q.cubic_ops as u64;
    counters.evaluations += 1;
    match (cfg.marginal, cfg.likelihood) {
        (MarginalSource::Approximate, _) => Ok((q.log_approx_marginal, None)),
        (MarginalSource::Estimate, LikelihoodHook::Probit) => {
            let (est, f) = importance_log_marginal_select(data, km, &q, cfg.n_imp, rng)?;
            Ok((est.log_p_tilde, Some(f)))
        }
        (MarginalSource::Estimate, LikelihoodHook::Flat) => {
            let est = importance_log_marginal_with(|_| 0.0, km, &q, cfg.n_imp, rng)?;
            Ok((est.log_p_tilde, None))
        }
    }
}

/// Pseudo-marginal MH on θ. The incumbent's marginal is evaluated only when
/// the cache is empty and is otherwise reused verbatim.
pub fn pm_mh_step<R: Rng + ?Sized>(
    state: &mut ChainState,
    data: &Dataset,
    cfg: &StepConfig,
    proposal: &ProposalConfig,
    rng: &mut R,
    counters: &mut StepCounters,
) -> Result<bool> {
    let current = match state.cached_log_p_tilde {
        Some(v) => v,
        None => {
            let (v, _) = pm_marginal(data, &state.cached_km, cfg, rng, counters)?;
            state.cached_log_p_tilde = Some(v);
            v
        }
    };
    let h = propose_hyper(state, cfg, proposal, rng)?;
    let attempt = build_kernel(data.inputs(), &h, cfg.kind).and_then(|km| {
        counters.cubic_ops += 1;
        pm_marginal(data, &km, cfg, rng, counters).map(|r| (km, r))
    });
    let (km, (lp, draw)) = match attempt {
        Ok(v) => v,
        Err(_) => {
            counters.failures += 1;
            return Ok(false);
        }
    };
    let log_ratio = lp + log_prior(&h, cfg) - current - log_prior(&state.hyper, cfg);
    if !accept(log_ratio, cfg, rng) {
        return Ok(false);
    }
    state.hyper = h;
    state.cached_km = km;
    state.cached_log_p_tilde = Some(lp);
    state.surr = None;
    if cfg.refresh_latents {
        if let Some(f) = draw {
            state.latents = f;
        }
    }
    Ok(true)
}

/// Re-estimates the incumbent's marginal after the labels changed, keeping
/// the current latents as one of the importance draws. With `(θ, f)` drawn
/// from the joint posterior for the new labels, the refreshed value is an
/// exact draw of the pseudo-marginal chain's auxiliary state.
pub fn pm_refresh_conditional<R: Rng + ?Sized>(
    state: &mut ChainState,
    data: &Dataset,
    cfg: &StepConfig,
    rng: &mut R,
    counters: &mut StepCounters,
) -> Result<()> {
    let q = approximate(cfg.approx_method, data, &state.cached_km, &cfg.approx)?;
    counters.cubic_ops += q.cubic_ops as u64;
    counters.evaluations += 1;
    let v = match cfg.marginal {
        MarginalSource::Approximate => q.log_approx_marginal,
        MarginalSource::Estimate => {
            conditional_importance_log_marginal(data, &state.cached_km, &q, cfg.n_imp, &state.latents, rng)?.log_p_tilde
        }
    };
    state.cached_log_p_tilde = Some(v);
    Ok(())
}

/// MH on θ given `f` (standard parameterization).
pub fn sa_mh_step<R: Rng + ?Sized>(
    state: &mut ChainState,
    data: &Dataset,
    cfg: &StepConfig,
    proposal: &ProposalConfig,
    rng: &mut R,
    counters: &mut StepCounters,
) -> Result<bool> {
    let current = gp_log_density(&state.latents, &state.cached_km)? + log_prior(&state.hyper, cfg);
    let h = propose_hyper(state, cfg, proposal, rng)?;
    let km = match build_kernel(data.inputs(), &h, cfg.kind) {
        Ok(km) => km,
        Err(_) => {
            counters.failures += 1;
            return Ok(false);
        }
    };
    counters.cubic_ops += 1;
    let proposed = gp_log_density(&state.latents, &km)? + log_prior(&h, cfg);
    if !accept(proposed - current, cfg, rng) {
        return Ok(false);
    }
    state.hyper = h;
    state.cached_km = km;
    state.cached_log_p_tilde = None;
    state.surr = None;
    Ok(true)
}

/// MH on θ given the whitened latents `ν = L⁻¹ f`.
pub fn aa_mh_step<R: Rng + ?Sized>(
    state: &mut ChainState,
    data: &Dataset,
    cfg: &StepConfig,
    proposal: &ProposalConfig,
    rng: &mut R,
    counters: &mut StepCounters,
) -> Result<bool> {
    let y = data.labels();
    let nu = state.cached_km.latent_to_whitened(&state.latents);
    let current = cfg.likelihood.eval(y, &state.latents) + log_prior(&state.hyper, cfg);
    let h = propose_hyper(state, cfg, proposal, rng)?;
    let km = match build_kernel(data.inputs(), &h, cfg.kind) {
        Ok(km) => km,
        Err(_) => {
            counters.failures += 1;
            return Ok(false);
        }
    };
    counters.cubic_ops += 1;
    let f = km.whitened_to_latent(&nu);
    let proposed = cfg.likelihood.eval(y, &f) + log_prior(&h, cfg);
    if !accept(proposed - current, cfg, rng) {
        return Ok(false);
    }
    state.hyper = h;
    state.cached_km = km;
    state.latents = f;
    state.cached_log_p_tilde = None;
    state.surr = None;
    Ok(true)
}

/// Site variances `S_θ` from matching each latent's posterior on its own,
/// i.e. under its prior marginal `N(0, K_ii)` and a single probit term.
pub fn surr_site_variances(prior_var: &DVector<f64>, labels: &DVector<f64>, sites: SurrSites) -> DVector<f64> {
    DVector::from_fn(prior_var.len(), |i, _| {
        let v = prior_var[i];
        let y = labels[i];
        let s = match sites {
            SurrSites::Fixed(s) => s,
            SurrSites::La => {
                let mut f = 0.0_f64;
                let mut w = 0.0;
                for _ in 0..100 {
                    let (r, r_plus_z) = inv_mills(y * f);
                    w = r * r_plus_z;
                    let step = (y * r - f / v) / (w + 1.0 / v);
                    f += step;
                    if step.abs() < 1e-12 * (1.0 + f.abs()) {
                        let (r, r_plus_z) = inv_mills(y * f);
                        w = r * r_plus_z;
                        break;
                    }
                }
                1.0 / w
            }
            SurrSites::Ep => {
                // Tilted variance of N(0, v) times Φ(y f), closed form.
                let (r, r_plus_z) = inv_mills(0.0);
                let vhat = v - v * v * r * r_plus_z / (1.0 + v);
                1.0 / (1.0 / vhat - 1.0 / v)
            }
        };
        if s.is_finite() && s > 0.0 {
            s
        } else {
            1e6 * v.max(1.0)
        }
    })
}

/// Factors `K + S` and `R = S − S (K + S)⁻¹ S`: three cubic operations.
pub(crate) fn surr_cache(k: &DMatrix<f64>, site_vars: DVector<f64>) -> Result<SurrCache> {
    let n = k.nrows();
    let s = DMatrix::from_diagonal(&site_vars);
    let a = k + &s;
    let scale = a.diagonal().max();
    let (chol_a, _) = cholesky_with_jitter(&a, scale)?;
    let v = solve_lower_mat(&chol_a, &s);
    let mut r = &s - v.transpose() * &v;
    for j in 0..n {
        for i in 0..j {
            let m = 0.5 * (r[(i, j)] + r[(j, i)]);
            r[(i, j)] = m;
            r[(j, i)] = m;
        }
    }
    let (chol_r, _) = cholesky_with_jitter(&r, site_vars.max())?;
    Ok(SurrCache {
        log_det_a: log_det_from_factor(&chol_a),
        site_vars,
        chol_a,
        chol_r,
    })
}

/// Surrogate data `g`, site variances and whitened latents `η` with
/// `f = D η + m`.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrState {
    pub surrogate: DVector<f64>,
    pub site_vars: DVector<f64>,
    pub whitened: DVector<f64>,
}

impl SurrCache {
    /// `m = R S⁻¹ g = g − S (K + S)⁻¹ g` and `log N(g | 0, K + S)`.
    fn mean_and_evidence(&self, g: &DVector<f64>) -> (DVector<f64>, f64) {
        let z = solve_lower(&self.chol_a, g);
        let a_inv_g = crate::gp::linalg::solve_lower_transpose(&self.chol_a, &z);
        let m = g - self.site_vars.component_mul(&a_inv_g);
        let n = g.len() as f64;
        (m, -0.5 * z.norm_squared() - 0.5 * self.log_det_a - 0.5 * n * LN_2PI)
    }

    /// Draws `g ~ N(f, S)` and whitens `f` against it.
    pub fn draw_state<R: Rng + ?Sized>(&self, f: &DVector<f64>, rng: &mut R) -> SurrState {
        let g = DVector::from_fn(f.len(), |i, _| {
            let e: f64 = rng.sample(StandardNormal);
            f[i] + self.site_vars[i].sqrt() * e
        });
        let (m, _) = self.mean_and_evidence(&g);
        SurrState {
            whitened: solve_lower(&self.chol_r, &(f - m)),
            site_vars: self.site_vars.clone(),
            surrogate: g,
        }
    }

    /// `f = D η + m` for this θ.
    pub fn reconstruct(&self, s: &SurrState) -> DVector<f64> {
        let (m, _) = self.mean_and_evidence(&s.surrogate);
        lower_mul(&self.chol_r, &s.whitened) + m
    }
}

fn surr_cache_for(k: &DMatrix<f64>, data: &Dataset, cfg: &StepConfig) -> Result<SurrCache> {
    surr_cache(k, surr_site_variances(&k.diagonal(), data.labels(), cfg.surr_sites))
}

/// Surrogate-data MH on θ given `(g, η)`.
pub fn surr_mh_step<R: Rng + ?Sized>(
    state: &mut ChainState,
    data: &Dataset,
    cfg: &StepConfig,
    proposal: &ProposalConfig,
    rng: &mut R,
    counters: &mut StepCounters,
) -> Result<bool> {
    let y = data.labels();
    if state.surr.is_none() {
        state.surr = Some(surr_cache_for(state.cached_km.matrix(), data, cfg)?);
        counters.cubic_ops += 3;
    }
    let cache = state.surr.as_ref().expect("filled above");
    let ss = cache.draw_state(&state.latents, rng);
    let (_, ev) = cache.mean_and_evidence(&ss.surrogate);
    let current = cfg.likelihood.eval(y, &state.latents) + ev + log_prior(&state.hyper, cfg);

    let h = propose_hyper(state, cfg, proposal, rng)?;
    let built = covariance_matrix(data.inputs(), &h, cfg.kind).and_then(|k| {
        counters.cubic_ops += 3;
        surr_cache_for(&k, data, cfg).map(|c| (k, c))
    });
    let (k, next) = match built {
        Ok(v) => v,
        Err(_) => {
            counters.failures += 1;
            return Ok(false);
        }
    };
    let (m, ev_new) = next.mean_and_evidence(&ss.surrogate);
    let f = lower_mul(&next.chol_r, &ss.whitened) + m;
    let proposed = cfg.likelihood.eval(y, &f) + ev_new + log_prior(&h, cfg);
    if !accept(proposed - current, cfg, rng) {
        return Ok(false);
    }
    let km = match KernelMatrix::from_covariance(k) {
        Ok(km) => km,
        Err(_) => {
            counters.failures += 1;
            return Ok(false);
        }
    };
    counters.cubic_ops += 1;
    state.hyper = h;
    state.cached_km = km;
    state.latents = f;
    state.cached_log_p_tilde = None;
    state.surr = Some(next);
    Ok(true)
}
