//! Getting-it-right check: marginal-conditional draws of `(θ, f)` against
//! the successive-conditional chain that alternates a sampler transition with
//! regenerating `y ~ p(y|f)`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::mcmc::{ks_two_sample, KsResult};
use crate::error::Result;
use crate::gp::probit::norm_cdf;
use crate::gp::{build_kernel, sample_gp_prior, CovarianceKind, Dataset, HyperPriors, Hyperparams};
use crate::samplers::{
    aa_mh_step, ell_ss_step_with, pm_mh_step, pm_refresh_conditional, sa_mh_step, surr_mh_step, ChainState, ProposalConfig, Scheme,
    StepConfig, StepCounters,
};

/// The generative model: fixed inputs, priors, and the base hyper-parameters
/// supplying any fixed entries.
#[derive(Debug, Clone)]
pub struct GewekeModel {
    pub inputs: DMatrix<f64>,
    pub kind: CovarianceKind,
    pub priors: HyperPriors,
    pub base: Hyperparams,
}

#[derive(Debug, Clone)]
pub enum GewekeTransition {
    Gibbs {
        scheme: Scheme,
        step: StepConfig,
        proposal: ProposalConfig,
        latent_repeats: usize,
        theta_repeats: usize,
    },
    /// Replaces the sampler by an exact draw from the prior: the null case.
    #[doc(hidden)]
    PriorResample,
}

#[derive(Debug, Clone, Copy)]
pub struct GewekeConfig {
    /// Draws per side.
    pub samples: usize,
    /// Successive-conditional iterations between recorded draws.
    pub thin: usize,
    pub burn_in: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GewekeQuantity {
    pub name: String,
    pub ks: KsResult,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GewekeReport {
    pub quantities: Vec<GewekeQuantity>,
    pub acceptance_rate: f64,
}

impl GewekeReport {
    /// No KS rejection at level `alpha`.
    pub fn passes(&self, alpha: f64) -> bool {
        self.quantities.iter().all(|q| q.ks.p_value >= alpha)
    }

    pub fn min_p_value(&self) -> f64 {
        self.quantities.iter().map(|q| q.ks.p_value).fold(1.0, f64::min)
    }
}

fn draw_labels<R: Rng + ?Sized>(f: &DVector<f64>, rng: &mut R) -> DVector<f64> {
    f.map(|v| if rng.random::<f64>() < norm_cdf(v) { 1.0 } else { -1.0 })
}

/// `θ` from the prior and `f ~ N(0, K_θ)`; redraws θ on a failed factorization.
fn joint_prior_draw<R: Rng + ?Sized>(model: &GewekeModel, rng: &mut R) -> Result<ChainState> {
    let mut last = None;
    for _ in 0..100 {
        let h = model.priors.sample(&model.base, rng);
        match build_kernel(&model.inputs, &h, model.kind) {
            Ok(km) => {
                let f = sample_gp_prior(&km, rng);
                let data = Dataset::new(model.inputs.clone(), DVector::from_element(f.len(), 1.0))?;
                return ChainState::new(&data, h, model.kind)?.with_latents(f);
            }
            Err(e) => last = Some(e),
        }
    }
    Err(last.expect("loop ran"))
}

/// Tracked quantities: every ψ coordinate and the first latent.
fn record(state: &ChainState, out: &mut [Vec<f64>]) {
    let psi = state.hyper.psi();
    for (col, v) in out.iter_mut().zip(psi.iter().chain(std::iter::once(&state.latents[0]))) {
        col.push(*v);
    }
}

pub fn geweke_test(model: &GewekeModel, transition: &GewekeTransition, config: &GewekeConfig) -> Result<GewekeReport> {
    let mut names = model.base.psi_names();
    names.push("f1".into());
    let free = model.priors.free_mask(&model.base);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut marginal = vec![Vec::with_capacity(config.samples); names.len()];
    for _ in 0..config.samples {
        record(&joint_prior_draw(model, &mut rng)?, &mut marginal);
    }

    let mut successive = vec![Vec::with_capacity(config.samples); names.len()];
    let mut state = joint_prior_draw(model, &mut rng)?;
    let mut data = Dataset::new(model.inputs.clone(), draw_labels(&state.latents, &mut rng))?;
    let mut counters = StepCounters::default();
    let (mut accepted, mut proposed) = (0u64, 0u64);
    let total = config.burn_in + config.samples * config.thin;
    for it in 0..total {
        match transition {
            GewekeTransition::PriorResample => state = joint_prior_draw(model, &mut rng)?,
            GewekeTransition::Gibbs {
                scheme,
                step,
                proposal,
                latent_repeats,
                theta_repeats,
            } => {
                for _ in 0..*theta_repeats {
                    let a = match scheme {
                        Scheme::Pm => pm_mh_step(&mut state, &data, step, proposal, &mut rng, &mut counters)?,
                        Scheme::Sa => sa_mh_step(&mut state, &data, step, proposal, &mut rng, &mut counters)?,
                        Scheme::Aa => aa_mh_step(&mut state, &data, step, proposal, &mut rng, &mut counters)?,
                        Scheme::Surr => surr_mh_step(&mut state, &data, step, proposal, &mut rng, &mut counters)?,
                    };
                    accepted += a as u64;
                    proposed += 1;
                }
                let y = data.labels().clone();
                for _ in 0..*latent_repeats {
                    state.latents = ell_ss_step_with(&state.latents, &state.cached_km, |f| step.likelihood.eval(&y, f), &mut rng);
                }
            }
        }
        data = data.with_labels(draw_labels(&state.latents, &mut rng))?;
        // Cached quantities refer to the old labels. Redrawing the PM estimate
        // from scratch would bias the chain; the conditional construction
        // keeps it exact.
        state.invalidate_estimate();
        state.surr = None;
        if let GewekeTransition::Gibbs {
            scheme: Scheme::Pm, step, ..
        } = transition
        {
            pm_refresh_conditional(&mut state, &data, step, &mut rng, &mut counters)?;
        }
        if it >= config.burn_in && (it - config.burn_in + 1) % config.thin == 0 {
            record(&state, &mut successive);
        }
    }

    let quantities = names
        .into_iter()
        .enumerate()
        .filter(|(i, _)| *i >= free.len() || free[*i])
        .map(|(i, name)| {
            Ok(GewekeQuantity {
                name,
                ks: ks_two_sample(&marginal[i], &successive[i])?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GewekeReport {
        quantities,
        acceptance_rate: if proposed > 0 { accepted as f64 / proposed as f64 } else { 1.0 },
    })
}
