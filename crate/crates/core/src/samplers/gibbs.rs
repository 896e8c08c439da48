use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ellss::ell_ss_step_with;
use super::proposal::{adapt_proposal, ProposalConfig};
use super::state::{ChainState, MarginalSource, Scheme, StepConfig, StepCounters};
use super::steps::{aa_mh_step, pm_mh_step, sa_mh_step, surr_mh_step};
use crate::error::{Error, Result};
use crate::gp::{Dataset, Hyperparams};

/// Run-length and bookkeeping settings for one Gibbs run.
#[derive(Debug, Clone, PartialEq)]
pub struct GibbsConfig {
    pub scheme: Scheme,
    pub step: StepConfig,
    pub proposal: ProposalConfig,
    /// Iterations after burn-in.
    pub iterations: usize,
    pub burn_in: usize,
    /// Keep every `thin`-th iteration in the trace.
    pub thin: usize,
    /// ELL-SS updates of `f` per iteration.
    pub latent_repeats: usize,
    /// Back-to-back θ-updates per iteration.
    pub theta_repeats: usize,
    pub adapt: bool,
    /// PM only: approximate marginal during burn-in, estimate afterwards.
    pub warm_start: bool,
    pub record_latents: bool,
    /// Starting hyper-parameters; free entries are redrawn from the prior
    /// when `init_from_prior` is set.
    pub initial: Hyperparams,
    pub init_from_prior: bool,
}

impl GibbsConfig {
    pub fn new(scheme: Scheme, step: StepConfig, initial: Hyperparams) -> Self {
        let proposal = ProposalConfig::uniform(initial.dim(), 0.5);
        Self {
            scheme,
            step,
            proposal,
            iterations: 1000,
            burn_in: 0,
            thin: 1,
            latent_repeats: if scheme == Scheme::Pm { 1 } else { 10 },
            theta_repeats: 1,
            adapt: true,
            warm_start: false,
            record_latents: false,
            initial,
            init_from_prior: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.proposal.validate()?;
        if self.proposal.step_sizes.len() != self.initial.dim() {
            return Err(Error::InvalidArgument(
                "proposal dimension differs from hyper-parameter dimension".into(),
            ));
        }
        if self.thin == 0 || self.theta_repeats == 0 {
            return Err(Error::InvalidArgument("thin and theta_repeats must be at least 1".into()));
        }
        if self.step.n_imp == 0 {
            return Err(Error::InvalidArgument("n_imp must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Burnin,
    Sampling,
}

impl Phase {
    pub fn tag(self) -> &'static str {
        match self {
            Phase::Burnin => "burnin",
            Phase::Sampling => "sampling",
        }
    }
}

/// One recorded iteration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRecord {
    pub iteration: usize,
    pub psi: Vec<f64>,
    /// Accepted θ-proposals within this iteration (out of `theta_repeats`).
    pub accepted: u32,
    pub proposals: u32,
    pub log_p_tilde: Option<f64>,
    pub phase: Phase,
    /// `"approx"` or `"pm"` for PM chains, `"none"` otherwise.
    pub marginal: &'static str,
    /// O(n³) operations spent in this iteration.
    pub cubic_ops: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatentSnapshot {
    pub iteration: usize,
    pub hyper: Hyperparams,
    pub latents: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbortRecord {
    pub iteration: usize,
    pub message: String,
}

/// Output of one chain.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainTrace {
    pub chain_id: usize,
    pub scheme: Scheme,
    pub psi_names: Vec<String>,
    pub records: Vec<TraceRecord>,
    pub latents: Vec<LatentSnapshot>,
    pub final_proposal: ProposalConfig,
    pub counters: StepCounters,
    pub aborted: Option<AbortRecord>,
}

impl ChainTrace {
    /// Post-burn-in records only.
    pub fn sampling(&self) -> impl Iterator<Item = &TraceRecord> {
        self.records.iter().filter(|r| r.phase == Phase::Sampling)
    }

    /// Post-burn-in ψ values, one vector per coordinate.
    pub fn psi_columns(&self) -> Vec<Vec<f64>> {
        let mut cols = vec![Vec::new(); self.psi_names.len()];
        for r in self.sampling() {
            for (c, v) in cols.iter_mut().zip(&r.psi) {
                c.push(*v);
            }
        }
        cols
    }

    /// Post-burn-in acceptance rate of θ-proposals.
    pub fn acceptance_rate(&self) -> Option<f64> {
        let (a, p) = self
            .sampling()
            .fold((0u64, 0u64), |(a, p), r| (a + r.accepted as u64, p + r.proposals as u64));
        (p > 0).then(|| a as f64 / p as f64)
    }

    /// Mean O(n³) operations per post-burn-in iteration.
    pub fn mean_cubic_ops(&self) -> Option<f64> {
        let v: Vec<u64> = self.sampling().map(|r| r.cubic_ops).collect();
        (!v.is_empty()).then(|| v.iter().sum::<u64>() as f64 / v.len() as f64)
    }
}

/// The chain's RNG: master seed with the chain id as stream.
pub fn chain_rng(master_seed: u64, chain_id: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(chain_id as u64);
    rng
}

fn theta_step(
    scheme: Scheme,
    state: &mut ChainState,
    data: &Dataset,
    cfg: &StepConfig,
    proposal: &ProposalConfig,
    rng: &mut ChaCha8Rng,
    counters: &mut StepCounters,
) -> Result<bool> {
    match scheme {
        Scheme::Pm => pm_mh_step(state, data, cfg, proposal, rng, counters),
        Scheme::Sa => sa_mh_step(state, data, cfg, proposal, rng, counters),
        Scheme::Aa => aa_mh_step(state, data, cfg, proposal, rng, counters),
        Scheme::Surr => surr_mh_step(state, data, cfg, proposal, rng, counters),
    }
}

fn initial_state(data: &Dataset, config: &GibbsConfig, rng: &mut ChaCha8Rng) -> Result<ChainState> {
    let mut last = None;
    for _ in 0..100 {
        let h = if config.init_from_prior {
            config.step.priors.sample(&config.initial, rng)
        } else {
            config.initial.clone()
        };
        match ChainState::new(data, h, config.step.kind) {
            Ok(s) => return Ok(s),
            Err(e) => last = Some(e),
        }
        if !config.init_from_prior {
            break;
        }
    }
    Err(last.unwrap_or_else(|| Error::Undefined("no initial state".into())))
}

/// Runs one chain to completion (or abort) on its own stream.
pub fn run_chain(data: &Dataset, config: &GibbsConfig, chain_id: usize, master_seed: u64) -> Result<ChainTrace> {
    config.validate()?;
    config.initial.check_kind(config.step.kind, data.d())?;
    let mut rng = chain_rng(master_seed, chain_id);
    let mut trace = ChainTrace {
        chain_id,
        scheme: config.scheme,
        psi_names: config.initial.psi_names(),
        records: Vec::new(),
        latents: Vec::new(),
        final_proposal: config.proposal.clone(),
        counters: StepCounters::default(),
        aborted: None,
    };
    let mut state = match initial_state(data, config, &mut rng) {
        Ok(s) => s,
        Err(e) => {
            trace.aborted = Some(AbortRecord {
                iteration: 0,
                message: e.to_string(),
            });
            return Ok(trace);
        }
    };
    let pm = config.scheme == Scheme::Pm;
    let mut step = config.step.clone();
    let warm = pm && config.warm_start && config.burn_in > 0;
    if warm {
        step.marginal = MarginalSource::Approximate;
    }
    let mut proposal = config.proposal.clone();
    let mut window: Vec<bool> = Vec::with_capacity(proposal.adaptation_window);
    let y = data.labels().clone();
    let lik = step.likelihood;
    let total = config.burn_in + config.iterations;

    for it in 0..total {
        let phase = if it < config.burn_in { Phase::Burnin } else { Phase::Sampling };
        if warm && it == config.burn_in {
            step.marginal = config.step.marginal;
            state.invalidate_estimate();
        }
        let before = trace.counters.cubic_ops;
        let mut accepted = 0u32;
        for _ in 0..config.theta_repeats {
            match theta_step(config.scheme, &mut state, data, &step, &proposal, &mut rng, &mut trace.counters) {
                Ok(a) => {
                    accepted += a as u32;
                    if phase == Phase::Burnin && config.adapt {
                        window.push(a);
                        if window.len() >= proposal.adaptation_window {
                            proposal = adapt_proposal(&window, &proposal);
                            window.clear();
                        }
                    }
                }
                Err(e) => {
                    trace.aborted = Some(AbortRecord {
                        iteration: it,
                        message: e.to_string(),
                    });
                    trace.final_proposal = proposal;
                    return Ok(trace);
                }
            }
        }
        for _ in 0..config.latent_repeats {
            state.latents = ell_ss_step_with(&state.latents, &state.cached_km, |f| lik.eval(&y, f), &mut rng);
        }
        if !state.latents.iter().all(|v| v.is_finite()) {
            trace.aborted = Some(AbortRecord {
                iteration: it,
                message: "non-finite latent values".into(),
            });
            break;
        }
        if it % config.thin == 0 {
            trace.records.push(TraceRecord {
                iteration: it,
                psi: state.hyper.psi(),
                accepted,
                proposals: config.theta_repeats as u32,
                log_p_tilde: if pm { state.cached_log_p_tilde } else { None },
                phase,
                marginal: match (pm, step.marginal) {
                    (false, _) => "none",
                    (true, MarginalSource::Approximate) => "approx",
                    (true, MarginalSource::Estimate) => "pm",
                },
                cubic_ops: trace.counters.cubic_ops - before,
            });
            if config.record_latents && phase == Phase::Sampling {
                trace.latents.push(LatentSnapshot {
                    iteration: it,
                    hyper: state.hyper.clone(),
                    latents: state.latents.iter().copied().collect(),
                });
            }
        }
    }
    trace.final_proposal = proposal;
    Ok(trace)
}

/// Runs `n_chains` independent chains in parallel; chain `c` uses stream `c`
/// of `master_seed`.
pub fn gibbs_run(data: &Dataset, config: &GibbsConfig, n_chains: usize, master_seed: u64) -> Result<Vec<ChainTrace>> {
    config.validate()?;
    (0..n_chains)
        .into_par_iter()
        .map(|c| run_chain(data, config, c, master_seed))
        .collect()
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

/// CSV for any number of chains sharing the same ψ layout.
pub fn traces_to_csv(psi_names: &[String], traces: &[ChainTrace]) -> String {
    let mut out = String::from("iteration,chain_id,");
    for n in psi_names {
        out.push_str(n);
        out.push(',');
    }
    out.push_str("accepted,log_p_tilde,phase,cubic_ops,marginal\n");
    for t in traces {
        for r in &t.records {
            out.push_str(&format!("{},{},", r.iteration, t.chain_id));
            for v in &r.psi {
                out.push_str(&format!("{v},"));
            }
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.accepted,
                fmt_opt(r.log_p_tilde),
                r.phase.tag(),
                r.cubic_ops,
                r.marginal
            ));
        }
    }
    out
}

/// Latent snapshots flattened for prediction: one `(f, θ)` pair per record.
pub fn posterior_samples(traces: &[ChainTrace]) -> Vec<(DVector<f64>, Hyperparams)> {
    traces
        .iter()
        .flat_map(|t| t.latents.iter())
        .map(|s| (DVector::from_column_slice(&s.latents), s.hyper.clone()))
        .collect()
}
