use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::approx::{ApproxConfig, ApproxMethod};
use crate::error::{Error, Result};
use crate::gp::{CovarianceKind, GammaPrior, HyperPriors, Hyperparams, ParamPrior};
use crate::samplers::{GibbsConfig, MarginalSource, ProposalConfig, Scheme, StepConfig, SurrSites};

/// Flat key/value experiment description. Every key has a default; a TOML
/// file sets any subset and command-line flags override the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scheme: Scheme,
    pub kind: CovarianceKind,
    pub approx: ApproxMethod,
    pub n_imp: usize,
    pub chains: usize,
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub latent_repeats: usize,
    pub theta_repeats: usize,
    /// Master seed; chain `c` uses stream `c` of it.
    pub seed: u64,
    /// Optional per-chain master seeds, one per chain, overriding `seed`.
    pub seeds: Vec<u64>,
    pub adapt: bool,
    pub adaptation_window: usize,
    pub target_acceptance: f64,
    pub initial_step: f64,
    pub warm_start: bool,
    pub init_from_prior: bool,
    pub initial_sigma: f64,
    pub initial_tau: f64,
    pub fix_sigma: bool,
    pub sigma_shape: f64,
    pub sigma_rate: f64,
    pub tau_shape: f64,
    /// Defaults to `1/√d` when absent.
    pub tau_rate: Option<f64>,
    pub surr_sites: SurrSites,
    pub refresh_latents: bool,
    pub record_latents: bool,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scheme: Scheme::Pm,
            kind: CovarianceKind::Isotropic,
            approx: ApproxMethod::Ep,
            n_imp: 64,
            chains: 10,
            iterations: 10_000,
            burn_in: 5000,
            thin: 1,
            latent_repeats: 1,
            theta_repeats: 1,
            seed: 1,
            seeds: Vec::new(),
            adapt: true,
            adaptation_window: 50,
            target_acceptance: 0.25,
            initial_step: 0.5,
            warm_start: false,
            init_from_prior: true,
            initial_sigma: 1.0,
            initial_tau: 1.0,
            fix_sigma: false,
            sigma_shape: 1.2,
            sigma_rate: 0.2,
            tau_shape: 1.0,
            tau_rate: None,
            surr_sites: SurrSites::La,
            refresh_latents: true,
            record_latents: false,
            output_dir: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(vec![e.message().to_string()]))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable")
    }

    /// Checks every invariant and reports all violations at once.
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        let mut need = |ok: bool, msg: String| {
            if !ok {
                bad.push(msg);
            }
        };
        need(self.n_imp >= 1, format!("n_imp must be ≥ 1 (got {})", self.n_imp));
        need(self.chains >= 1, format!("chains must be ≥ 1 (got {})", self.chains));
        need(self.thin >= 1, format!("thin must be ≥ 1 (got {})", self.thin));
        need(
            self.theta_repeats >= 1,
            format!("theta_repeats must be ≥ 1 (got {})", self.theta_repeats),
        );
        need(
            self.adaptation_window >= 1,
            format!("adaptation_window must be ≥ 1 (got {})", self.adaptation_window),
        );
        need(
            self.target_acceptance > 0.0 && self.target_acceptance < 1.0,
            format!("target_acceptance must lie in (0, 1) (got {})", self.target_acceptance),
        );
        need(
            self.initial_step > 0.0 && self.initial_step.is_finite(),
            format!("initial_step must be positive (got {})", self.initial_step),
        );
        for (name, v) in [
            ("initial_sigma", self.initial_sigma),
            ("initial_tau", self.initial_tau),
            ("sigma_shape", self.sigma_shape),
            ("sigma_rate", self.sigma_rate),
            ("tau_shape", self.tau_shape),
        ] {
            need(v > 0.0 && v.is_finite(), format!("{name} must be positive and finite (got {v})"));
        }
        if let Some(r) = self.tau_rate {
            need(r > 0.0 && r.is_finite(), format!("tau_rate must be positive and finite (got {r})"));
        }
        need(
            self.seeds.is_empty() || self.seeds.len() == self.chains,
            format!("seeds lists {} entries for {} chains", self.seeds.len(), self.chains),
        );
        if let SurrSites::Fixed(s) = self.surr_sites {
            need(s > 0.0, format!("fixed surrogate site variance must be positive (got {s})"));
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad))
        }
    }

    pub fn priors(&self, d: usize) -> HyperPriors {
        HyperPriors {
            sigma: if self.fix_sigma {
                ParamPrior::Fixed
            } else {
                ParamPrior::Gamma(GammaPrior {
                    shape: self.sigma_shape,
                    rate: self.sigma_rate,
                })
            },
            lengthscale: ParamPrior::Gamma(GammaPrior {
                shape: self.tau_shape,
                rate: self.tau_rate.unwrap_or(1.0 / (d as f64).sqrt()),
            }),
        }
    }

    pub fn initial_hyper(&self, d: usize) -> Result<Hyperparams> {
        let m = self.kind.num_lengthscales(d);
        Hyperparams::from_natural(self.initial_sigma, &vec![self.initial_tau; m])
    }

    /// Per-chain master seed: `seeds[c]` when given, else `seed`.
    pub fn chain_seed(&self, chain: usize) -> u64 {
        self.seeds.get(chain).copied().unwrap_or(self.seed)
    }

    /// Sampler settings for a dataset with `d` covariates.
    pub fn gibbs(&self, d: usize) -> Result<GibbsConfig> {
        self.validate()?;
        let initial = self.initial_hyper(d)?;
        let mut step = StepConfig::new(self.kind, self.priors(d));
        step.approx_method = self.approx;
        step.approx = ApproxConfig::default();
        step.n_imp = self.n_imp;
        step.marginal = MarginalSource::Estimate;
        step.surr_sites = self.surr_sites;
        step.refresh_latents = self.refresh_latents;
        let mut g = GibbsConfig::new(self.scheme, step, initial.clone());
        g.proposal = ProposalConfig::new(
            vec![self.initial_step; initial.dim()],
            self.target_acceptance,
            self.adaptation_window,
        )?;
        g.iterations = self.iterations;
        g.burn_in = self.burn_in;
        g.thin = self.thin;
        g.latent_repeats = self.latent_repeats;
        g.theta_repeats = self.theta_repeats;
        g.adapt = self.adapt;
        g.warm_start = self.warm_start;
        g.record_latents = self.record_latents;
        g.init_from_prior = self.init_from_prior;
        Ok(g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let c = ExperimentConfig::default();
        c.validate().unwrap();
        let back = ExperimentConfig::from_toml_str(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let c = ExperimentConfig::from_toml_str("# comment\nscheme = \"AA\"\nchains = 3\n").unwrap();
        assert_eq!(c.scheme, Scheme::Aa);
        assert_eq!(c.chains, 3);
        assert_eq!(c.n_imp, 64);
    }

    #[test]
    fn every_violation_is_listed() {
        let c = ExperimentConfig {
            chains: 0,
            thin: 0,
            target_acceptance: 1.5,
            sigma_rate: -1.0,
            seeds: vec![1, 2],
            ..Default::default()
        };
        match c.validate() {
            Err(Error::Config(v)) => assert_eq!(v.len(), 5, "{v:?}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(ExperimentConfig::from_toml_str("chians = 3\n"), Err(Error::Config(_))));
    }

    #[test]
    fn prior_rate_defaults_to_inverse_sqrt_d() {
        let p = ExperimentConfig::default().priors(4);
        assert_eq!(p.lengthscale, ParamPrior::Gamma(GammaPrior { shape: 1.0, rate: 0.5 }));
    }
}
