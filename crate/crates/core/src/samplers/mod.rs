//! MCMC transition operators and their Gibbs orchestration.

mod ellss;
mod gibbs;
mod proposal;
mod state;
mod steps;

pub use ellss::{ell_ss_step, ell_ss_step_with};
pub use gibbs::{
    chain_rng, gibbs_run, posterior_samples, run_chain, traces_to_csv, AbortRecord, ChainTrace, GibbsConfig, LatentSnapshot, Phase,
    TraceRecord,
};
pub use proposal::{adapt_proposal, ProposalConfig};
pub use state::{ChainState, LikelihoodHook, MarginalSource, Scheme, StepConfig, StepCounters, SurrCache, SurrSites};
pub use steps::{aa_mh_step, pm_mh_step, pm_refresh_conditional, sa_mh_step, surr_mh_step, surr_site_variances, SurrState};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::approx::ApproxMethod;
    use crate::gp::{CovarianceKind, Dataset, HyperPriors, Hyperparams, ParamPrior};
    use nalgebra::{DMatrix, DVector};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy(n: usize, seed: u64) -> Dataset {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random::<f64>() * 3.0]).collect();
        let labels: Vec<f64> = rows.iter().map(|r| if r[0] > 1.5 { 1.0 } else { -1.0 }).collect();
        Dataset::from_rows(&rows, &labels).unwrap()
    }

    fn cfg() -> StepConfig {
        StepConfig::new(CovarianceKind::Isotropic, HyperPriors::synthetic(1))
    }

    fn start(data: &Dataset) -> ChainState {
        let h = Hyperparams::isotropic(1.5, 0.8).unwrap();
        let f = DVector::from_fn(data.n(), |i, _| data.labels()[i] * 0.7);
        ChainState::new(data, h, CovarianceKind::Isotropic)
            .unwrap()
            .with_latents(f)
            .unwrap()
    }

    type Step = fn(&mut ChainState, &Dataset, &StepConfig, &ProposalConfig, &mut ChaCha8Rng, &mut StepCounters) -> crate::Result<bool>;

    #[test]
    fn forced_rejection_leaves_state_identical() {
        let data = toy(8, 1);
        let steps: [(Step, &str); 4] = [(pm_mh_step, "pm"), (sa_mh_step, "sa"), (aa_mh_step, "aa"), (surr_mh_step, "surr")];
        for (step, name) in steps {
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let mut c = cfg();
            let p = ProposalConfig::uniform(2, 0.3);
            let mut counters = StepCounters::default();
            let mut s = start(&data);
            // Fill lazily built caches first.
            c.forced_u = Some(1.0);
            step(&mut s, &data, &c, &p, &mut rng, &mut counters).unwrap();
            let before = s.clone();
            for _ in 0..5 {
                assert!(!step(&mut s, &data, &c, &p, &mut rng, &mut counters).unwrap(), "{name}");
                assert_eq!(s, before, "{name}");
            }
        }
    }

    #[test]
    fn unit_ratio_always_accepts() {
        let data = toy(6, 2);
        let mut c = cfg();
        c.priors = HyperPriors {
            sigma: ParamPrior::Fixed,
            lengthscale: ParamPrior::Fixed,
        };
        c.marginal = MarginalSource::Approximate;
        c.forced_u = Some(1.0 - 1e-12);
        let p = ProposalConfig::uniform(2, 0.3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut counters = StepCounters::default();
        let mut s = start(&data);
        for _ in 0..3 {
            assert!(pm_mh_step(&mut s, &data, &c, &p, &mut rng, &mut counters).unwrap());
        }
    }

    #[test]
    fn pm_incumbent_estimated_once() {
        let data = toy(10, 5);
        let mut c = cfg();
        c.approx_method = ApproxMethod::Laplace;
        c.n_imp = 4;
        let p = ProposalConfig::uniform(2, 0.4);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut counters = StepCounters::default();
        let mut s = start(&data);
        let steps = 40;
        for _ in 0..steps {
            let cached = s.cached_log_p_tilde;
            let accepted = pm_mh_step(&mut s, &data, &c, &p, &mut rng, &mut counters).unwrap();
            if !accepted && cached.is_some() {
                assert_eq!(s.cached_log_p_tilde, cached);
            }
        }
        // One evaluation for the initial incumbent plus one per proposal.
        assert_eq!(counters.evaluations, steps + 1 - counters.failures);
    }

    #[test]
    fn site_variances_positive_and_label_symmetric() {
        let v = DVector::from_vec(vec![0.1, 1.0, 5.0, 50.0]);
        let plus = DVector::from_element(4, 1.0);
        let minus = -&plus;
        for sites in [SurrSites::La, SurrSites::Ep] {
            let a = surr_site_variances(&v, &plus, sites);
            let b = surr_site_variances(&v, &minus, sites);
            assert!(a.iter().all(|s| *s > 0.0 && s.is_finite()));
            assert!((a - b).amax() < 1e-12);
        }
    }

    #[test]
    fn ep_site_variance_matches_moment_match() {
        // Site and prior precisions must add up to the tilted precision.
        let v = 2.0;
        let s = surr_site_variances(&DVector::from_element(1, v), &DVector::from_element(1, 1.0), SurrSites::Ep)[0];
        let post = 1.0 / (1.0 / v + 1.0 / s);
        let r = 2.0 / (2.0 * std::f64::consts::PI).sqrt();
        let vhat = v - v * v * r * r / (1.0 + v);
        assert!((post - vhat).abs() < 1e-12);
    }

    #[test]
    fn huge_site_variances_reduce_to_whitened_prior() {
        let data = toy(6, 7);
        let h = Hyperparams::isotropic(1.0, 1.0).unwrap();
        let km = crate::gp::build_kernel(data.inputs(), &h, CovarianceKind::Isotropic).unwrap();
        let cache = steps::surr_cache(km.matrix(), DVector::from_element(6, 1e6)).unwrap();
        let diff: DMatrix<f64> = &cache.chol_r - km.chol();
        assert!(diff.amax() < 1e-4, "{}", diff.amax());
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let f = DVector::from_fn(6, |i, _| 0.3 * i as f64 - 0.5);
        let ss = cache.draw_state(&f, &mut rng);
        let nu = km.latent_to_whitened(&f);
        assert!((&ss.whitened - &nu).amax() < 1e-2);
        assert!((cache.reconstruct(&ss) - &f).amax() < 1e-9);
    }

    #[test]
    fn ell_ss_moves_and_keeps_finite() {
        let data = toy(10, 9);
        let s = start(&data);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut f = s.latents.clone();
        for _ in 0..50 {
            let g = ell_ss_step(&f, &data, &s.cached_km, &mut rng);
            assert!(g != f);
            assert!(g.iter().all(|v| v.is_finite()));
            f = g;
        }
    }

    #[test]
    fn zero_iterations_gives_empty_trace() {
        let data = toy(5, 11);
        let mut g = GibbsConfig::new(Scheme::Aa, cfg(), Hyperparams::isotropic(1.0, 1.0).unwrap());
        g.iterations = 0;
        let t = run_chain(&data, &g, 0, 1).unwrap();
        assert!(t.records.is_empty());
        let names = t.psi_names.clone();
        let csv = traces_to_csv(&names, &[t]);
        assert_eq!(
            csv,
            "iteration,chain_id,psi_sigma,psi_tau,accepted,log_p_tilde,phase,cubic_ops,marginal\n"
        );
    }

    #[test]
    fn chains_are_deterministic_and_streams_differ() {
        let data = toy(8, 12);
        let mut g = GibbsConfig::new(Scheme::Pm, cfg(), Hyperparams::isotropic(1.0, 1.0).unwrap());
        g.iterations = 30;
        g.burn_in = 10;
        g.step.n_imp = 2;
        let a = gibbs_run(&data, &g, 2, 42).unwrap();
        let b = gibbs_run(&data, &g, 2, 42).unwrap();
        assert_eq!(a, b);
        assert_ne!(a[0].records, a[1].records);
    }

    #[test]
    fn warm_start_tags_and_switches_once() {
        let data = toy(8, 13);
        let mut g = GibbsConfig::new(Scheme::Pm, cfg(), Hyperparams::isotropic(1.0, 1.0).unwrap());
        g.iterations = 20;
        g.burn_in = 20;
        g.warm_start = true;
        g.step.n_imp = 2;
        let t = run_chain(&data, &g, 0, 3).unwrap();
        assert!(t
            .records
            .iter()
            .filter(|r| r.phase == Phase::Burnin)
            .all(|r| r.marginal == "approx"));
        assert!(t.sampling().all(|r| r.marginal == "pm"));
        // One evaluation at start, one at the switch, one per proposal.
        assert_eq!(t.counters.evaluations, 40 + 2 - t.counters.failures);
    }

    #[test]
    fn cubic_operation_accounting() {
        let data = toy(10, 14);
        for (scheme, expect) in [(Scheme::Aa, 1.0), (Scheme::Sa, 1.0)] {
            let mut g = GibbsConfig::new(scheme, cfg(), Hyperparams::isotropic(1.0, 1.0).unwrap());
            g.iterations = 20;
            let t = run_chain(&data, &g, 0, 3).unwrap();
            assert_eq!(t.mean_cubic_ops(), Some(expect));
        }
        let mut g = GibbsConfig::new(Scheme::Surr, cfg(), Hyperparams::isotropic(1.0, 1.0).unwrap());
        g.iterations = 50;
        let t = run_chain(&data, &g, 0, 3).unwrap();
        let ops = t.mean_cubic_ops().unwrap();
        assert!((3.0..=4.0).contains(&ops), "{ops}");
    }
}
