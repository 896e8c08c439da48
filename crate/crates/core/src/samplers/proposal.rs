use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Gaussian random walk on ψ with burn-in step-size adaptation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalConfig {
    pub step_sizes: Vec<f64>,
    pub target_acceptance: f64,
    /// Proposals per adaptation window.
    pub adaptation_window: usize,
    /// Rates within `target ± band` leave the step sizes alone.
    pub band: f64,
    /// Windows processed so far; the gain decays with it.
    #[serde(default)]
    pub windows_seen: usize,
}

impl ProposalConfig {
    pub fn new(step_sizes: Vec<f64>, target_acceptance: f64, adaptation_window: usize) -> Result<Self> {
        let c = Self {
            step_sizes,
            target_acceptance,
            adaptation_window,
            band: 0.05,
            windows_seen: 0,
        };
        c.validate()?;
        Ok(c)
    }

    /// Same step size in every coordinate, 25% target, windows of 50.
    pub fn uniform(dim: usize, step: f64) -> Self {
        Self {
            step_sizes: vec![step; dim],
            target_acceptance: 0.25,
            adaptation_window: 50,
            band: 0.05,
            windows_seen: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.step_sizes.is_empty() || !self.step_sizes.iter().all(|s| *s > 0.0 && s.is_finite()) {
            return Err(Error::InvalidArgument("step sizes must be positive and finite".into()));
        }
        if !(self.target_acceptance > 0.0 && self.target_acceptance < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "target acceptance {} outside (0, 1)",
                self.target_acceptance
            )));
        }
        if self.adaptation_window == 0 {
            return Err(Error::InvalidArgument("adaptation window must be at least 1".into()));
        }
        if !(self.band >= 0.0) {
            return Err(Error::InvalidArgument("band must be non-negative".into()));
        }
        Ok(())
    }

    /// `ψ'_j = ψ_j + s_j ε_j` on the coordinates flagged free.
    pub fn propose<R: Rng + ?Sized>(&self, psi: &[f64], free: &[bool], rng: &mut R) -> Vec<f64> {
        psi.iter()
            .zip(free)
            .zip(&self.step_sizes)
            .map(|((&p, &is_free), &s)| {
                if is_free {
                    let e: f64 = rng.sample(StandardNormal);
                    p + s * e
                } else {
                    p
                }
            })
            .collect()
    }
}

/// One adaptation window: scales every step size by
/// `exp(g_k (rate − target))` when the window's rate leaves the band, with
/// `g_k = 4 / √(k + 1)` decaying over windows.
pub fn adapt_proposal(history: &[bool], config: &ProposalConfig) -> ProposalConfig {
    let mut next = config.clone();
    next.windows_seen += 1;
    if history.is_empty() {
        return next;
    }
    let rate = history.iter().filter(|a| **a).count() as f64 / history.len() as f64;
    let off = rate - config.target_acceptance;
    if off.abs() <= config.band {
        return next;
    }
    let gain = 4.0 / ((config.windows_seen + 1) as f64).sqrt();
    let factor = (gain * off).exp();
    for s in &mut next.step_sizes {
        *s *= factor;
    }
    next
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn at_target_unchanged() {
        let c = ProposalConfig::uniform(2, 0.7);
        let h: Vec<bool> = (0..100).map(|i| i % 4 == 0).collect();
        assert_eq!(adapt_proposal(&h, &c).step_sizes, c.step_sizes);
    }

    #[test]
    fn all_reject_shrinks_all_accept_grows() {
        let c = ProposalConfig::uniform(2, 0.7);
        let down = adapt_proposal(&[false; 50], &c);
        let up = adapt_proposal(&[true; 50], &c);
        assert!(down.step_sizes.iter().all(|&s| s < 0.7));
        assert!(up.step_sizes.iter().all(|&s| s > 0.7));
        assert_eq!(down.windows_seen, 1);
    }

    #[test]
    fn fixed_coordinates_not_moved() {
        let c = ProposalConfig::uniform(3, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = c.propose(&[0.1, 0.2, 0.3], &[false, true, true], &mut rng);
        assert_eq!(p[0], 0.1);
        assert_ne!(p[1], 0.2);
    }

    #[test]
    fn validation() {
        assert!(ProposalConfig::new(vec![0.0], 0.25, 10).is_err());
        assert!(ProposalConfig::new(vec![1.0], 1.0, 10).is_err());
        assert!(ProposalConfig::new(vec![1.0], 0.25, 0).is_err());
        assert!(ProposalConfig::new(vec![1.0], 0.25, 10).is_ok());
    }
}
