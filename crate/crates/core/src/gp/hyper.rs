use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovarianceKind {
    /// One length-scale shared by every covariate.
    Isotropic,
    /// Automatic relevance determination: one length-scale per covariate.
    Ard,
}

impl CovarianceKind {
    pub fn num_lengthscales(self, d: usize) -> usize {
        match self {
            CovarianceKind::Isotropic => 1,
            CovarianceKind::Ard => d,
        }
    }
}

impl std::str::FromStr for CovarianceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "isotropic" | "iso" => Ok(CovarianceKind::Isotropic),
            "ard" => Ok(CovarianceKind::Ard),
            other => Err(Error::InvalidArgument(format!("unknown covariance kind '{other}'"))),
        }
    }
}

/// Covariance hyper-parameters, stored in log space.
///
/// `log_sigma` is the log of the marginal prior variance σ of each latent;
/// `log_lengthscales` holds log τ (one entry for isotropic, `d` for ARD).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub log_sigma: f64,
    pub log_lengthscales: Vec<f64>,
}

impl Hyperparams {
    pub fn new(log_sigma: f64, log_lengthscales: Vec<f64>) -> Result<Self> {
        let h = Self {
            log_sigma,
            log_lengthscales,
        };
        if h.log_lengthscales.is_empty() {
            return Err(Error::InvalidArgument("at least one length-scale required".into()));
        }
        if !h.psi().iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument("hyper-parameters must be finite".into()));
        }
        Ok(h)
    }

    /// From natural-scale σ and τ values.
    pub fn from_natural(sigma: f64, lengthscales: &[f64]) -> Result<Self> {
        if sigma <= 0.0 || lengthscales.iter().any(|&t| t <= 0.0) {
            return Err(Error::Domain("σ and τ must be strictly positive".into()));
        }
        Self::new(sigma.ln(), lengthscales.iter().map(|t| t.ln()).collect())
    }

    pub fn isotropic(sigma: f64, tau: f64) -> Result<Self> {
        Self::from_natural(sigma, &[tau])
    }

    pub fn sigma(&self) -> f64 {
        self.log_sigma.exp()
    }

    pub fn lengthscales(&self) -> Vec<f64> {
        self.log_lengthscales.iter().map(|v| v.exp()).collect()
    }

    /// Flattened ψ vector: `[ψ_σ, ψ_τ1, ..., ψ_τk]`.
    pub fn psi(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(1 + self.log_lengthscales.len());
        v.push(self.log_sigma);
        v.extend_from_slice(&self.log_lengthscales);
        v
    }

    pub fn from_psi(psi: &[f64]) -> Result<Self> {
        match psi.split_first() {
            Some((&s, rest)) => Self::new(s, rest.to_vec()),
            None => Err(Error::InvalidArgument("empty ψ vector".into())),
        }
    }

    pub fn dim(&self) -> usize {
        1 + self.log_lengthscales.len()
    }

    /// Column names matching [`Hyperparams::psi`].
    pub fn psi_names(&self) -> Vec<String> {
        let mut names = vec!["psi_sigma".to_string()];
        if self.log_lengthscales.len() == 1 {
            names.push("psi_tau".into());
        } else {
            names.extend((1..=self.log_lengthscales.len()).map(|k| format!("psi_tau{k}")));
        }
        names
    }

    pub fn check_kind(&self, kind: CovarianceKind, d: usize) -> Result<()> {
        let want = kind.num_lengthscales(d);
        if self.log_lengthscales.len() != want {
            return Err(Error::InvalidArgument(format!(
                "{kind:?} covariance over {d} covariates needs {want} length-scales, got {}",
                self.log_lengthscales.len()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psi_round_trip_and_names() {
        let h = Hyperparams::from_natural(2.08, &[0.35, 1.0]).unwrap();
        assert!((h.sigma() - 2.08).abs() < 1e-12);
        assert_eq!(Hyperparams::from_psi(&h.psi()).unwrap(), h);
        assert_eq!(h.psi_names(), ["psi_sigma", "psi_tau1", "psi_tau2"]);
        assert!(h.check_kind(CovarianceKind::Ard, 2).is_ok());
        assert!(h.check_kind(CovarianceKind::Isotropic, 2).is_err());
    }

    #[test]
    fn rejects_non_positive_and_non_finite() {
        assert!(Hyperparams::isotropic(0.0, 1.0).is_err());
        assert!(Hyperparams::new(f64::NAN, vec![0.0]).is_err());
        assert!(Hyperparams::new(0.0, vec![]).is_err());
    }
}
