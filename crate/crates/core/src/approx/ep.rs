use nalgebra::{DMatrix, DVector};

use super::{check_sizes, probit_tilted_moments, ApproxConfig, ApproxMethod, GaussianApprox};
use crate::error::{Error, Result};
use crate::gp::linalg::{cholesky_with_jitter, solve_lower_mat};
use crate::gp::probit::log_norm_cdf;
use crate::gp::{Dataset, KernelMatrix};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Converged EP site approximations `Z̃_i N(f_i | μ̃_i, σ̃²_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EpSites {
    pub z_tilde: DVector<f64>,
    pub mu_tilde: DVector<f64>,
    pub sigma2_tilde: DVector<f64>,
    /// Site precisions `1/σ̃²_i` and precision-weighted means `μ̃_i/σ̃²_i`,
    /// the natural parameters EP actually iterates.
    pub tau_tilde: DVector<f64>,
    pub nu_tilde: DVector<f64>,
    /// Updates skipped because they would have produced a negative site
    /// variance or an improper cavity.
    pub skipped_updates: usize,
}

struct EpState {
    tau: DVector<f64>,
    nu: DVector<f64>,
    sigma: DMatrix<f64>,
    mu: DVector<f64>,
    skipped: usize,
}

impl EpState {
    fn fresh(k: &DMatrix<f64>) -> Self {
        let n = k.nrows();
        Self {
            tau: DVector::zeros(n),
            nu: DVector::zeros(n),
            sigma: k.clone(),
            mu: DVector::zeros(n),
            skipped: 0,
        }
    }

    /// One ascending pass over the sites with rank-one updates of Σ.
    fn sweep(&mut self, y: &DVector<f64>) {
        let n = y.len();
        for i in 0..n {
            let sii = self.sigma[(i, i)];
            let tau_c = 1.0 / sii - self.tau[i];
            let nu_c = self.mu[i] / sii - self.nu[i];
            if !(tau_c > 0.0) || !tau_c.is_finite() {
                self.skipped += 1;
                continue;
            }
            let m = match probit_tilted_moments(nu_c / tau_c, 1.0 / tau_c, y[i]) {
                Ok(m) => m,
                Err(_) => {
                    self.skipped += 1;
                    continue;
                }
            };
            let new_tau = 1.0 / m.var - tau_c;
            if !(new_tau >= 0.0) || !new_tau.is_finite() {
                self.skipped += 1;
                continue;
            }
            let delta = new_tau - self.tau[i];
            self.tau[i] = new_tau;
            self.nu[i] = m.mean / m.var - nu_c;

            let s_i = self.sigma.column(i).clone_owned();
            let coef = delta / (1.0 + delta * sii);
            self.sigma.ger(-coef, &s_i, &s_i, 1.0);
            self.mu = &self.sigma * &self.nu;
        }
    }

    /// Recomputes Σ = K − K S½ B⁻¹ S½ K from scratch to shed accumulated
    /// round-off; returns the factor of B.
    fn refresh(&mut self, k: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let n = k.nrows();
        let st = self.tau.map(f64::sqrt);
        let mut b = DMatrix::from_fn(n, n, |i, j| st[i] * k[(i, j)] * st[j]);
        for i in 0..n {
            b[(i, i)] += 1.0;
        }
        let (l, _) = cholesky_with_jitter(&b, 1.0)?;
        let stk = DMatrix::from_fn(n, n, |i, j| st[i] * k[(i, j)]);
        let v = solve_lower_mat(&l, &stk);
        self.sigma = k - v.transpose() * &v;
        self.mu = &self.sigma * &self.nu;
        Ok(l)
    }
}

/// O(n³) operations per sweep: the n rank-one updates together, the
/// factorization of B, the triangular solve and the product VᵀV.
const CUBIC_OPS_PER_SWEEP: u32 = 4;

/// Expectation propagation with sequential site updates in ascending order.
pub fn ep_approx(data: &Dataset, km: &KernelMatrix, config: &ApproxConfig) -> Result<(GaussianApprox, EpSites)> {
    check_sizes(data, km)?;
    let n = data.n();
    let y = data.labels();
    let k = km.matrix();
    let threshold = config.threshold(n);

    let mut st = EpState::fresh(k);
    let mut l_b = None;
    let mut last_change = f64::INFINITY;
    let mut sweeps = 0;
    let mut cubic_ops = 0u32;
    while sweeps < config.max_ep_sweeps {
        let mu_old = st.mu.clone();
        st.sweep(y);
        l_b = Some(st.refresh(k)?);
        sweeps += 1;
        cubic_ops += CUBIC_OPS_PER_SWEEP;
        last_change = (&st.mu - &mu_old).norm_squared();
        if !last_change.is_finite() {
            break;
        }
        if last_change < threshold {
            break;
        }
    }
    if !(last_change < threshold) {
        return Err(Error::Convergence {
            method: "ep",
            iterations: sweeps,
            last_change,
        });
    }
    let l_b = l_b.expect("at least one sweep ran");

    let (log_z, z_tilde) = evidence(y, &st, &l_b);
    let sites = EpSites {
        z_tilde,
        mu_tilde: DVector::from_fn(n, |i, _| if st.tau[i] > 0.0 { st.nu[i] / st.tau[i] } else { 0.0 }),
        sigma2_tilde: st.tau.map(|t| 1.0 / t),
        tau_tilde: st.tau.clone(),
        nu_tilde: st.nu.clone(),
        skipped_updates: st.skipped,
    };
    let q = GaussianApprox::from_site_precisions(st.mu.clone(), km, &st.tau, log_z, Some(ApproxMethod::Ep), sweeps, cubic_ops)?;
    Ok((q, sites))
}

/// EP approximation to `log p(y|θ)` and the per-site log normalizers.
fn evidence(y: &DVector<f64>, st: &EpState, l_b: &DMatrix<f64>) -> (f64, DVector<f64>) {
    let n = y.len();
    let mut log_z = -l_b.diagonal().iter().map(|v| v.ln()).sum::<f64>() + 0.5 * st.nu.dot(&(&st.sigma * &st.nu));
    let mut z_tilde = DVector::zeros(n);
    for i in 0..n {
        let sii = st.sigma[(i, i)];
        let tau_c = 1.0 / sii - st.tau[i];
        let nu_c = st.mu[i] / sii - st.nu[i];
        let (tt, tn) = (st.tau[i], st.nu[i]);
        let cav_mean = nu_c / tau_c;
        let cav_var = 1.0 / tau_c;
        let lz = log_norm_cdf(y[i] * cav_mean / (1.0 + cav_var).sqrt());
        log_z += lz;
        log_z += 0.5 * nu_c * ((tt / tau_c * nu_c - 2.0 * tn) / (tt + tau_c));
        log_z -= 0.5 * tn * tn / (tau_c + tt);
        log_z += 0.5 * (1.0 + tt / tau_c).ln();

        z_tilde[i] = if tt > 0.0 {
            let site_var = 1.0 / tt;
            let site_mean = tn / tt;
            let s = cav_var + site_var;
            lz + 0.5 * LN_2PI + 0.5 * s.ln() + (cav_mean - site_mean).powi(2) / (2.0 * s)
        } else {
            lz
        };
    }
    (log_z, z_tilde)
}

/// Squared change of the posterior mean produced by one extra sweep started
/// from converged sites; used to check the EP fixed point.
pub fn ep_sweep_change(data: &Dataset, km: &KernelMatrix, sites: &EpSites) -> Result<f64> {
    check_sizes(data, km)?;
    let k = km.matrix();
    let mut st = EpState::fresh(k);
    st.tau = sites.tau_tilde.clone();
    st.nu = sites.nu_tilde.clone();
    st.refresh(k)?;
    let before = st.mu.clone();
    st.sweep(data.labels());
    st.refresh(k)?;
    Ok((&st.mu - before).norm_squared())
}
