use crate::error::{Error, Result};

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Effective sample size `N / (1 + 2 Σ ρ_k)` with the initial monotone
/// sequence truncation on sums of adjacent autocovariance pairs. Capped at N.
pub fn effective_sample_size(trace: &[f64]) -> Result<f64> {
    let n = trace.len();
    if n < 10 {
        return Err(Error::InvalidArgument(format!("trace of length {n} is too short (need 10)")));
    }
    let m = mean(trace);
    let c: Vec<f64> = trace.iter().map(|v| v - m).collect();
    let autocov = |lag: usize| c[..n - lag].iter().zip(&c[lag..]).map(|(a, b)| a * b).sum::<f64>() / n as f64;
    let g0 = autocov(0);
    if !(g0 > 0.0) || !g0.is_finite() {
        return Err(Error::Undefined("trace has zero variance".into()));
    }
    let mut sum = 0.0;
    let mut prev = f64::INFINITY;
    let mut k = 0;
    while 2 * k + 1 < n {
        let pair = autocov(2 * k) + autocov(2 * k + 1);
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(prev);
        sum += pair;
        prev = pair;
        k += 1;
    }
    // Σ pairs = γ0 + 2 Σ_{k≥1} γk (+ trailing odd term), so τ = 2 Σ/γ0 − 1.
    let tau = (2.0 * sum / g0 - 1.0).max(1.0 / n as f64);
    Ok((n as f64 / tau).min(n as f64))
}

/// Classic between/within potential scale reduction factor.
pub fn psrf(chains: &[Vec<f64>]) -> Result<f64> {
    let m = chains.len();
    if m < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 chains, got {m}")));
    }
    let n = chains[0].len();
    if n < 10 || chains.iter().any(|c| c.len() != n) {
        return Err(Error::InvalidArgument("chains must have equal length of at least 10".into()));
    }
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let grand = mean(&means);
    let b = n as f64 / (m - 1) as f64 * means.iter().map(|v| (v - grand).powi(2)).sum::<f64>();
    let w = chains
        .iter()
        .zip(&means)
        .map(|(c, mu)| c.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (n - 1) as f64)
        .sum::<f64>()
        / m as f64;
    if !(w > 0.0) {
        return Err(Error::Undefined("within-chain variance is zero".into()));
    }
    let nf = n as f64;
    let v = (nf - 1.0) / nf * w + (1.0 + 1.0 / m as f64) * b / nf;
    Ok((v / w).sqrt())
}

pub fn acceptance_rate(flags: &[bool]) -> Result<f64> {
    if flags.is_empty() {
        return Err(Error::InvalidArgument("empty acceptance record".into()));
    }
    Ok(flags.iter().filter(|a| **a).count() as f64 / flags.len() as f64)
}

/// Kolmogorov survival function `P(K > λ)`.
fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut s = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let t = (-2.0 * kf * kf * lambda * lambda).exp();
        s += if k % 2 == 1 { t } else { -t };
        if t < 1e-17 {
            break;
        }
    }
    (2.0 * s).clamp(0.0, 1.0)
}

fn ks_p_value(d: f64, n_eff: f64) -> f64 {
    let sq = n_eff.sqrt();
    kolmogorov_sf((sq + 0.12 + 0.11 / sq) * d)
}

/// Statistic and asymptotic p-value of a Kolmogorov–Smirnov test.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

pub fn ks_one_sample(sample: &[f64], cdf: impl Fn(f64) -> f64) -> Result<KsResult> {
    if sample.is_empty() {
        return Err(Error::InvalidArgument("empty sample".into()));
    }
    let mut s = sample.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    let d = s
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max);
    Ok(KsResult {
        statistic: d,
        p_value: ks_p_value(d, n),
    })
}

pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidArgument("empty sample".into()));
    }
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (n, m) = (x.len(), y.len());
    let (mut i, mut j, mut d) = (0, 0, 0.0_f64);
    while i < n && j < m {
        let v = x[i].min(y[j]);
        while i < n && x[i] <= v {
            i += 1;
        }
        while j < m && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let ne = (n * m) as f64 / (n + m) as f64;
    Ok(KsResult {
        statistic: d,
        p_value: ks_p_value(d, ne),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::probit::norm_cdf;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn normals(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.sample(StandardNormal)).collect()
    }

    fn ar1(n: usize, phi: f64, seed: u64) -> Vec<f64> {
        let e = normals(n, seed);
        let mut x = vec![0.0; n];
        x[0] = e[0] / (1.0 - phi * phi).sqrt();
        for t in 1..n {
            x[t] = phi * x[t - 1] + e[t];
        }
        x
    }

    #[test]
    fn ess_iid() {
        let n = 10_000;
        let e = effective_sample_size(&normals(n, 1)).unwrap();
        assert!(e >= 0.9 * n as f64 && e <= 1.1 * n as f64, "{e}");
    }

    #[test]
    fn ess_ar1() {
        let n = 100_000;
        let e = effective_sample_size(&ar1(n, 0.9, 2)).unwrap();
        let expect = n as f64 * 0.1 / 1.9;
        assert!((e / expect - 1.0).abs() < 0.2, "{e} vs {expect}");
    }

    #[test]
    fn ess_duplicated_entries() {
        // Repeating every value doubles the length but not the information.
        let x = normals(5000, 3);
        let iid = effective_sample_size(&x).unwrap();
        let dup: Vec<f64> = x.iter().flat_map(|v| [*v, *v]).collect();
        let e = effective_sample_size(&dup).unwrap();
        assert!((e / iid - 1.0).abs() < 0.15, "{e} vs {iid}");
        assert!(e < 0.55 * dup.len() as f64);
    }

    #[test]
    fn ess_errors() {
        assert!(matches!(effective_sample_size(&[1.0; 50]), Err(Error::Undefined(_))));
        assert!(effective_sample_size(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn psrf_examples() {
        let chains: Vec<Vec<f64>> = (0..4).map(|s| normals(10_000, 10 + s)).collect();
        assert!(psrf(&chains).unwrap() < 1.05);
        let a = normals(1000, 20);
        let b: Vec<f64> = normals(1000, 21).iter().map(|v| v + 10.0).collect();
        assert!(psrf(&[a.clone(), b]).unwrap() > 3.0);
        let same = psrf(&[a.clone(), a.clone(), a.clone()]).unwrap();
        assert!((same - 1.0).abs() < 1e-3);
        assert!(psrf(&[a]).is_err());
    }

    #[test]
    fn acceptance_extremes() {
        assert_eq!(acceptance_rate(&[true; 5]).unwrap(), 1.0);
        assert_eq!(acceptance_rate(&[false; 5]).unwrap(), 0.0);
        assert!(acceptance_rate(&[]).is_err());
    }

    #[test]
    fn ks_behaviour() {
        let x = normals(2000, 30);
        assert!(ks_one_sample(&x, norm_cdf).unwrap().p_value > 0.01);
        let shifted: Vec<f64> = x.iter().map(|v| v + 0.3).collect();
        assert!(ks_one_sample(&shifted, norm_cdf).unwrap().p_value < 1e-6);
        let y = normals(3000, 31);
        assert!(ks_two_sample(&x, &y).unwrap().p_value > 0.01);
        assert!(ks_two_sample(&shifted, &y).unwrap().p_value < 1e-6);
        let r = ks_two_sample(&[1.0, 2.0], &[1.0, 2.0]).unwrap();
        assert_eq!(r.statistic, 0.0);
    }

    #[test]
    fn ks_null_p_values_roughly_uniform() {
        let mut small = 0;
        for s in 0..200 {
            let p = ks_two_sample(&normals(300, 100 + s), &normals(300, 1000 + s)).unwrap().p_value;
            if p < 0.1 {
                small += 1;
            }
        }
        assert!((8..=35).contains(&small), "{small}");
    }

    proptest! {
        #[test]
        fn ess_affine_invariant(a in 0.1f64..10.0, b in -5.0f64..5.0, seed in 0u64..50) {
            let x = ar1(500, 0.5, seed);
            let y: Vec<f64> = x.iter().map(|v| a * v + b).collect();
            let (ex, ey) = (effective_sample_size(&x).unwrap(), effective_sample_size(&y).unwrap());
            prop_assert!((ex - ey).abs() < 1e-6 * ex);
        }

        #[test]
        fn psrf_affine_invariant(a in 0.1f64..10.0, b in -5.0f64..5.0, seed in 0u64..50) {
            let chains: Vec<Vec<f64>> = (0..3).map(|s| ar1(200, 0.3, seed * 7 + s)).collect();
            let t: Vec<Vec<f64>> = chains.iter().map(|c| c.iter().map(|v| a * v + b).collect()).collect();
            let (r1, r2) = (psrf(&chains).unwrap(), psrf(&t).unwrap());
            prop_assert!((r1 - r2).abs() < 1e-9);
        }
    }
}
