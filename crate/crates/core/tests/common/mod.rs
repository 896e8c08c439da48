//! Independent numerical oracles shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use statrs::distribution::{ContinuousCDF, Normal};

/// Probabilists' Gauss–Hermite rule (weight `φ(x)`, weights sum to one) by
/// Golub–Welsch on the Jacobi matrix.
pub fn gauss_hermite(m: usize) -> (Vec<f64>, Vec<f64>) {
    let mut j = DMatrix::zeros(m, m);
    for k in 1..m {
        let b = (k as f64).sqrt();
        j[(k - 1, k)] = b;
        j[(k, k - 1)] = b;
    }
    let eig = SymmetricEigen::new(j);
    let mut pairs: Vec<(f64, f64)> = (0..m).map(|i| (eig.eigenvalues[i], eig.eigenvectors[(0, i)].powi(2))).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

fn simpson_rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) + simpson_rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

pub fn adaptive_simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_rec(&f, a, b, fa, fm, fb, whole, tol, 50)
}

pub fn phi_cdf(x: f64) -> f64 {
    Normal::new(0.0, 1.0).unwrap().cdf(x)
}

pub fn phi_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// `E[g(f)]` for `f ~ N(m, v)`, by adaptive Simpson over ±14 sd.
pub fn gaussian_expectation(g: impl Fn(f64) -> f64, m: f64, v: f64, tol: f64) -> f64 {
    let s = v.sqrt();
    adaptive_simpson(|z| g(m + s * z) * phi_pdf(z), -14.0, 14.0, tol)
}

/// Lower Cholesky factor without jitter; oracles need the exact matrix.
pub fn chol(k: &DMatrix<f64>) -> DMatrix<f64> {
    k.clone().cholesky().expect("positive definite").l()
}

/// `∫ Π Φ(y_i f_i) N(f | 0, K) df` by tensor Gauss–Hermite over whitened
/// coordinates, `m` nodes per dimension, `n ≤ 3`.
pub fn gh_evidence(k: &DMatrix<f64>, y: &[f64], m: usize) -> f64 {
    gh_expectation(k, m, |f| f.iter().zip(y).map(|(fi, yi)| phi_cdf(yi * fi)).product())
}

/// `E[g(f)]` under `N(0, K)` by tensor Gauss–Hermite, `n ≤ 3`.
pub fn gh_expectation(k: &DMatrix<f64>, m: usize, g: impl Fn(&DVector<f64>) -> f64) -> f64 {
    let n = k.nrows();
    assert!((1..=3).contains(&n));
    let l = chol(k);
    let (x, w) = gauss_hermite(m);
    let mut total = 0.0;
    let mut idx = vec![0usize; n];
    loop {
        let z = DVector::from_fn(n, |i, _| x[idx[i]]);
        let wt: f64 = idx.iter().map(|&i| w[i]).product();
        total += wt * g(&(&l * z));
        let mut p = 0;
        loop {
            if p == n {
                return total;
            }
            idx[p] += 1;
            if idx[p] < m {
                break;
            }
            idx[p] = 0;
            p += 1;
        }
    }
}

/// Closed-form probit evidence for `n ≤ 3`: the orthant probability of
/// `N(0, D(K + I)D)` with `D = diag(y)`.
pub fn orthant_evidence(k: &DMatrix<f64>, y: &[f64]) -> f64 {
    let n = k.nrows();
    let rho = |i: usize, j: usize| y[i] * y[j] * k[(i, j)] / ((1.0 + k[(i, i)]) * (1.0 + k[(j, j)])).sqrt();
    let pi = std::f64::consts::PI;
    match n {
        1 => 0.5,
        2 => 0.25 + rho(0, 1).asin() / (2.0 * pi),
        3 => 0.125 + (rho(0, 1).asin() + rho(0, 2).asin() + rho(1, 2).asin()) / (4.0 * pi),
        _ => panic!("orthant formula only for n ≤ 3"),
    }
}

pub fn se_kernel(x: &[f64], sigma: f64, tau: f64) -> DMatrix<f64> {
    let n = x.len();
    DMatrix::from_fn(n, n, |i, j| sigma * (-0.5 * (x[i] - x[j]).powi(2) / (tau * tau)).exp())
}

/// Exact `p(y* = +1 | y, θ)` for `n ≤ 2` training points: the ratio of
/// orthant probabilities with and without the test point appended.
pub fn exact_predictive(x: &[f64], y: &[f64], x_star: f64, sigma: f64, tau: f64) -> f64 {
    let mut xs = x.to_vec();
    xs.push(x_star);
    let mut ys = y.to_vec();
    ys.push(1.0);
    orthant_evidence(&se_kernel(&xs, sigma, tau), &ys) / orthant_evidence(&se_kernel(x, sigma, tau), y)
}

/// Uniform-in-[0,1) draws from a fixed LCG, for oracle-side randomness that
/// must not share a stream with the code under test.
pub struct Lcg(pub u64);

impl Lcg {
    pub fn next_f64(&mut self) -> f64 {
        self.0 = self.0.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (self.0 >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }
}
