//! Dense Cholesky helpers shared by the approximation and sampling code.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Relative jitter ladder tried in order when a factorization fails.
pub const JITTER_LADDER: [f64; 5] = [0.0, 1e-10, 1e-8, 1e-6, 1e-4];

/// Factorizes `a + jitter·I`, escalating through [`JITTER_LADDER`] (scaled by
/// `scale`) until the factorization succeeds. Returns the lower factor and the
/// jitter actually applied.
pub fn cholesky_with_jitter(a: &DMatrix<f64>, scale: f64) -> Result<(DMatrix<f64>, f64)> {
    let mut last = 0.0;
    for rel in JITTER_LADDER {
        let jitter = rel * scale;
        last = jitter;
        let mut m = a.clone();
        if jitter > 0.0 {
            for i in 0..m.nrows() {
                m[(i, i)] += jitter;
            }
        }
        if let Some(ch) = Cholesky::<f64, Dyn>::new(m) {
            let l = ch.unpack();
            if l.diagonal().iter().all(|&v| v > 0.0 && v.is_finite()) {
                return Ok((l, jitter));
            }
        }
    }
    Err(Error::NotPositiveDefinite { jitter: last })
}

/// Solves `L x = b` for lower-triangular `L`.
pub fn solve_lower(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let mut x = b.clone();
    l.solve_lower_triangular_mut(&mut x);
    x
}

/// Solves `Lᵀ x = b` for lower-triangular `L`.
pub fn solve_lower_transpose(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let mut x = b.clone();
    l.tr_solve_lower_triangular_mut(&mut x);
    x
}

/// Solves `L X = B` column-wise.
pub fn solve_lower_mat(l: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut x = b.clone();
    l.solve_lower_triangular_mut(&mut x);
    x
}

/// Solves `(L Lᵀ) x = b`.
pub fn chol_solve(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    solve_lower_transpose(l, &solve_lower(l, b))
}

/// `2 Σ log L_ii`.
pub fn log_det_from_factor(l: &DMatrix<f64>) -> f64 {
    2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

/// Lower-triangular matrix-vector product `L v`, skipping the zero upper part.
pub fn lower_mul(l: &DMatrix<f64>, v: &DVector<f64>) -> DVector<f64> {
    let n = l.nrows();
    let mut out = DVector::zeros(n);
    for j in 0..n {
        let vj = v[j];
        if vj == 0.0 {
            continue;
        }
        for i in j..n {
            out[i] += l[(i, j)] * vj;
        }
    }
    out
}

/// Largest absolute entry.
pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}
