//! Internal dense linear-algebra helpers: Cholesky solves with the crate's
//! jitter policy, PSD square roots, and finite-difference Jacobians.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Relative jitter (scaled by trace/d) for the single Cholesky retry in
/// smoother solves.
pub(crate) const SOLVE_JITTER_REL: f64 = 1e-9;

/// Absolute jitter for the single Cholesky retry in sigma-point generation.
pub(crate) const SIGMA_JITTER_ABS: f64 = 1e-12;

/// Condition-number cap for covariances entering an SLR solve.
pub(crate) const SLR_CONDITION_CAP: f64 = 1e12;

pub(crate) fn symmetrized(m: &DMatrix<f64>) -> DMatrix<f64> {
    0.5 * (m + m.transpose())
}

pub(crate) fn max_abs_asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Cholesky with one retry after adding 1e-9·(trace/d)·I to the diagonal.
pub(crate) fn cholesky_solve_factor(
    m: &DMatrix<f64>,
    context: &'static str,
) -> Result<Cholesky<f64, Dyn>> {
    if let Some(c) = Cholesky::new(m.clone()) {
        return Ok(c);
    }
    let d = m.nrows();
    if d == 0 {
        return Err(Error::CholeskyFailed(context));
    }
    let jitter = SOLVE_JITTER_REL * m.trace() / d as f64;
    let mut bumped = m.clone();
    for i in 0..d {
        bumped[(i, i)] += jitter;
    }
    Cholesky::new(bumped).ok_or(Error::CholeskyFailed(context))
}

/// Cholesky for sigma-point generation with one absolute-jitter retry.
pub(crate) fn cholesky_sigma_factor(cov: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    if let Some(c) = Cholesky::new(cov.clone()) {
        return Ok(c);
    }
    let mut bumped = cov.clone();
    for i in 0..cov.nrows() {
        bumped[(i, i)] += SIGMA_JITTER_ABS;
    }
    Cholesky::new(bumped).ok_or(Error::CholeskyFailed("sigma-point covariance"))
}

/// Symmetric PSD square root via eigendecomposition. Total on any symmetric
/// input: negative eigenvalues are clipped, so the zero matrix maps to zero.
pub(crate) fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = symmetrized(m).symmetric_eigen();
    let mut vals = eig.eigenvalues.clone();
    for v in vals.iter_mut() {
        *v = v.max(0.0).sqrt();
    }
    &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
}

/// rᵀ M⁻¹ r for an already factored SPD matrix M.
pub(crate) fn quad_form(chol: &Cholesky<f64, Dyn>, r: &DVector<f64>) -> f64 {
    chol.solve(r).dot(r)
}

/// Central-difference Jacobian with per-coordinate step h = √ε·(1 + |x_j|).
pub(crate) fn central_difference_jacobian<F>(
    f: F,
    x: &DVector<f64>,
    out_dim: usize,
) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let n = x.len();
    let sqrt_eps = f64::EPSILON.sqrt();
    let mut jac = DMatrix::zeros(out_dim, n);
    let mut xp = x.clone();
    let mut xm = x.clone();
    for j in 0..n {
        let h = sqrt_eps * (1.0 + x[j].abs());
        xp[j] = x[j] + h;
        xm[j] = x[j] - h;
        let col = (f(&xp) - f(&xm)) / (2.0 * h);
        jac.set_column(j, &col);
        xp[j] = x[j];
        xm[j] = x[j];
    }
    jac
}

pub(crate) fn all_finite_vec(v: &DVector<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}

pub(crate) fn all_finite_mat(m: &DMatrix<f64>) -> bool {
    m.iter().all(|x| x.is_finite())
}

/// Smallest and largest eigenvalues of a symmetric matrix.
pub(crate) fn symmetric_eig_range(m: &DMatrix<f64>) -> (f64, f64) {
    let eig = m.clone().symmetric_eigen();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in eig.eigenvalues.iter() {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    (lo, hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psd_sqrt_of_zero_is_zero() {
        let z = DMatrix::zeros(3, 3);
        assert_eq!(psd_sqrt(&z), DMatrix::zeros(3, 3));
    }

    #[test]
    fn psd_sqrt_squares_back() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let r = psd_sqrt(&m);
        let back = &r * r.transpose();
        assert!((back - &m).amax() < 1e-12);
    }

    #[test]
    fn jitter_retry_recovers_semidefinite_solve() {
        // Exactly singular PSD matrix: plain Cholesky fails, the retry passes.
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(Cholesky::new(m.clone()).is_none());
        assert!(cholesky_solve_factor(&m, "test").is_ok());
    }

    #[test]
    fn central_difference_matches_analytic_on_smooth_map() {
        let f = |x: &DVector<f64>| {
            DVector::from_vec(vec![x[0] * x[0], x[1].sin(), x[0] * x[1]])
        };
        let x = DVector::from_vec(vec![1.3, -0.4]);
        let jac = central_difference_jacobian(f, &x, 3);
        let expected = DMatrix::from_row_slice(
            3,
            2,
            &[2.0 * x[0], 0.0, 0.0, x[1].cos(), x[1], x[0]],
        );
        assert!((jac - expected).amax() < 1e-6);
    }
}
