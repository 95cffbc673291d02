//! Dense stacked least-squares reference implementation.
//!
//! The smoothing objectives can be written as ½‖ρ(x)‖² over the stacked
//! trajectory x = [x₁; …; x_K], where ρ stacks the whitened prior, dynamics,
//! and measurement residuals. This module builds that problem explicitly and
//! solves Gauss–Newton / regularized steps by dense QR — an independent
//! route to the same iterates the structured smoother recursions produce,
//! used throughout the test suites as ground truth.
//!
//! Everything here is O((K·d_x)³) and intended for desk-scale problems
//! (K·d_x up to a few thousand); production smoothing goes through
//! [`crate::iterative_smoothers`].

use nalgebra::{DMatrix, DVector};

use crate::cost_functions::IplsCostContext;
use crate::error::{Error, Result};
use crate::linalg;
use crate::state_space::{MeasurementSequence, NonlinearSsm};

/// Stacks per-timestep means into one tall vector [x₁; …; x_K].
pub fn stack_means(means: &[DVector<f64>]) -> DVector<f64> {
    let d: usize = means.iter().map(|m| m.len()).sum();
    let mut out = DVector::zeros(d);
    let mut at = 0;
    for m in means {
        out.rows_mut(at, m.len()).copy_from(m);
        at += m.len();
    }
    out
}

/// Splits a stacked vector back into K means of dimension `d`.
pub fn unstack_means(x: &DVector<f64>, d: usize) -> Result<Vec<DVector<f64>>> {
    if d == 0 || !x.len().is_multiple_of(d) {
        return Err(Error::DimensionMismatch(format!(
            "stacked length {} is not a multiple of state dim {d}",
            x.len()
        )));
    }
    Ok((0..x.len() / d)
        .map(|k| x.rows(k * d, d).clone_owned())
        .collect())
}

enum Family<'a> {
    /// Raw residuals, Taylor Jacobians, weights Q⁻¹ / R⁻¹.
    Taylor,
    /// Sigma-point expectation residuals, regression-gain Jacobians,
    /// weights (Q+Ω)⁻¹ / (R+Γ)⁻¹, all under the frozen context.
    Sigma(&'a IplsCostContext),
}

/// The stacked nonlinear least-squares problem ½‖ρ(x)‖².
///
/// Residual layout: whitened prior block (d_x rows), then one whitened
/// dynamics block per transition (d_x rows each), then one whitened
/// measurement block per observed timestep.
pub struct StackedResidualProblem<'a> {
    model: &'a NonlinearSsm,
    y: &'a MeasurementSequence,
    family: Family<'a>,
    /// Lower Cholesky factors of the weight covariances; residuals and
    /// Jacobian blocks are whitened by forward substitution against these.
    prior_root: DMatrix<f64>,
    motion_roots: Vec<DMatrix<f64>>,
    meas_roots: Vec<Option<DMatrix<f64>>>,
    residual_dim: usize,
}

fn lower_root(cov: &DMatrix<f64>, what: &'static str) -> Result<DMatrix<f64>> {
    Ok(linalg::cholesky_solve_factor(cov, what)?.l())
}

fn whiten_vec(root: &DMatrix<f64>, r: &DVector<f64>) -> Result<DVector<f64>> {
    root.solve_lower_triangular(r)
        .ok_or(Error::CholeskyFailed("whitening"))
}

fn whiten_mat(root: &DMatrix<f64>, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    root.solve_lower_triangular(m)
        .ok_or(Error::CholeskyFailed("whitening"))
}

impl<'a> StackedResidualProblem<'a> {
    fn assemble(
        model: &'a NonlinearSsm,
        y: &'a MeasurementSequence,
        family: Family<'a>,
    ) -> Result<Self> {
        model.check_conformable(y)?;
        let horizon = model.horizon();
        let prior_root = lower_root(model.prior().cov(), "prior covariance")?;
        let mut motion_roots = Vec::with_capacity(horizon - 1);
        let mut meas_roots = Vec::with_capacity(horizon);
        for k in 0..horizon - 1 {
            let cov = match &family {
                Family::Taylor => model.motion_noise(k).clone(),
                Family::Sigma(ctx) => model.motion_noise(k) + &ctx.motion_err()[k],
            };
            motion_roots.push(lower_root(&cov, "process noise")?);
        }
        for k in 0..horizon {
            if model.meas_dim(k) == 0 {
                meas_roots.push(None);
                continue;
            }
            let cov = match &family {
                Family::Taylor => model.meas_noise(k).clone(),
                Family::Sigma(ctx) => model.meas_noise(k) + &ctx.meas_err()[k],
            };
            meas_roots.push(Some(lower_root(&cov, "measurement noise")?));
        }
        let residual_dim =
            horizon * model.state_dim() + (0..horizon).map(|k| model.meas_dim(k)).sum::<usize>();
        Ok(Self {
            model,
            y,
            family,
            prior_root,
            motion_roots,
            meas_roots,
            residual_dim,
        })
    }

    /// Stacked-vector dimension K·d_x.
    pub fn dim(&self) -> usize {
        self.model.horizon() * self.model.state_dim()
    }

    /// Total residual dimension N.
    pub fn residual_dim(&self) -> usize {
        self.residual_dim
    }

    fn predicted_motion(&self, k: usize, xk: &DVector<f64>) -> Result<DVector<f64>> {
        match &self.family {
            Family::Taylor => Ok(self.model.motion(k).apply(xk)),
            Family::Sigma(ctx) => ctx.expect(self.model.motion(k), k, xk),
        }
    }

    fn predicted_measurement(&self, k: usize, xk: &DVector<f64>) -> Result<DVector<f64>> {
        match &self.family {
            Family::Taylor => Ok(self.model.measurement(k).apply(xk)),
            Family::Sigma(ctx) => ctx.expect(self.model.measurement(k), k, xk),
        }
    }

    /// The whitened stacked residual ρ(x).
    pub fn residual(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let d = self.model.state_dim();
        let means = unstack_means(x, d)?;
        if means.len() != self.model.horizon() {
            return Err(Error::DimensionMismatch(
                "stacked vector length differs from K·d_x".into(),
            ));
        }
        let mut rho = DVector::zeros(self.residual_dim);
        let mut at = 0;

        let r0 = whiten_vec(&self.prior_root, &(&means[0] - self.model.prior().mean()))?;
        rho.rows_mut(at, d).copy_from(&r0);
        at += d;

        for (k, root) in self.motion_roots.iter().enumerate() {
            let raw = &means[k + 1] - self.predicted_motion(k, &means[k])?;
            rho.rows_mut(at, d).copy_from(&whiten_vec(root, &raw)?);
            at += d;
        }
        for (k, root) in self.meas_roots.iter().enumerate() {
            if let Some(root) = root {
                let raw = self.y.get(k) - self.predicted_measurement(k, &means[k])?;
                rho.rows_mut(at, raw.len()).copy_from(&whiten_vec(root, &raw)?);
                at += raw.len();
            }
        }
        if !linalg::all_finite_vec(&rho) {
            return Err(Error::NonFinite("stacked residual"));
        }
        Ok(rho)
    }

    /// The whitened residual Jacobian J_ρ(x): block-bidiagonal over the
    /// dynamics rows, block-diagonal over the measurement rows.
    pub fn jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        let d = self.model.state_dim();
        let means = unstack_means(x, d)?;
        if means.len() != self.model.horizon() {
            return Err(Error::DimensionMismatch(
                "stacked vector length differs from K·d_x".into(),
            ));
        }

        // Per-timestep gain blocks: Taylor Jacobians or regression gains.
        let (motion_gains, meas_gains): (Vec<DMatrix<f64>>, Vec<DMatrix<f64>>) =
            match &self.family {
                Family::Taylor => (
                    (0..means.len() - 1)
                        .map(|k| self.model.motion(k).jacobian(&means[k]))
                        .collect(),
                    (0..means.len())
                        .map(|k| self.model.measurement(k).jacobian(&means[k]))
                        .collect(),
                ),
                Family::Sigma(ctx) => {
                    let params = ctx.relinearize(self.model, &means)?;
                    (
                        params.motion().iter().map(|a| a.gain.clone()).collect(),
                        params.measurement().iter().map(|a| a.gain.clone()).collect(),
                    )
                }
            };

        let mut jac = DMatrix::zeros(self.residual_dim, self.dim());
        let mut at = 0;

        let eye = DMatrix::identity(d, d);
        jac.view_mut((at, 0), (d, d))
            .copy_from(&whiten_mat(&self.prior_root, &eye)?);
        at += d;

        for (k, root) in self.motion_roots.iter().enumerate() {
            let f = &motion_gains[k];
            jac.view_mut((at, k * d), (d, d))
                .copy_from(&(-whiten_mat(root, f)?));
            jac.view_mut((at, (k + 1) * d), (d, d))
                .copy_from(&whiten_mat(root, &eye)?);
            at += d;
        }
        for (k, root) in self.meas_roots.iter().enumerate() {
            if let Some(root) = root {
                let h = &meas_gains[k];
                jac.view_mut((at, k * d), (h.nrows(), d))
                    .copy_from(&(-whiten_mat(root, h)?));
                at += h.nrows();
            }
        }
        if !linalg::all_finite_mat(&jac) {
            return Err(Error::NonFinite("stacked Jacobian"));
        }
        Ok(jac)
    }

    /// ½‖ρ(x)‖², the objective this problem encodes.
    pub fn cost(&self, x: &DVector<f64>) -> Result<f64> {
        Ok(0.5 * self.residual(x)?.norm_squared())
    }
}

/// Builds the stacked problem whose value is the raw-residual trajectory
/// cost (Taylor family).
pub fn build_ieks_problem<'a>(
    model: &'a NonlinearSsm,
    y: &'a MeasurementSequence,
) -> Result<StackedResidualProblem<'a>> {
    StackedResidualProblem::assemble(model, y, Family::Taylor)
}

/// Builds the stacked problem whose value is the frozen sigma-point
/// trajectory cost, with regression gains as Jacobian blocks.
pub fn build_ipls_problem<'a>(
    model: &'a NonlinearSsm,
    y: &'a MeasurementSequence,
    ctx: &'a IplsCostContext,
) -> Result<StackedResidualProblem<'a>> {
    if ctx.horizon() != model.horizon() {
        return Err(Error::DimensionMismatch(
            "context horizon differs from model horizon".into(),
        ));
    }
    StackedResidualProblem::assemble(model, y, Family::Sigma(ctx))
}

/// Solves min_Δ ‖J·Δ + ρ‖² by column-pivoted QR and returns x + Δ.
fn solve_linearized(jac: &DMatrix<f64>, rho: &DVector<f64>, x: &DVector<f64>) -> Result<DVector<f64>> {
    let cols = jac.ncols();
    let qr = jac.clone().col_piv_qr();
    let r = qr.r();
    let r00 = r[(0, 0)].abs();
    for i in 0..cols {
        if r[(i, i)].abs() <= 1e-12 * r00.max(1.0) {
            return Err(Error::RankDeficient);
        }
    }
    let rhs = qr.q().transpose() * (-rho);
    let mut delta = r
        .solve_upper_triangular(&rhs)
        .ok_or(Error::RankDeficient)?;
    qr.p().inv_permute_rows(&mut delta);
    Ok(x + delta)
}

/// One Gauss–Newton step from `x`: the exact minimizer of the problem's
/// first-order model ½‖ρ(x) + J(x)·(z − x)‖².
pub fn gn_step(problem: &StackedResidualProblem<'_>, x: &DVector<f64>) -> Result<DVector<f64>> {
    let rho = problem.residual(x)?;
    let jac = problem.jacobian(x)?;
    solve_linearized(&jac, &rho, x)
}

/// One regularized step from `x`: the minimizer of the first-order model
/// plus ½λ·(z − x)ᵀ·S⁻¹·(z − x), built by extending the stacked system with
/// whitened identity rows. λ = 0 reduces to [`gn_step`].
pub fn lm_step(
    problem: &StackedResidualProblem<'_>,
    x: &DVector<f64>,
    lambda: f64,
    scaling: &[DMatrix<f64>],
) -> Result<DVector<f64>> {
    if lambda < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "regularization strength must be nonnegative, got {lambda}"
        )));
    }
    if lambda == 0.0 {
        return gn_step(problem, x);
    }
    let d = problem.model.state_dim();
    let horizon = problem.model.horizon();
    if scaling.len() != horizon {
        return Err(Error::DimensionMismatch(
            "one scaling matrix per timestep required".into(),
        ));
    }
    let rho = problem.residual(x)?;
    let jac = problem.jacobian(x)?;

    let n = rho.len();
    let total = n + horizon * d;
    let mut jac_aug = DMatrix::zeros(total, problem.dim());
    let mut rho_aug = DVector::zeros(total);
    jac_aug.view_mut((0, 0), (n, problem.dim())).copy_from(&jac);
    rho_aug.rows_mut(0, n).copy_from(&rho);

    let sqrt_lambda = lambda.sqrt();
    let eye = DMatrix::identity(d, d);
    for (k, s) in scaling.iter().enumerate() {
        let root = lower_root(s, "regularization scaling")?;
        let block = sqrt_lambda * whiten_mat(&root, &eye)?;
        jac_aug
            .view_mut((n + k * d, k * d), (d, d))
            .copy_from(&block);
        // The penalty residual at the linearization point x is zero.
    }
    solve_linearized(&jac_aug, &rho_aug, x)
}
