//! The nonlinear trajectory objectives the iterative smoothers minimize, plus
//! their regularized and linearized companions used for accept/reject tests
//! and line searches.
//!
//! Two exact costs exist:
//!
//! - [`ieks_cost`]: quadratic forms of the raw model residuals
//!   x_{k+1} − f_k(x_k) and y_k − h_k(x_k) weighted by Q⁻¹ and R⁻¹, plus the
//!   prior term.
//! - [`ipls_cost`]: the iteration-indexed sigma-point analogue, where the
//!   residuals use expectations of f and h under Gaussians centered at the
//!   candidate means with covariances *frozen* from the current outer
//!   iterate, and the weights fold in the frozen linearization-error
//!   covariances. The frozen data lives in an [`IplsCostContext`].

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::linalg;
use crate::linearization::{slr_from_moments, SigmaScheme, SigmaTemplate, SlrMoments};
use crate::state_space::{
    AffineApprox, AffineParams, DiffMap, MeasurementSequence, NonlinearSsm, TrajectoryEstimate,
};

fn check_means(means: &[DVector<f64>], model: &NonlinearSsm) -> Result<()> {
    if means.len() != model.horizon() {
        return Err(Error::DimensionMismatch(format!(
            "{} means for horizon {}",
            means.len(),
            model.horizon()
        )));
    }
    let d = model.state_dim();
    if means.iter().any(|m| m.len() != d) {
        return Err(Error::DimensionMismatch(
            "mean dimension differs from state dimension".into(),
        ));
    }
    Ok(())
}

fn finite(value: f64, what: &'static str) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite(what))
    }
}

/// Precomputed factorizations for repeated evaluation of the raw-residual
/// trajectory cost on a fixed model and measurement sequence.
pub struct IeksCost<'a> {
    model: &'a NonlinearSsm,
    y: &'a MeasurementSequence,
    prior_chol: Cholesky<f64, Dyn>,
    motion_chol: Vec<Cholesky<f64, Dyn>>,
    meas_chol: Vec<Option<Cholesky<f64, Dyn>>>,
}

impl<'a> IeksCost<'a> {
    pub fn new(model: &'a NonlinearSsm, y: &'a MeasurementSequence) -> Result<Self> {
        model.check_conformable(y)?;
        let prior_chol = linalg::cholesky_solve_factor(model.prior().cov(), "prior covariance")?;
        let mut motion_chol = Vec::with_capacity(model.horizon() - 1);
        for k in 0..model.horizon() - 1 {
            motion_chol.push(linalg::cholesky_solve_factor(
                model.motion_noise(k),
                "process noise",
            )?);
        }
        let mut meas_chol = Vec::with_capacity(model.horizon());
        for k in 0..model.horizon() {
            meas_chol.push(if model.meas_dim(k) == 0 {
                None
            } else {
                Some(linalg::cholesky_solve_factor(
                    model.meas_noise(k),
                    "measurement noise",
                )?)
            });
        }
        Ok(Self {
            model,
            y,
            prior_chol,
            motion_chol,
            meas_chol,
        })
    }

    /// ½[prior quadratic + Σ measurement quadratics + Σ motion quadratics]
    /// evaluated at the candidate means.
    pub fn eval(&self, means: &[DVector<f64>]) -> Result<f64> {
        check_means(means, self.model)?;
        let mut acc = linalg::quad_form(&self.prior_chol, &(&means[0] - self.model.prior().mean()));
        for (k, chol) in self.meas_chol.iter().enumerate() {
            if let Some(chol) = chol {
                let r = self.y.get(k) - self.model.measurement(k).apply(&means[k]);
                acc += linalg::quad_form(chol, &r);
            }
        }
        for (k, chol) in self.motion_chol.iter().enumerate() {
            let r = &means[k + 1] - self.model.motion(k).apply(&means[k]);
            acc += linalg::quad_form(chol, &r);
        }
        finite(0.5 * acc, "trajectory cost")
    }
}

/// One-shot wrapper around [`IeksCost`].
pub fn ieks_cost(
    means: &[DVector<f64>],
    model: &NonlinearSsm,
    y: &MeasurementSequence,
) -> Result<f64> {
    IeksCost::new(model, y)?.eval(means)
}

/// Everything frozen from an outer sigma-point iterate that the
/// iteration-indexed cost depends on: the marginal covariances P̂_k (as
/// sigma-point templates plus factorizations) and the linearization-error
/// covariances folded into the weights.
pub struct IplsCostContext {
    scheme: SigmaScheme,
    templates: Vec<SigmaTemplate>,
    cov_chols: Vec<Cholesky<f64, Dyn>>,
    motion_err: Vec<DMatrix<f64>>,
    meas_err: Vec<DMatrix<f64>>,
    prior_chol: Cholesky<f64, Dyn>,
    motion_chol: Vec<Cholesky<f64, Dyn>>,
    meas_chol: Vec<Option<Cholesky<f64, Dyn>>>,
}

impl IplsCostContext {
    /// Freezes the covariances of `traj` and the linearization-error
    /// covariances of `params` (which must have been produced by sigma-point
    /// regression around `traj`).
    pub fn freeze(
        model: &NonlinearSsm,
        traj: &TrajectoryEstimate,
        params: &AffineParams,
        scheme: SigmaScheme,
    ) -> Result<Self> {
        let horizon = model.horizon();
        if traj.len() != horizon || params.horizon() != horizon {
            return Err(Error::DimensionMismatch(
                "trajectory/parameter length differs from model horizon".into(),
            ));
        }
        let mut templates = Vec::with_capacity(horizon);
        let mut cov_chols = Vec::with_capacity(horizon);
        for k in 0..horizon {
            templates.push(SigmaTemplate::new(scheme, traj.cov(k))?);
            cov_chols.push(linalg::cholesky_solve_factor(
                traj.cov(k),
                "frozen marginal covariance",
            )?);
        }
        let motion_err: Vec<_> = params.motion().iter().map(|a| a.err_cov.clone()).collect();
        let meas_err: Vec<_> = params
            .measurement()
            .iter()
            .map(|a| a.err_cov.clone())
            .collect();

        let prior_chol = linalg::cholesky_solve_factor(model.prior().cov(), "prior covariance")?;
        let mut motion_chol = Vec::with_capacity(horizon - 1);
        for k in 0..horizon - 1 {
            let w = model.motion_noise(k) + &motion_err[k];
            motion_chol.push(linalg::cholesky_solve_factor(
                &w,
                "effective process noise",
            )?);
        }
        let mut meas_chol = Vec::with_capacity(horizon);
        for k in 0..horizon {
            meas_chol.push(if model.meas_dim(k) == 0 {
                None
            } else {
                let w = model.meas_noise(k) + &meas_err[k];
                Some(linalg::cholesky_solve_factor(
                    &w,
                    "effective measurement noise",
                )?)
            });
        }
        Ok(Self {
            scheme,
            templates,
            cov_chols,
            motion_err,
            meas_err,
            prior_chol,
            motion_chol,
            meas_chol,
        })
    }

    pub fn horizon(&self) -> usize {
        self.templates.len()
    }

    pub fn scheme(&self) -> SigmaScheme {
        self.scheme
    }

    pub(crate) fn motion_err(&self) -> &[DMatrix<f64>] {
        &self.motion_err
    }

    pub(crate) fn meas_err(&self) -> &[DMatrix<f64>] {
        &self.meas_err
    }

    /// Sigma-point expectation of `map` under N(center, P̂_k).
    pub(crate) fn expect(
        &self,
        map: &DiffMap,
        k: usize,
        center: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        let template = &self.templates[k];
        let mut acc = DVector::zeros(map.out_dim());
        for (w, off) in template.mean_weights().iter().zip(template.offsets()) {
            let z = map.apply(&(center + off));
            if !linalg::all_finite_vec(&z) {
                return Err(Error::NonFinite("sigma-point image"));
            }
            acc.axpy(*w, &z, 1.0);
        }
        Ok(acc)
    }

    /// Full sigma-point moments of `map` under N(center, P̂_k).
    fn moments(&self, map: &DiffMap, k: usize, center: &DVector<f64>) -> Result<SlrMoments> {
        let template = &self.templates[k];
        let d_in = center.len();
        let d_out = map.out_dim();
        let mut zbar = DVector::zeros(d_out);
        let images: Vec<DVector<f64>> = template
            .offsets()
            .iter()
            .map(|off| map.apply(&(center + off)))
            .collect();
        for (w, z) in template.mean_weights().iter().zip(&images) {
            if !linalg::all_finite_vec(z) {
                return Err(Error::NonFinite("sigma-point image"));
            }
            zbar.axpy(*w, z, 1.0);
        }
        let mut psi = DMatrix::zeros(d_in, d_out);
        let mut phi = DMatrix::zeros(d_out, d_out);
        for ((w, off), z) in template
            .cov_weights()
            .iter()
            .zip(template.offsets())
            .zip(&images)
        {
            let dz = z - &zbar;
            psi.ger(*w, off, &dz, 1.0);
            phi.ger(*w, &dz, &dz, 1.0);
        }
        Ok(SlrMoments {
            zbar,
            psi,
            phi: linalg::symmetrized(&phi),
        })
    }

    /// The iteration-indexed cost at the candidate means: residuals against
    /// the sigma-point expectations, weights with the frozen error
    /// covariances folded in.
    pub fn eval(
        &self,
        means: &[DVector<f64>],
        model: &NonlinearSsm,
        y: &MeasurementSequence,
    ) -> Result<f64> {
        check_means(means, model)?;
        model.check_conformable(y)?;
        if model.horizon() != self.horizon() {
            return Err(Error::DimensionMismatch(
                "context horizon differs from model horizon".into(),
            ));
        }
        let mut acc = linalg::quad_form(&self.prior_chol, &(&means[0] - model.prior().mean()));
        for (k, chol) in self.meas_chol.iter().enumerate() {
            if let Some(chol) = chol {
                let ybar = self.expect(model.measurement(k), k, &means[k])?;
                acc += linalg::quad_form(chol, &(y.get(k) - ybar));
            }
        }
        for (k, chol) in self.motion_chol.iter().enumerate() {
            let xbar = self.expect(model.motion(k), k, &means[k])?;
            acc += linalg::quad_form(chol, &(&means[k + 1] - xbar));
        }
        finite(0.5 * acc, "trajectory cost")
    }

    /// Re-linearizes the model around new means while keeping the frozen
    /// covariances: fresh regression gains and offsets, frozen error
    /// covariances. This is the inner-loop linearization of the regularized
    /// sigma-point smoother, and also what a Gauss–Newton step on the frozen
    /// cost differentiates.
    pub fn relinearize(
        &self,
        model: &NonlinearSsm,
        means: &[DVector<f64>],
    ) -> Result<AffineParams> {
        check_means(means, model)?;
        let horizon = self.horizon();
        let d = model.state_dim();
        let mut motion = Vec::with_capacity(horizon - 1);
        for k in 0..horizon - 1 {
            let m = self.moments(model.motion(k), k, &means[k])?;
            let a = slr_from_moments(&m, &means[k], &self.cov_chols[k])?;
            motion.push(AffineApprox {
                gain: a.gain,
                offset: a.offset,
                err_cov: self.motion_err[k].clone(),
            });
        }
        let mut measurement = Vec::with_capacity(horizon);
        for k in 0..horizon {
            if model.meas_dim(k) == 0 {
                measurement.push(AffineApprox {
                    gain: DMatrix::zeros(0, d),
                    offset: DVector::zeros(0),
                    err_cov: DMatrix::zeros(0, 0),
                });
                continue;
            }
            let m = self.moments(model.measurement(k), k, &means[k])?;
            let a = slr_from_moments(&m, &means[k], &self.cov_chols[k])?;
            measurement.push(AffineApprox {
                gain: a.gain,
                offset: a.offset,
                err_cov: self.meas_err[k].clone(),
            });
        }
        Ok(AffineParams::from_parts_unchecked(motion, measurement))
    }
}

/// One-shot wrapper around [`IplsCostContext::eval`] matching the classic
/// argument order.
pub fn ipls_cost(
    means: &[DVector<f64>],
    model: &NonlinearSsm,
    y: &MeasurementSequence,
    ctx: &IplsCostContext,
) -> Result<f64> {
    ctx.eval(means, model, y)
}

/// Adds the regularization penalty ½λ·Σ_k (x_k − anchor_k)ᵀ·S_k⁻¹·(x_k − anchor_k)
/// to a base cost value's evaluation.
pub fn lm_cost<F>(
    base: F,
    means: &[DVector<f64>],
    anchor: &[DVector<f64>],
    lambda: f64,
    scaling: &[DMatrix<f64>],
) -> Result<f64>
where
    F: FnOnce(&[DVector<f64>]) -> Result<f64>,
{
    if lambda < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "regularization strength must be nonnegative, got {lambda}"
        )));
    }
    let base_value = base(means)?;
    if lambda == 0.0 {
        return Ok(base_value);
    }
    if anchor.len() != means.len() || scaling.len() != means.len() {
        return Err(Error::DimensionMismatch(
            "anchor/scaling length differs from mean count".into(),
        ));
    }
    let mut acc = 0.0;
    for ((x, a), s) in means.iter().zip(anchor).zip(scaling) {
        let chol = linalg::cholesky_solve_factor(s, "regularization scaling")?;
        acc += linalg::quad_form(&chol, &(x - a));
    }
    finite(base_value + 0.5 * lambda * acc, "regularized cost")
}

/// The quadratic cost of the *affine* model induced by `params`: residuals
/// against gain·x + offset, weights with the error covariances folded in.
///
/// At the linearization point this agrees with the exact cost that produced
/// `params` (tangency); its minimizer is the Gauss–Newton proposal.
pub fn linearized_cost(
    means: &[DVector<f64>],
    model: &NonlinearSsm,
    params: &AffineParams,
    y: &MeasurementSequence,
) -> Result<f64> {
    check_means(means, model)?;
    model.check_conformable(y)?;
    if params.horizon() != model.horizon() {
        return Err(Error::DimensionMismatch(
            "parameter horizon differs from model horizon".into(),
        ));
    }
    let prior_chol = linalg::cholesky_solve_factor(model.prior().cov(), "prior covariance")?;
    let mut acc = linalg::quad_form(&prior_chol, &(&means[0] - model.prior().mean()));
    for (k, a) in params.measurement().iter().enumerate() {
        if model.meas_dim(k) == 0 {
            continue;
        }
        let w = model.meas_noise(k) + &a.err_cov;
        let chol = linalg::cholesky_solve_factor(&w, "effective measurement noise")?;
        acc += linalg::quad_form(&chol, &(y.get(k) - a.predict(&means[k])));
    }
    for (k, a) in params.motion().iter().enumerate() {
        let w = model.motion_noise(k) + &a.err_cov;
        let chol = linalg::cholesky_solve_factor(&w, "effective process noise")?;
        acc += linalg::quad_form(&chol, &(&means[k + 1] - a.predict(&means[k])));
    }
    finite(0.5 * acc, "linearized trajectory cost")
}
