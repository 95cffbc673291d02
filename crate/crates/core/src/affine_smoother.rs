//! Exact closed-form smoothing for affine-plus-Gaussian models.
//!
//! Given affine approximations (gain, offset, error covariance) of the motion
//! and measurement maps, this module runs a Kalman forward pass — with the
//! linearization-error covariances folded into the process and measurement
//! noise — optionally followed by a per-timestep regularization update that
//! pulls the filtered belief toward an anchor trajectory, and finishes with
//! the Rauch–Tung–Striebel backward recursion.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::state_space::{
    AffineParams, Gaussian, MeasurementSequence, NonlinearSsm, TrajectoryEstimate, SYMMETRY_TOL,
};

/// Which algebraic form the measurement update uses for the posterior
/// covariance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CovarianceUpdate {
    /// P − K·S·Kᵀ, then symmetrized.
    #[default]
    Standard,
    /// Joseph form (I−KH)·P·(I−KH)ᵀ + K·R_eff·Kᵀ; more expensive, guaranteed
    /// PSD even with a suboptimal gain.
    Joseph,
}

/// Per-timestep regularization toward an anchor trajectory: each filtered
/// belief is additionally conditioned on the pseudo-measurement
/// anchor_k = x_k + e_k with e_k ~ N(0, λ⁻¹·S_k).
#[derive(Debug, Clone, Copy)]
pub struct LmRegularizer<'a> {
    pub lambda: f64,
    /// Scaling matrices S_k, one per timestep.
    pub scaling: &'a [DMatrix<f64>],
    pub anchor: &'a TrajectoryEstimate,
}

/// Forward-pass record: predicted and updated beliefs at every timestep.
/// When a regularizer is active, `updated` holds the post-regularization
/// belief (the one the prediction to k+1 and the backward pass consume).
#[derive(Debug, Clone)]
pub struct FilterCache {
    pub predicted: Vec<Gaussian>,
    pub updated: Vec<Gaussian>,
}

impl FilterCache {
    pub fn len(&self) -> usize {
        self.updated.len()
    }

    pub fn is_empty(&self) -> bool {
        self.updated.is_empty()
    }
}

fn check_square_sym(m: &DMatrix<f64>, d: usize, what: &'static str) -> Result<()> {
    if m.nrows() != d || m.ncols() != d {
        return Err(Error::DimensionMismatch(format!(
            "{what} is {}x{}, expected {d}x{d}",
            m.nrows(),
            m.ncols()
        )));
    }
    if d > 0 && linalg::max_abs_asymmetry(m) > SYMMETRY_TOL {
        return Err(Error::NotSymmetric(what));
    }
    Ok(())
}

/// Kalman prediction through an affine motion model with effective process
/// noise `q_eff` (model noise plus linearization-error covariance):
/// mean ← F·m + b, cov ← F·P·Fᵀ + q_eff.
pub fn kf_predict(
    belief: &Gaussian,
    f: &DMatrix<f64>,
    b: &DVector<f64>,
    q_eff: &DMatrix<f64>,
) -> Result<Gaussian> {
    let d = belief.dim();
    if f.nrows() != d || f.ncols() != d || b.len() != d {
        return Err(Error::DimensionMismatch(format!(
            "motion gain {}x{}, offset {} for state dim {d}",
            f.nrows(),
            f.ncols(),
            b.len()
        )));
    }
    check_square_sym(q_eff, d, "effective process noise")?;
    let mean = f * belief.mean() + b;
    let cov = f * belief.cov() * f.transpose() + q_eff;
    Ok(Gaussian::from_symmetrized(mean, cov))
}

/// Kalman measurement update through an affine measurement model with
/// effective noise `r_eff` (model noise plus linearization-error covariance).
///
/// A zero-dimensional measurement returns the belief unchanged.
pub fn kf_update(
    belief: &Gaussian,
    y: &DVector<f64>,
    h: &DMatrix<f64>,
    c: &DVector<f64>,
    r_eff: &DMatrix<f64>,
) -> Result<Gaussian> {
    kf_update_with_form(belief, y, h, c, r_eff, CovarianceUpdate::Standard)
}

/// [`kf_update`] with an explicit covariance-update form.
pub fn kf_update_with_form(
    belief: &Gaussian,
    y: &DVector<f64>,
    h: &DMatrix<f64>,
    c: &DVector<f64>,
    r_eff: &DMatrix<f64>,
    form: CovarianceUpdate,
) -> Result<Gaussian> {
    let d = belief.dim();
    let dy = h.nrows();
    if h.ncols() != d || y.len() != dy || c.len() != dy {
        return Err(Error::DimensionMismatch(format!(
            "measurement gain {}x{}, y {}, offset {} for state dim {d}",
            h.nrows(),
            h.ncols(),
            y.len(),
            c.len()
        )));
    }
    check_square_sym(r_eff, dy, "effective measurement noise")?;
    if dy == 0 {
        return Ok(belief.clone());
    }

    let p = belief.cov();
    let hp = h * p; // dy × d
    let s = &hp * h.transpose() + r_eff;
    let s = linalg::symmetrized(&s);
    let s_chol = linalg::cholesky_solve_factor(&s, "innovation covariance")
        .map_err(|_| Error::SingularInnovation)?;
    // gain K = P·Hᵀ·S⁻¹ = (S⁻¹·H·P)ᵀ since P and S are symmetric.
    let k = s_chol.solve(&hp).transpose();
    let innovation = y - (h * belief.mean() + c);
    let mean = belief.mean() + &k * &innovation;

    let cov = match form {
        CovarianceUpdate::Standard => p - &k * &s * k.transpose(),
        CovarianceUpdate::Joseph => {
            let ikh = DMatrix::identity(d, d) - &k * h;
            &ikh * p * ikh.transpose() + &k * r_eff * k.transpose()
        }
    };
    Ok(Gaussian::from_symmetrized(mean, cov))
}

/// Conditions `belief` on the pseudo-measurement `anchor = x + e`,
/// e ~ N(0, λ⁻¹·S): Σ = P + λ⁻¹·S, K = P·Σ⁻¹, mean ← m + K·(anchor − m),
/// cov ← P − K·Σ·Kᵀ.
///
/// Errors if λ ≤ 0; callers implementing a "skip when λ = 0" rule must guard
/// the call themselves.
pub fn lm_pseudo_update(
    belief: &Gaussian,
    anchor: &DVector<f64>,
    lambda: f64,
    s: &DMatrix<f64>,
) -> Result<Gaussian> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "regularization update needs lambda > 0, got {lambda}"
        )));
    }
    let d = belief.dim();
    if anchor.len() != d {
        return Err(Error::DimensionMismatch(format!(
            "anchor dim {} for state dim {d}",
            anchor.len()
        )));
    }
    check_square_sym(s, d, "regularization scaling")?;

    let p = belief.cov();
    let sigma = p + s / lambda;
    let sigma = linalg::symmetrized(&sigma);
    let chol = linalg::cholesky_solve_factor(&sigma, "regularization pseudo-covariance")?;
    // K = P·Σ⁻¹ = (Σ⁻¹·P)ᵀ.
    let k = chol.solve(p).transpose();
    let mean = belief.mean() + &k * (anchor - belief.mean());
    let cov = p - &k * &sigma * k.transpose();
    Ok(Gaussian::from_symmetrized(mean, cov))
}

/// Runs the Kalman forward pass for `model` under the affine approximations
/// `params`, conditioning on `y` and optionally regularizing toward an
/// anchor trajectory.
pub fn forward_filter(
    model: &NonlinearSsm,
    params: &AffineParams,
    y: &MeasurementSequence,
    lm: Option<LmRegularizer<'_>>,
    form: CovarianceUpdate,
) -> Result<FilterCache> {
    let horizon = model.horizon();
    if params.horizon() != horizon {
        return Err(Error::DimensionMismatch(format!(
            "affine parameters cover {} timesteps, model horizon is {horizon}",
            params.horizon()
        )));
    }
    model.check_conformable(y)?;
    if let Some(lm) = &lm {
        if lm.lambda < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "regularization strength must be nonnegative, got {}",
                lm.lambda
            )));
        }
        if lm.anchor.len() != horizon || lm.scaling.len() != horizon {
            return Err(Error::DimensionMismatch(
                "regularizer anchor/scaling length differs from horizon".into(),
            ));
        }
    }
    let regularize = lm.as_ref().is_some_and(|l| l.lambda > 0.0);

    let mut predicted = Vec::with_capacity(horizon);
    let mut updated = Vec::with_capacity(horizon);
    for k in 0..horizon {
        let pred = if k == 0 {
            model.prior().clone()
        } else {
            let motion = &params.motion()[k - 1];
            let q_eff = model.motion_noise(k - 1) + &motion.err_cov;
            kf_predict(updated.last().unwrap(), &motion.gain, &motion.offset, &q_eff)?
        };

        let meas = &params.measurement()[k];
        let mut post = if model.meas_dim(k) == 0 {
            pred.clone()
        } else {
            let r_eff = model.meas_noise(k) + &meas.err_cov;
            kf_update_with_form(&pred, y.get(k), &meas.gain, &meas.offset, &r_eff, form)?
        };
        if regularize {
            let lm = lm.as_ref().unwrap();
            post = lm_pseudo_update(&post, lm.anchor.mean(k), lm.lambda, &lm.scaling[k])?;
        }
        predicted.push(pred);
        updated.push(post);
    }
    Ok(FilterCache { predicted, updated })
}

/// Rauch–Tung–Striebel backward pass over a forward-filter cache:
/// G_k = P_{k|k}·F_kᵀ·P_{k+1|k}⁻¹, then means and covariances are corrected
/// from the back.
pub fn rts_backward(cache: &FilterCache, params: &AffineParams) -> Result<TrajectoryEstimate> {
    let horizon = cache.len();
    if horizon == 0 || params.horizon() != horizon {
        return Err(Error::DimensionMismatch(format!(
            "cache length {horizon} vs affine parameters for {} timesteps",
            params.horizon()
        )));
    }

    let mut means = vec![DVector::zeros(0); horizon];
    let mut covs = vec![DMatrix::zeros(0, 0); horizon];
    let last = &cache.updated[horizon - 1];
    means[horizon - 1] = last.mean().clone();
    covs[horizon - 1] = last.cov().clone();

    for k in (0..horizon - 1).rev() {
        let upd = &cache.updated[k];
        let pred_next = &cache.predicted[k + 1];
        let f = &params.motion()[k].gain;
        let chol = linalg::cholesky_solve_factor(pred_next.cov(), "predicted covariance")?;
        // G = P_u·Fᵀ·P_p⁻¹ = (P_p⁻¹·F·P_u)ᵀ.
        let g = chol.solve(&(f * upd.cov())).transpose();
        means[k] = upd.mean() + &g * (&means[k + 1] - pred_next.mean());
        let cov = upd.cov() + &g * (&covs[k + 1] - pred_next.cov()) * g.transpose();
        covs[k] = linalg::symmetrized(&cov);
    }
    Ok(TrajectoryEstimate::from_symmetrized_parts(means, covs))
}

/// Forward filter plus backward smoothing in one call: the exact posterior
/// marginals of the affine model, optionally regularized toward an anchor.
pub fn affine_smooth(
    model: &NonlinearSsm,
    params: &AffineParams,
    y: &MeasurementSequence,
    lm: Option<LmRegularizer<'_>>,
) -> Result<TrajectoryEstimate> {
    affine_smooth_with(model, params, y, lm, CovarianceUpdate::Standard)
}

/// [`affine_smooth`] with an explicit covariance-update form.
pub fn affine_smooth_with(
    model: &NonlinearSsm,
    params: &AffineParams,
    y: &MeasurementSequence,
    lm: Option<LmRegularizer<'_>>,
    form: CovarianceUpdate,
) -> Result<TrajectoryEstimate> {
    let cache = forward_filter(model, params, y, lm, form)?;
    rts_backward(&cache, params)
}
