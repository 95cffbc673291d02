//! Estimation-error metrics: RMSE over selected components and the
//! normalized estimation error squared (NEES).

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::linalg::{cholesky_solve_factor, quad_form};
use crate::state_space::TrajectoryEstimate;

/// Root-mean-square error of `estimates` against `truth` over the selected
/// state components: `√((1/K) Σ_k ‖e_k‖²)` where `e_k` is restricted to
/// `components`.
pub fn rmse(
    estimates: &[DVector<f64>],
    truth: &[DVector<f64>],
    components: &[usize],
) -> Result<f64> {
    if estimates.len() != truth.len() || estimates.is_empty() {
        return Err(Error::DimensionMismatch(format!(
            "{} estimates vs {} true states",
            estimates.len(),
            truth.len()
        )));
    }
    if components.is_empty() {
        return Err(Error::InvalidParameter(
            "at least one component index is required".into(),
        ));
    }
    let mut total = 0.0;
    for (est, x) in estimates.iter().zip(truth) {
        for &i in components {
            if i >= est.len() || i >= x.len() {
                return Err(Error::DimensionMismatch(format!(
                    "component index {i} out of range for state dim {}",
                    est.len().min(x.len())
                )));
            }
            let e = est[i] - x[i];
            total += e * e;
        }
    }
    Ok((total / estimates.len() as f64).sqrt())
}

/// Normalized estimation error squared per timestep,
/// `ε_k = e_kᵀ P̂_k⁻¹ e_k` over the full state, plus its average over the
/// trajectory. For a calibrated estimator the average is close to the state
/// dimension.
pub fn nees(estimate: &TrajectoryEstimate, truth: &[DVector<f64>]) -> Result<(Vec<f64>, f64)> {
    if estimate.len() != truth.len() || truth.is_empty() {
        return Err(Error::DimensionMismatch(format!(
            "{} estimated states vs {} true states",
            estimate.len(),
            truth.len()
        )));
    }
    let mut per_step = Vec::with_capacity(truth.len());
    for (k, x) in truth.iter().enumerate() {
        if x.len() != estimate.state_dim() {
            return Err(Error::DimensionMismatch(format!(
                "true state dim {} vs estimate dim {} at step {k}",
                x.len(),
                estimate.state_dim()
            )));
        }
        let chol = cholesky_solve_factor(estimate.cov(k), "marginal covariance in NEES")?;
        per_step.push(quad_form(&chol, &(estimate.mean(k) - x)));
    }
    let mean = per_step.iter().sum::<f64>() / per_step.len() as f64;
    Ok((per_step, mean))
}
