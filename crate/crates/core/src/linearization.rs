//! Affine approximations of nonlinear maps.
//!
//! Two families are provided:
//!
//! - **Taylor**: first-order expansion around a point. Exact tangency at the
//!   expansion point, zero linearization-error covariance.
//! - **Statistical linear regression (SLR)**: the affine map minimizing the
//!   expected squared error under a Gaussian over the input, with the residual
//!   second moment returned as an error covariance. Expectations are computed
//!   with sigma-point rules (cubature or unscented).
//!
//! [`linearize_ssm`] applies either family across a whole trajectory to
//! produce the [`AffineParams`] consumed by the affine smoother.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::linalg;
use crate::state_space::{
    symmetrize_psd, AffineApprox, AffineParams, DiffMap, Gaussian, NonlinearSsm,
    TrajectoryEstimate,
};

/// Sigma-point rule used for SLR expectations.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum SigmaScheme {
    /// 2d points at mean ± √d · (Cholesky columns), uniform weights 1/(2d).
    #[default]
    Cubature,
    /// 2d+1 points: the mean plus mean ± √(d+κ) · (Cholesky columns);
    /// center weight κ/(d+κ), others 1/(2(d+κ)).
    Unscented { kappa: f64 },
}

/// How a nonlinear model is turned into affine parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LinearizationMode {
    /// First-order Taylor expansion around trajectory means.
    Taylor,
    /// Statistical linear regression around trajectory means and covariances.
    Slr(SigmaScheme),
}

/// A concrete set of sigma points with their weights.
#[derive(Debug, Clone)]
pub struct SigmaPointSet {
    pub points: Vec<DVector<f64>>,
    pub mean_weights: Vec<f64>,
    pub cov_weights: Vec<f64>,
}

/// Precomputed sigma-point geometry for a fixed covariance: offsets from the
/// center plus weights. Instantiating at different centers only shifts the
/// offsets, so re-linearizing around moving means (with frozen covariances)
/// avoids refactorizing.
#[derive(Debug, Clone)]
pub(crate) struct SigmaTemplate {
    offsets: Vec<DVector<f64>>,
    mean_weights: Vec<f64>,
    cov_weights: Vec<f64>,
}

impl SigmaTemplate {
    pub(crate) fn new(scheme: SigmaScheme, cov: &DMatrix<f64>) -> Result<Self> {
        let d = cov.nrows();
        if d == 0 {
            return Err(Error::InvalidParameter(
                "sigma points need a non-empty covariance".into(),
            ));
        }
        let chol = linalg::cholesky_sigma_factor(cov)?;
        let l = chol.l();
        match scheme {
            SigmaScheme::Cubature => {
                let scale = (d as f64).sqrt();
                let mut offsets = Vec::with_capacity(2 * d);
                for j in 0..d {
                    offsets.push(scale * l.column(j).clone_owned());
                }
                for j in 0..d {
                    offsets.push(-scale * l.column(j).clone_owned());
                }
                let w = 1.0 / (2.0 * d as f64);
                Ok(Self {
                    offsets,
                    mean_weights: vec![w; 2 * d],
                    cov_weights: vec![w; 2 * d],
                })
            }
            SigmaScheme::Unscented { kappa } => {
                let denom = d as f64 + kappa;
                if denom <= 0.0 {
                    return Err(Error::InvalidParameter(format!(
                        "unscented spread requires d + kappa > 0 (d = {d}, kappa = {kappa})"
                    )));
                }
                let scale = denom.sqrt();
                let mut offsets = Vec::with_capacity(2 * d + 1);
                offsets.push(DVector::zeros(d));
                for j in 0..d {
                    offsets.push(scale * l.column(j).clone_owned());
                }
                for j in 0..d {
                    offsets.push(-scale * l.column(j).clone_owned());
                }
                let w0 = kappa / denom;
                let wi = 1.0 / (2.0 * denom);
                let mut weights = vec![wi; 2 * d + 1];
                weights[0] = w0;
                Ok(Self {
                    offsets,
                    mean_weights: weights.clone(),
                    cov_weights: weights,
                })
            }
        }
    }

    pub(crate) fn offsets(&self) -> &[DVector<f64>] {
        &self.offsets
    }

    pub(crate) fn mean_weights(&self) -> &[f64] {
        &self.mean_weights
    }

    pub(crate) fn cov_weights(&self) -> &[f64] {
        &self.cov_weights
    }

    /// Materializes the point set centered at `center`.
    pub(crate) fn at(&self, center: &DVector<f64>) -> SigmaPointSet {
        SigmaPointSet {
            points: self.offsets.iter().map(|o| center + o).collect(),
            mean_weights: self.mean_weights.clone(),
            cov_weights: self.cov_weights.clone(),
        }
    }
}

/// Sigma points for `g` under the unscented rule with spread `kappa`.
pub fn unscented_points(g: &Gaussian, kappa: f64) -> Result<SigmaPointSet> {
    Ok(SigmaTemplate::new(SigmaScheme::Unscented { kappa }, g.cov())?.at(g.mean()))
}

/// Sigma points for `g` under the (parameter-free) cubature rule.
pub fn cubature_points(g: &Gaussian) -> Result<SigmaPointSet> {
    Ok(SigmaTemplate::new(SigmaScheme::Cubature, g.cov())?.at(g.mean()))
}

/// Sigma-point moments of `map` under `g`: the output mean `zbar`, the
/// input–output cross-covariance `psi`, and the output second central moment
/// `phi` (symmetrized).
#[derive(Debug, Clone)]
pub struct SlrMoments {
    pub zbar: DVector<f64>,
    pub psi: DMatrix<f64>,
    pub phi: DMatrix<f64>,
}

/// Computes [`SlrMoments`] for `map` under `g`, using the provided points
/// (which must have been drawn for `g`).
pub fn slr_moments(map: &DiffMap, g: &Gaussian, pts: &SigmaPointSet) -> Result<SlrMoments> {
    let d_in = g.dim();
    let d_out = map.out_dim();
    let images: Vec<DVector<f64>> = pts.points.iter().map(|p| map.apply(p)).collect();
    for z in &images {
        if z.len() != d_out {
            return Err(Error::DimensionMismatch(format!(
                "map produced dim {} instead of {}",
                z.len(),
                d_out
            )));
        }
        if !linalg::all_finite_vec(z) {
            return Err(Error::NonFinite("sigma-point image"));
        }
    }

    let mut zbar = DVector::zeros(d_out);
    for (w, z) in pts.mean_weights.iter().zip(&images) {
        zbar.axpy(*w, z, 1.0);
    }

    let mut psi = DMatrix::zeros(d_in, d_out);
    let mut phi = DMatrix::zeros(d_out, d_out);
    for ((w, p), z) in pts.cov_weights.iter().zip(&pts.points).zip(&images) {
        let dx = p - g.mean();
        let dz = z - &zbar;
        psi.ger(*w, &dx, &dz, 1.0);
        phi.ger(*w, &dz, &dz, 1.0);
    }
    let phi = linalg::symmetrized(&phi);
    Ok(SlrMoments { zbar, psi, phi })
}

/// First-order Taylor approximation of `map` at `xhat`:
/// gain = J(x̂), offset = map(x̂) − J(x̂)·x̂, error covariance = 0.
pub fn taylor_linearize(map: &DiffMap, xhat: &DVector<f64>) -> Result<AffineApprox> {
    let gain = map.jacobian(xhat);
    if !linalg::all_finite_mat(&gain) {
        return Err(Error::NonFinite("Jacobian"));
    }
    let value = map.apply(xhat);
    if !linalg::all_finite_vec(&value) {
        return Err(Error::NonFinite("map value at expansion point"));
    }
    let offset = &value - &gain * xhat;
    let d_out = map.out_dim();
    AffineApprox::new(gain, offset, DMatrix::zeros(d_out, d_out))
}

/// Statistical linear regression of `map` under `g`:
/// gain = Ψᵀ·cov⁻¹, offset = z̄ − gain·mean, and the expected squared
/// linearization error Φ − gain·cov·gainᵀ (symmetrized, clipped to PSD) as
/// the error covariance.
///
/// Errors if the covariance's condition number exceeds the supported cap.
pub fn slr_linearize(map: &DiffMap, g: &Gaussian, scheme: SigmaScheme) -> Result<AffineApprox> {
    let (lo, hi) = linalg::symmetric_eig_range(g.cov());
    if lo <= 0.0 || hi / lo > linalg::SLR_CONDITION_CAP {
        return Err(Error::SingularCovariance(
            "sigma-point regression needs a well-conditioned covariance",
        ));
    }
    let template = SigmaTemplate::new(scheme, g.cov())?;
    let pts = template.at(g.mean());
    let moments = slr_moments(map, g, &pts)?;
    let chol = linalg::cholesky_solve_factor(g.cov(), "sigma-point regression covariance")?;
    slr_from_moments(&moments, g.mean(), &chol)
}

/// Turns precomputed moments into the regression's affine approximation.
/// `cov_chol` must factor the same covariance the moments were drawn under.
pub(crate) fn slr_from_moments(
    moments: &SlrMoments,
    mean: &DVector<f64>,
    cov_chol: &Cholesky<f64, Dyn>,
) -> Result<AffineApprox> {
    // X = cov⁻¹·Ψ gives gain = Xᵀ and gain·cov·gainᵀ = Ψᵀ·X in one solve.
    let x = cov_chol.solve(&moments.psi);
    let gain = x.transpose();
    let offset = &moments.zbar - &gain * mean;
    let err = &moments.phi - moments.psi.transpose() * &x;
    let err = symmetrize_psd(&err)?;
    AffineApprox::new(gain, offset, err)
}

/// Linearizes every motion and measurement map of `model` around `traj`.
///
/// Taylor mode expands around the trajectory means only; SLR mode regresses
/// under Gaussians built from the trajectory's means *and* covariances.
/// Timesteps with a zero-dimensional measurement yield empty approximations.
pub fn linearize_ssm(
    model: &NonlinearSsm,
    traj: &TrajectoryEstimate,
    mode: LinearizationMode,
) -> Result<AffineParams> {
    let horizon = model.horizon();
    if traj.len() != horizon {
        return Err(Error::DimensionMismatch(format!(
            "trajectory length {} vs model horizon {}",
            traj.len(),
            horizon
        )));
    }
    if traj.state_dim() != model.state_dim() {
        return Err(Error::DimensionMismatch(format!(
            "trajectory state dim {} vs model dim {}",
            traj.state_dim(),
            model.state_dim()
        )));
    }

    let linearize_one = |map: &DiffMap, k: usize| -> Result<AffineApprox> {
        if map.out_dim() == 0 {
            let d = model.state_dim();
            return AffineApprox::new(DMatrix::zeros(0, d), DVector::zeros(0), DMatrix::zeros(0, 0));
        }
        match mode {
            LinearizationMode::Taylor => taylor_linearize(map, traj.mean(k)),
            LinearizationMode::Slr(scheme) => {
                let g = Gaussian::from_symmetrized(traj.mean(k).clone(), traj.cov(k).clone());
                slr_linearize(map, &g, scheme)
            }
        }
    };

    let mut motion = Vec::with_capacity(horizon - 1);
    for k in 0..horizon - 1 {
        motion.push(linearize_one(model.motion(k), k)?);
    }
    let mut measurement = Vec::with_capacity(horizon);
    for k in 0..horizon {
        measurement.push(linearize_one(model.measurement(k), k)?);
    }
    Ok(AffineParams::from_parts_unchecked(motion, measurement))
}
