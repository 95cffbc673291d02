//! Core domain types: Gaussian beliefs, nonlinear state-space models, affine
//! parameter bundles, trajectory estimates, and measurement sequences.
//!
//! The model is
//!
//! ```text
//!   x_{k+1} = f_k(x_k) + q_k,   q_k ~ N(0, Q_k)
//!   y_k     = h_k(x_k) + r_k,   r_k ~ N(0, R_k)
//!   x_1     ~ N(prior mean, prior cov)
//! ```
//!
//! with per-timestep measurement dimension: `h_k` may emit a different number
//! of components at each timestep (including zero, meaning no measurement).

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;

/// Tolerance used when checking symmetry of stored covariances.
pub const SYMMETRY_TOL: f64 = 1e-9;

/// Eigenvalue floor a stored covariance must satisfy (before clipping).
pub const PSD_EIG_TOL: f64 = -1e-10;

/// Returns `(M + Mᵀ)/2` with negative eigenvalues clipped to zero.
///
/// Errors if `M` is not square. The result is symmetric PSD up to roundoff
/// in the eigenvector recomposition.
pub fn symmetrize_psd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if m.nrows() != m.ncols() {
        return Err(Error::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    let sym = linalg::symmetrized(m);
    if sym.is_empty() {
        return Ok(sym);
    }
    let eig = sym.clone().symmetric_eigen();
    if eig.eigenvalues.iter().all(|&v| v >= 0.0) {
        return Ok(sym);
    }
    let mut vals = eig.eigenvalues;
    for v in vals.iter_mut() {
        *v = v.max(0.0);
    }
    let rebuilt = &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose();
    Ok(linalg::symmetrized(&rebuilt))
}

/// A Gaussian belief N(mean, cov). The stored covariance is always symmetric
/// PSD: construction passes any input matrix through [`symmetrize_psd`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl Gaussian {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
            return Err(Error::DimensionMismatch(format!(
                "mean dim {} vs cov {}x{}",
                mean.len(),
                cov.nrows(),
                cov.ncols()
            )));
        }
        let cov = symmetrize_psd(&cov)?;
        Ok(Self { mean, cov })
    }

    /// Cheap internal constructor for matrices already known to be PSD up to
    /// roundoff: symmetrizes without the eigenvalue clip.
    pub(crate) fn from_symmetrized(mean: DVector<f64>, cov: DMatrix<f64>) -> Self {
        debug_assert_eq!(cov.nrows(), mean.len());
        let cov = linalg::symmetrized(&cov);
        Self { mean, cov }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn into_parts(self) -> (DVector<f64>, DMatrix<f64>) {
        (self.mean, self.cov)
    }
}

type MapFn = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
type JacFn = Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;

/// A vector-valued map with a known output dimension and an optional analytic
/// Jacobian. Without one, [`DiffMap::jacobian`] falls back to central finite
/// differences with step h = √ε·(1 + |x_j|) per coordinate.
#[derive(Clone)]
pub struct DiffMap {
    out_dim: usize,
    f: MapFn,
    jac: Option<JacFn>,
}

impl DiffMap {
    pub fn new<F>(out_dim: usize, f: F) -> Self
    where
        F: Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    {
        Self {
            out_dim,
            f: Arc::new(f),
            jac: None,
        }
    }

    pub fn with_jacobian<F, J>(out_dim: usize, f: F, jac: J) -> Self
    where
        F: Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        J: Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    {
        Self {
            out_dim,
            f: Arc::new(f),
            jac: Some(Arc::new(jac)),
        }
    }

    /// The identity map on d-dimensional states.
    pub fn identity(d: usize) -> Self {
        Self::with_jacobian(d, |x| x.clone(), move |_| DMatrix::identity(d, d))
    }

    /// An affine map x ↦ A·x + c.
    pub fn affine(a: DMatrix<f64>, c: DVector<f64>) -> Self {
        let out = a.nrows();
        let a2 = a.clone();
        Self::with_jacobian(out, move |x| &a * x + &c, move |_| a2.clone())
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.f)(x)
    }

    pub fn has_analytic_jacobian(&self) -> bool {
        self.jac.is_some()
    }

    pub fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        match &self.jac {
            Some(j) => j(x),
            None => linalg::central_difference_jacobian(|v| (self.f)(v), x, self.out_dim),
        }
    }
}

impl fmt::Debug for DiffMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DiffMap")
            .field("out_dim", &self.out_dim)
            .field("analytic_jacobian", &self.jac.is_some())
            .finish()
    }
}

/// One affine-plus-Gaussian-error approximation z ≈ gain·x + offset + e,
/// e ~ N(0, err_cov). Taylor linearization yields err_cov = 0; SLR yields the
/// expected squared linearization error.
#[derive(Debug, Clone)]
pub struct AffineApprox {
    pub gain: DMatrix<f64>,
    pub offset: DVector<f64>,
    pub err_cov: DMatrix<f64>,
}

impl AffineApprox {
    pub fn new(gain: DMatrix<f64>, offset: DVector<f64>, err_cov: DMatrix<f64>) -> Result<Self> {
        let out = gain.nrows();
        if offset.len() != out || err_cov.nrows() != out || err_cov.ncols() != out {
            return Err(Error::DimensionMismatch(format!(
                "gain {}x{}, offset {}, err_cov {}x{}",
                gain.nrows(),
                gain.ncols(),
                offset.len(),
                err_cov.nrows(),
                err_cov.ncols()
            )));
        }
        Ok(Self {
            gain,
            offset,
            err_cov,
        })
    }

    /// Input (state) dimension.
    pub fn in_dim(&self) -> usize {
        self.gain.ncols()
    }

    /// Output dimension.
    pub fn out_dim(&self) -> usize {
        self.gain.nrows()
    }

    pub fn predict(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.gain * x + &self.offset
    }
}

/// Affine approximations for a whole trajectory: K−1 motion triples
/// (F_k, b_k, Ω_k) and K measurement triples (H_k, c_k, Γ_k).
#[derive(Debug, Clone)]
pub struct AffineParams {
    motion: Vec<AffineApprox>,
    measurement: Vec<AffineApprox>,
}

impl AffineParams {
    /// Validating constructor: checks counts, dimensions, and that every
    /// error covariance is symmetric PSD (zero matrices allowed).
    pub fn new(motion: Vec<AffineApprox>, measurement: Vec<AffineApprox>) -> Result<Self> {
        if measurement.is_empty() {
            return Err(Error::InvalidParameter(
                "measurement approximations must cover at least one timestep".into(),
            ));
        }
        if motion.len() + 1 != measurement.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} motion approximations for {} timesteps",
                motion.len(),
                measurement.len()
            )));
        }
        let d = measurement[0].in_dim();
        for a in motion.iter() {
            if a.in_dim() != d || a.out_dim() != d {
                return Err(Error::DimensionMismatch(
                    "motion approximation is not d_x -> d_x".into(),
                ));
            }
        }
        for a in measurement.iter() {
            if a.in_dim() != d {
                return Err(Error::DimensionMismatch(
                    "measurement approximation input dim differs from d_x".into(),
                ));
            }
        }
        for a in motion.iter().chain(measurement.iter()) {
            check_psd(&a.err_cov)?;
        }
        Ok(Self {
            motion,
            measurement,
        })
    }

    /// Constructor for products of the crate's own linearizers, whose error
    /// covariances are PSD by construction.
    pub(crate) fn from_parts_unchecked(
        motion: Vec<AffineApprox>,
        measurement: Vec<AffineApprox>,
    ) -> Self {
        Self {
            motion,
            measurement,
        }
    }

    /// Number of timesteps K.
    pub fn horizon(&self) -> usize {
        self.measurement.len()
    }

    pub fn motion(&self) -> &[AffineApprox] {
        &self.motion
    }

    pub fn measurement(&self) -> &[AffineApprox] {
        &self.measurement
    }
}

fn check_psd(m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    if m.is_empty() {
        return Ok(());
    }
    if linalg::max_abs_asymmetry(m) > SYMMETRY_TOL {
        return Err(Error::NotSymmetric("error covariance"));
    }
    let (lo, _) = linalg::symmetric_eig_range(&linalg::symmetrized(m));
    if lo < PSD_EIG_TOL {
        return Err(Error::InvalidParameter(format!(
            "error covariance has eigenvalue {lo:.3e} below the PSD tolerance"
        )));
    }
    Ok(())
}

/// A nonlinear state-space model over a fixed horizon K: motion maps f_k for
/// k = 1..K−1, measurement maps h_k for k = 1..K, their noise covariances,
/// and the prior over x₁.
#[derive(Debug, Clone)]
pub struct NonlinearSsm {
    motion: Vec<DiffMap>,
    motion_noise: Vec<DMatrix<f64>>,
    measurement: Vec<DiffMap>,
    meas_noise: Vec<DMatrix<f64>>,
    prior: Gaussian,
}

impl NonlinearSsm {
    /// Validating constructor. Rejects any Q_k or R_k that is asymmetric or
    /// whose Cholesky factorization fails (zero-dimension R_k for timesteps
    /// without a measurement is allowed).
    pub fn new(
        motion: Vec<DiffMap>,
        motion_noise: Vec<DMatrix<f64>>,
        measurement: Vec<DiffMap>,
        meas_noise: Vec<DMatrix<f64>>,
        prior: Gaussian,
    ) -> Result<Self> {
        let horizon = measurement.len();
        if horizon == 0 {
            return Err(Error::InvalidParameter("horizon must be at least 1".into()));
        }
        let d = prior.dim();
        if motion.len() + 1 != horizon {
            return Err(Error::DimensionMismatch(format!(
                "{} motion maps for horizon {}",
                motion.len(),
                horizon
            )));
        }
        if motion_noise.len() != motion.len() || meas_noise.len() != horizon {
            return Err(Error::DimensionMismatch(
                "noise covariance count does not match map count".into(),
            ));
        }
        for f in motion.iter() {
            if f.out_dim() != d {
                return Err(Error::DimensionMismatch(
                    "motion map output dim differs from state dim".into(),
                ));
            }
        }
        for q in motion_noise.iter() {
            check_spd(q, d, "motion noise")?;
        }
        for (h, r) in measurement.iter().zip(meas_noise.iter()) {
            check_spd(r, h.out_dim(), "measurement noise")?;
        }
        Ok(Self {
            motion,
            motion_noise,
            measurement,
            meas_noise,
            prior,
        })
    }

    /// Convenience constructor for models whose maps and noises do not vary
    /// with the timestep.
    pub fn time_invariant(
        horizon: usize,
        motion: DiffMap,
        motion_noise: DMatrix<f64>,
        measurement: DiffMap,
        meas_noise: DMatrix<f64>,
        prior: Gaussian,
    ) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::InvalidParameter("horizon must be at least 1".into()));
        }
        Self::new(
            vec![motion; horizon - 1],
            vec![motion_noise; horizon - 1],
            vec![measurement; horizon],
            vec![meas_noise; horizon],
            prior,
        )
    }

    /// Non-validating constructor for in-crate tests (e.g. exercising the
    /// deterministic zero-noise simulation path, which a validated model
    /// cannot express because noise covariances must be SPD).
    #[allow(dead_code)]
    pub(crate) fn new_unchecked(
        motion: Vec<DiffMap>,
        motion_noise: Vec<DMatrix<f64>>,
        measurement: Vec<DiffMap>,
        meas_noise: Vec<DMatrix<f64>>,
        prior: Gaussian,
    ) -> Self {
        Self {
            motion,
            motion_noise,
            measurement,
            meas_noise,
            prior,
        }
    }

    pub fn horizon(&self) -> usize {
        self.measurement.len()
    }

    pub fn state_dim(&self) -> usize {
        self.prior.dim()
    }

    /// Motion map f_k taking x_k to (the noiseless part of) x_{k+1},
    /// for k in 0..K−1.
    pub fn motion(&self, k: usize) -> &DiffMap {
        &self.motion[k]
    }

    pub fn motion_noise(&self, k: usize) -> &DMatrix<f64> {
        &self.motion_noise[k]
    }

    pub fn measurement(&self, k: usize) -> &DiffMap {
        &self.measurement[k]
    }

    pub fn meas_noise(&self, k: usize) -> &DMatrix<f64> {
        &self.meas_noise[k]
    }

    pub fn meas_dim(&self, k: usize) -> usize {
        self.measurement[k].out_dim()
    }

    pub fn prior(&self) -> &Gaussian {
        &self.prior
    }

    /// Checks a measurement sequence against the model's per-timestep
    /// dimensions.
    pub fn check_conformable(&self, y: &MeasurementSequence) -> Result<()> {
        if y.len() != self.horizon() {
            return Err(Error::DimensionMismatch(format!(
                "{} measurements for horizon {}",
                y.len(),
                self.horizon()
            )));
        }
        for k in 0..y.len() {
            if y.get(k).len() != self.meas_dim(k) {
                return Err(Error::DimensionMismatch(format!(
                    "measurement {} has dim {}, model expects {}",
                    k,
                    y.get(k).len(),
                    self.meas_dim(k)
                )));
            }
        }
        Ok(())
    }
}

fn check_spd(m: &DMatrix<f64>, expected_dim: usize, what: &'static str) -> Result<()> {
    if m.nrows() != expected_dim || m.ncols() != expected_dim {
        return Err(Error::DimensionMismatch(format!(
            "{what} is {}x{}, expected {expected_dim}x{expected_dim}",
            m.nrows(),
            m.ncols()
        )));
    }
    if expected_dim == 0 {
        return Ok(());
    }
    if linalg::max_abs_asymmetry(m) > SYMMETRY_TOL {
        return Err(Error::NotSymmetric(what));
    }
    if nalgebra::Cholesky::new(m.clone()).is_none() {
        return Err(Error::CholeskyFailed(what));
    }
    Ok(())
}

/// Gaussian marginals over a whole trajectory: K means and K covariances.
#[derive(Debug, Clone)]
pub struct TrajectoryEstimate {
    means: Vec<DVector<f64>>,
    covs: Vec<DMatrix<f64>>,
}

impl TrajectoryEstimate {
    /// Validating constructor; every covariance passes through
    /// [`symmetrize_psd`].
    pub fn new(means: Vec<DVector<f64>>, covs: Vec<DMatrix<f64>>) -> Result<Self> {
        if means.is_empty() || means.len() != covs.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} means vs {} covariances",
                means.len(),
                covs.len()
            )));
        }
        let d = means[0].len();
        let mut clipped = Vec::with_capacity(covs.len());
        for (m, c) in means.iter().zip(covs.iter()) {
            if m.len() != d || c.nrows() != d || c.ncols() != d {
                return Err(Error::DimensionMismatch(
                    "trajectory entries have inconsistent dimensions".into(),
                ));
            }
            clipped.push(symmetrize_psd(c)?);
        }
        Ok(Self {
            means,
            covs: clipped,
        })
    }

    /// Internal constructor for smoother outputs whose covariances were
    /// already symmetrized step-by-step.
    pub(crate) fn from_symmetrized_parts(means: Vec<DVector<f64>>, covs: Vec<DMatrix<f64>>) -> Self {
        debug_assert_eq!(means.len(), covs.len());
        Self { means, covs }
    }

    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn means(&self) -> &[DVector<f64>] {
        &self.means
    }

    pub fn covs(&self) -> &[DMatrix<f64>] {
        &self.covs
    }

    pub fn mean(&self, k: usize) -> &DVector<f64> {
        &self.means[k]
    }

    pub fn cov(&self, k: usize) -> &DMatrix<f64> {
        &self.covs[k]
    }

    pub fn is_finite(&self) -> bool {
        self.means.iter().all(linalg::all_finite_vec)
            && self.covs.iter().all(linalg::all_finite_mat)
    }

    pub fn into_parts(self) -> (Vec<DVector<f64>>, Vec<DMatrix<f64>>) {
        (self.means, self.covs)
    }
}

/// Measurements y_1..y_K; entries may be empty vectors at timesteps without
/// a measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSequence {
    values: Vec<DVector<f64>>,
}

impl MeasurementSequence {
    pub fn new(values: Vec<DVector<f64>>) -> Self {
        Self { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, k: usize) -> &DVector<f64> {
        &self.values[k]
    }

    pub fn iter(&self) -> std::slice::Iter<'_, DVector<f64>> {
        self.values.iter()
    }
}

impl From<Vec<DVector<f64>>> for MeasurementSequence {
    fn from(values: Vec<DVector<f64>>) -> Self {
        Self::new(values)
    }
}
