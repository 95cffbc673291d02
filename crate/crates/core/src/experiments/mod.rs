//! Benchmark assets: a coordinated-turn target model, bearings-only sensor
//! configurations, trajectory simulation, and estimation-error metrics.

pub(crate) mod bearings;
pub(crate) mod ct;
pub(crate) mod metrics;
pub(crate) mod sim;

pub use bearings::{bearings_measurement, BearingsSensorConfig};
pub use ct::{
    ct_motion, ct_motion_jacobian, CoordinatedTurnModel, CT_POSITION, CT_STATE_DIM,
};
pub use metrics::{nees, rmse};
pub use sim::simulate;

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::state_space::{Gaussian, NonlinearSsm};

/// The benchmark prior: mean `(0.1, 0.2, 1, 0, 0)` and covariance
/// `diag(0.1, 0.1, 1, 1, 1)`.
pub fn ct_default_prior() -> Gaussian {
    Gaussian::new(
        DVector::from_vec(vec![0.1, 0.2, 1.0, 0.0, 0.0]),
        DMatrix::from_diagonal(&DVector::from_vec(vec![0.1, 0.1, 1.0, 1.0, 1.0])),
    )
    .expect("static prior is valid")
}

/// Default trajectory length for the coordinated-turn benchmark.
pub const CT_DEFAULT_HORIZON: usize = 500;

/// Assembles the full coordinated-turn / bearings-only state-space model:
/// time-invariant motion, per-timestep measurement maps and noise levels
/// resolved from the sensor schedule, and the given prior.
pub fn build_ct_model(
    ct: &CoordinatedTurnModel,
    sensors: &BearingsSensorConfig,
    prior: Gaussian,
    horizon: usize,
) -> Result<NonlinearSsm> {
    NonlinearSsm::new(
        vec![ct.motion_map(); horizon.saturating_sub(1)],
        vec![ct.process_noise(); horizon.saturating_sub(1)],
        (0..horizon).map(|k| sensors.measurement_map(k)).collect(),
        (0..horizon).map(|k| sensors.noise_cov(k)).collect(),
        prior,
    )
}
