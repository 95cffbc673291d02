//! Monte-Carlo simulation of a nonlinear state-space model.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::linalg::psd_sqrt;
use crate::state_space::{MeasurementSequence, NonlinearSsm};

/// One zero-mean Gaussian draw colored by `root`, a symmetric square root of
/// the desired covariance.
fn colored_noise(rng: &mut ChaCha8Rng, root: &DMatrix<f64>) -> DVector<f64> {
    let z = DVector::from_fn(root.ncols(), |_, _| StandardNormal.sample(rng));
    root * z
}

/// Simulates one trajectory and its measurements from `model`.
///
/// The initial state is drawn from the prior, states follow
/// `x_{k+1} = f_k(x_k) + q_k`, and measurements are `y_k = h_k(x_k) + r_k`.
/// Noise is colored through symmetric square roots of the covariances, which
/// also handles singular (including zero) covariances. The draw order is
/// fixed — the full state sequence first, then the measurements — so a given
/// seed always produces bit-identical output. Steps with no measurement
/// yield an empty vector and consume no randomness.
pub fn simulate(model: &NonlinearSsm, seed: u64) -> (Vec<DVector<f64>>, MeasurementSequence) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let horizon = model.horizon();

    let mut states = Vec::with_capacity(horizon);
    let prior_root = psd_sqrt(model.prior().cov());
    states.push(model.prior().mean() + colored_noise(&mut rng, &prior_root));
    for k in 0..horizon - 1 {
        let root = psd_sqrt(model.motion_noise(k));
        let next = model.motion(k).apply(&states[k]) + colored_noise(&mut rng, &root);
        states.push(next);
    }

    let mut measurements = Vec::with_capacity(horizon);
    for (k, state) in states.iter().enumerate() {
        if model.meas_dim(k) == 0 {
            measurements.push(DVector::zeros(0));
            continue;
        }
        let root = psd_sqrt(model.meas_noise(k));
        measurements.push(model.measurement(k).apply(state) + colored_noise(&mut rng, &root));
    }

    (states, MeasurementSequence::new(measurements))
}
