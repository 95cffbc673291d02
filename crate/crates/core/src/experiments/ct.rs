//! Nearly-coordinated-turn motion in the plane.
//!
//! The state is `[p_x, p_y, v_x, v_y, ω]`: position, velocity, and a turn
//! rate that rotates the velocity vector by `ωT` each step.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::state_space::DiffMap;

/// Dimension of the coordinated-turn state.
pub const CT_STATE_DIM: usize = 5;

/// Indices of the position components within the coordinated-turn state.
pub const CT_POSITION: [usize; 2] = [0, 1];

/// Below this value of `|ωT|` the turn coefficients switch to their series
/// expansions, which stay accurate where the closed forms lose digits.
const SERIES_THRESHOLD: f64 = 1e-8;

/// Discrete-time coordinated-turn motion model with white-noise-driven
/// velocity and turn rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoordinatedTurnModel {
    /// Sampling period `T` in seconds. Must be positive.
    pub period: f64,
    /// Intensity of the white acceleration driving the velocity components.
    pub velocity_noise: f64,
    /// Intensity of the white noise driving the turn rate.
    pub turn_noise: f64,
}

impl CoordinatedTurnModel {
    pub fn new(period: f64, velocity_noise: f64, turn_noise: f64) -> Result<Self> {
        if !(period > 0.0) || !period.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "sampling period must be positive and finite, got {period}"
            )));
        }
        if !(velocity_noise >= 0.0) || !(turn_noise >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "noise intensities must be non-negative, got q_v = {velocity_noise}, \
                 q_w = {turn_noise}"
            )));
        }
        Ok(Self {
            period,
            velocity_noise,
            turn_noise,
        })
    }

    /// The one-step transition as a differentiable map with its analytic
    /// Jacobian attached.
    pub fn motion_map(&self) -> DiffMap {
        let t = self.period;
        DiffMap::with_jacobian(
            CT_STATE_DIM,
            move |x| ct_motion(x, t),
            move |x| ct_motion_jacobian(x, t),
        )
    }

    /// Process-noise covariance: discretized white-acceleration blocks of
    /// intensity `velocity_noise` on each position/velocity pair, plus
    /// `turn_noise · T` on the turn rate.
    pub fn process_noise(&self) -> DMatrix<f64> {
        let t = self.period;
        let qv = self.velocity_noise;
        let pp = qv * t * t * t / 3.0;
        let pv = qv * t * t / 2.0;
        let vv = qv * t;
        let mut q = DMatrix::zeros(CT_STATE_DIM, CT_STATE_DIM);
        q[(0, 0)] = pp;
        q[(1, 1)] = pp;
        q[(0, 2)] = pv;
        q[(2, 0)] = pv;
        q[(1, 3)] = pv;
        q[(3, 1)] = pv;
        q[(2, 2)] = vv;
        q[(3, 3)] = vv;
        q[(4, 4)] = self.turn_noise * t;
        q
    }
}

impl Default for CoordinatedTurnModel {
    /// The tracking-benchmark defaults: `T = 0.01`, `q_v = 1e-4`, `q_ω = 1e-2`.
    fn default() -> Self {
        Self {
            period: 0.01,
            velocity_noise: 1e-4,
            turn_noise: 1e-2,
        }
    }
}

/// `sin(ωT)/ω` and `(1 − cos(ωT))/ω`, the coefficients that advance position
/// along a circular arc. Switches to series expansions for small `|ωT|`; the
/// closed form uses `1 − cos u = 2 sin²(u/2)` to avoid cancellation.
fn turn_coefficients(omega: f64, t: f64) -> (f64, f64) {
    if (omega * t).abs() < SERIES_THRESHOLD {
        turn_coefficients_series(omega, t)
    } else {
        turn_coefficients_exact(omega, t)
    }
}

fn turn_coefficients_exact(omega: f64, t: f64) -> (f64, f64) {
    let u = omega * t;
    let half = 0.5 * u;
    (u.sin() / omega, 2.0 * half.sin() * half.sin() / omega)
}

fn turn_coefficients_series(omega: f64, t: f64) -> (f64, f64) {
    let u = omega * t;
    let u2 = u * u;
    (
        t * (1.0 - u2 / 6.0),
        t * 0.5 * u * (1.0 - u2 / 12.0),
    )
}

/// Derivatives of the turn coefficients with respect to ω, with the same
/// small-`|ωT|` series switch as [`turn_coefficients`].
fn turn_coefficient_derivatives(omega: f64, t: f64, s: f64, c: f64) -> (f64, f64) {
    let u = omega * t;
    if u.abs() < SERIES_THRESHOLD {
        let u2 = u * u;
        let t2 = t * t;
        (t2 * u * (-1.0 / 3.0 + u2 / 30.0), t2 * (0.5 - u2 / 8.0))
    } else {
        ((t * u.cos() - s) / omega, (t * u.sin() - c) / omega)
    }
}

/// Advances a coordinated-turn state by one sampling period: the position
/// moves along a circular arc and the velocity rotates by `ωT`.
pub fn ct_motion(x: &DVector<f64>, period: f64) -> DVector<f64> {
    let (vx, vy, omega) = (x[2], x[3], x[4]);
    let u = omega * period;
    let (su, cu) = (u.sin(), u.cos());
    let (s, c) = turn_coefficients(omega, period);
    DVector::from_vec(vec![
        x[0] + s * vx - c * vy,
        x[1] + c * vx + s * vy,
        cu * vx - su * vy,
        su * vx + cu * vy,
        omega,
    ])
}

/// Analytic Jacobian of [`ct_motion`] with respect to the state.
pub fn ct_motion_jacobian(x: &DVector<f64>, period: f64) -> DMatrix<f64> {
    let (vx, vy, omega) = (x[2], x[3], x[4]);
    let t = period;
    let u = omega * t;
    let (su, cu) = (u.sin(), u.cos());
    let (s, c) = turn_coefficients(omega, t);
    let (ds, dc) = turn_coefficient_derivatives(omega, t, s, c);
    let mut j = DMatrix::zeros(CT_STATE_DIM, CT_STATE_DIM);
    j[(0, 0)] = 1.0;
    j[(0, 2)] = s;
    j[(0, 3)] = -c;
    j[(0, 4)] = ds * vx - dc * vy;
    j[(1, 1)] = 1.0;
    j[(1, 2)] = c;
    j[(1, 3)] = s;
    j[(1, 4)] = dc * vx + ds * vy;
    j[(2, 2)] = cu;
    j[(2, 3)] = -su;
    j[(2, 4)] = -t * (su * vx + cu * vy);
    j[(3, 2)] = su;
    j[(3, 3)] = cu;
    j[(3, 4)] = t * (cu * vx - su * vy);
    j[(4, 4)] = 1.0;
    j
}
