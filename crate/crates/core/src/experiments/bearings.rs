//! Bearings-only measurements from fixed planar sensors.
//!
//! Each active sensor reports `atan2(p_y − s_y, p_x − s_x)`, the angle from
//! the sensor to the target. A schedule can override, per timestep, which
//! sensors report and at what noise level.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::state_space::DiffMap;

/// Which sensors report at one timestep, and their noise levels.
#[derive(Debug, Clone, PartialEq)]
struct ScheduleEntry {
    active: Vec<usize>,
    stds: Vec<f64>,
}

/// A set of fixed planar bearings sensors with per-sensor noise levels and an
/// optional per-timestep schedule of active subsets.
#[derive(Debug, Clone, PartialEq)]
pub struct BearingsSensorConfig {
    sensors: Vec<[f64; 2]>,
    stds: Vec<f64>,
    schedule: BTreeMap<usize, ScheduleEntry>,
}

impl BearingsSensorConfig {
    /// All sensors report at every timestep unless a schedule entry says
    /// otherwise. Noise levels are standard deviations in radians.
    pub fn new(sensors: Vec<[f64; 2]>, stds: Vec<f64>) -> Result<Self> {
        if sensors.is_empty() {
            return Err(Error::InvalidParameter(
                "at least one sensor is required".into(),
            ));
        }
        if sensors.len() != stds.len() {
            return Err(Error::InvalidParameter(format!(
                "{} sensors but {} noise levels",
                sensors.len(),
                stds.len()
            )));
        }
        check_stds(&stds)?;
        if sensors.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(
                "sensor positions must be finite".into(),
            ));
        }
        Ok(Self {
            sensors,
            stds,
            schedule: BTreeMap::new(),
        })
    }

    /// The two-sensor benchmark layout: sensors at (−1.5, 0.5) and (1, 1),
    /// both with σ = 0.5 rad.
    pub fn two_sensors() -> Self {
        Self::new(vec![[-1.5, 0.5], [1.0, 1.0]], vec![0.5, 0.5])
            .expect("static configuration is valid")
    }

    /// Overrides the active sensor subset and noise levels at timestep `k`
    /// (0-based). An empty subset means no measurement at that step.
    pub fn set_override(&mut self, k: usize, active: Vec<usize>, stds: Vec<f64>) -> Result<()> {
        if active.len() != stds.len() {
            return Err(Error::InvalidParameter(format!(
                "{} active sensors but {} noise levels at step {k}",
                active.len(),
                stds.len()
            )));
        }
        if let Some(&bad) = active.iter().find(|&&i| i >= self.sensors.len()) {
            return Err(Error::InvalidParameter(format!(
                "sensor index {bad} out of range (have {})",
                self.sensors.len()
            )));
        }
        check_stds(&stds)?;
        self.schedule.insert(k, ScheduleEntry { active, stds });
        Ok(())
    }

    /// At every `period`-th timestep (1-based, so steps
    /// `period, 2·period, …` up to `horizon`) only `sensor` reports, at
    /// noise level `std`. Every other step keeps the full default subset.
    pub fn with_periodic_single_sensor(
        mut self,
        period: usize,
        sensor: usize,
        std: f64,
        horizon: usize,
    ) -> Result<Self> {
        if period == 0 {
            return Err(Error::InvalidParameter("period must be at least 1".into()));
        }
        let mut k = period - 1;
        while k < horizon {
            self.set_override(k, vec![sensor], vec![std])?;
            k += period;
        }
        Ok(self)
    }

    pub fn num_sensors(&self) -> usize {
        self.sensors.len()
    }

    pub fn sensors(&self) -> &[[f64; 2]] {
        &self.sensors
    }

    pub fn stds(&self) -> &[f64] {
        &self.stds
    }

    /// Resolved (position, noise level) pairs reporting at timestep `k`.
    pub fn active(&self, k: usize) -> Vec<([f64; 2], f64)> {
        match self.schedule.get(&k) {
            Some(entry) => entry
                .active
                .iter()
                .zip(&entry.stds)
                .map(|(&i, &std)| (self.sensors[i], std))
                .collect(),
            None => self
                .sensors
                .iter()
                .zip(&self.stds)
                .map(|(&pos, &std)| (pos, std))
                .collect(),
        }
    }

    /// Number of bearings reported at timestep `k`.
    pub fn meas_dim(&self, k: usize) -> usize {
        match self.schedule.get(&k) {
            Some(entry) => entry.active.len(),
            None => self.sensors.len(),
        }
    }

    /// The measurement map at timestep `k` with its analytic Jacobian.
    ///
    /// The Jacobian depends only on position, so its velocity and turn-rate
    /// columns are zero. If the target coincides with a sensor the map
    /// returns `atan2(0, 0) = 0` and the Jacobian divides by zero; use
    /// [`bearings_measurement`] to surface that case as an error.
    pub fn measurement_map(&self, k: usize) -> DiffMap {
        let positions: Vec<[f64; 2]> = self.active(k).iter().map(|&(pos, _)| pos).collect();
        let out = positions.len();
        let jac_positions = positions.clone();
        DiffMap::with_jacobian(
            out,
            move |x| {
                DVector::from_iterator(
                    positions.len(),
                    positions
                        .iter()
                        .map(|s| (x[1] - s[1]).atan2(x[0] - s[0])),
                )
            },
            move |x| {
                let mut j = DMatrix::zeros(jac_positions.len(), x.len());
                for (row, s) in jac_positions.iter().enumerate() {
                    let dx = x[0] - s[0];
                    let dy = x[1] - s[1];
                    let r2 = dx * dx + dy * dy;
                    j[(row, 0)] = -dy / r2;
                    j[(row, 1)] = dx / r2;
                }
                j
            },
        )
    }

    /// Diagonal measurement-noise covariance at timestep `k`.
    pub fn noise_cov(&self, k: usize) -> DMatrix<f64> {
        let stds: Vec<f64> = self.active(k).iter().map(|&(_, std)| std).collect();
        DMatrix::from_diagonal(&DVector::from_iterator(
            stds.len(),
            stds.iter().map(|s| s * s),
        ))
    }
}

fn check_stds(stds: &[f64]) -> Result<()> {
    if stds.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "noise levels must be positive and finite, got {stds:?}"
        )));
    }
    Ok(())
}

/// Bearings from every sensor active at timestep `k` to the target position
/// in `x`. Fails with [`Error::TargetAtSensor`] if the target coincides with
/// an active sensor, where the bearing is undefined.
pub fn bearings_measurement(
    x: &DVector<f64>,
    config: &BearingsSensorConfig,
    k: usize,
) -> Result<DVector<f64>> {
    let active = config.active(k);
    let mut out = DVector::zeros(active.len());
    for (row, (s, _)) in active.iter().enumerate() {
        let dx = x[0] - s[0];
        let dy = x[1] - s[1];
        if dx == 0.0 && dy == 0.0 {
            return Err(Error::TargetAtSensor);
        }
        out[row] = dy.atan2(dx);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::central_difference_jacobian;
    use approx::assert_abs_diff_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

    fn state(px: f64, py: f64) -> DVector<f64> {
        DVector::from_vec(vec![px, py, 0.4, -0.2, 0.1])
    }

    fn origin_sensor() -> BearingsSensorConfig {
        BearingsSensorConfig::new(vec![[0.0, 0.0]], vec![0.1]).unwrap()
    }

    #[test]
    fn diagonal_target_gives_forty_five_degrees() {
        let y = bearings_measurement(&state(1.0, 1.0), &origin_sensor(), 0).unwrap();
        assert_abs_diff_eq!(y[0], FRAC_PI_4, epsilon = 1e-15);
    }

    #[test]
    fn target_due_north_gives_ninety_degrees() {
        let y = bearings_measurement(&state(0.0, 2.5), &origin_sensor(), 0).unwrap();
        assert_abs_diff_eq!(y[0], FRAC_PI_2, epsilon = 1e-15);
    }

    #[test]
    fn target_at_sensor_is_an_error() {
        let err = bearings_measurement(&state(0.0, 0.0), &origin_sensor(), 0).unwrap_err();
        assert!(matches!(err, Error::TargetAtSensor));
    }

    #[test]
    fn map_and_direct_evaluation_agree() {
        let config = BearingsSensorConfig::two_sensors();
        let x = state(0.3, -0.8);
        let via_map = config.measurement_map(0).apply(&x);
        let direct = bearings_measurement(&x, &config, 0).unwrap();
        assert_eq!(via_map, direct);
        assert_eq!(via_map.len(), 2);
    }

    #[test]
    fn jacobian_matches_finite_differences_and_ignores_velocity() {
        let config = BearingsSensorConfig::two_sensors();
        let map = config.measurement_map(0);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            // Keep the target away from both sensors.
            let x = DVector::from_vec(vec![
                rng.random_range(2.0..4.0),
                rng.random_range(2.0..4.0),
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
                rng.random_range(-1.0..1.0),
            ]);
            let analytic = map.jacobian(&x);
            let numeric = central_difference_jacobian(|x| map.apply(x), &x, 2);
            assert!((&analytic - &numeric).abs().max() < 1e-6);
            // Bearings depend on position only.
            for row in 0..2 {
                for col in 2..5 {
                    assert_eq!(analytic[(row, col)], 0.0);
                }
            }
        }
    }

    #[test]
    fn schedule_overrides_active_subset_and_noise() {
        let config = BearingsSensorConfig::two_sensors()
            .with_periodic_single_sensor(50, 1, 0.025, 500)
            .unwrap();
        // Step 49 is the 50th step (1-based): only sensor 1, precise noise.
        assert_eq!(config.meas_dim(49), 1);
        assert_eq!(config.active(49), vec![([1.0, 1.0], 0.025)]);
        let r = config.noise_cov(49);
        assert_abs_diff_eq!(r[(0, 0)], 0.025 * 0.025, epsilon = 1e-18);
        // Every other step keeps the default two-sensor arrangement.
        assert_eq!(config.meas_dim(48), 2);
        assert_eq!(config.meas_dim(0), 2);
        assert_eq!(config.meas_dim(499), 1);
        assert_eq!(config.meas_dim(500), 2);
        let r_default = config.noise_cov(48);
        assert_abs_diff_eq!(r_default[(0, 0)], 0.25, epsilon = 1e-15);

        let x = state(0.0, 0.0);
        let y = config.measurement_map(49).apply(&x);
        assert_eq!(y.len(), 1);
        // Bearing from (1, 1) to the origin points into the third quadrant.
        assert_abs_diff_eq!(y[0], (-1.0f64).atan2(-1.0), epsilon = 1e-15);
    }

    #[test]
    fn explicit_override_replaces_the_default_subset() {
        let mut config = BearingsSensorConfig::two_sensors();
        config.set_override(3, vec![0], vec![0.2]).unwrap();
        assert_eq!(config.meas_dim(3), 1);
        assert_eq!(config.active(3), vec![([-1.5, 0.5], 0.2)]);
        assert_eq!(config.meas_dim(2), 2);
        let r = config.noise_cov(2);
        assert_abs_diff_eq!(r[(1, 1)], 0.25, epsilon = 1e-15);
    }

    #[test]
    fn invalid_configurations_are_rejected() {
        assert!(BearingsSensorConfig::new(vec![], vec![]).is_err());
        assert!(BearingsSensorConfig::new(vec![[0.0, 0.0]], vec![0.1, 0.2]).is_err());
        assert!(BearingsSensorConfig::new(vec![[0.0, 0.0]], vec![0.0]).is_err());
        assert!(BearingsSensorConfig::new(vec![[0.0, 0.0]], vec![-0.5]).is_err());
        assert!(BearingsSensorConfig::new(vec![[f64::NAN, 0.0]], vec![0.1]).is_err());

        let mut config = BearingsSensorConfig::two_sensors();
        assert!(config.set_override(0, vec![2], vec![0.1]).is_err());
        assert!(config.set_override(0, vec![0], vec![]).is_err());
        assert!(config.set_override(0, vec![0], vec![0.0]).is_err());
        assert!(config
            .clone()
            .with_periodic_single_sensor(0, 0, 0.1, 10)
            .is_err());
        assert!(config
            .clone()
            .with_periodic_single_sensor(5, 7, 0.1, 10)
            .is_err());
    }
}
