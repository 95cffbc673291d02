//! Experiment configuration: strict TOML with every knob resolved to an
//! explicit value at load time, so the manifest can record exactly what ran.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use smoothers::{
    build_ct_model, BearingsSensorConfig, CoordinatedTurnModel, CovarianceUpdate, Gaussian,
    LineSearchKind, NonlinearSsm, SigmaScheme, SmootherConfig, SmootherVariant,
};

use crate::CliError;

/// A full experiment description. Unknown keys anywhere in the file are
/// rejected so that a config never silently means something else.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Number of Monte-Carlo trials.
    pub trials: usize,
    /// Base seed; trial `t` simulates with `seed + t`.
    pub seed: u64,
    /// Worker threads for the trial loop; 0 means one per core.
    #[serde(default)]
    pub workers: usize,
    /// How every smoother is initialized: a single non-iterated smoother
    /// pass ("noniterative") or zero means with the prior covariance at
    /// every step ("fixed").
    #[serde(default)]
    pub init: InitKind,
    /// State components entering the RMSE (defaults to the positions).
    #[serde(default = "default_rmse_components")]
    pub rmse_components: Vec<usize>,
    /// Whether to write per-trial trajectory CSVs.
    #[serde(default = "default_true")]
    pub write_trajectories: bool,
    /// Output directory; may instead be given on the command line.
    #[serde(default)]
    pub output_dir: Option<String>,
    pub model: ModelConfig,
    #[serde(default)]
    pub sensors: SensorConfig,
    pub smoothers: Vec<SmootherSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum InitKind {
    #[default]
    Noniterative,
    Fixed,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Only the coordinated-turn model is available from the CLI.
    #[serde(default)]
    pub kind: ModelKind,
    #[serde(default = "default_period")]
    pub period: f64,
    #[serde(default = "default_velocity_noise")]
    pub velocity_noise: f64,
    #[serde(default = "default_turn_noise")]
    pub turn_noise: f64,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default = "default_prior_mean")]
    pub prior_mean: Vec<f64>,
    #[serde(default = "default_prior_cov_diag")]
    pub prior_cov_diag: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    #[default]
    CoordinatedTurn,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorConfig {
    #[serde(default = "default_sensor_positions")]
    pub positions: Vec<[f64; 2]>,
    #[serde(default = "default_sensor_stds")]
    pub stds: Vec<f64>,
    /// Optional sparse-precise regime: every `period`-th step (1-based)
    /// reports only `sensor` at noise level `std`.
    #[serde(default)]
    pub periodic_override: Option<PeriodicOverrideConfig>,
}

impl Default for SensorConfig {
    fn default() -> Self {
        Self {
            positions: default_sensor_positions(),
            stds: default_sensor_stds(),
            periodic_override: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeriodicOverrideConfig {
    pub period: usize,
    pub sensor: usize,
    pub std: f64,
}

/// One smoother to run, with every tuning knob explicit after load.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmootherSpec {
    /// One of: ieks, ipls, lm-ieks, lm-ipls, ls-ieks, ls-ipls.
    pub variant: String,
    /// Name used in output files; defaults to the variant name.
    #[serde(default)]
    pub label: Option<String>,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_inner_iterations")]
    pub inner_iterations: usize,
    #[serde(default = "default_lambda0")]
    pub lambda0: f64,
    #[serde(default = "default_nu")]
    pub nu: f64,
    #[serde(default = "default_lambda_max")]
    pub lambda_max: f64,
    #[serde(default)]
    pub scheme: SchemeKind,
    /// Spread parameter for the unscented scheme; ignored by cubature.
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    #[serde(default)]
    pub line_search: LineSearchConfig,
    #[serde(default)]
    pub cov_update: CovUpdateKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeKind {
    #[default]
    Cubature,
    Unscented,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum CovUpdateKind {
    #[default]
    Standard,
    Joseph,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineSearchConfig {
    #[serde(default)]
    pub kind: LineSearchKindConfig,
    #[serde(default = "default_candidates")]
    pub candidates: usize,
    #[serde(default = "default_c1")]
    pub c1: f64,
    #[serde(default = "default_shrink")]
    pub shrink: f64,
    #[serde(default = "default_max_backtracks")]
    pub max_backtracks: usize,
}

impl Default for LineSearchConfig {
    fn default() -> Self {
        Self {
            kind: LineSearchKindConfig::Grid,
            candidates: default_candidates(),
            c1: default_c1(),
            shrink: default_shrink(),
            max_backtracks: default_max_backtracks(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum LineSearchKindConfig {
    #[default]
    Grid,
    Armijo,
}

fn default_rmse_components() -> Vec<usize> {
    vec![0, 1]
}
fn default_true() -> bool {
    true
}
fn default_period() -> f64 {
    0.01
}
fn default_velocity_noise() -> f64 {
    1e-4
}
fn default_turn_noise() -> f64 {
    1e-2
}
fn default_horizon() -> usize {
    500
}
fn default_prior_mean() -> Vec<f64> {
    vec![0.1, 0.2, 1.0, 0.0, 0.0]
}
fn default_prior_cov_diag() -> Vec<f64> {
    vec![0.1, 0.1, 1.0, 1.0, 1.0]
}
fn default_sensor_positions() -> Vec<[f64; 2]> {
    vec![[-1.5, 0.5], [1.0, 1.0]]
}
fn default_sensor_stds() -> Vec<f64> {
    vec![0.5, 0.5]
}
fn default_max_iterations() -> usize {
    25
}
fn default_tolerance() -> f64 {
    1e-6
}
fn default_inner_iterations() -> usize {
    1
}
fn default_lambda0() -> f64 {
    0.01
}
fn default_nu() -> f64 {
    10.0
}
fn default_lambda_max() -> f64 {
    1e10
}
fn default_kappa() -> f64 {
    0.0
}
fn default_candidates() -> usize {
    10
}
fn default_c1() -> f64 {
    1e-4
}
fn default_shrink() -> f64 {
    0.5
}
fn default_max_backtracks() -> usize {
    20
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
        let config: Self = toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.trials < 1 {
            return Err(CliError::Config("trials must be at least 1".into()));
        }
        if self.smoothers.is_empty() {
            return Err(CliError::Config("at least one smoother is required".into()));
        }
        if self.rmse_components.is_empty() {
            return Err(CliError::Config(
                "rmse_components must name at least one state component".into(),
            ));
        }
        if let Some(&bad) = self.rmse_components.iter().find(|&&c| c >= 5) {
            return Err(CliError::Config(format!(
                "rmse component {bad} out of range for the 5-component state"
            )));
        }
        if self.model.prior_mean.len() != 5 || self.model.prior_cov_diag.len() != 5 {
            return Err(CliError::Config(
                "prior_mean and prior_cov_diag must have 5 entries".into(),
            ));
        }
        let mut labels = Vec::new();
        for spec in &self.smoothers {
            spec.to_smoother_config()?;
            let label = spec.output_label();
            if labels.contains(&label) {
                return Err(CliError::Config(format!(
                    "duplicate smoother label '{label}': set a distinct `label`"
                )));
            }
            labels.push(label);
        }
        // Building the model validates the remaining numeric parameters.
        self.build_model()?;
        Ok(())
    }

    /// Assembles the state-space model described by the config.
    pub fn build_model(&self) -> Result<NonlinearSsm, CliError> {
        let ct = CoordinatedTurnModel::new(
            self.model.period,
            self.model.velocity_noise,
            self.model.turn_noise,
        )
        .map_err(config_err)?;
        let mut sensors =
            BearingsSensorConfig::new(self.sensors.positions.clone(), self.sensors.stds.clone())
                .map_err(config_err)?;
        if let Some(p) = &self.sensors.periodic_override {
            sensors = sensors
                .with_periodic_single_sensor(p.period, p.sensor, p.std, self.model.horizon)
                .map_err(config_err)?;
        }
        let prior = Gaussian::new(
            nalgebra::DVector::from_vec(self.model.prior_mean.clone()),
            nalgebra::DMatrix::from_diagonal(&nalgebra::DVector::from_vec(
                self.model.prior_cov_diag.clone(),
            )),
        )
        .map_err(config_err)?;
        build_ct_model(&ct, &sensors, prior, self.model.horizon).map_err(config_err)
    }
}

impl SmootherSpec {
    pub fn output_label(&self) -> String {
        self.label.clone().unwrap_or_else(|| self.variant.clone())
    }

    /// Maps the spec onto a validated library configuration.
    pub fn to_smoother_config(&self) -> Result<SmootherConfig, CliError> {
        let variant: SmootherVariant = self
            .variant
            .parse()
            .map_err(|e: smoothers::Error| CliError::Config(e.to_string()))?;
        let mut config = SmootherConfig::new(variant);
        config.max_iterations = self.max_iterations;
        config.tolerance = self.tolerance;
        config.inner_iterations = self.inner_iterations;
        config.lambda0 = self.lambda0;
        config.nu = self.nu;
        config.lambda_max = self.lambda_max;
        config.scheme = match self.scheme {
            SchemeKind::Cubature => SigmaScheme::Cubature,
            SchemeKind::Unscented => SigmaScheme::Unscented { kappa: self.kappa },
        };
        config.line_search = match self.line_search.kind {
            LineSearchKindConfig::Grid => LineSearchKind::Grid {
                candidates: self.line_search.candidates,
            },
            LineSearchKindConfig::Armijo => LineSearchKind::Armijo {
                c1: self.line_search.c1,
                shrink: self.line_search.shrink,
                max_backtracks: self.line_search.max_backtracks,
            },
        };
        config.cov_update = match self.cov_update {
            CovUpdateKind::Standard => CovarianceUpdate::Standard,
            CovUpdateKind::Joseph => CovarianceUpdate::Joseph,
        };
        config.record_history = true;
        config.validate().map_err(config_err)?;
        Ok(config)
    }
}

fn config_err(e: smoothers::Error) -> CliError {
    CliError::Config(e.to_string())
}
