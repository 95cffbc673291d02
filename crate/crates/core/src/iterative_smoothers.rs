//! Iteration drivers for the smoother variants.
//!
//! Every variant repeats the same two-step core — linearize the model around
//! the current trajectory, then run the affine smoother — and differs only in
//! how the resulting proposal is vetted:
//!
//! * plain ([`SmootherVariant::Ieks`], [`SmootherVariant::Ipls`]): adopt the
//!   proposal unconditionally;
//! * regularized ([`SmootherVariant::LmIeks`], [`SmootherVariant::LmIpls`]):
//!   pull the proposal toward the current iterate with strength λ and adopt
//!   it only if the penalized cost decreases, adapting λ
//!   Levenberg–Marquardt-style;
//! * line search ([`SmootherVariant::LsIeks`], [`SmootherVariant::LsIpls`]):
//!   move along the segment from the current iterate to the proposal by a
//!   step length chosen to decrease the cost.
//!
//! The Taylor variants descend the exact trajectory cost. The sigma-point
//! variants freeze a cost function per outer iteration (the posterior
//! covariances enter the statistical linearization), so the quantity being
//! decreased is the *currently frozen* cost; it is refreshed from the latest
//! iterate at the top of each outer iteration.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::affine_smoother::{
    affine_smooth_with, kf_predict, kf_update_with_form, rts_backward, CovarianceUpdate,
    FilterCache, LmRegularizer,
};
use crate::cost_functions::{linearized_cost, lm_cost, IeksCost, IplsCostContext};
use crate::error::{Error, Result};
use crate::linalg;
use crate::linearization::{
    linearize_ssm, slr_linearize, taylor_linearize, LinearizationMode, SigmaScheme,
};
use crate::state_space::{
    symmetrize_psd, AffineApprox, AffineParams, DiffMap, Gaussian, MeasurementSequence,
    NonlinearSsm, TrajectoryEstimate,
};

/// The six iterated-smoother variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SmootherVariant {
    /// Iterated extended (Taylor) smoother, plain Gauss–Newton iteration.
    Ieks,
    /// Iterated posterior-linearization (sigma-point) smoother.
    Ipls,
    /// Levenberg–Marquardt-regularized Taylor smoother.
    LmIeks,
    /// Levenberg–Marquardt-regularized sigma-point smoother.
    LmIpls,
    /// Line-search Taylor smoother.
    LsIeks,
    /// Line-search sigma-point smoother.
    LsIpls,
}

impl SmootherVariant {
    /// All variants, in a stable order.
    pub const ALL: [SmootherVariant; 6] = [
        SmootherVariant::Ieks,
        SmootherVariant::Ipls,
        SmootherVariant::LmIeks,
        SmootherVariant::LmIpls,
        SmootherVariant::LsIeks,
        SmootherVariant::LsIpls,
    ];

    /// Whether the variant linearizes by sigma-point regression (as opposed
    /// to a first-order Taylor expansion).
    pub fn is_sigma_point(self) -> bool {
        matches!(
            self,
            SmootherVariant::Ipls | SmootherVariant::LmIpls | SmootherVariant::LsIpls
        )
    }

    /// How the variant vets each Gauss–Newton proposal.
    pub fn strategy(self) -> Strategy {
        match self {
            SmootherVariant::Ieks | SmootherVariant::Ipls => Strategy::Plain,
            SmootherVariant::LmIeks | SmootherVariant::LmIpls => Strategy::Regularized,
            SmootherVariant::LsIeks | SmootherVariant::LsIpls => Strategy::LineSearch,
        }
    }

    /// Stable lowercase name, also accepted by [`FromStr`].
    pub fn name(self) -> &'static str {
        match self {
            SmootherVariant::Ieks => "ieks",
            SmootherVariant::Ipls => "ipls",
            SmootherVariant::LmIeks => "lm-ieks",
            SmootherVariant::LmIpls => "lm-ipls",
            SmootherVariant::LsIeks => "ls-ieks",
            SmootherVariant::LsIpls => "ls-ipls",
        }
    }
}

impl fmt::Display for SmootherVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SmootherVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SmootherVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown smoother variant {s:?}")))
    }
}

/// How a variant turns the affine-smoother proposal into the next iterate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    Plain,
    Regularized,
    LineSearch,
}

/// Step-length selection rule for the line-search variants.
#[derive(Debug, Clone, PartialEq)]
pub enum LineSearchKind {
    /// Exhaustive search over the grid α ∈ {1/n, 2/n, …, 1}: pick the lowest
    /// cost, smallest α on ties; keep the current iterate if none improves.
    Grid { candidates: usize },
    /// Backtracking from α = 1 (halting at the first α that satisfies the
    /// Armijo sufficient-decrease condition with parameter `c1`), shrinking
    /// by `shrink` at most `max_backtracks` times.
    Armijo {
        c1: f64,
        shrink: f64,
        max_backtracks: usize,
    },
}

impl Default for LineSearchKind {
    fn default() -> Self {
        LineSearchKind::Grid { candidates: 10 }
    }
}

/// Everything needed to run one smoother variant.
#[derive(Debug, Clone)]
pub struct SmootherConfig {
    pub variant: SmootherVariant,
    /// Sigma-point scheme for the sigma-point variants (ignored by Taylor
    /// variants).
    pub scheme: SigmaScheme,
    /// Maximum number of outer iterations.
    pub max_iterations: usize,
    /// Convergence threshold on the relative mean change
    /// max_k ‖x_k' − x_k‖ / (1 + ‖x_k‖) between consecutive outer iterates.
    pub tolerance: f64,
    /// Number of proposals per frozen cost function for the regularized and
    /// line-search sigma-point variants (the Taylor variants re-linearize
    /// every proposal anyway, so they ignore this and use 1).
    pub inner_iterations: usize,
    /// Step-length rule for the line-search variants.
    pub line_search: LineSearchKind,
    /// Initial regularization strength λ₀ for the regularized variants.
    pub lambda0: f64,
    /// Multiplicative λ adaptation factor (÷ν on accept, ×ν on reject).
    pub nu: f64,
    /// Abort threshold: a rejection streak that pushes λ above this value
    /// terminates the run with [`RunStatus::Failed`].
    pub lambda_max: f64,
    /// Regularization scaling matrix S (identity when `None`), applied at
    /// every timestep.
    pub scaling: Option<DMatrix<f64>>,
    /// Covariance-update form used by the underlying Kalman updates.
    pub cov_update: CovarianceUpdate,
    /// Keep a copy of the trajectory after every outer iteration.
    pub record_history: bool,
}

impl SmootherConfig {
    /// A configuration with commonly used defaults: cubature points, at most
    /// 25 iterations, tolerance 1e-6, single inner iteration, 10-point grid
    /// search, λ₀ = 0.01, ν = 10, λ cap 1e10, identity scaling.
    pub fn new(variant: SmootherVariant) -> Self {
        SmootherConfig {
            variant,
            scheme: SigmaScheme::default(),
            max_iterations: 25,
            tolerance: 1e-6,
            inner_iterations: 1,
            line_search: LineSearchKind::default(),
            lambda0: 1e-2,
            nu: 10.0,
            lambda_max: 1e10,
            scaling: None,
            cov_update: CovarianceUpdate::Standard,
            record_history: false,
        }
    }

    /// The linearization mode implied by the variant and scheme.
    pub fn mode(&self) -> LinearizationMode {
        if self.variant.is_sigma_point() {
            LinearizationMode::Slr(self.scheme)
        } else {
            LinearizationMode::Taylor
        }
    }

    /// Checks every knob for plausibility; [`run_smoother`] calls this, but
    /// front ends can invoke it early to reject a bad configuration before
    /// any work happens.
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::InvalidParameter(
                "max_iterations must be at least 1".into(),
            ));
        }
        if !(self.tolerance >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "tolerance must be nonnegative, got {}",
                self.tolerance
            )));
        }
        if self.inner_iterations == 0 {
            return Err(Error::InvalidParameter(
                "inner_iterations must be at least 1".into(),
            ));
        }
        match self.line_search {
            LineSearchKind::Grid { candidates } => {
                if candidates == 0 {
                    return Err(Error::InvalidParameter(
                        "grid search needs at least one candidate".into(),
                    ));
                }
            }
            LineSearchKind::Armijo {
                c1,
                shrink,
                max_backtracks: _,
            } => {
                if !(c1 > 0.0 && c1 < 1.0) {
                    return Err(Error::InvalidParameter(format!(
                        "Armijo constant must lie in (0, 1), got {c1}"
                    )));
                }
                if !(shrink > 0.0 && shrink < 1.0) {
                    return Err(Error::InvalidParameter(format!(
                        "backtracking factor must lie in (0, 1), got {shrink}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Levenberg–Marquardt bookkeeping carried across iterations: the current
/// regularization strength λ, its adaptation factor ν, the abort threshold,
/// and the per-timestep scaling matrices S_k.
#[derive(Debug, Clone)]
pub struct LmState {
    lambda: f64,
    nu: f64,
    lambda_max: f64,
    scaling: Vec<DMatrix<f64>>,
}

impl LmState {
    pub fn new(
        lambda0: f64,
        nu: f64,
        lambda_max: f64,
        scaling: Vec<DMatrix<f64>>,
    ) -> Result<Self> {
        if !lambda0.is_finite() || lambda0 < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "initial regularization strength must be finite and nonnegative, got {lambda0}"
            )));
        }
        if !nu.is_finite() || nu <= 1.0 {
            return Err(Error::InvalidParameter(format!(
                "adaptation factor must be finite and exceed 1, got {nu}"
            )));
        }
        if !lambda_max.is_finite() || lambda_max <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "regularization cap must be finite and positive, got {lambda_max}"
            )));
        }
        if scaling.is_empty() {
            return Err(Error::InvalidParameter(
                "need at least one scaling matrix".into(),
            ));
        }
        for s in &scaling {
            if s.nrows() != s.ncols() {
                return Err(Error::NotSquare {
                    rows: s.nrows(),
                    cols: s.ncols(),
                });
            }
            if linalg::max_abs_asymmetry(s) > 1e-9 {
                return Err(Error::NotSymmetric("regularization scaling"));
            }
            if s.clone().cholesky().is_none() {
                return Err(Error::CholeskyFailed("regularization scaling"));
            }
        }
        Ok(LmState {
            lambda: lambda0,
            nu,
            lambda_max,
            scaling,
        })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn lambda_max(&self) -> f64 {
        self.lambda_max
    }

    pub fn scaling(&self) -> &[DMatrix<f64>] {
        &self.scaling
    }
}

/// Outcome of one regularized iteration: the new iterate (or, when not
/// accepted, the last rejected proposal), the updated λ bookkeeping, and the
/// costs involved in the accept decision.
#[derive(Debug, Clone)]
pub struct LmIteration {
    pub trajectory: TrajectoryEstimate,
    pub state: LmState,
    pub accepted: bool,
    /// Number of rejected proposals before acceptance (or before giving up).
    pub rejections: usize,
    /// Cost of the entering iterate under the iteration's cost function.
    pub cost_entry: f64,
    /// Cost of the accepted iterate (without the regularization penalty);
    /// `None` when not accepted.
    pub cost_accepted: Option<f64>,
}

/// Per-outer-iteration diagnostics.
#[derive(Debug, Clone)]
pub struct IterationRecord {
    /// 1-based outer iteration index.
    pub iteration: usize,
    /// Cost of the entering iterate under the iteration's (frozen) cost.
    pub cost_entry: f64,
    /// Cost of the iterate produced by this iteration under the same frozen
    /// cost; equals `cost_entry` when the iteration did not move, NaN when
    /// the produced iterate's cost was not finite.
    pub cost: f64,
    /// λ after this iteration's accept/reject bookkeeping (regularized
    /// variants only).
    pub lambda: Option<f64>,
    /// Chosen step length (line-search variants only; the last inner step's
    /// when several inner iterations run).
    pub alpha: Option<f64>,
    /// Rejected proposals (regularized) or backtracking steps (Armijo line
    /// search) spent in this iteration.
    pub rejections: usize,
    /// Whether the iteration produced a new iterate.
    pub accepted: bool,
    /// Relative mean change max_k ‖x_k' − x_k‖ / (1 + ‖x_k‖) from the
    /// entering to the produced iterate.
    pub mean_change: f64,
}

/// Why a run stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    /// The relative mean change fell below the tolerance.
    Converged,
    /// The iteration budget was exhausted.
    MaxIterations,
    /// No cost-decreasing step exists at the current iterate (line search
    /// found no improving step length, or a λ = 0 proposal was rejected).
    Stalled,
    /// A cost or iterate became non-finite.
    Diverged,
    /// A numerical failure (singular covariance, λ exceeding its cap, …)
    /// prevented further progress.
    Failed,
}

impl RunStatus {
    /// Whether the run ended in a numerical failure state (as opposed to a
    /// regular terminal state).
    pub fn is_failure(self) -> bool {
        matches!(self, RunStatus::Diverged | RunStatus::Failed)
    }
}

impl fmt::Display for RunStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RunStatus::Converged => "converged",
            RunStatus::MaxIterations => "max-iterations",
            RunStatus::Stalled => "stalled",
            RunStatus::Diverged => "diverged",
            RunStatus::Failed => "failed",
        })
    }
}

/// Result of a smoother run: the final estimate, per-iteration diagnostics,
/// the terminal status, and (optionally) every intermediate trajectory
/// (`history[0]` is the initialization, `history[i]` the iterate after
/// record `i`).
#[derive(Debug, Clone)]
pub struct SmootherRun {
    pub estimate: TrajectoryEstimate,
    pub records: Vec<IterationRecord>,
    pub status: RunStatus,
    pub history: Option<Vec<TrajectoryEstimate>>,
}

/// The relative mean change max_k ‖new_k − old_k‖ / (1 + ‖old_k‖) used by
/// the convergence checks. Non-finite differences count as infinite.
pub fn relative_mean_change(old: &[DVector<f64>], new: &[DVector<f64>]) -> f64 {
    debug_assert_eq!(old.len(), new.len());
    old.iter()
        .zip(new)
        .map(|(o, n)| {
            let c = (n - o).norm() / (1.0 + o.norm());
            if c.is_nan() {
                f64::INFINITY
            } else {
                c
            }
        })
        .fold(0.0, f64::max)
}

/// Replays the λ updates implied by a run's records (for runs with a single
/// inner iteration): ×ν per rejection, ÷ν on acceptance, in that order, with
/// the same floating-point operations the driver performs.
pub fn replay_lambda(lambda0: f64, nu: f64, records: &[IterationRecord]) -> f64 {
    let mut lambda = lambda0;
    for r in records {
        for _ in 0..r.rejections {
            lambda *= nu;
        }
        if r.accepted {
            lambda /= nu;
        }
    }
    lambda
}

/// The all-zero-means initialization: every timestep starts at mean 0 with
/// the prior covariance.
pub fn fixed_init(model: &NonlinearSsm) -> TrajectoryEstimate {
    let d = model.state_dim();
    let means = vec![DVector::zeros(d); model.horizon()];
    let covs = vec![model.prior().cov().clone(); model.horizon()];
    TrajectoryEstimate::from_symmetrized_parts(means, covs)
}

fn linearize_at(map: &DiffMap, g: &Gaussian, mode: LinearizationMode) -> Result<AffineApprox> {
    match mode {
        LinearizationMode::Taylor => taylor_linearize(map, g.mean()),
        LinearizationMode::Slr(scheme) => slr_linearize(map, g, scheme),
    }
}

/// The non-iterated smoother: one forward filter pass that linearizes each
/// map on the fly (the motion model around the preceding filtered belief,
/// the measurement model around the predicted belief), followed by a
/// backward smoothing pass. This is the classical extended / sigma-point
/// smoother and the standard warm start for the iterated variants.
pub fn noniterative_smooth(
    model: &NonlinearSsm,
    y: &MeasurementSequence,
    mode: LinearizationMode,
) -> Result<TrajectoryEstimate> {
    model.check_conformable(y)?;
    let horizon = model.horizon();
    let d = model.state_dim();
    let mut predicted = Vec::with_capacity(horizon);
    let mut updated: Vec<Gaussian> = Vec::with_capacity(horizon);
    let mut motion = Vec::with_capacity(horizon.saturating_sub(1));
    let mut measurement = Vec::with_capacity(horizon);

    for k in 0..horizon {
        let pred = if k == 0 {
            model.prior().clone()
        } else {
            let prev = &updated[k - 1];
            let a = linearize_at(model.motion(k - 1), prev, mode)?;
            let q_eff = model.motion_noise(k - 1) + &a.err_cov;
            let g = kf_predict(prev, &a.gain, &a.offset, &q_eff)?;
            motion.push(a);
            g
        };
        let upd = if model.meas_dim(k) == 0 {
            measurement.push(AffineApprox {
                gain: DMatrix::zeros(0, d),
                offset: DVector::zeros(0),
                err_cov: DMatrix::zeros(0, 0),
            });
            pred.clone()
        } else {
            let a = linearize_at(model.measurement(k), &pred, mode)?;
            let r_eff = model.meas_noise(k) + &a.err_cov;
            let g = kf_update_with_form(
                &pred,
                y.get(k),
                &a.gain,
                &a.offset,
                &r_eff,
                CovarianceUpdate::Standard,
            )?;
            measurement.push(a);
            g
        };
        predicted.push(pred);
        updated.push(upd);
    }

    let cache = FilterCache { predicted, updated };
    let params = AffineParams::from_parts_unchecked(motion, measurement);
    rts_backward(&cache, &params)
}

/// One Gauss–Newton iteration: linearize the model around `traj` and smooth
/// the resulting affine model.
pub fn gn_iteration(
    model: &NonlinearSsm,
    traj: &TrajectoryEstimate,
    y: &MeasurementSequence,
    mode: LinearizationMode,
) -> Result<TrajectoryEstimate> {
    let params = linearize_ssm(model, traj, mode)?;
    affine_smooth_with(model, &params, y, None, CovarianceUpdate::Standard)
}

/// Maps an error raised mid-run to the terminal status it signals.
fn fail_status(e: &Error) -> RunStatus {
    match e {
        Error::NonFinite(_) => RunStatus::Diverged,
        _ => RunStatus::Failed,
    }
}

/// One regularized iteration around `traj`: linearize once, then retry the
/// regularized smoothing step with growing λ until the penalized cost
/// decreases (see [`lm_cost`]), dividing λ by ν on acceptance.
///
/// Errors only on invalid setup (dimension mismatches, a non-finite entry
/// cost); numerical failures while proposing count as rejections.
pub fn lm_inner_iteration(
    model: &NonlinearSsm,
    traj: &TrajectoryEstimate,
    y: &MeasurementSequence,
    state: LmState,
    mode: LinearizationMode,
    form: CovarianceUpdate,
) -> Result<LmIteration> {
    model.check_conformable(y)?;
    if state.scaling.len() != model.horizon() {
        return Err(Error::DimensionMismatch(format!(
            "{} scaling matrices for horizon {}",
            state.scaling.len(),
            model.horizon()
        )));
    }
    let params = linearize_ssm(model, traj, mode)?;
    match mode {
        LinearizationMode::Taylor => {
            let cost = IeksCost::new(model, y)?;
            let entry = cost.eval(traj.means())?;
            Ok(lm_inner_with_params(
                model,
                traj,
                y,
                &params,
                state,
                form,
                |m| cost.eval(m),
                entry,
            ))
        }
        LinearizationMode::Slr(scheme) => {
            let ctx = IplsCostContext::freeze(model, traj, &params, scheme)?;
            let entry = ctx.eval(traj.means(), model, y)?;
            Ok(lm_inner_with_params(
                model,
                traj,
                y,
                &params,
                state,
                form,
                |m| ctx.eval(m, model, y),
                entry,
            ))
        }
    }
}

/// The retry loop of [`lm_inner_iteration`], with the linearization and the
/// frozen cost supplied by the caller. Infallible: every numerical failure
/// is a rejection, and an unacceptable iteration is reported through
/// `accepted == false` (λ above its cap, or a rejection at λ = 0, where
/// growing λ is impossible).
fn lm_inner_with_params<C>(
    model: &NonlinearSsm,
    anchor: &TrajectoryEstimate,
    y: &MeasurementSequence,
    params: &AffineParams,
    mut state: LmState,
    form: CovarianceUpdate,
    cost: C,
    cost_entry: f64,
) -> LmIteration
where
    C: Fn(&[DVector<f64>]) -> Result<f64>,
{
    let mut rejections = 0usize;
    let mut last_proposal: Option<TrajectoryEstimate> = None;
    loop {
        if state.lambda > state.lambda_max {
            return LmIteration {
                trajectory: last_proposal.unwrap_or_else(|| anchor.clone()),
                state,
                accepted: false,
                rejections,
                cost_entry,
                cost_accepted: None,
            };
        }
        let reg = (state.lambda > 0.0).then_some(LmRegularizer {
            lambda: state.lambda,
            scaling: &state.scaling,
            anchor,
        });
        let proposal = affine_smooth_with(model, params, y, reg, form).ok();
        // Accept iff the penalized cost at the proposal undercuts the cost at
        // the anchor (where the penalty vanishes). Evaluating through
        // `lm_cost` also rejects non-finite costs.
        let verdict = proposal.as_ref().and_then(|p| {
            let mut base = f64::NAN;
            lm_cost(
                |m| {
                    let v = cost(m)?;
                    base = v;
                    Ok(v)
                },
                p.means(),
                anchor.means(),
                state.lambda,
                &state.scaling,
            )
            .ok()
            .map(|penalized| (penalized, base))
        });
        match (proposal, verdict) {
            (Some(p), Some((penalized, base))) if penalized < cost_entry => {
                state.lambda /= state.nu;
                return LmIteration {
                    trajectory: p,
                    state,
                    accepted: true,
                    rejections,
                    cost_entry,
                    cost_accepted: Some(base),
                };
            }
            (p, _) => {
                if let Some(p) = p {
                    last_proposal = Some(p);
                }
                rejections += 1;
                if state.lambda == 0.0 {
                    return LmIteration {
                        trajectory: last_proposal.unwrap_or_else(|| anchor.clone()),
                        state,
                        accepted: false,
                        rejections,
                        cost_entry,
                        cost_accepted: None,
                    };
                }
                state.lambda *= state.nu;
            }
        }
    }
}

/// Outcome of a step-length search along one proposal direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum SearchOutcome {
    /// An improving step length was found.
    Step {
        alpha: f64,
        cost: f64,
        backtracks: usize,
    },
    /// Finite costs everywhere tried, but nothing beat the entry cost.
    Stalled,
    /// No tried step length had a finite cost.
    NonFinite,
}

/// Evaluates `phi` on the grid {1/n, …, 1} and picks the strictly best
/// improvement over `entry_cost` (smallest α on ties). `phi` returns `None`
/// for non-finite costs.
pub(crate) fn grid_search<C>(phi: C, candidates: usize, entry_cost: f64) -> SearchOutcome
where
    C: Fn(f64) -> Option<f64>,
{
    let n = candidates.max(1);
    let mut best: Option<(f64, f64)> = None;
    for t in 1..=n {
        let alpha = t as f64 / n as f64;
        if let Some(c) = phi(alpha) {
            if c.is_finite() && best.is_none_or(|(_, bc)| c < bc) {
                best = Some((alpha, c));
            }
        }
    }
    match best {
        Some((alpha, cost)) if cost < entry_cost => SearchOutcome::Step {
            alpha,
            cost,
            backtracks: 0,
        },
        Some(_) => SearchOutcome::Stalled,
        None => SearchOutcome::NonFinite,
    }
}

/// Backtracking search: starting from α = 1, accepts the first α with
/// phi(α) ≤ entry_cost + c1·α·slope, shrinking α at most `max_backtracks`
/// times. `slope` is the directional derivative of the cost along the step;
/// a nonnegative slope means no descent direction and stalls immediately.
pub(crate) fn armijo_search<C>(
    phi: C,
    entry_cost: f64,
    slope: f64,
    c1: f64,
    shrink: f64,
    max_backtracks: usize,
) -> SearchOutcome
where
    C: Fn(f64) -> Option<f64>,
{
    if !(slope < 0.0) {
        return SearchOutcome::Stalled;
    }
    let mut alpha = 1.0;
    let mut saw_finite = false;
    for backtracks in 0..=max_backtracks {
        if let Some(c) = phi(alpha) {
            if c.is_finite() {
                saw_finite = true;
                if c <= entry_cost + c1 * alpha * slope {
                    return SearchOutcome::Step {
                        alpha,
                        cost: c,
                        backtracks,
                    };
                }
            }
        }
        alpha *= shrink;
    }
    if saw_finite {
        SearchOutcome::Stalled
    } else {
        SearchOutcome::NonFinite
    }
}

/// Runs the smoother selected by `config` from the initialization `init`.
///
/// Errors on invalid setup (mismatched dimensions, invalid configuration);
/// numerical trouble mid-run ends the run with a failure [`RunStatus`] and
/// the best iterate reached so far.
pub fn run_smoother(
    model: &NonlinearSsm,
    y: &MeasurementSequence,
    init: &TrajectoryEstimate,
    config: &SmootherConfig,
) -> Result<SmootherRun> {
    config.validate()?;
    model.check_conformable(y)?;
    if init.len() != model.horizon() || init.state_dim() != model.state_dim() {
        return Err(Error::DimensionMismatch(format!(
            "initialization is {} steps of dimension {}, model wants {} of {}",
            init.len(),
            init.state_dim(),
            model.horizon(),
            model.state_dim()
        )));
    }
    match config.variant.strategy() {
        Strategy::Plain => plain_smoother(model, y, init, config),
        Strategy::Regularized => lm_smoother(model, y, init, config),
        Strategy::LineSearch => line_search_smoother(model, y, init, config),
    }
}

/// Builds the per-iteration frozen cost evaluator. For Taylor variants this
/// is the exact cost (`exact` is `Some`); for sigma-point variants it is the
/// cost frozen by `ctx`.
fn frozen_eval<'a>(
    exact: &'a Option<IeksCost<'a>>,
    ctx: &'a Option<IplsCostContext>,
    model: &'a NonlinearSsm,
    y: &'a MeasurementSequence,
) -> impl Fn(&[DVector<f64>]) -> Result<f64> + 'a {
    move |m: &[DVector<f64>]| match (exact, ctx) {
        (Some(c), _) => c.eval(m),
        (None, Some(ctx)) => ctx.eval(m, model, y),
        (None, None) => unreachable!("one cost family is always set"),
    }
}

fn plain_smoother(
    model: &NonlinearSsm,
    y: &MeasurementSequence,
    init: &TrajectoryEstimate,
    config: &SmootherConfig,
) -> Result<SmootherRun> {
    let mode = config.mode();
    let exact = (!config.variant.is_sigma_point())
        .then(|| IeksCost::new(model, y))
        .transpose()?;
    let mut current = init.clone();
    let mut records = Vec::new();
    let mut history = config.record_history.then(|| vec![current.clone()]);
    let mut status = RunStatus::MaxIterations;

    for iteration in 1..=config.max_iterations {
        let params = match linearize_ssm(model, &current, mode) {
            Ok(p) => p,
            Err(e) => {
                status = fail_status(&e);
                break;
            }
        };
        let ctx = match mode {
            LinearizationMode::Taylor => None,
            LinearizationMode::Slr(scheme) => {
                match IplsCostContext::freeze(model, &current, &params, scheme) {
                    Ok(c) => Some(c),
                    Err(e) => {
                        status = fail_status(&e);
                        break;
                    }
                }
            }
        };
        let eval = frozen_eval(&exact, &ctx, model, y);
        let cost_entry = match eval(current.means()) {
            Ok(c) => c,
            Err(e) => {
                status = fail_status(&e);
                break;
            }
        };
        let proposal = match affine_smooth_with(model, &params, y, None, config.cov_update) {
            Ok(p) => p,
            Err(e) => {
                status = fail_status(&e);
                break;
            }
        };
        let change = relative_mean_change(current.means(), proposal.means());
        match eval(proposal.means()) {
            Ok(cost) => {
                current = proposal;
                records.push(IterationRecord {
                    iteration,
                    cost_entry,
                    cost,
                    lambda: None,
                    alpha: None,
                    rejections: 0,
                    accepted: true,
                    mean_change: change,
                });
                if let Some(h) = &mut history {
                    h.push(current.clone());
                }
                if change < config.tolerance {
                    status = RunStatus::Converged;
                    break;
                }
            }
            Err(e) => {
                // Keep the last finite iterate instead of adopting a proposal
                // whose cost cannot even be evaluated.
                records.push(IterationRecord {
                    iteration,
                    cost_entry,
                    cost: f64::NAN,
                    lambda: None,
                    alpha: None,
                    rejections: 0,
                    accepted: false,
                    mean_change: change,
                });
                if let Some(h) = &mut history {
                    h.push(current.clone());
                }
                status = fail_status(&e);
                break;
            }
        }
    }

    Ok(SmootherRun {
        estimate: current,
        records,
        status,
        history,
    })
}

fn lm_smoother(
    model: &NonlinearSsm,
    y: &MeasurementSequence,
    init: &TrajectoryEstimate,
    config: &SmootherConfig,
) -> Result<SmootherRun> {
    let mode = config.mode();
    let d = model.state_dim();
    let scaling_mat = config
        .scaling
        .clone()
        .unwrap_or_else(|| DMatrix::identity(d, d));
    if scaling_mat.nrows() != d || scaling_mat.ncols() != d {
        return Err(Error::DimensionMismatch(format!(
            "scaling matrix is {}x{}, state dimension is {d}",
            scaling_mat.nrows(),
            scaling_mat.ncols()
        )));
    }
    let mut state = LmState::new(
        config.lambda0,
        config.nu,
        config.lambda_max,
        vec![scaling_mat; model.horizon()],
    )?;
    let sigma = config.variant.is_sigma_point();
    let exact = (!sigma).then(|| IeksCost::new(model, y)).transpose()?;
    let inner_len = if sigma { config.inner_iterations } else { 1 };

    let mut current = init.clone();
    let mut records = Vec::new();
    let mut history = config.record_history.then(|| vec![current.clone()]);
    let mut status = RunStatus::MaxIterations;

    for iteration in 1..=config.max_iterations {
        let entry_means = current.means().to_vec();
        let params = match linearize_ssm(model, &current, mode) {
            Ok(p) => p,
            Err(e) => {
                status = fail_status(&e);
                break;
            }
        };
        let ctx = match mode {
            LinearizationMode::Taylor => None,
            LinearizationMode::Slr(scheme) => {
                match IplsCostContext::freeze(model, &current, &params, scheme) {
                    Ok(c) => Some(c),
                    Err(e) => {
                        status = fail_status(&e);
                        break;
                    }
                }
            }
        };
        let eval = frozen_eval(&exact, &ctx, model, y);
        let cost_entry = match eval(current.means()) {
            Ok(c) => c,
            Err(e) => {
                status = fail_status(&e);
                break;
            }
        };

        let mut entry_j = cost_entry;
        let mut last_cost = cost_entry;
        let mut iter_rejections = 0usize;
        let mut moved = false;
        let mut inner_status = None;
        for j in 1..=inner_len {
            // Within an outer iteration the sigma-point variants re-linearize
            // around the new means but keep the frozen covariances (and the
            // frozen cost); the first proposal reuses the outer
            // linearization unchanged.
            let holder;
            let params_j = if j == 1 {
                &params
            } else {
                let ctx = ctx.as_ref().expect("inner iterations require a frozen context");
                match ctx.relinearize(model, current.means()) {
                    Ok(p) => {
                        holder = p;
                        &holder
                    }
                    Err(e) => {
                        inner_status = Some(fail_status(&e));
                        break;
                    }
                }
            };
            let it = lm_inner_with_params(
                model,
                &current,
                y,
                params_j,
                state,
                config.cov_update,
                &eval,
                entry_j,
            );
            state = it.state;
            iter_rejections += it.rejections;
            if !it.accepted {
                inner_status = Some(if state.lambda == 0.0 {
                    RunStatus::Stalled
                } else {
                    RunStatus::Failed
                });
                break;
            }
            moved = true;
            current = it.trajectory;
            last_cost = it.cost_accepted.expect("accepted iterations carry a cost");
            entry_j = last_cost;
        }

        let change = relative_mean_change(&entry_means, current.means());
        records.push(IterationRecord {
            iteration,
            cost_entry,
            cost: last_cost,
            lambda: Some(state.lambda),
            alpha: None,
            rejections: iter_rejections,
            accepted: moved,
            mean_change: change,
        });
        if let Some(h) = &mut history {
            h.push(current.clone());
        }
        if let Some(s) = inner_status {
            status = s;
            break;
        }
        if change < config.tolerance {
            status = RunStatus::Converged;
            break;
        }
    }

    Ok(SmootherRun {
        estimate: current,
        records,
        status,
        history,
    })
}

fn line_search_smoother(
    model: &NonlinearSsm,
    y: &MeasurementSequence,
    init: &TrajectoryEstimate,
    config: &SmootherConfig,
) -> Result<SmootherRun> {
    let mode = config.mode();
    let sigma = config.variant.is_sigma_point();
    let exact = (!sigma).then(|| IeksCost::new(model, y)).transpose()?;
    let inner_len = if sigma { config.inner_iterations } else { 1 };

    let mut current = init.clone();
    let mut records = Vec::new();
    let mut history = config.record_history.then(|| vec![current.clone()]);
    let mut status = RunStatus::MaxIterations;

    'outer: for iteration in 1..=config.max_iterations {
        let entry_means = current.means().to_vec();
        let params0 = match linearize_ssm(model, &current, mode) {
            Ok(p) => p,
            Err(e) => {
                status = fail_status(&e);
                break;
            }
        };
        let ctx = match mode {
            LinearizationMode::Taylor => None,
            LinearizationMode::Slr(scheme) => {
                match IplsCostContext::freeze(model, &current, &params0, scheme) {
                    Ok(c) => Some(c),
                    Err(e) => {
                        status = fail_status(&e);
                        break;
                    }
                }
            }
        };
        let eval = frozen_eval(&exact, &ctx, model, y);
        let cost_entry = match eval(current.means()) {
            Ok(c) => c,
            Err(e) => {
                status = fail_status(&e);
                break;
            }
        };

        // The means evolve per inner step; the covariance estimate is
        // tracked separately by interpolating toward each proposal's
        // covariances with the same step length.
        let mut means = current.means().to_vec();
        let mut tracked = current.covs().to_vec();
        let mut entry_j = cost_entry;
        let mut last_cost = cost_entry;
        let mut last_alpha = 0.0;
        let mut backtracks_total = 0usize;
        let mut moved = false;
        let mut inner_status = None;

        for j in 1..=inner_len {
            let holder;
            let params_j = if j == 1 {
                &params0
            } else {
                let ctx = ctx.as_ref().expect("inner iterations require a frozen context");
                match ctx.relinearize(model, &means) {
                    Ok(p) => {
                        holder = p;
                        &holder
                    }
                    Err(e) => {
                        inner_status = Some(fail_status(&e));
                        break;
                    }
                }
            };
            let proposal = match affine_smooth_with(model, params_j, y, None, config.cov_update) {
                Ok(p) => p,
                Err(e) => {
                    inner_status = Some(fail_status(&e));
                    break;
                }
            };
            // A null proposal means the current means are a fixed point of
            // the iteration: converged, nothing to search.
            if relative_mean_change(&means, proposal.means()) < config.tolerance {
                inner_status = Some(RunStatus::Converged);
                break;
            }
            let delta: Vec<DVector<f64>> = proposal
                .means()
                .iter()
                .zip(&means)
                .map(|(p, m)| p - m)
                .collect();
            let phi = |alpha: f64| -> Option<f64> {
                let trial: Vec<DVector<f64>> = means
                    .iter()
                    .zip(&delta)
                    .map(|(m, d)| m + alpha * d)
                    .collect();
                eval(&trial).ok()
            };
            let outcome = match &config.line_search {
                LineSearchKind::Grid { candidates } => grid_search(phi, *candidates, entry_j),
                LineSearchKind::Armijo {
                    c1,
                    shrink,
                    max_backtracks,
                } => {
                    // The directional derivative along a Gauss–Newton step:
                    // the cost is tangent to the linearized cost at the
                    // current iterate, and the proposal minimizes the
                    // linearized cost, so the slope is −2·(entry − minimum).
                    match linearized_cost(proposal.means(), model, params_j, y) {
                        Ok(lin) => armijo_search(
                            phi,
                            entry_j,
                            -2.0 * (entry_j - lin),
                            *c1,
                            *shrink,
                            *max_backtracks,
                        ),
                        Err(_) => SearchOutcome::Stalled,
                    }
                }
            };
            match outcome {
                SearchOutcome::Step {
                    alpha,
                    cost,
                    backtracks,
                } => {
                    backtracks_total += backtracks;
                    moved = true;
                    last_alpha = alpha;
                    last_cost = cost;
                    entry_j = cost;
                    if alpha == 1.0 {
                        means = proposal.means().to_vec();
                        tracked = proposal.covs().to_vec();
                    } else {
                        for (m, d) in means.iter_mut().zip(&delta) {
                            *m += alpha * d;
                        }
                        for (t, p) in tracked.iter_mut().zip(proposal.covs()) {
                            let interp = &*t + alpha * (p - &*t);
                            match symmetrize_psd(&interp) {
                                Ok(c) => *t = c,
                                Err(e) => {
                                    inner_status = Some(fail_status(&e));
                                    break;
                                }
                            }
                        }
                        if inner_status.is_some() {
                            break;
                        }
                    }
                }
                SearchOutcome::Stalled => {
                    last_alpha = 0.0;
                    inner_status = Some(RunStatus::Stalled);
                    break;
                }
                SearchOutcome::NonFinite => {
                    last_alpha = 0.0;
                    inner_status = Some(RunStatus::Failed);
                    break;
                }
            }
        }

        let change = relative_mean_change(&entry_means, &means);
        if moved {
            current = TrajectoryEstimate::from_symmetrized_parts(means, tracked);
        }
        // A converged null iteration leaves no record; everything else
        // (steps, stalls, failures) is recorded.
        if moved || inner_status != Some(RunStatus::Converged) {
            records.push(IterationRecord {
                iteration,
                cost_entry,
                cost: last_cost,
                lambda: None,
                alpha: Some(last_alpha),
                rejections: backtracks_total,
                accepted: moved,
                mean_change: change,
            });
            if let Some(h) = &mut history {
                h.push(current.clone());
            }
        }
        if let Some(s) = inner_status {
            status = s;
            break 'outer;
        }
        if change < config.tolerance {
            status = RunStatus::Converged;
            break;
        }
    }

    Ok(SmootherRun {
        estimate: current,
        records,
        status,
        history,
    })
}
