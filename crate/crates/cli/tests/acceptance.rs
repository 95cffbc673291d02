//! Acceptance suite: one test per release criterion, each printing a
//! PASS line with the measured quantity next to its threshold.
//!
//! The criteria fall into three groups:
//!
//! - **Equivalence** (1, 2, 3): the recursive smoothers must reproduce
//!   dense whole-trajectory optimization steps to tight tolerances.
//! - **Exactness** (4, 6, 7, 8, 11): closed-form facts — affine models
//!   collapse to the classic smoother, λ bookkeeping is exactly
//!   multiplicative, regression recovers affine maps, the grid search
//!   attains the grid minimum, regression gains are the Jacobians of the
//!   sigma-point expectations.
//! - **Behavior** (5, 9, 10): cost monotonicity of the regularized
//!   variants and the headline Monte-Carlo comparisons.

// `!(cost < entry)` is deliberate: a NaN cost must count as a violation.
// The flagged range loops walk an iteration counter or a timestep index
// that several structures are consulted under, not a single slice.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use smoothers::cost_functions::{ieks_cost, IplsCostContext};
use smoothers::gn_oracle::{build_ieks_problem, build_ipls_problem, gn_step, lm_step, stack_means};
use smoothers::linearization::{cubature_points, linearize_ssm, slr_linearize};
use smoothers::{
    build_ct_model, ct_default_prior, fixed_init, gn_iteration, lm_inner_iteration, nees,
    noniterative_smooth, run_smoother, simulate, BearingsSensorConfig, CoordinatedTurnModel,
    CovarianceUpdate, DiffMap, Gaussian, LinearizationMode, LmState, NonlinearSsm,
    SigmaScheme, SmootherConfig, SmootherVariant, TrajectoryEstimate,
};
use smoothers_cli::config::ExperimentConfig;
use smoothers_cli::runner::{aggregate, run_trials};

const SLR_CUBATURE: LinearizationMode = LinearizationMode::Slr(SigmaScheme::Cubature);

/// The bearings-only coordinated-turn benchmark at its documented defaults.
fn ct_model(horizon: usize) -> NonlinearSsm {
    build_ct_model(
        &CoordinatedTurnModel::default(),
        &BearingsSensorConfig::two_sensors(),
        ct_default_prior(),
        horizon,
    )
    .unwrap()
}

fn identity_scaling(model: &NonlinearSsm) -> Vec<DMatrix<f64>> {
    vec![DMatrix::identity(model.state_dim(), model.state_dim()); model.horizon()]
}

/// ‖stack(a) − stack(b)‖ / ‖stack(b)‖.
fn stacked_rel_err(a: &[DVector<f64>], b: &DVector<f64>) -> f64 {
    (stack_means(a) - b).norm() / b.norm()
}

// --------------------------------------------------------------------------
// Criterion 1: five consecutive Taylor-family iterates equal the dense
// Gauss–Newton sequence on the stacked trajectory problem (≤ 1e-7 relative,
// under five seconds).
// --------------------------------------------------------------------------

#[test]
fn criterion_01_taylor_iterates_match_dense_gauss_newton() {
    let start = Instant::now();
    let model = ct_model(10);
    let (_truth, y) = simulate(&model, 0);
    let init = noniterative_smooth(&model, &y, LinearizationMode::Taylor).unwrap();

    let mut config = SmootherConfig::new(SmootherVariant::Ieks);
    config.max_iterations = 5;
    config.tolerance = 0.0; // never stop early: all five iterates are checked
    config.record_history = true;
    let run = run_smoother(&model, &y, &init, &config).unwrap();
    let history = run.history.as_ref().unwrap();
    assert_eq!(history.len(), 6, "five iterations plus the initialization");

    let problem = build_ieks_problem(&model, &y).unwrap();
    let mut x = stack_means(init.means());
    let mut worst = 0.0_f64;
    for i in 1..=5 {
        x = gn_step(&problem, &x).unwrap();
        let rel = stacked_rel_err(history[i].means(), &x);
        worst = worst.max(rel);
        assert!(
            rel <= 1e-7,
            "iterate {i} deviates from the dense Gauss-Newton step: {rel:.3e}"
        );
    }
    let elapsed = start.elapsed();
    assert!(elapsed < Duration::from_secs(5), "took {elapsed:?}");
    println!(
        "PASS criterion 1: 5 Taylor iterates within {worst:.2e} of dense Gauss-Newton \
         (tolerance 1e-7) in {elapsed:.2?}"
    );
}

// --------------------------------------------------------------------------
// Criterion 2: one sigma-point mean update equals the dense minimizer of the
// regression-linearized quadratic (≤ 1e-8 relative, under five seconds).
// --------------------------------------------------------------------------

#[test]
fn criterion_02_sigma_mean_update_matches_dense_minimizer() {
    let start = Instant::now();
    let model = ct_model(10);
    let (_truth, y) = simulate(&model, 1);
    let init = noniterative_smooth(&model, &y, SLR_CUBATURE).unwrap();

    let params = linearize_ssm(&model, &init, SLR_CUBATURE).unwrap();
    let ctx = IplsCostContext::freeze(&model, &init, &params, SigmaScheme::Cubature).unwrap();
    let problem = build_ipls_problem(&model, &y, &ctx).unwrap();
    let x0 = stack_means(init.means());
    // The stacked residual is affine in the state under the frozen
    // regression parameters, so one Gauss-Newton step from anywhere is the
    // exact minimizer of that quadratic.
    let dense = gn_step(&problem, &x0).unwrap();

    let update = gn_iteration(&model, &init, &y, SLR_CUBATURE).unwrap();
    let rel = stacked_rel_err(update.means(), &dense);
    assert!(rel <= 1e-8, "mean update off the dense minimizer: {rel:.3e}");

    let elapsed = start.elapsed();
    assert!(elapsed < Duration::from_secs(5), "took {elapsed:?}");
    println!(
        "PASS criterion 2: sigma-point mean update within {rel:.2e} of the dense \
         minimizer (tolerance 1e-8) in {elapsed:.2?}"
    );
}

// --------------------------------------------------------------------------
// Criterion 3: regularized inner iterates equal dense damped steps for
// λ ∈ {0.01, 1, 100}, both families (≤ 1e-8 relative).
// --------------------------------------------------------------------------

#[test]
fn criterion_03_regularized_inner_steps_match_dense_damped_steps() {
    let model = ct_model(10);
    let (_truth, y) = simulate(&model, 2);
    let scaling = identity_scaling(&model);
    let mut worst = 0.0_f64;

    for &lambda in &[0.01, 1.0, 100.0] {
        // Taylor family.
        let init = noniterative_smooth(&model, &y, LinearizationMode::Taylor).unwrap();
        let state = LmState::new(lambda, 10.0, 1e10, scaling.clone()).unwrap();
        let inner = lm_inner_iteration(
            &model,
            &init,
            &y,
            state,
            LinearizationMode::Taylor,
            CovarianceUpdate::Standard,
        )
        .unwrap();
        let problem = build_ieks_problem(&model, &y).unwrap();
        let dense = lm_step(&problem, &stack_means(init.means()), lambda, &scaling).unwrap();
        let rel = stacked_rel_err(inner.trajectory.means(), &dense);
        assert!(rel <= 1e-8, "Taylor λ={lambda}: {rel:.3e}");
        worst = worst.max(rel);

        // Sigma-point family: the dense problem freezes covariances and
        // linearization-error terms at the same entering iterate the
        // recursive inner step uses.
        let init = noniterative_smooth(&model, &y, SLR_CUBATURE).unwrap();
        let state = LmState::new(lambda, 10.0, 1e10, scaling.clone()).unwrap();
        let inner = lm_inner_iteration(
            &model,
            &init,
            &y,
            state,
            SLR_CUBATURE,
            CovarianceUpdate::Standard,
        )
        .unwrap();
        let params = linearize_ssm(&model, &init, SLR_CUBATURE).unwrap();
        let ctx = IplsCostContext::freeze(&model, &init, &params, SigmaScheme::Cubature).unwrap();
        let problem = build_ipls_problem(&model, &y, &ctx).unwrap();
        let dense = lm_step(&problem, &stack_means(init.means()), lambda, &scaling).unwrap();
        let rel = stacked_rel_err(inner.trajectory.means(), &dense);
        assert!(rel <= 1e-8, "sigma λ={lambda}: {rel:.3e}");
        worst = worst.max(rel);
    }
    println!(
        "PASS criterion 3: damped inner steps within {worst:.2e} of dense damped \
         steps for λ ∈ {{0.01, 1, 100}}, both families (tolerance 1e-8)"
    );
}

// --------------------------------------------------------------------------
// Criterion 4: on a random affine-Gaussian model every variant lands on the
// classic RTS solution in one outer iteration (≤ 1e-10 relative), and the
// RTS errors are calibrated (mean NEES within d_x ± 0.3 over 200 trials).
// --------------------------------------------------------------------------

fn orthogonalize(m: DMatrix<f64>) -> DMatrix<f64> {
    m.qr().q()
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

fn random_spd(rng: &mut ChaCha8Rng, d: usize, lo: f64, hi: f64) -> DMatrix<f64> {
    let q = orthogonalize(random_matrix(rng, d, d));
    let evals = DVector::from_fn(d, |_, _| rng.random_range(lo..hi));
    let m = &q * DMatrix::from_diagonal(&evals) * q.transpose();
    smoothers::symmetrize_psd(&m).unwrap()
}

fn random_affine_model(seed: u64, horizon: usize, d_x: usize, d_y: usize) -> NonlinearSsm {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Spectral radius 0.9 keeps the simulated trajectories bounded.
    let f = 0.9 * orthogonalize(random_matrix(&mut rng, d_x, d_x));
    let b = DVector::from_fn(d_x, |_, _| rng.random_range(-0.1..0.1));
    let h = random_matrix(&mut rng, d_y, d_x);
    let q = random_spd(&mut rng, d_x, 0.05, 0.2);
    let r = random_spd(&mut rng, d_y, 0.05, 0.2);
    let prior_mean = DVector::from_fn(d_x, |_, _| rng.random_range(-1.0..1.0));
    let prior_cov = random_spd(&mut rng, d_x, 0.5, 1.5);
    NonlinearSsm::new(
        vec![DiffMap::affine(f, b); horizon - 1],
        vec![q; horizon - 1],
        vec![DiffMap::affine(h, DVector::zeros(d_y)); horizon],
        vec![r; horizon],
        Gaussian::new(prior_mean, prior_cov).unwrap(),
    )
    .unwrap()
}

#[test]
fn criterion_04_affine_models_collapse_to_rts_in_one_iteration() {
    let d_x = 4;
    let model = random_affine_model(33, 50, d_x, 2);
    let (_truth, y) = simulate(&model, 5);
    let rts = noniterative_smooth(&model, &y, LinearizationMode::Taylor).unwrap();
    let rts_stacked = stack_means(rts.means());

    let mut worst_mean = 0.0_f64;
    let mut worst_cov = 0.0_f64;
    for variant in SmootherVariant::ALL {
        let mut config = SmootherConfig::new(variant);
        config.max_iterations = 1;
        // λ = 0 makes the damped step the exact Gauss-Newton step; for the
        // other variants one plain iteration is already exact on an affine
        // model.
        config.lambda0 = 0.0;
        let init = fixed_init(&model);
        let run = run_smoother(&model, &y, &init, &config).unwrap();
        assert!(
            !run.status.is_failure(),
            "{variant}: unexpected status {:?}",
            run.status
        );

        let rel = stacked_rel_err(run.estimate.means(), &rts_stacked);
        assert!(rel <= 1e-10, "{variant}: means off RTS by {rel:.3e}");
        worst_mean = worst_mean.max(rel);

        for (a, b) in run.estimate.covs().iter().zip(rts.covs()) {
            let diff = (a - b).abs().max();
            assert!(diff <= 1e-10, "{variant}: covariances off RTS by {diff:.3e}");
            worst_cov = worst_cov.max(diff);
        }
    }

    // Calibration of the exact solution: mean NEES ≈ state dimension.
    let trials = 200;
    let mut total = 0.0;
    for t in 0..trials {
        let (truth, y) = simulate(&model, 1000 + t);
        let est = noniterative_smooth(&model, &y, LinearizationMode::Taylor).unwrap();
        total += nees(&est, &truth).unwrap().1;
    }
    let avg = total / trials as f64;
    assert!(
        (avg - d_x as f64).abs() <= 0.3,
        "mean NEES {avg:.3} outside {d_x} ± 0.3"
    );
    println!(
        "PASS criterion 4: all 6 variants reach RTS in one iteration \
         (means ≤ {worst_mean:.2e}, covariances ≤ {worst_cov:.2e}, tolerance 1e-10); \
         mean NEES {avg:.3} within {d_x} ± 0.3 over {trials} trials"
    );
}

// --------------------------------------------------------------------------
// Criterion 5: across 50 random benchmark trials, no accepted damped
// iteration ever reports a cost at or above its entering cost, and the
// Taylor-family damped smoother's accepted costs form a non-increasing
// sequence across iterations (its cost function never changes between
// iterations, so the per-iteration decreases chain).
// --------------------------------------------------------------------------

#[test]
fn criterion_05_accepted_costs_never_increase() {
    let model = ct_model(200);
    let mut accepted_total = 0usize;
    let mut within_violations = 0usize;
    let mut chain_violations = 0usize;

    for seed in 0..50 {
        let (_truth, y) = simulate(&model, seed);
        for variant in [SmootherVariant::LmIeks, SmootherVariant::LmIpls] {
            let mut config = SmootherConfig::new(variant);
            config.max_iterations = 15;
            let init = noniterative_smooth(&model, &y, config.mode()).unwrap();
            let run = run_smoother(&model, &y, &init, &config).unwrap();

            for r in &run.records {
                if r.accepted {
                    accepted_total += 1;
                    if !(r.cost < r.cost_entry) {
                        within_violations += 1;
                        eprintln!(
                            "{variant} seed {seed} it {}: accepted {} from entry {}",
                            r.iteration, r.cost, r.cost_entry
                        );
                    }
                }
            }
            // The sigma-point variant re-freezes its cost function between
            // outer iterations, so only within-iteration decreases are
            // meaningful there; the Taylor variant's accepted costs must
            // also chain across iterations.
            if variant == SmootherVariant::LmIeks {
                let accepted: Vec<f64> = run
                    .records
                    .iter()
                    .filter(|r| r.accepted)
                    .map(|r| r.cost)
                    .collect();
                for pair in accepted.windows(2) {
                    if pair[1] > pair[0] {
                        chain_violations += 1;
                        eprintln!("{variant} seed {seed}: chain {} -> {}", pair[0], pair[1]);
                    }
                }
            }
        }
    }

    assert!(accepted_total > 500, "too few accepted iterations to be meaningful");
    assert_eq!(within_violations, 0, "accepted iterations with non-decreasing cost");
    assert_eq!(chain_violations, 0, "Taylor-family accepted costs increased across iterations");
    println!(
        "PASS criterion 5: {accepted_total} accepted damped iterations over 50 trials, \
         0 within-iteration violations, 0 cross-iteration violations"
    );
}

// --------------------------------------------------------------------------
// Criterion 6: λ is multiplied by exactly ν = 10 per rejection and divided
// by exactly ν = 10 on acceptance — verified by replaying the recorded
// accept/reject trace with those exact operations and demanding bit
// equality with the recorded λ values.
// --------------------------------------------------------------------------

#[test]
fn criterion_06_lambda_follows_exact_multiplicative_bookkeeping() {
    // The sparse-information setup from a fixed initial guess produces
    // plenty of rejections, so both directions of the update get exercised.
    let sensors = BearingsSensorConfig::two_sensors()
        .with_periodic_single_sensor(50, 1, 0.025, 300)
        .unwrap();
    let model = build_ct_model(
        &CoordinatedTurnModel::default(),
        &sensors,
        ct_default_prior(),
        300,
    )
    .unwrap();

    let mut rejections_seen = 0usize;
    let mut accepts_seen = 0usize;
    let mut records_checked = 0usize;
    for seed in 0..10 {
        let (_truth, y) = simulate(&model, seed);
        for variant in [SmootherVariant::LmIeks, SmootherVariant::LmIpls] {
            let mut config = SmootherConfig::new(variant);
            config.max_iterations = 20;
            let init = fixed_init(&model);
            let run = run_smoother(&model, &y, &init, &config).unwrap();

            let mut lambda = config.lambda0;
            for r in &run.records {
                for _ in 0..r.rejections {
                    lambda *= config.nu;
                }
                if r.accepted {
                    lambda /= config.nu;
                }
                let recorded = r.lambda.expect("damped variants record λ");
                assert_eq!(
                    recorded.to_bits(),
                    lambda.to_bits(),
                    "{variant} seed {seed} it {}: recorded λ = {recorded:e}, replay = {lambda:e}",
                    r.iteration
                );
                records_checked += 1;
                rejections_seen += r.rejections;
                accepts_seen += usize::from(r.accepted);
            }
            let replayed =
                smoothers::replay_lambda(config.lambda0, config.nu, &run.records);
            assert_eq!(
                replayed.to_bits(),
                run.records.last().unwrap().lambda.unwrap().to_bits()
            );
        }
    }
    assert!(rejections_seen > 0, "no rejection exercised the multiply path");
    assert!(accepts_seen > 0, "no acceptance exercised the divide path");
    println!(
        "PASS criterion 6: λ bit-identical to the exact ×10/÷10 replay on \
         {records_checked} iteration records ({accepts_seen} accepts, {rejections_seen} rejections)"
    );
}

// --------------------------------------------------------------------------
// Criterion 7: statistical linear regression of a random affine map through
// 1000 random Gaussians recovers the map exactly: gain and offset to 1e-9,
// linearization-error covariance below 1e-9.
// --------------------------------------------------------------------------

#[test]
fn criterion_07_regression_recovers_affine_maps_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst_gain = 0.0_f64;
    let mut worst_offset = 0.0_f64;
    let mut worst_err = 0.0_f64;
    for trial in 0..1000 {
        let d_in = rng.random_range(1..=6);
        let d_out = rng.random_range(1..=6);
        let a = DMatrix::from_fn(d_out, d_in, |_, _| rng.random_range(-2.0..2.0));
        let c = DVector::from_fn(d_out, |_, _| rng.random_range(-2.0..2.0));
        let map = DiffMap::affine(a.clone(), c.clone());

        let mean = DVector::from_fn(d_in, |_, _| rng.random_range(-3.0..3.0));
        let cov = random_spd(&mut rng, d_in, 0.3, 3.0);
        let g = Gaussian::new(mean, cov).unwrap();
        let scheme = if trial % 2 == 0 {
            SigmaScheme::Cubature
        } else {
            SigmaScheme::Unscented { kappa: 1.0 }
        };
        let approx = slr_linearize(&map, &g, scheme).unwrap();

        let scale = 1.0 + a.abs().max();
        let gain_err = (&approx.gain - &a).abs().max();
        let offset_err = (&approx.offset - &c).abs().max();
        let err_norm = approx.err_cov.abs().max();
        assert!(gain_err <= 1e-9 * scale, "trial {trial}: gain error {gain_err:.3e}");
        assert!(offset_err <= 1e-9 * scale, "trial {trial}: offset error {offset_err:.3e}");
        assert!(err_norm <= 1e-9, "trial {trial}: residual covariance {err_norm:.3e}");
        worst_gain = worst_gain.max(gain_err / scale);
        worst_offset = worst_offset.max(offset_err / scale);
        worst_err = worst_err.max(err_norm);
    }
    println!(
        "PASS criterion 7: 1000 random affine maps recovered — gain ≤ {worst_gain:.2e}, \
         offset ≤ {worst_offset:.2e}, error covariance ≤ {worst_err:.2e} (tolerance 1e-9)"
    );
}

// --------------------------------------------------------------------------
// Criterion 8: the grid line search picks a step length whose frozen cost
// attains the minimum over the 10 candidates (recomputed independently
// here), and a chosen full step reproduces the unmodified update.
// --------------------------------------------------------------------------

#[test]
fn criterion_08_grid_line_search_attains_the_candidate_minimum() {
    let model = ct_model(50);
    let candidates: Vec<f64> = (1..=10).map(|t| t as f64 / 10.0).collect();
    let mut checked = 0usize;
    let mut full_steps = 0usize;

    for seed in 0..50 {
        let (_truth, y) = simulate(&model, seed);
        for variant in [SmootherVariant::LsIeks, SmootherVariant::LsIpls] {
            let mut config = SmootherConfig::new(variant);
            config.max_iterations = 1;
            config.tolerance = 0.0;
            let init = noniterative_smooth(&model, &y, config.mode()).unwrap();
            let run = run_smoother(&model, &y, &init, &config).unwrap();
            let record = &run.records[0];
            if !record.accepted {
                // A stalled search (no candidate improves) has no chosen α
                // to check; it does not occur on these benign trials, but
                // guard anyway.
                continue;
            }
            let chosen = record.alpha.expect("line-search records α");
            assert!(
                candidates.contains(&chosen),
                "{variant} seed {seed}: α = {chosen} is not on the grid"
            );

            // Recompute the frozen cost profile over the grid from scratch.
            let proposal = gn_iteration(&model, &init, &y, config.mode()).unwrap();
            let params = linearize_ssm(&model, &init, config.mode()).unwrap();
            let ctx = match config.mode() {
                LinearizationMode::Taylor => None,
                LinearizationMode::Slr(scheme) => {
                    Some(IplsCostContext::freeze(&model, &init, &params, scheme).unwrap())
                }
            };
            let phi = |alpha: f64| -> f64 {
                let means: Vec<DVector<f64>> = init
                    .means()
                    .iter()
                    .zip(proposal.means())
                    .map(|(m, p)| m + alpha * (p - m))
                    .collect();
                match &ctx {
                    None => ieks_cost(&means, &model, &y).unwrap(),
                    Some(ctx) => ctx.eval(&means, &model, &y).unwrap(),
                }
            };
            let profile: Vec<f64> = candidates.iter().map(|&a| phi(a)).collect();
            let phi_chosen = phi(chosen);
            for (&alpha, &value) in candidates.iter().zip(&profile) {
                assert!(
                    phi_chosen <= value,
                    "{variant} seed {seed}: α = {chosen} has cost {phi_chosen}, \
                     but α = {alpha} achieves {value}"
                );
            }
            checked += 1;

            // A full step must coincide with the unmodified update.
            if chosen == 1.0 {
                full_steps += 1;
                let rel = stacked_rel_err(run.estimate.means(), &stack_means(proposal.means()));
                assert!(
                    rel <= 1e-12,
                    "{variant} seed {seed}: full step differs from the plain update: {rel:.3e}"
                );
            }
        }
    }
    assert!(checked >= 90, "only {checked} searches were checked");
    assert!(full_steps > 0, "no trial chose the full step");
    println!(
        "PASS criterion 8: {checked} grid searches attained the grid minimum; \
         {full_steps} full steps matched the plain update (tolerance 1e-12)"
    );
}

// --------------------------------------------------------------------------
// Criterion 9: the shipped benchmark experiment — sigma-point variants end
// at a mean position RMSE no worse than the Taylor variants, the plain
// Taylor smoother diverges more often than its damped counterpart, and the
// whole run stays under ten minutes.
// --------------------------------------------------------------------------

fn load_config(name: &str) -> ExperimentConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name);
    ExperimentConfig::load(&path).unwrap()
}

#[test]
fn criterion_09_benchmark_comparison_across_families() {
    let start = Instant::now();
    let config = load_config("va.toml");
    let data = run_trials(&config).unwrap();

    let mut final_rmse = BTreeMap::new();
    let mut diverged = BTreeMap::new();
    for outcome in &data.outcomes {
        let rows = aggregate(outcome);
        let last = rows.last().unwrap();
        final_rmse.insert(outcome.label.clone(), last.rmse_mean);
        diverged.insert(outcome.label.clone(), last.diverged_fraction);
        println!(
            "  {}: final mean RMSE {:.4}, diverged fraction {:.2}",
            outcome.label, last.rmse_mean, last.diverged_fraction
        );
    }

    let family = |labels: [&str; 3]| -> f64 {
        labels.iter().map(|l| final_rmse[*l]).sum::<f64>() / 3.0
    };
    let taylor = family(["ieks", "lm-ieks", "ls-ieks"]);
    let sigma = family(["ipls", "lm-ipls", "ls-ipls"]);
    assert!(
        sigma <= taylor,
        "sigma-family mean final RMSE {sigma:.4} exceeds Taylor-family {taylor:.4}"
    );
    assert!(
        diverged["ieks"] > diverged["lm-ieks"],
        "plain Taylor divergence {:.3} not above damped {:.3}",
        diverged["ieks"],
        diverged["lm-ieks"]
    );

    let elapsed = start.elapsed();
    assert!(elapsed < Duration::from_secs(600), "took {elapsed:?}");
    println!(
        "PASS criterion 9: sigma family {sigma:.4} ≤ Taylor family {taylor:.4}; \
         divergence {:.3} (plain) > {:.3} (damped); {elapsed:.1?} < 10 min",
        diverged["ieks"], diverged["lm-ieks"]
    );
}

// --------------------------------------------------------------------------
// Criterion 10: the sparse-information experiment from fixed initial
// guesses — the damped Taylor smoother ends with strictly lower mean
// position RMSE than the plain one.
// --------------------------------------------------------------------------

#[test]
fn criterion_10_damping_wins_on_sparse_information_runs() {
    let config = load_config("vb.toml");
    let data = run_trials(&config).unwrap();

    let mut final_rmse = BTreeMap::new();
    for outcome in &data.outcomes {
        let rows = aggregate(outcome);
        let last = rows.last().unwrap();
        final_rmse.insert(outcome.label.clone(), last.rmse_mean);
        println!(
            "  {}: final mean RMSE {:.4}, diverged fraction {:.2}",
            outcome.label, last.rmse_mean, last.diverged_fraction
        );
    }
    let plain = final_rmse["ieks"];
    let damped = final_rmse["lm-ieks"];
    assert!(
        damped < plain,
        "damped final RMSE {damped:.4} not strictly below plain {plain:.4}"
    );
    println!("PASS criterion 10: damped {damped:.4} < plain {plain:.4} mean final RMSE");
}

// --------------------------------------------------------------------------
// Criterion 11: the regression gains the dense reference uses as Jacobian
// blocks equal finite differences of the sigma-point expectation maps
// (≤ 1e-5 absolute, 100+ random linearization points).
// --------------------------------------------------------------------------

fn fd_jacobian(
    f: &dyn Fn(&DVector<f64>) -> DVector<f64>,
    x: &DVector<f64>,
    out_dim: usize,
) -> DMatrix<f64> {
    let n = x.len();
    let mut jac = DMatrix::zeros(out_dim, n);
    for j in 0..n {
        let h = f64::EPSILON.sqrt() * (1.0 + x[j].abs());
        let mut xp = x.clone();
        xp[j] += h;
        let mut xm = x.clone();
        xm[j] -= h;
        jac.set_column(j, &((f(&xp) - f(&xm)) / (2.0 * h)));
    }
    jac
}

/// A turn-model state away from both sensors, so the bearing maps stay
/// smooth near the probe.
fn random_ct_state(rng: &mut ChaCha8Rng, sensors: &[[f64; 2]]) -> DVector<f64> {
    loop {
        let x = DVector::from_vec(vec![
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
            rng.random_range(-1.0..1.0),
        ]);
        let clear = sensors
            .iter()
            .all(|s| ((x[0] - s[0]).powi(2) + (x[1] - s[1]).powi(2)).sqrt() > 0.5);
        if clear {
            return x;
        }
    }
}

#[test]
fn criterion_11_regression_gains_are_expectation_jacobians() {
    // A moderate-rate instance keeps the expectation maps O(1): the gains
    // do not depend on the noise levels, and probing the raw maps avoids
    // the cancellation that plagues finite differences of whitened
    // residuals.
    let ct = CoordinatedTurnModel::new(0.5, 0.1, 0.1).unwrap();
    let sensors = BearingsSensorConfig::two_sensors();
    let sensor_positions = sensors.sensors().to_vec();
    let horizon = 4;
    let model = build_ct_model(&ct, &sensors, ct_default_prior(), horizon).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(911);
    // The gain and the expectation Jacobian agree only up to a sigma-point
    // truncation term of order cov·f'''/3; bearing maps half a unit from a
    // sensor have third derivatives near 50, so the frozen covariance must
    // be small enough to push that term (~1e-7 here) well under the 1e-5
    // gate while staying far above the ~1e-9 finite-difference noise.
    let cov = DMatrix::<f64>::identity(5, 5) * 1e-8;
    let mut blocks = 0usize;
    let mut worst = 0.0_f64;

    for _ in 0..15 {
        let means: Vec<DVector<f64>> = (0..horizon)
            .map(|_| random_ct_state(&mut rng, &sensor_positions))
            .collect();
        let traj =
            TrajectoryEstimate::new(means.clone(), vec![cov.clone(); horizon]).unwrap();
        let params = linearize_ssm(&model, &traj, SLR_CUBATURE).unwrap();
        let ctx = IplsCostContext::freeze(&model, &traj, &params, SigmaScheme::Cubature).unwrap();
        let lin = ctx.relinearize(&model, traj.means()).unwrap();

        for k in 0..horizon {
            // The sigma-point expectation around mean z with the frozen
            // covariance template: Σᵢ wᵢ·f(z + δᵢ).
            let g = Gaussian::new(means[k].clone(), cov.clone()).unwrap();
            let points = cubature_points(&g).unwrap();
            let offsets: Vec<DVector<f64>> =
                points.points.iter().map(|p| p - &means[k]).collect();
            let weights = points.mean_weights.clone();

            let mut targets: Vec<(&DiffMap, &DMatrix<f64>)> =
                vec![(model.measurement(k), &lin.measurement()[k].gain)];
            if k + 1 < horizon {
                targets.push((model.motion(k), &lin.motion()[k].gain));
            }
            for (map, gain) in targets {
                let expectation = |z: &DVector<f64>| -> DVector<f64> {
                    let mut acc = DVector::zeros(map.out_dim());
                    for (w, o) in weights.iter().zip(&offsets) {
                        acc += *w * map.apply(&(z + o));
                    }
                    acc
                };
                let fd = fd_jacobian(&expectation, &means[k], map.out_dim());
                let diff = (gain - &fd).abs().max();
                assert!(
                    diff <= 1e-5,
                    "step {k}: regression gain deviates from the expectation Jacobian by {diff:.3e}"
                );
                worst = worst.max(diff);
                blocks += 1;
            }
        }
    }
    assert!(blocks >= 100, "only {blocks} Jacobian blocks were checked");
    println!(
        "PASS criterion 11: {blocks} regression gains within {worst:.2e} of \
         finite-difference expectation Jacobians (tolerance 1e-5)"
    );
}
