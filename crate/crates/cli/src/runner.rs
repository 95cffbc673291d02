//! Monte-Carlo trial execution and deterministic aggregation.

use nalgebra::DVector;
use rayon::prelude::*;
use smoothers::{
    fixed_init, nees, noniterative_smooth, rmse, run_smoother, simulate, MeasurementSequence,
    NonlinearSsm, SmootherConfig, SmootherRun, TrajectoryEstimate,
};

use crate::config::{ExperimentConfig, InitKind};
use crate::CliError;

/// Per-trial, per-smoother series. Index 0 describes the initialization;
/// index i ≥ 1 describes the estimate after the i-th accepted outer
/// iteration (rejected iterations leave the estimate unchanged and are not
/// counted as separate points).
pub struct TrialSeries {
    pub rmse: Vec<f64>,
    pub nees: Vec<f64>,
    pub cost: Vec<f64>,
    pub diverged: bool,
    pub final_means: Vec<DVector<f64>>,
    pub final_vars: Vec<DVector<f64>>,
}

pub struct SmootherOutcome {
    pub label: String,
    pub trials: Vec<TrialSeries>,
}

pub struct ExperimentData {
    pub seeds: Vec<u64>,
    pub truths: Vec<Vec<DVector<f64>>>,
    pub outcomes: Vec<SmootherOutcome>,
}

/// One aggregated `metrics.csv` row.
pub struct MetricsRow {
    pub smoother: String,
    pub iteration: usize,
    pub rmse_mean: f64,
    pub rmse_se: f64,
    pub nees_mean: f64,
    pub nees_se: f64,
    pub diverged_fraction: f64,
    pub mean_cost: f64,
}

/// Runs every configured smoother on every trial. Trials execute in
/// parallel, but results are collected in trial order and reduced
/// sequentially, so the aggregates do not depend on the worker count.
pub fn run_trials(config: &ExperimentConfig) -> Result<ExperimentData, CliError> {
    let model = config.build_model()?;
    let mut specs = Vec::new();
    for spec in &config.smoothers {
        specs.push((spec.output_label(), spec.to_smoother_config()?));
    }
    let seeds: Vec<u64> = (0..config.trials)
        .map(|t| config.seed.wrapping_add(t as u64))
        .collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| CliError::Config(format!("cannot build worker pool: {e}")))?;
    let per_trial: Vec<(Vec<DVector<f64>>, Vec<TrialSeries>)> = pool.install(|| {
        seeds
            .par_iter()
            .map(|&seed| {
                let (truth, y) = simulate(&model, seed);
                let series = specs
                    .iter()
                    .map(|(_, sc)| run_one(&model, &truth, &y, config, sc))
                    .collect();
                (truth, series)
            })
            .collect()
    });

    let mut truths = Vec::with_capacity(per_trial.len());
    let mut by_smoother: Vec<Vec<TrialSeries>> =
        specs.iter().map(|_| Vec::with_capacity(seeds.len())).collect();
    for (truth, series) in per_trial {
        truths.push(truth);
        for (slot, s) in by_smoother.iter_mut().zip(series) {
            slot.push(s);
        }
    }
    let outcomes = specs
        .into_iter()
        .zip(by_smoother)
        .map(|((label, _), trials)| SmootherOutcome { label, trials })
        .collect();
    Ok(ExperimentData {
        seeds,
        truths,
        outcomes,
    })
}

fn run_one(
    model: &NonlinearSsm,
    truth: &[DVector<f64>],
    y: &MeasurementSequence,
    config: &ExperimentConfig,
    sc: &SmootherConfig,
) -> TrialSeries {
    let init = match config.init {
        InitKind::Noniterative => match noniterative_smooth(model, y, sc.mode()) {
            Ok(t) => t,
            Err(_) => return failed_series(),
        },
        InitKind::Fixed => fixed_init(model),
    };
    match run_smoother(model, y, &init, sc) {
        Ok(run) => build_series(&run, truth, &config.rmse_components),
        Err(_) => failed_series(),
    }
}

/// A trial whose estimator could not produce any estimate: a single
/// non-finite point that aggregation excludes from the means and counts as
/// diverged.
fn failed_series() -> TrialSeries {
    TrialSeries {
        rmse: vec![f64::NAN],
        nees: vec![f64::NAN],
        cost: vec![f64::NAN],
        diverged: true,
        final_means: Vec::new(),
        final_vars: Vec::new(),
    }
}

fn build_series(run: &SmootherRun, truth: &[DVector<f64>], components: &[usize]) -> TrialSeries {
    let history = run
        .history
        .as_ref()
        .expect("the runner always records history");
    let mut estimates: Vec<&TrajectoryEstimate> = vec![&history[0]];
    for (record, estimate) in run.records.iter().zip(&history[1..]) {
        if record.accepted {
            estimates.push(estimate);
        }
    }

    let rmse_series: Vec<f64> = estimates
        .iter()
        .map(|e| rmse(e.means(), truth, components).unwrap_or(f64::NAN))
        .collect();
    let nees_series: Vec<f64> = estimates
        .iter()
        .map(|e| nees(e, truth).map(|(_, mean)| mean).unwrap_or(f64::NAN))
        .collect();
    let mut cost_series = Vec::with_capacity(estimates.len());
    cost_series.push(
        run.records
            .first()
            .map(|r| r.cost_entry)
            .unwrap_or(f64::NAN),
    );
    cost_series.extend(run.records.iter().filter(|r| r.accepted).map(|r| r.cost));

    // Divergence is a measured outcome: a failed status, a non-finite final
    // cost, or a final cost above the initialization's. (For the
    // sigma-point variants these costs come from different frozen
    // objectives; as a divergence heuristic that distinction is immaterial.)
    let first_cost = run.records.first().map(|r| r.cost_entry);
    let final_cost = run.records.last().map(|r| r.cost);
    let diverged = run.status.is_failure()
        || match (first_cost, final_cost) {
            (Some(first), Some(last)) => !last.is_finite() || last > first,
            _ => false,
        };

    let estimate = &run.estimate;
    TrialSeries {
        rmse: rmse_series,
        nees: nees_series,
        cost: cost_series,
        diverged,
        final_means: estimate.means().to_vec(),
        final_vars: estimate
            .covs()
            .iter()
            .map(|c| c.diagonal())
            .collect(),
    }
}

/// Mean and standard error over the finite entries (SE = sample standard
/// deviation divided by √n over the n finite contributions).
fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = finite.len() as f64;
    let mean = finite.iter().sum::<f64>() / n;
    if finite.len() < 2 {
        return (mean, 0.0);
    }
    let var = finite.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Carry-forward lookup: trials that converged early keep reporting their
/// final value at later iteration indices.
fn at_or_last(series: &[f64], i: usize) -> f64 {
    series
        .get(i)
        .or(series.last())
        .copied()
        .unwrap_or(f64::NAN)
}

/// Aggregates one smoother's trials into per-iteration rows.
pub fn aggregate(outcome: &SmootherOutcome) -> Vec<MetricsRow> {
    let trials = &outcome.trials;
    let len = trials.iter().map(|t| t.rmse.len()).max().unwrap_or(0);
    let diverged_fraction =
        trials.iter().filter(|t| t.diverged).count() as f64 / trials.len().max(1) as f64;
    let mut rows = Vec::with_capacity(len);
    for i in 0..len {
        let rmse_vals: Vec<f64> = trials.iter().map(|t| at_or_last(&t.rmse, i)).collect();
        let nees_vals: Vec<f64> = trials.iter().map(|t| at_or_last(&t.nees, i)).collect();
        let cost_vals: Vec<f64> = trials.iter().map(|t| at_or_last(&t.cost, i)).collect();
        let (rmse_mean, rmse_se) = mean_and_se(&rmse_vals);
        let (nees_mean, nees_se) = mean_and_se(&nees_vals);
        let (mean_cost, _) = mean_and_se(&cost_vals);
        rows.push(MetricsRow {
            smoother: outcome.label.clone(),
            iteration: i,
            rmse_mean,
            rmse_se,
            nees_mean,
            nees_se,
            diverged_fraction,
            mean_cost,
        });
    }
    rows
}
