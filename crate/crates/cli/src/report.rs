//! Deterministic output files: metrics CSV, per-trial trajectory CSVs, and a
//! manifest recording exactly what ran.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DVector;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::runner::{aggregate, ExperimentData, MetricsRow};
use crate::CliError;

const STATE_NAMES: [&str; 5] = ["px", "py", "vx", "vy", "omega"];

#[derive(Serialize)]
struct Manifest<'a> {
    config: &'a ExperimentConfig,
    library_version: &'static str,
    harness_version: &'static str,
    trial_seeds: &'a [u64],
}

/// Writes `metrics.csv`, `manifest.json`, and (if enabled) per-trial
/// trajectory CSVs under `out_dir`.
pub fn write_all(
    config: &ExperimentConfig,
    data: &ExperimentData,
    out_dir: &Path,
) -> Result<(), CliError> {
    fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;

    let mut rows = Vec::new();
    for outcome in &data.outcomes {
        rows.extend(aggregate(outcome));
    }
    write_file(&out_dir.join("metrics.csv"), &render_metrics(&rows))?;

    let manifest = Manifest {
        config,
        library_version: smoothers::VERSION,
        harness_version: env!("CARGO_PKG_VERSION"),
        trial_seeds: &data.seeds,
    };
    let manifest_text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| CliError::Io(format!("cannot serialize manifest: {e}")))?;
    write_file(&out_dir.join("manifest.json"), &(manifest_text + "\n"))?;

    if config.write_trajectories {
        let traj_dir = out_dir.join("trajectories");
        fs::create_dir_all(&traj_dir).map_err(|e| io_err(&traj_dir, e))?;
        for (trial, truth) in data.truths.iter().enumerate() {
            for outcome in &data.outcomes {
                let series = &outcome.trials[trial];
                if series.final_means.is_empty() {
                    continue;
                }
                let path = traj_dir.join(format!("{trial}_{}.csv", outcome.label));
                write_file(&path, &render_trajectory(truth, series.final_means.as_slice(), series.final_vars.as_slice()))?;
            }
        }
    }
    Ok(())
}

fn render_metrics(rows: &[MetricsRow]) -> String {
    let mut text = String::from(
        "smoother,iteration,rmse_mean,rmse_se,nees_mean,nees_se,diverged_fraction,mean_cost\n",
    );
    for r in rows {
        let _ = writeln!(
            text,
            "{},{},{},{},{},{},{},{}",
            r.smoother,
            r.iteration,
            r.rmse_mean,
            r.rmse_se,
            r.nees_mean,
            r.nees_se,
            r.diverged_fraction,
            r.mean_cost
        );
    }
    text
}

fn render_trajectory(
    truth: &[DVector<f64>],
    means: &[DVector<f64>],
    vars: &[DVector<f64>],
) -> String {
    let mut text = String::from("k");
    for prefix in ["true", "est_mean", "est_var"] {
        for name in STATE_NAMES {
            let _ = write!(text, ",{prefix}_{name}");
        }
    }
    text.push('\n');
    for k in 0..truth.len() {
        let _ = write!(text, "{k}");
        for source in [&truth[k], &means[k], &vars[k]] {
            for v in source.iter() {
                let _ = write!(text, ",{v}");
            }
        }
        text.push('\n');
    }
    text
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| io_err(path, e))
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}
