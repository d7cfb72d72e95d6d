//! Hyperparameter protocol: run the lambda grid, pick the winner on seen-task
//! validation accuracy, rerun it on all seeds, aggregate mean and standard
//! deviation.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::strategies::LAMBDA_GRID;

use super::config::{ExperimentConfig, ModelKind};
use super::experiment::run_experiment;
use super::report::{RunReport, RunStatus};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridPoint {
    pub lambda: f64,
    /// Mean of the final validation row over all tasks (selection score).
    pub val_accuracy: f64,
    pub status: RunStatus,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub config_hash: String,
    pub status: RunStatus,
    /// Final stream test accuracy (classifier runs) or final fitting
    /// capacity (generator runs).
    pub score: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepResult {
    pub name: String,
    pub strategy: String,
    pub best_lambda: Option<f64>,
    pub grid: Vec<GridPoint>,
    pub runs: Vec<SeedOutcome>,
    pub mean: f64,
    pub std: f64,
}

fn final_val_row_mean(report: &RunReport) -> f64 {
    match &report.r_matrix_val {
        Some(rows) if !rows.is_empty() => {
            let last = rows.last().unwrap();
            last.iter().sum::<f64>() / last.len() as f64
        }
        _ => f64::NEG_INFINITY,
    }
}

fn run_score(report: &RunReport) -> f64 {
    if report.status != RunStatus::Completed {
        return f64::NEG_INFINITY;
    }
    match report.config.model.kind {
        ModelKind::Generator => report
            .gen_eval
            .iter()
            .rev()
            .find_map(|g| g.fitting_capacity)
            .unwrap_or(f64::NEG_INFINITY),
        _ => match &report.r_matrix {
            Some(rows) => {
                let last = rows.last().unwrap();
                last.iter().sum::<f64>() / last.len() as f64
            }
            None => f64::NEG_INFINITY,
        },
    }
}

/// Runs the protocol for one strategy configuration.
pub fn sweep(
    base: &ExperimentConfig,
    data_root: &Path,
    out_root: &Path,
    force: bool,
) -> Result<SweepResult> {
    let seeds = if base.seeds.is_empty() { vec![0] } else { base.seeds.clone() };
    let mut grid = Vec::new();
    let winner = if base.strategy.uses_lambda_grid() {
        let mut best: Option<(f64, f64)> = None;
        for &lambda in LAMBDA_GRID.iter() {
            let mut cfg = base.clone();
            cfg.strategy = base.strategy.with_lambda(lambda);
            let report = run_experiment(&cfg, seeds[0], data_root, out_root, force)?;
            let score = final_val_row_mean(&report);
            grid.push(GridPoint { lambda, val_accuracy: score, status: report.status });
            if best.map_or(true, |(_, s)| score > s) {
                best = Some((lambda, score));
            }
        }
        let (best_lambda, _) = best.ok_or_else(|| Error::SweepFailure("empty grid".into()))?;
        let mut cfg = base.clone();
        cfg.strategy = base.strategy.with_lambda(best_lambda);
        cfg
    } else {
        base.clone()
    };

    let mut runs = Vec::new();
    for &seed in &seeds {
        let report = run_experiment(&winner, seed, data_root, out_root, force)?;
        runs.push(SeedOutcome {
            seed,
            config_hash: report.config_hash.clone(),
            status: report.status,
            score: run_score(&report),
        });
    }
    let completed: Vec<f64> = runs
        .iter()
        .filter(|r| r.status == RunStatus::Completed)
        .map(|r| r.score)
        .collect();
    if completed.is_empty() {
        return Err(Error::SweepFailure("every run diverged".into()));
    }
    let mean = completed.iter().sum::<f64>() / completed.len() as f64;
    let var = completed.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / completed.len() as f64;
    let result = SweepResult {
        name: base.name.clone(),
        strategy: base.strategy.tag().to_string(),
        best_lambda: base.strategy.uses_lambda_grid().then(|| winner.strategy.lambda()),
        grid,
        runs,
        mean,
        std: var.sqrt(),
    };

    let sweep_dir = out_root.join("sweeps");
    std::fs::create_dir_all(&sweep_dir)?;
    let path = sweep_dir.join(format!("{}-{}.json", base.hash(), base.strategy.tag()));
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, serde_json::to_vec_pretty(&result)?)?;
    std::fs::rename(&tmp, &path)?;
    Ok(result)
}

/// Formats sweep outcomes as a mean +/- std table.
pub fn format_table(results: &[SweepResult]) -> String {
    let mut out = String::from(format!("{:<24} {:>10} {:>18}\n", "strategy", "lambda", "score (mean+/-std)"));
    for r in results {
        let lambda = r.best_lambda.map_or("-".to_string(), |l| format!("{l}"));
        out.push_str(&format!(
            "{:<24} {:>10} {:>10.2} +/- {:>5.2}\n",
            r.strategy,
            lambda,
            100.0 * r.mean,
            100.0 * r.std
        ));
    }
    out
}
