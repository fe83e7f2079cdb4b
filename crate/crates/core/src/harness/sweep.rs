//! Cartesian sweeps over budget per prompt, target `γ` and `α`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::plots::PlotPoint;
use super::{
    read_metrics_csv, run_experiment, summarize_rows, write_experiment, ExperimentConfig,
    ExperimentResult, HarnessError,
};
use crate::model::ProbabilityModel;
use crate::oracle::{Oracle, PromptRecord};

/// Budget grid of the full synthetic study.
pub const DEFAULT_BUDGETS: [f64; 8] = [10.0, 25.0, 50.0, 100.0, 200.0, 300.0, 600.0, 1200.0];

#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub budget_per_prompt: f64,
    pub gamma: f64,
    pub alpha: f64,
    pub trim_m: u64,
    pub result: ExperimentResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedCell {
    pub budget_per_prompt: f64,
    pub gamma: f64,
    pub alpha: f64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub cells: Vec<SweepCell>,
    pub skipped: Vec<SkippedCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CellIndex {
    budget_per_prompt: f64,
    gamma: f64,
    alpha: f64,
    trim_m: u64,
    dir: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SweepIndex {
    cells: Vec<CellIndex>,
    skipped: Vec<SkippedCell>,
}

/// Runs one experiment per `(budget, γ, α)`, with `M = ⌊(B/n) γ⌋`. Settings
/// whose trim falls below 1 are skipped and reported.
#[allow(clippy::too_many_arguments)]
pub fn sweep<O: Oracle + ?Sized>(
    oracle: &O,
    model: &ProbabilityModel,
    calibration: &[PromptRecord],
    test: &[PromptRecord],
    base: &ExperimentConfig,
    budgets: &[f64],
    gammas: &[f64],
    alphas: &[f64],
) -> Result<SweepResult, HarnessError> {
    if budgets.is_empty() || gammas.is_empty() || alphas.is_empty() {
        return Err(HarnessError::Config("sweep grids must be nonempty".into()));
    }
    let mut cells = Vec::new();
    let mut skipped = Vec::new();
    for &alpha in alphas {
        for &gamma in gammas {
            for &budget_per_prompt in budgets {
                let config = ExperimentConfig {
                    budget_per_prompt,
                    gamma,
                    alpha,
                    ..base.clone()
                };
                let trim_m = config.trim_m();
                if trim_m < 1 && config.modes.iter().any(|m| m.is_trimmed()) {
                    let reason = format!("trim M = floor({budget_per_prompt} * {gamma}) < 1");
                    log::warn!("skipping sweep cell: {reason}");
                    skipped.push(SkippedCell {
                        budget_per_prompt,
                        gamma,
                        alpha,
                        reason,
                    });
                    continue;
                }
                let result = run_experiment(oracle, model, calibration, test, &config)?;
                cells.push(SweepCell {
                    budget_per_prompt,
                    gamma,
                    alpha,
                    trim_m,
                    result,
                });
            }
        }
    }
    Ok(SweepResult { cells, skipped })
}

fn cell_dir_name(budget: f64, gamma: f64, alpha: f64) -> String {
    format!("b{budget}_g{gamma}_a{alpha}")
}

impl SweepResult {
    pub fn plot_points(&self) -> Vec<PlotPoint> {
        self.cells
            .iter()
            .flat_map(|c| {
                PlotPoint::from_summaries(
                    c.budget_per_prompt,
                    c.gamma,
                    c.alpha,
                    &c.result.summary.modes,
                )
            })
            .collect()
    }

    /// Writes `cells/<cell>/{metrics.csv,summary.json}` and a `sweep.json` index.
    pub fn write(&self, dir: &Path) -> Result<(), HarnessError> {
        let mut index = SweepIndex {
            cells: Vec::new(),
            skipped: self.skipped.clone(),
        };
        for c in &self.cells {
            let rel = format!(
                "cells/{}",
                cell_dir_name(c.budget_per_prompt, c.gamma, c.alpha)
            );
            write_experiment(&c.result, &dir.join(&rel))?;
            index.cells.push(CellIndex {
                budget_per_prompt: c.budget_per_prompt,
                gamma: c.gamma,
                alpha: c.alpha,
                trim_m: c.trim_m,
                dir: rel,
            });
        }
        fs::write(dir.join("sweep.json"), serde_json::to_vec_pretty(&index)?)?;
        Ok(())
    }
}

/// Plot points re-aggregated from the per-cell metrics CSVs of a written sweep.
pub fn load_plot_points(dir: &Path) -> Result<Vec<PlotPoint>, HarnessError> {
    let index: SweepIndex = serde_json::from_slice(&fs::read(dir.join("sweep.json"))?)?;
    let mut points = Vec::new();
    for c in &index.cells {
        let path: PathBuf = dir.join(&c.dir).join("metrics.csv");
        let rows = read_metrics_csv(&path)?;
        points.extend(PlotPoint::from_summaries(
            c.budget_per_prompt,
            c.gamma,
            c.alpha,
            &summarize_rows(&rows),
        ));
    }
    Ok(points)
}
