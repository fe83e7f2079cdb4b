//! Multi-run calibration experiments with analytic metrics.
//!
//! Coverage on synthetic data is exact: `P(T >= L̂) = (1 - p)^(L̂ - 1)` from
//! the true `p`, so evaluation never calls the oracle.

pub mod plots;
pub mod stats;
pub mod sweep;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibrate::{
    calibrate, default_tau_prior, CalibrationConfig, CalibrationError, CalibrationResult, Mode,
};
use crate::geom::{geom_cdf, geom_sf, GeomError, UnsafeProbability};
use crate::model::{fit, FitReport, ModelError, ProbabilityModel, TrainConfig, TrainingExample};
use crate::oracle::{Oracle, OracleError, PromptRecord};
use crate::seeds::{derive_seed, prompt_rng, STAGE_RUN, STAGE_TRAIN_FIT, STAGE_TRAIN_OUTCOMES};

pub use stats::{MeanStd, Welford};
pub use sweep::{sweep, SkippedCell, SweepCell, SweepResult};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error("I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("nothing to plot")]
    EmptySummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Number of independent censoring/outcome redraws `J`.
    pub runs: usize,
    pub modes: Vec<Mode>,
    pub alpha: f64,
    pub tau_prior: f64,
    pub delta: f64,
    /// `B / n` over the calibration set.
    pub budget_per_prompt: f64,
    /// Target maximal weight; the trim is `M = ⌊B γ / n⌋`.
    pub gamma: f64,
    pub master_seed: u64,
    /// Draw censored outcomes from one geometric variate per prompt when the
    /// oracle exposes its probability.
    pub use_shortcut: bool,
    pub naive_full_grid: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            runs: 20,
            modes: vec![
                Mode::Uncalibrated,
                Mode::NaiveEfficient,
                Mode::Basic,
                Mode::Trimmed,
                Mode::Optimized,
            ],
            alpha: 0.1,
            tau_prior: default_tau_prior(),
            delta: 0.1,
            budget_per_prompt: 50.0,
            gamma: 10.0,
            master_seed: 0,
            use_shortcut: true,
            naive_full_grid: false,
        }
    }
}

impl ExperimentConfig {
    /// `⌊(B/n) γ⌋`.
    pub fn trim_m(&self) -> u64 {
        (self.budget_per_prompt * self.gamma).floor() as u64
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.runs == 0 {
            return bad("runs must be at least 1".into());
        }
        if self.modes.is_empty() {
            return bad("at least one mode is required".into());
        }
        if !(self.budget_per_prompt > 0.0 && self.budget_per_prompt.is_finite()) {
            return bad(format!(
                "budget_per_prompt must be positive, got {}",
                self.budget_per_prompt
            ));
        }
        if !(self.gamma >= 1.0 && self.gamma.is_finite()) {
            return bad(format!("gamma must be at least 1, got {}", self.gamma));
        }
        if self.modes.iter().any(|m| m.is_trimmed()) && self.trim_m() < 1 {
            return bad(format!(
                "trim M = floor({} * {}) is below 1",
                self.budget_per_prompt, self.gamma
            ));
        }
        self.calibration_config(Mode::Basic, 1, 0).validate()?;
        Ok(())
    }

    pub fn calibration_config(
        &self,
        mode: Mode,
        n_calibration: usize,
        seed: u64,
    ) -> CalibrationConfig {
        CalibrationConfig {
            alpha: self.alpha,
            tau_prior: self.tau_prior,
            mode,
            trim_m: mode.is_trimmed().then(|| self.trim_m()),
            budget: self.budget_per_prompt * n_calibration as f64,
            delta: self.delta,
            seed,
            naive_full_grid: self.naive_full_grid,
            ..CalibrationConfig::default()
        }
    }

    /// Seed of run `j`, shared by every mode of that run.
    pub fn run_seed(&self, run_index: usize) -> u64 {
        derive_seed(self.master_seed, STAGE_RUN, run_index as u64)
    }
}

/// One calibration run of one mode, evaluated on the test split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub run_index: usize,
    pub mode: Mode,
    pub budget_per_prompt: f64,
    pub avg_coverage: f64,
    pub avg_lpb: f64,
    pub avg_budget: f64,
    pub tau_hat: f64,
    pub gamma: f64,
    pub pac_slack: f64,
    pub seed: u64,
}

pub const METRICS_HEADER: [&str; 10] = [
    "run_index",
    "mode",
    "budget_per_prompt",
    "avg_coverage",
    "avg_lpb",
    "avg_budget",
    "tau_hat",
    "gamma",
    "pac_slack",
    "seed",
];

/// Test-set metrics of one calibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// Mean `P(T >= L̂)`.
    pub avg_coverage: f64,
    /// Mean `P(T <= L̂)`; differs from the above only on the atom `T = L̂`.
    pub avg_coverage_inclusive: f64,
    pub avg_lpb: f64,
}

/// Mean analytic coverage and LPB over test prompts, given `p̂` for each.
pub fn evaluate(
    result: &CalibrationResult,
    test_prompts: &[PromptRecord],
    test_predictions: &[UnsafeProbability],
) -> Result<Evaluation, HarnessError> {
    if test_prompts.len() != test_predictions.len() {
        return Err(HarnessError::Config(format!(
            "{} test prompts but {} predictions",
            test_prompts.len(),
            test_predictions.len()
        )));
    }
    if test_prompts.is_empty() {
        return Err(HarnessError::Config("test split is empty".into()));
    }
    let (mut cov, mut cov_inclusive, mut lpb) = (0.0, 0.0, 0.0);
    for (prompt, &p_hat) in test_prompts.iter().zip(test_predictions) {
        let p = prompt.true_p()?;
        let l = result.lower_predictive_bound(p_hat)?;
        cov += geom_sf(p, l);
        cov_inclusive += geom_cdf(p, l);
        lpb += l as f64;
    }
    let n = test_prompts.len() as f64;
    Ok(Evaluation {
        avg_coverage: cov / n,
        avg_coverage_inclusive: cov_inclusive / n,
        avg_lpb: lpb / n,
    })
}

/// Metrics row for one calibration: analytic coverage on the test split and
/// the mean number of audit rounds charged per calibration prompt.
pub fn evaluate_run(
    result: &CalibrationResult,
    model: &ProbabilityModel,
    test_prompts: &[PromptRecord],
    run_index: usize,
    seed: u64,
    budget_per_prompt: f64,
) -> Result<MetricsRow, HarnessError> {
    let preds = predict_all(model, test_prompts)?;
    let eval = evaluate(result, test_prompts, &preds)?;
    Ok(row_from(result, &eval, run_index, seed, budget_per_prompt))
}

fn row_from(
    result: &CalibrationResult,
    eval: &Evaluation,
    run_index: usize,
    seed: u64,
    bpp: f64,
) -> MetricsRow {
    MetricsRow {
        run_index,
        mode: result.mode,
        budget_per_prompt: bpp,
        avg_coverage: eval.avg_coverage,
        avg_lpb: eval.avg_lpb,
        avg_budget: result.charged_budget() / result.n_calibration as f64,
        tau_hat: result.tau_hat,
        gamma: result.gamma,
        pac_slack: result.pac_slack,
        seed,
    }
}

pub fn predict_all(
    model: &ProbabilityModel,
    prompts: &[PromptRecord],
) -> Result<Vec<UnsafeProbability>, HarnessError> {
    prompts
        .par_iter()
        .map(|p| Ok(model.predict_p(&p.features)?))
        .collect()
}

/// Per-run details kept in the summary alongside the CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunDetail {
    pub run_index: usize,
    pub mode: Mode,
    pub tau_hat: f64,
    pub gamma: f64,
    pub trim_m: Option<u64>,
    pub avg_coverage_inclusive: f64,
    pub realized_budget: f64,
    pub expected_budget: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub mode: Mode,
    pub runs: usize,
    pub avg_coverage: MeanStd,
    pub avg_lpb: MeanStd,
    pub avg_budget: MeanStd,
    pub tau_hat: MeanStd,
    pub gamma: MeanStd,
    pub pac_slack: MeanStd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub config: ExperimentConfig,
    pub n_calibration: usize,
    pub n_test: usize,
    /// Coverage in the CSV is `P(T >= L̂)`; `P(T <= L̂)` is in `runs`.
    pub coverage_convention: String,
    pub modes: Vec<ModeSummary>,
    pub runs: Vec<RunDetail>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub rows: Vec<MetricsRow>,
    pub summary: ExperimentSummary,
}

pub const COVERAGE_CONVENTION: &str = "avg_coverage = mean P(T >= L); miscoverage is T < L";

/// Aggregates rows per mode, in mode order.
pub fn summarize_rows(rows: &[MetricsRow]) -> Vec<ModeSummary> {
    let mut by_mode: BTreeMap<Mode, Vec<&MetricsRow>> = BTreeMap::new();
    for r in rows {
        by_mode.entry(r.mode).or_default().push(r);
    }
    by_mode
        .into_iter()
        .map(|(mode, rs)| {
            let agg =
                |f: fn(&MetricsRow) -> f64| rs.iter().map(|r| f(r)).collect::<Welford>().summary();
            ModeSummary {
                mode,
                runs: rs.len(),
                avg_coverage: agg(|r| r.avg_coverage),
                avg_lpb: agg(|r| r.avg_lpb),
                avg_budget: agg(|r| r.avg_budget),
                tau_hat: agg(|r| r.tau_hat),
                gamma: agg(|r| r.gamma),
                pac_slack: agg(|r| r.pac_slack),
            }
        })
        .collect()
}

/// `J` independent calibrations per mode on fixed calibration and test
/// splits. Runs execute in parallel and are merged in run order.
pub fn run_experiment<O: Oracle + ?Sized>(
    oracle: &O,
    model: &ProbabilityModel,
    calibration: &[PromptRecord],
    test: &[PromptRecord],
    config: &ExperimentConfig,
) -> Result<ExperimentResult, HarnessError> {
    config.validate()?;
    if calibration.is_empty() {
        return Err(CalibrationError::EmptyCalibrationSet.into());
    }
    let calib_preds = predict_all(model, calibration)?;
    let test_preds = predict_all(model, test)?;
    let n = calibration.len();

    let per_run: Vec<Vec<(MetricsRow, RunDetail)>> = (0..config.runs)
        .into_par_iter()
        .map(|j| {
            let seed = config.run_seed(j);
            config
                .modes
                .iter()
                .map(|&mode| {
                    let cc = config.calibration_config(mode, n, seed);
                    let run =
                        calibrate(oracle, calibration, &calib_preds, &cc, config.use_shortcut)?;
                    let eval = evaluate(&run.result, test, &test_preds)?;
                    let r = &run.result;
                    let detail = RunDetail {
                        run_index: j,
                        mode,
                        tau_hat: r.tau_hat,
                        gamma: r.gamma,
                        trim_m: r.trim_m,
                        avg_coverage_inclusive: eval.avg_coverage_inclusive,
                        realized_budget: r.realized_budget,
                        expected_budget: r.expected_budget,
                    };
                    Ok((
                        row_from(r, &eval, j, seed, config.budget_per_prompt),
                        detail,
                    ))
                })
                .collect::<Result<Vec<_>, HarnessError>>()
        })
        .collect::<Result<_, _>>()?;

    let (rows, runs): (Vec<_>, Vec<_>) = per_run.into_iter().flatten().unzip();
    log::info!(
        "experiment: {} runs x {} modes at B/n = {}",
        config.runs,
        config.modes.len(),
        config.budget_per_prompt
    );
    let summary = ExperimentSummary {
        config: config.clone(),
        n_calibration: n,
        n_test: test.len(),
        coverage_convention: COVERAGE_CONVENTION.into(),
        modes: summarize_rows(&rows),
        runs,
    };
    Ok(ExperimentResult { rows, summary })
}

/// CSV with a header that matches [`MetricsRow`] field by field.
pub fn metrics_csv_bytes(rows: &[MetricsRow]) -> Result<Vec<u8>, HarnessError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(METRICS_HEADER)?;
    for r in rows {
        w.write_record([
            r.run_index.to_string(),
            r.mode.to_string(),
            r.budget_per_prompt.to_string(),
            r.avg_coverage.to_string(),
            r.avg_lpb.to_string(),
            r.avg_budget.to_string(),
            r.tau_hat.to_string(),
            r.gamma.to_string(),
            r.pac_slack.to_string(),
            r.seed.to_string(),
        ])?;
    }
    w.into_inner().map_err(|e| HarnessError::Io(e.into_error()))
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRow>, HarnessError> {
    let mut r = csv::Reader::from_path(path)?;
    if r.headers()?.iter().ne(METRICS_HEADER) {
        return Err(HarnessError::Config(format!(
            "{} does not have the metrics header",
            path.display()
        )));
    }
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

/// Writes `metrics.csv` and `summary.json` into `dir`.
pub fn write_experiment(result: &ExperimentResult, dir: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("metrics.csv"), metrics_csv_bytes(&result.rows)?)?;
    fs::write(
        dir.join("summary.json"),
        serde_json::to_vec_pretty(&result.summary)?,
    )?;
    Ok(())
}

/// Aggregated training examples from `draws` audited generations per
/// prompt. With `use_shortcut` and a synthetic oracle the count is one
/// binomial variate.
pub fn simulate_training_examples<O: Oracle + ?Sized>(
    oracle: &O,
    prompts: &[PromptRecord],
    draws: u64,
    stage_seed: u64,
    use_shortcut: bool,
) -> Result<Vec<TrainingExample>, HarnessError> {
    if draws == 0 {
        return Err(HarnessError::Config(
            "at least one draw per training prompt is required".into(),
        ));
    }
    prompts
        .par_iter()
        .map(|prompt| {
            let mut rng = prompt_rng(stage_seed, prompt.id);
            let unsafe_count = match oracle.known_probability(prompt).filter(|_| use_shortcut) {
                Some(p) => Binomial::new(draws, p.get())
                    .map_err(|e| HarnessError::Config(e.to_string()))?
                    .sample(&mut rng),
                None => {
                    let mut count = 0;
                    for _ in 0..draws {
                        count += oracle.draw(prompt, &mut rng)? as u64;
                    }
                    count
                }
            };
            Ok(TrainingExample::from_counts(
                prompt.features.clone(),
                draws,
                unsafe_count,
            ))
        })
        .collect()
}

/// Simulates `draws` audited generations per training prompt and fits `p̂`.
/// Outcome and fit streams derive from `master_seed`.
pub fn train_model<O: Oracle + ?Sized>(
    oracle: &O,
    train: &[PromptRecord],
    draws: u64,
    config: &TrainConfig,
    master_seed: u64,
    use_shortcut: bool,
) -> Result<(ProbabilityModel, FitReport), HarnessError> {
    let outcome_seed = derive_seed(master_seed, STAGE_TRAIN_OUTCOMES, 0);
    let examples = simulate_training_examples(oracle, train, draws, outcome_seed, use_shortcut)?;
    let config = TrainConfig {
        seed: derive_seed(master_seed, STAGE_TRAIN_FIT, 0),
        ..config.clone()
    };
    Ok(fit(&examples, &config)?)
}

/// Oracle LPB `q_α(x)` from the true probability; reaches `1 - α` coverage.
pub fn oracle_lower_bound(prompt: &PromptRecord, alpha: f64) -> Result<u64, HarnessError> {
    Ok(crate::geom::geom_quantile(prompt.true_p()?, alpha)?)
}
