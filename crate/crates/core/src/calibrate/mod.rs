//! Budget-constrained calibration of the quantile level `τ̂`.
//!
//! The naive design draws geometric censoring times independent of the
//! prompt; the adaptive designs spend the budget on a Bernoulli choice of
//! which prompts get their full sampling target.

pub mod censoring;
pub mod estimator;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use censoring::{
    assign_censoring_adaptive, assign_censoring_naive, assign_censoring_naive_efficient,
    geometric_weight, naive_rate, CensoringDesign, Weighting,
};
pub use estimator::{alpha_curve, alpha_hat, build_tau_grid, select_tau, threshold_level};

use crate::allocator::AllocatorError;
use crate::geom::{geom_quantile, GeomError, UnsafeProbability};
use crate::oracle::{
    generate_observations, CensoredObservation, Oracle, OracleError, PromptRecord,
    UnobservedIndicator,
};
use crate::seeds::{derive_seed, STAGE_CENSOR, STAGE_OUTCOME};

/// Default `τ_prior = 10^(-1/4)`.
pub fn default_tau_prior() -> f64 {
    10f64.powf(-0.25)
}

#[derive(Debug, Error)]
pub enum CalibrationError {
    #[error("invalid calibration config: {0}")]
    Config(String),
    #[error("calibration set is empty")]
    EmptyCalibrationSet,
    #[error("expected {expected} entries, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("mode {0} needs a trim threshold")]
    MissingTrim(Mode),
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Allocator(#[from] AllocatorError),
    #[error(transparent)]
    Unobserved(#[from] UnobservedIndicator),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// `τ̂ = α` with no calibration; the baseline.
    Uncalibrated,
    Naive,
    NaiveEfficient,
    Basic,
    Trimmed,
    Optimized,
}

impl Mode {
    pub const ALL: [Mode; 6] = [
        Mode::Uncalibrated,
        Mode::Naive,
        Mode::NaiveEfficient,
        Mode::Basic,
        Mode::Trimmed,
        Mode::Optimized,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Uncalibrated => "uncalibrated",
            Mode::Naive => "naive",
            Mode::NaiveEfficient => "naive_efficient",
            Mode::Basic => "basic",
            Mode::Trimmed => "trimmed",
            Mode::Optimized => "optimized",
        }
    }

    pub fn is_adaptive(self) -> bool {
        matches!(self, Mode::Basic | Mode::Trimmed | Mode::Optimized)
    }

    pub fn is_trimmed(self) -> bool {
        matches!(self, Mode::Trimmed | Mode::Optimized)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown mode {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationConfig {
    pub alpha: f64,
    pub tau_prior: f64,
    pub mode: Mode,
    pub trim_m: Option<u64>,
    /// Total expected budget `B` over the calibration set.
    pub budget: f64,
    pub delta: f64,
    pub seed: u64,
    /// Search the whole grid in the naive mode instead of `[0, τ_prior]`.
    pub naive_full_grid: bool,
    /// Allocator budget residual, relative to `B`.
    pub allocator_tolerance: f64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig {
            alpha: 0.1,
            tau_prior: default_tau_prior(),
            mode: Mode::Optimized,
            trim_m: None,
            budget: 1.0,
            delta: 0.1,
            seed: 0,
            naive_full_grid: false,
            allocator_tolerance: crate::allocator::DEFAULT_RELATIVE_TOLERANCE,
        }
    }
}

impl CalibrationConfig {
    pub fn validate(&self) -> Result<(), CalibrationError> {
        let bad = |m: String| Err(CalibrationError::Config(m));
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if !(self.tau_prior > 0.0 && self.tau_prior <= 1.0) {
            return bad(format!(
                "tau_prior must lie in (0, 1], got {}",
                self.tau_prior
            ));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad(format!("delta must lie in (0, 1), got {}", self.delta));
        }
        if !(self.budget > 0.0 && self.budget.is_finite()) {
            return bad(format!("budget must be positive, got {}", self.budget));
        }
        if !(self.allocator_tolerance > 0.0 && self.allocator_tolerance < 1.0) {
            return bad(format!(
                "allocator_tolerance must lie in (0, 1), got {}",
                self.allocator_tolerance
            ));
        }
        match (self.mode.is_trimmed(), self.trim_m) {
            (true, None) => Err(CalibrationError::MissingTrim(self.mode)),
            (_, Some(0)) => bad("trim_m must be at least 1".into()),
            _ => Ok(()),
        }
    }

    fn trim(&self) -> Option<u64> {
        if self.mode.is_trimmed() {
            self.trim_m
        } else {
            None
        }
    }

    fn grid_cap(&self) -> Option<f64> {
        if self.mode == Mode::Naive && self.naive_full_grid {
            None
        } else {
            Some(self.tau_prior)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub tau_hat: f64,
    pub mode: Mode,
    pub alpha: f64,
    pub tau_prior: f64,
    pub trim_m: Option<u64>,
    pub budget: f64,
    pub n_calibration: usize,
    /// `(τ, α̂(τ))` over the ascending search grid.
    pub alpha_curve: Vec<(f64, f64)>,
    /// Weight of each calibration prompt at `τ̂`.
    pub weights: Vec<f64>,
    pub pi: Option<Vec<f64>>,
    pub gamma: f64,
    pub pac_slack: f64,
    /// `Σ C_i` as drawn.
    pub realized_budget: f64,
    /// Expected draws of the geometric law the efficient naive design stands in for.
    pub simulated_budget: Option<f64>,
    pub expected_budget: f64,
    pub draws_used: u64,
}

impl CalibrationResult {
    /// `L̂(x) = f̂_τ̂(x)` from a single model evaluation.
    pub fn lower_predictive_bound(&self, p_hat: UnsafeProbability) -> Result<u64, GeomError> {
        lower_predictive_bound(self.tau_hat, self.trim_m, p_hat)
    }

    /// Draw count charged to this calibration for budget reporting.
    pub fn charged_budget(&self) -> f64 {
        self.simulated_budget.unwrap_or(self.realized_budget)
    }
}

/// `min(q̂_τ̂(p̂), M)`.
pub fn lower_predictive_bound(
    tau_hat: f64,
    trim: Option<u64>,
    p_hat: UnsafeProbability,
) -> Result<u64, GeomError> {
    Ok(censoring::trimmed(geom_quantile(p_hat, tau_hat)?, trim))
}

/// `√((2γ² + 5) / n · ln(1/δ))`.
pub fn pac_slack(gamma: f64, n: usize, delta: f64) -> f64 {
    ((2.0 * gamma * gamma + 5.0) / n as f64 * (1.0 / delta).ln()).sqrt()
}

/// A finished calibration together with the outcomes it consumed.
#[derive(Debug, Clone)]
pub struct CalibrationRun {
    pub result: CalibrationResult,
    pub observations: Vec<CensoredObservation>,
}

/// Draws the censoring design, audits every calibration prompt up to its
/// censoring time and selects `τ̂`.
///
/// `predictions[i]` is `p̂(X_i)` for `prompts[i]`. Censoring and outcome
/// streams derive from `config.seed`, per prompt id.
pub fn calibrate<O: Oracle + ?Sized>(
    oracle: &O,
    prompts: &[PromptRecord],
    predictions: &[UnsafeProbability],
    config: &CalibrationConfig,
    use_shortcut: bool,
) -> Result<CalibrationRun, CalibrationError> {
    config.validate()?;
    if prompts.is_empty() {
        return Err(CalibrationError::EmptyCalibrationSet);
    }
    if prompts.len() != predictions.len() {
        return Err(CalibrationError::LengthMismatch {
            expected: prompts.len(),
            got: predictions.len(),
        });
    }
    let n = prompts.len();
    let trim = config.trim();

    if config.mode == Mode::Uncalibrated {
        let result = CalibrationResult {
            tau_hat: config.alpha,
            mode: config.mode,
            alpha: config.alpha,
            tau_prior: config.tau_prior,
            trim_m: None,
            budget: config.budget,
            n_calibration: n,
            alpha_curve: Vec::new(),
            weights: Vec::new(),
            pi: None,
            gamma: 1.0,
            pac_slack: f64::INFINITY,
            realized_budget: 0.0,
            simulated_budget: None,
            expected_budget: 0.0,
            draws_used: 0,
        };
        return Ok(CalibrationRun {
            result,
            observations: Vec::new(),
        });
    }

    let censor_seed = derive_seed(config.seed, STAGE_CENSOR, 0);
    let design = match config.mode {
        Mode::Naive => assign_censoring_naive(prompts, config.budget, censor_seed)?,
        Mode::NaiveEfficient => assign_censoring_naive_efficient(
            prompts,
            predictions,
            config.tau_prior,
            config.budget,
            censor_seed,
        )?,
        mode => assign_censoring_adaptive(
            prompts,
            predictions,
            mode,
            config.tau_prior,
            trim,
            config.budget,
            config.allocator_tolerance,
            censor_seed,
        )?,
    };

    let outcome_seed = derive_seed(config.seed, STAGE_OUTCOME, 0);
    let observations = generate_observations(
        oracle,
        prompts,
        &design.censor_times,
        outcome_seed,
        use_shortcut,
    )?;

    let grid = build_tau_grid(predictions, &observations, trim, config.grid_cap())?;
    let curve = alpha_curve(
        &grid,
        predictions,
        trim,
        &observations,
        &design.weighting,
        n,
    )?;
    let tau_hat = select_tau(&grid, &curve, config.alpha);

    let (weights, gamma) = match &design.weighting {
        Weighting::PerPrompt(w) => (w.clone(), w.iter().copied().fold(1.0, f64::max)),
        Weighting::Geometric { rate } => {
            let at = |tau: f64| -> Result<Vec<f64>, CalibrationError> {
                predictions
                    .iter()
                    .map(|&p| Ok(geometric_weight(*rate, geom_quantile(p, tau)?)))
                    .collect()
            };
            let weights = at(tau_hat)?;
            let gamma_tau = config
                .grid_cap()
                .unwrap_or_else(|| grid.last().copied().unwrap_or(0.0));
            let gamma = at(gamma_tau)?.into_iter().fold(1.0, f64::max);
            (weights, gamma)
        }
    };

    let realized_budget = design.censor_times.iter().map(|&c| c as f64).sum();
    let simulated_budget =
        (config.mode == Mode::NaiveEfficient).then(|| n as f64 / design.rate.unwrap_or(1.0));
    let draws_used = observations.iter().map(|o| o.draws_used).sum();
    let result = CalibrationResult {
        tau_hat,
        mode: config.mode,
        alpha: config.alpha,
        tau_prior: config.tau_prior,
        trim_m: trim,
        budget: config.budget,
        n_calibration: n,
        alpha_curve: grid.into_iter().zip(curve).collect(),
        weights,
        pi: design.pi,
        gamma,
        pac_slack: pac_slack(gamma, n, config.delta),
        realized_budget,
        simulated_budget,
        expected_budget: design.expected_budget,
        draws_used,
    };
    Ok(CalibrationRun {
        result,
        observations,
    })
}
