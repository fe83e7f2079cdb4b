//! Censoring designs: how many audit rounds each calibration prompt gets.
//!
//! Every design fixes all censoring times from the censoring stream before
//! any oracle call, so `C ⟂ T | X` holds by construction.

use rand::Rng;

use super::{CalibrationError, Mode};
use crate::allocator::{self, probability_floor, weight_bound};
use crate::geom::{geom_quantile, sample_geometric, UnsafeProbability};
use crate::oracle::PromptRecord;
use crate::seeds::prompt_rng;

/// Inverse-censoring weights `w_τ(X_i) = 1 / P(q̂_τ(X_i) <= C_i | X_i)`.
#[derive(Debug, Clone, PartialEq)]
pub enum Weighting {
    /// Weight independent of `τ` (adaptive designs and the efficient naive design).
    PerPrompt(Vec<f64>),
    /// `C ~ Geom(rate)` independent of the prompt: `w = (1 - rate)^-(q - 1)`.
    Geometric { rate: f64 },
}

impl Weighting {
    /// Weight of prompt `index` at selection threshold `threshold`.
    pub fn weight(&self, index: usize, threshold: u64) -> f64 {
        match self {
            Weighting::PerPrompt(w) => w[index],
            Weighting::Geometric { rate } => geometric_weight(*rate, threshold),
        }
    }
}

/// `1 / P(C >= q)` for `C ~ Geom(rate)` on `{1, 2, ...}`.
pub fn geometric_weight(rate: f64, threshold: u64) -> f64 {
    if threshold <= 1 {
        return 1.0;
    }
    (-((threshold - 1) as f64) * (-rate).ln_1p()).exp()
}

/// `P(C >= q)` for `C ~ Geom(rate)`.
pub fn geometric_survival(rate: f64, threshold: u64) -> f64 {
    if threshold <= 1 {
        return 1.0;
    }
    ((threshold - 1) as f64 * (-rate).ln_1p()).exp()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CensoringDesign {
    pub censor_times: Vec<u64>,
    pub weighting: Weighting,
    /// Per-prompt evaluation probabilities (all but the geometric design).
    pub pi: Option<Vec<f64>>,
    /// Per-prompt sampling targets `f̂_{τ_prior}(X_i)` (all but the geometric design).
    pub targets: Option<Vec<u64>>,
    /// `E[Σ C_i | X]` under the design.
    pub expected_budget: f64,
    /// Geometric rate of the naive designs.
    pub rate: Option<f64>,
}

/// `ρ = min(n / B, 1)`.
pub fn naive_rate(n: usize, budget: f64) -> f64 {
    (n as f64 / budget).min(1.0)
}

/// `C_i ~ Geom(ρ)` i.i.d., independent of the prompts; `E[Σ C_i] = n / ρ <= B`.
pub fn assign_censoring_naive(
    prompts: &[PromptRecord],
    budget: f64,
    stage_seed: u64,
) -> Result<CensoringDesign, CalibrationError> {
    check_budget(budget)?;
    let rate = naive_rate(prompts.len(), budget);
    let censor_times = if rate >= 1.0 {
        vec![1; prompts.len()]
    } else {
        let law = UnsafeProbability::new(rate)?;
        prompts
            .iter()
            .map(|p| sample_geometric(law, &mut prompt_rng(stage_seed, p.id)))
            .collect::<Result<Vec<_>, _>>()?
    };
    Ok(CensoringDesign {
        censor_times,
        weighting: Weighting::Geometric { rate },
        pi: None,
        targets: None,
        expected_budget: prompts.len() as f64 / rate,
        rate: Some(rate),
    })
}

/// `C_i = Ber(g_i) · q̂_{τ_prior}(X_i)` with `g_i = P(Geom(ρ) >= q̂_{τ_prior}(X_i))`:
/// the naive design reduced to the only thresholds that matter on the
/// restricted grid. Weights are `1/g_i` for every `τ <= τ_prior`.
pub fn assign_censoring_naive_efficient(
    prompts: &[PromptRecord],
    predictions: &[UnsafeProbability],
    tau_prior: f64,
    budget: f64,
    stage_seed: u64,
) -> Result<CensoringDesign, CalibrationError> {
    check_budget(budget)?;
    check_lengths(prompts.len(), predictions.len())?;
    let rate = naive_rate(prompts.len(), budget);
    let targets = prior_quantiles(predictions, tau_prior, None)?;
    let g: Vec<f64> = targets
        .iter()
        .map(|&q| geometric_survival(rate, q))
        .collect();
    let censor_times = bernoulli_censoring(prompts, &g, &targets, stage_seed);
    let expected_budget = targets.iter().zip(&g).map(|(&q, &gi)| q as f64 * gi).sum();
    Ok(CensoringDesign {
        censor_times,
        weighting: Weighting::PerPrompt(g.iter().map(|gi| 1.0 / gi).collect()),
        pi: Some(g),
        targets: Some(targets),
        expected_budget,
        rate: Some(rate),
    })
}

/// Prompt-adaptive design: `C_i = Ber(π_i) · f̂_{τ_prior}(X_i)`, weights `1/π_i`.
///
/// * basic: `f̂ = q̂`, `π_i = min(B / (n f̂_i), 1)`
/// * trimmed: `f̂ = min(q̂, M)`, same `π`
/// * optimized: `f̂ = min(q̂, M)`, `π` minimises the mean weight under the budget
pub fn assign_censoring_adaptive(
    prompts: &[PromptRecord],
    predictions: &[UnsafeProbability],
    mode: Mode,
    tau_prior: f64,
    trim: Option<u64>,
    budget: f64,
    allocator_tolerance: f64,
    stage_seed: u64,
) -> Result<CensoringDesign, CalibrationError> {
    check_budget(budget)?;
    check_lengths(prompts.len(), predictions.len())?;
    let n = prompts.len();
    let trim = match mode {
        Mode::Basic => None,
        Mode::Trimmed | Mode::Optimized => Some(trim.ok_or(CalibrationError::MissingTrim(mode))?),
        other => {
            return Err(CalibrationError::Config(format!(
                "{other} is not an adaptive mode"
            )))
        }
    };
    let targets = prior_quantiles(predictions, tau_prior, trim)?;
    let max_target = targets.iter().copied().max().unwrap_or(0);
    let pi = if mode == Mode::Optimized {
        allocator::solve(&targets, budget, allocator_tolerance * budget)?.pi
    } else {
        let floor = probability_floor(weight_bound(n, max_target, budget));
        targets
            .iter()
            .map(|&f| {
                if f == 0 {
                    1.0
                } else {
                    (budget / (n as f64 * f as f64)).min(1.0).max(floor)
                }
            })
            .collect::<Vec<_>>()
    };
    let censor_times = bernoulli_censoring(prompts, &pi, &targets, stage_seed);
    let expected_budget = targets.iter().zip(&pi).map(|(&f, &p)| f as f64 * p).sum();
    Ok(CensoringDesign {
        censor_times,
        weighting: Weighting::PerPrompt(pi.iter().map(|p| 1.0 / p).collect()),
        pi: Some(pi),
        targets: Some(targets),
        expected_budget,
        rate: None,
    })
}

/// `f̂_{τ}(X_i) = min(q̂_τ(X_i), M)` for every prompt.
pub fn prior_quantiles(
    predictions: &[UnsafeProbability],
    tau: f64,
    trim: Option<u64>,
) -> Result<Vec<u64>, CalibrationError> {
    predictions
        .iter()
        .map(|&p| Ok(trimmed(geom_quantile(p, tau)?, trim)))
        .collect()
}

pub(crate) fn trimmed(q: u64, trim: Option<u64>) -> u64 {
    trim.map_or(q, |m| q.min(m))
}

fn bernoulli_censoring(
    prompts: &[PromptRecord],
    probs: &[f64],
    targets: &[u64],
    stage_seed: u64,
) -> Vec<u64> {
    prompts
        .iter()
        .zip(probs)
        .zip(targets)
        .map(|((prompt, &p), &f)| {
            let mut rng = prompt_rng(stage_seed, prompt.id);
            if rng.random::<f64>() < p {
                f
            } else {
                0
            }
        })
        .collect()
}

fn check_budget(budget: f64) -> Result<(), CalibrationError> {
    if budget > 0.0 && budget.is_finite() {
        Ok(())
    } else {
        Err(CalibrationError::Config(format!(
            "budget must be positive, got {budget}"
        )))
    }
}

fn check_lengths(a: usize, b: usize) -> Result<(), CalibrationError> {
    if a == b {
        Ok(())
    } else {
        Err(CalibrationError::LengthMismatch {
            expected: a,
            got: b,
        })
    }
}
