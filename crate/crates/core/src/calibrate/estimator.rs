//! Search grid, weighted miscoverage estimate and the sup-rule.

use std::collections::BTreeSet;

use super::censoring::{trimmed, Weighting};
use super::CalibrationError;
use crate::geom::{geom_quantile, inv_quantile_level, UnsafeProbability};
use crate::oracle::CensoredObservation;

/// `sup { τ : f̂_τ(x) <= k }`: `1 - (1 - p̂)^k`, or 1 once `k` reaches the trim.
pub fn threshold_level(p: UnsafeProbability, k: u64, trim: Option<u64>) -> f64 {
    match trim {
        Some(m) if k >= m => 1.0,
        _ => inv_quantile_level(p, k),
    }
}

/// Largest admissible grid level. Above it `1 - τ` keeps too few digits for
/// `q̂_τ` to invert `threshold_level` exactly.
pub const MAX_GRID_LEVEL: f64 = 1.0 - 1e-4;

/// Candidate quantile levels: the levels at which some prompt's threshold
/// crosses its observed time or its censoring time, plus 0. Levels above
/// [`MAX_GRID_LEVEL`] are dropped; `cap` keeps only `τ <= cap`.
pub fn build_tau_grid(
    predictions: &[UnsafeProbability],
    observations: &[CensoredObservation],
    trim: Option<u64>,
    cap: Option<f64>,
) -> Result<Vec<f64>, CalibrationError> {
    if observations.is_empty() {
        return Err(CalibrationError::EmptyCalibrationSet);
    }
    if predictions.len() != observations.len() {
        return Err(CalibrationError::LengthMismatch {
            expected: observations.len(),
            got: predictions.len(),
        });
    }
    let upper = cap.unwrap_or(MAX_GRID_LEVEL).min(MAX_GRID_LEVEL);
    let mut grid = vec![0.0];
    for (&p, obs) in predictions.iter().zip(observations) {
        for k in [obs.observed_time, obs.censor_time] {
            let level = threshold_level(p, k, trim);
            if level <= upper {
                grid.push(level);
            }
        }
    }
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    Ok(grid)
}

/// `α̂(τ) = (1/n) Σ w_i 1{f̂_τ(X_i) <= C_i} 1{T_i < f̂_τ(X_i)}`.
pub fn alpha_hat(
    tau: f64,
    predictions: &[UnsafeProbability],
    trim: Option<u64>,
    observations: &[CensoredObservation],
    weighting: &Weighting,
    n: usize,
) -> Result<f64, CalibrationError> {
    if predictions.len() != observations.len() {
        return Err(CalibrationError::LengthMismatch {
            expected: observations.len(),
            got: predictions.len(),
        });
    }
    let mut sum = 0.0;
    for (i, (&p, obs)) in predictions.iter().zip(observations).enumerate() {
        let threshold = trimmed(geom_quantile(p, tau)?, trim);
        if obs.is_selected(threshold) && obs.miscovered_below(threshold)? {
            sum += weighting.weight(i, threshold);
        }
    }
    Ok(sum / n as f64)
}

/// `α̂` over an ascending grid in one sweep.
///
/// Prompt `i` contributes exactly on `(level(T̃_i), level(C_i)]` when its event
/// was observed, so only the prompts active at each grid point are visited.
/// Active prompts are summed in index order, matching [`alpha_hat`] bit for bit.
pub fn alpha_curve(
    grid: &[f64],
    predictions: &[UnsafeProbability],
    trim: Option<u64>,
    observations: &[CensoredObservation],
    weighting: &Weighting,
    n: usize,
) -> Result<Vec<f64>, CalibrationError> {
    if predictions.len() != observations.len() {
        return Err(CalibrationError::LengthMismatch {
            expected: observations.len(),
            got: predictions.len(),
        });
    }
    let mut opens = Vec::new();
    let mut closes = Vec::new();
    for (i, (&p, obs)) in predictions.iter().zip(observations).enumerate() {
        if !obs.event {
            continue;
        }
        let open = threshold_level(p, obs.observed_time, trim);
        let close = threshold_level(p, obs.censor_time, trim);
        if open < close {
            opens.push((open, i));
            closes.push((close, i));
        }
    }
    opens.sort_by(|a, b| a.0.total_cmp(&b.0));
    closes.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut active = BTreeSet::new();
    let (mut next_open, mut next_close) = (0, 0);
    let mut curve = Vec::with_capacity(grid.len());
    for &tau in grid {
        while next_open < opens.len() && opens[next_open].0 < tau {
            active.insert(opens[next_open].1);
            next_open += 1;
        }
        while next_close < closes.len() && closes[next_close].0 < tau {
            active.remove(&closes[next_close].1);
            next_close += 1;
        }
        let mut sum = 0.0;
        for &i in &active {
            let threshold = match weighting {
                Weighting::PerPrompt(_) => 0,
                Weighting::Geometric { .. } => trimmed(geom_quantile(predictions[i], tau)?, trim),
            };
            sum += weighting.weight(i, threshold);
        }
        curve.push(sum / n as f64);
    }
    Ok(curve)
}

/// `τ̂ = sup { τ ∈ grid : max_{τ' <= τ} α̂(τ') <= α }`, or 0 when no grid
/// point qualifies.
pub fn select_tau(grid: &[f64], curve: &[f64], alpha: f64) -> f64 {
    let mut selected = 0.0;
    let mut running_max = f64::NEG_INFINITY;
    for (&tau, &a) in grid.iter().zip(curve) {
        running_max = running_max.max(a);
        if running_max > alpha {
            break;
        }
        selected = tau;
    }
    selected
}

#[cfg(test)]
mod tests {
    use super::*;

    fn up(p: f64) -> UnsafeProbability {
        UnsafeProbability::new(p).unwrap()
    }

    fn obs(id: u64, c: u64, t: u64, event: bool) -> CensoredObservation {
        CensoredObservation {
            prompt_id: id,
            censor_time: c,
            observed_time: t,
            event,
            draws_used: t,
        }
    }

    #[test]
    fn grid_single_observation() {
        let grid = build_tau_grid(&[up(0.5)], &[obs(0, 2, 1, true)], None, None).unwrap();
        assert_eq!(grid, vec![0.0, 0.5, 0.75]);
    }

    #[test]
    fn grid_with_zero_censoring_is_origin() {
        let o = vec![obs(0, 0, 0, false), obs(1, 0, 0, false)];
        let grid = build_tau_grid(&[up(0.2), up(0.3)], &o, None, None).unwrap();
        assert_eq!(grid, vec![0.0]);
    }

    #[test]
    fn grid_respects_cap_and_trim() {
        let o = vec![obs(0, 4, 4, false), obs(1, 2, 1, true)];
        let grid = build_tau_grid(&[up(0.5), up(0.5)], &o, Some(3), Some(0.6)).unwrap();
        assert_eq!(grid, vec![0.0, 0.5]);
        assert!(build_tau_grid(&[], &[], None, None).is_err());
    }

    #[test]
    fn alpha_hat_direct_formula() {
        let w = Weighting::PerPrompt(vec![2.0]);
        // q̂_τ = 3 at p̂ = 0.5 for τ ∈ (0.75, 0.875]
        let a = alpha_hat(0.8, &[up(0.5)], None, &[obs(0, 5, 1, true)], &w, 1).unwrap();
        assert_eq!(a, 2.0);
        let none = alpha_hat(0.8, &[up(0.5)], None, &[obs(0, 0, 0, false)], &w, 1).unwrap();
        assert_eq!(none, 0.0);
    }

    #[test]
    fn select_tau_rules() {
        let grid = [0.0, 0.1, 0.2, 0.3];
        assert_eq!(select_tau(&grid, &[0.0, 0.05, 0.12, 0.08], 0.1), 0.1);
        assert_eq!(select_tau(&grid, &[0.0; 4], 0.1), 0.3);
        assert_eq!(select_tau(&grid, &[0.0, 0.5, 0.5, 0.5], 0.1), 0.0);
    }

    #[test]
    fn sweep_matches_direct_evaluation() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(10);
        for trial in 0..40 {
            let n = rng.random_range(1..60);
            let preds: Vec<_> = (0..n).map(|_| up(rng.random_range(0.01..0.4))).collect();
            let observations: Vec<_> = (0..n)
                .map(|i| {
                    let c = if rng.random_bool(0.3) {
                        0
                    } else {
                        rng.random_range(1..40)
                    };
                    let t = rng.random_range(1..60u64);
                    if t <= c {
                        obs(i as u64, c, t, true)
                    } else {
                        obs(i as u64, c, c, false)
                    }
                })
                .collect();
            let trim = if trial % 3 == 0 {
                Some(rng.random_range(1..20))
            } else {
                None
            };
            let weighting = if trial % 2 == 0 {
                Weighting::PerPrompt((0..n).map(|_| rng.random_range(1.0..10.0)).collect())
            } else {
                Weighting::Geometric {
                    rate: rng.random_range(0.05..0.5),
                }
            };
            let grid = build_tau_grid(&preds, &observations, trim, None).unwrap();
            let curve = alpha_curve(&grid, &preds, trim, &observations, &weighting, n).unwrap();
            for (&tau, &a) in grid.iter().zip(&curve) {
                let direct = alpha_hat(tau, &preds, trim, &observations, &weighting, n).unwrap();
                assert_eq!(a, direct, "tau {tau}");
            }
        }
    }
}
