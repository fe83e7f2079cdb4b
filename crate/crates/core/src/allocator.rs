//! Per-prompt evaluation probabilities under an expected sampling budget.
//!
//! Solves
//!
//! ```text
//!   minimise (1/n) Σ 1/π_i   subject to   Σ c_i π_i <= B,  π ∈ (0, 1]^n
//! ```
//!
//! where `c_i` is the sampling target of prompt `i`. Stationarity of the
//! Lagrangian gives `π_i(λ) = min(1, 1/sqrt(n λ c_i))`, and the budget usage
//! `U(λ) = Σ c_i π_i(λ)` is continuous and strictly decreasing wherever some
//! `π_i < 1`, so the multiplier is found by bisection on `U(λ) = B`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_RELATIVE_TOLERANCE: f64 = 1e-9;
pub const DEFAULT_MAX_ITERATIONS: usize = 200;
const MAX_DOUBLINGS: usize = 2048;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AllocatorError {
    #[error("lagrange multiplier must be positive, got {0}")]
    NonPositiveLambda(f64),
    #[error("{costs} costs but {probabilities} probabilities")]
    LengthMismatch { costs: usize, probabilities: usize },
    #[error("budget must be positive and finite, got {0}")]
    InvalidBudget(f64),
    #[error("tolerance must be positive, got {0}")]
    InvalidTolerance(f64),
    #[error("no prompts to allocate")]
    Empty,
    #[error("bisection did not converge: bracket [{low:e}, {high:e}], residual {residual:e}")]
    NoConvergence { low: f64, high: f64, residual: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationPlan {
    /// Evaluation probabilities, in input order.
    pub pi: Vec<f64>,
    /// Absent exactly when the budget covers every target (`π ≡ 1`).
    pub lambda_star: Option<f64>,
    pub effective_costs: Vec<u64>,
    pub budget: f64,
    /// `max_i 1/π_i`.
    pub gamma: f64,
}

impl AllocationPlan {
    pub fn weights(&self) -> Vec<f64> {
        self.pi.iter().map(|p| 1.0 / p).collect()
    }

    /// `(1/n) Σ 1/π_i`.
    pub fn mean_weight(&self) -> f64 {
        self.pi.iter().map(|p| 1.0 / p).sum::<f64>() / self.pi.len() as f64
    }

    pub fn usage(&self) -> f64 {
        usage(&self.effective_costs, &self.pi)
    }
}

/// `π_i(λ) = min(1, 1/sqrt(n λ c_i))`; zero-cost prompts get `π_i = 1`.
pub fn pi_of_lambda(costs: &[u64], lambda: f64, n: usize) -> Result<Vec<f64>, AllocatorError> {
    if !(lambda > 0.0) {
        return Err(AllocatorError::NonPositiveLambda(lambda));
    }
    Ok(costs.iter().map(|&c| pi_single(c, lambda, n)).collect())
}

fn pi_single(cost: u64, lambda: f64, n: usize) -> f64 {
    if cost == 0 {
        return 1.0;
    }
    (1.0 / (n as f64 * lambda * cost as f64).sqrt()).min(1.0)
}

/// `U = Σ c_i π_i`.
pub fn budget_usage(costs: &[u64], pi: &[f64]) -> Result<f64, AllocatorError> {
    if costs.len() != pi.len() {
        return Err(AllocatorError::LengthMismatch {
            costs: costs.len(),
            probabilities: pi.len(),
        });
    }
    Ok(usage(costs, pi))
}

fn usage(costs: &[u64], pi: &[f64]) -> f64 {
    costs.iter().zip(pi).map(|(&c, &p)| c as f64 * p).sum()
}

fn usage_at(costs: &[u64], lambda: f64, n: usize) -> f64 {
    costs
        .iter()
        .map(|&c| c as f64 * pi_single(c, lambda, n))
        .sum()
}

/// `γ = max(n M / B, 1)`: no evaluation probability of a plan whose targets
/// are all at most `M` falls below `1/γ`.
pub fn weight_bound(n: usize, max_cost: u64, budget: f64) -> f64 {
    (n as f64 * max_cost as f64 / budget).max(1.0)
}

/// Smallest probability `π` with `1/π <= bound` in floating point.
pub(crate) fn probability_floor(bound: f64) -> f64 {
    let mut floor = 1.0 / bound;
    while 1.0 / floor.next_down() <= bound {
        floor = floor.next_down();
    }
    while 1.0 / floor > bound {
        floor = floor.next_up();
    }
    floor
}

/// Optimal evaluation probabilities with the default tolerance
/// (`1e-9 * budget`) and the analytic initial bracket.
pub fn solve_default(costs: &[u64], budget: f64) -> Result<AllocationPlan, AllocatorError> {
    solve(costs, budget, DEFAULT_RELATIVE_TOLERANCE * budget)
}

/// Optimal evaluation probabilities such that `|U(λ*) - B| <= epsilon`.
pub fn solve(costs: &[u64], budget: f64, epsilon: f64) -> Result<AllocationPlan, AllocatorError> {
    solve_with_bracket(costs, budget, epsilon, None)
}

/// As [`solve`], optionally overriding the initial upper end of the bracket.
/// The doubling step restores a valid bracket from any positive start.
pub fn solve_with_bracket(
    costs: &[u64],
    budget: f64,
    epsilon: f64,
    initial_high: Option<f64>,
) -> Result<AllocationPlan, AllocatorError> {
    if costs.is_empty() {
        return Err(AllocatorError::Empty);
    }
    if !(budget > 0.0 && budget.is_finite()) {
        return Err(AllocatorError::InvalidBudget(budget));
    }
    if !(epsilon > 0.0) {
        return Err(AllocatorError::InvalidTolerance(epsilon));
    }
    let n = costs.len();
    let total: f64 = costs.iter().map(|&c| c as f64).sum();
    if total <= budget {
        return Ok(AllocationPlan {
            pi: vec![1.0; n],
            lambda_star: None,
            effective_costs: costs.to_vec(),
            budget,
            gamma: 1.0,
        });
    }

    let positive = costs.iter().copied().filter(|&c| c > 0);
    let max_cost = positive
        .clone()
        .max()
        .expect("total > budget > 0 implies a positive cost");
    let min_cost = positive.min().expect("nonempty");
    let (max_c, min_c) = (max_cost as f64, min_cost as f64);

    // At `low` every π_i = 1 so U = total > B.
    let mut low = 1.0 / (n as f64 * max_c);
    let mut high = initial_high.unwrap_or(n as f64 * max_c * max_c / (budget * budget * min_c));
    if !(high > 0.0) {
        return Err(AllocatorError::NonPositiveLambda(high));
    }
    let mut doublings = 0;
    while usage_at(costs, high, n) > budget {
        low = low.max(high);
        high *= 2.0;
        doublings += 1;
        if doublings > MAX_DOUBLINGS {
            return Err(AllocatorError::NoConvergence {
                low,
                high,
                residual: usage_at(costs, high, n) - budget,
            });
        }
    }

    // Invariant: U(low) > B >= U(high). Converge from the within-budget side;
    // the floor below restores π_i >= B / (n M) lost to the bisection.
    let target = 0.5 * epsilon;
    let mut converged = budget - usage_at(costs, high, n) <= target;
    for _ in 0..DEFAULT_MAX_ITERATIONS {
        if converged {
            break;
        }
        let mid = 0.5 * (low + high);
        if mid <= low || mid >= high {
            break;
        }
        if usage_at(costs, mid, n) > budget {
            low = mid;
        } else {
            high = mid;
        }
        converged = budget - usage_at(costs, high, n) <= target;
    }
    let lambda = high;
    let residual = budget - usage_at(costs, high, n);
    if residual > epsilon {
        return Err(AllocatorError::NoConvergence {
            low,
            high,
            residual,
        });
    }

    let floor = probability_floor(weight_bound(n, max_cost, budget));
    let pi: Vec<f64> = costs
        .iter()
        .map(|&c| pi_single(c, lambda, n).max(floor))
        .collect();
    let gamma = pi.iter().map(|p| 1.0 / p).fold(1.0, f64::max);
    Ok(AllocationPlan {
        pi,
        lambda_star: Some(lambda),
        effective_costs: costs.to_vec(),
        budget,
        gamma,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn pi_formula_examples() {
        let pi = pi_of_lambda(&[1, 4], 0.25, 4).unwrap();
        assert_eq!(pi, vec![1.0, 0.5]);
        let pi = pi_of_lambda(&[7], 1.0 / (3.0 * 7.0), 3).unwrap();
        assert!((pi[0] - 1.0).abs() < 1e-15);
        let pi = pi_of_lambda(&[1, 50], 1e300, 10).unwrap();
        assert!(pi.iter().all(|&p| p > 0.0 && p < 1e-140));
        assert!(pi_of_lambda(&[1], 0.0, 1).is_err());
        assert!(pi_of_lambda(&[1], -1.0, 1).is_err());
    }

    #[test]
    fn usage_examples() {
        assert_eq!(budget_usage(&[3, 4, 5], &[1.0; 3]).unwrap(), 12.0);
        assert_eq!(budget_usage(&[2, 2, 2], &[0.5; 3]).unwrap(), 3.0);
        assert!(budget_usage(&[2, 2], &[0.5; 3]).is_err());
    }

    #[test]
    fn usage_decreases_in_lambda() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let n = rng.random_range(1..12);
            let costs: Vec<u64> = (0..n).map(|_| rng.random_range(1..30)).collect();
            let max = *costs.iter().max().unwrap() as f64;
            let mut prev = f64::INFINITY;
            // strictly decreasing once at least one π < 1
            let mut lambda = 1.0 / (n as f64 * max) * 1.01;
            for _ in 0..40 {
                let u = usage_at(&costs, lambda, n);
                assert!(u < prev);
                prev = u;
                lambda *= 1.5;
            }
        }
    }

    #[test]
    fn sufficient_budget_is_all_ones() {
        let plan = solve_default(&[10, 10], 25.0).unwrap();
        assert_eq!(plan.pi, vec![1.0, 1.0]);
        assert_eq!(plan.lambda_star, None);
        assert_eq!(plan.gamma, 1.0);
    }

    #[test]
    fn homogeneous_costs_split_evenly() {
        let plan = solve_default(&[8, 8, 8, 8], 16.0).unwrap();
        for &p in &plan.pi {
            assert!((p - 0.5).abs() < 1e-9, "{p}");
        }
        assert!(plan.gamma <= 2.0);
    }

    #[test]
    fn interior_solution_matches_kkt() {
        // π ∝ 1/sqrt(c): π = (k, k/2) with k + 4 k/2 = 2 → k = 2/3.
        let plan = solve_default(&[1, 4], 2.0).unwrap();
        assert!((plan.pi[0] - 2.0 / 3.0).abs() < 1e-9);
        assert!((plan.pi[1] - 1.0 / 3.0).abs() < 1e-9);
        assert!((plan.usage() - 2.0).abs() <= 2e-9);
    }

    #[test]
    fn zero_costs_keep_probability_one() {
        let plan = solve_default(&[0, 5, 5], 5.0).unwrap();
        assert_eq!(plan.pi[0], 1.0);
        assert!((plan.pi[1] - 0.5).abs() < 1e-9);
        assert_eq!(plan.effective_costs, vec![0, 5, 5]);
    }

    #[test]
    fn weight_bound_examples() {
        assert_eq!(weight_bound(1000, 10, 10_000.0), 1.0);
        assert_eq!(weight_bound(45_000, 100, 450_000.0), 10.0);
    }

    #[test]
    fn probability_floor_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10_000 {
            let bound: f64 = rng.random_range(1.0..1e6);
            let floor = probability_floor(bound);
            assert!(1.0 / floor <= bound);
            assert!(1.0 / floor.next_down() > bound || floor.next_down() <= 0.0);
        }
    }

    #[test]
    fn input_validation() {
        assert_eq!(solve(&[], 1.0, 1e-9), Err(AllocatorError::Empty));
        assert!(matches!(
            solve(&[1], 0.0, 1e-9),
            Err(AllocatorError::InvalidBudget(_))
        ));
        assert!(matches!(
            solve(&[1], 1.0, 0.0),
            Err(AllocatorError::InvalidTolerance(_))
        ));
    }

    #[test]
    fn bracket_choice_does_not_change_solution() {
        let costs = [3, 9, 14, 2, 20];
        let a = solve_with_bracket(&costs, 11.0, 1e-9 * 11.0, None).unwrap();
        let b = solve_with_bracket(&costs, 11.0, 1e-9 * 11.0, Some(1e-12)).unwrap();
        let c = solve_with_bracket(&costs, 11.0, 1e-9 * 11.0, Some(1e6)).unwrap();
        for ((x, y), z) in a.pi.iter().zip(&b.pi).zip(&c.pi) {
            assert!((x - y).abs() < 1e-8 && (x - z).abs() < 1e-8);
        }
    }
}
