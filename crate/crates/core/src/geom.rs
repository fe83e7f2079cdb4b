//! Geometric time-to-event mathematics.
//!
//! The time-to-unsafe-sampling `T` of a prompt with unsafe probability `p` is
//! the index of the first success in a run of Bernoulli(p) trials, so
//! `P(T <= k) = 1 - (1 - p)^k` and the `tau`-quantile has the closed form
//! `ceil(log(1 - tau) / log(1 - p))`.
//!
//! Every power of `1 - p` is evaluated as `exp(k * ln_1p(-p))` so that
//! probabilities down to `1e-9` keep full relative precision.

use rand::distr::{Distribution, Open01};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Values of `log(1 - tau) / log(1 - p)` within this relative distance of an
/// integer are snapped to it before taking the ceiling.
const SNAP_RELATIVE_TOL: f64 = 1e-12;

/// Largest count representable without overflow (`2^63 - 1`).
pub const MAX_COUNT: u64 = i64::MAX as u64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeomError {
    #[error("unsafe probability must lie in the open interval (0, 1), got {0}")]
    InvalidProbability(f64),
    #[error("quantile level must lie in [0, 1), got {0}")]
    TauOutOfRange(f64),
    #[error("geometric count overflows 2^63 - 1 (p = {p}, value = {value:e})")]
    Overflow { p: f64, value: f64 },
}

/// Success probability of a geometric time-to-event, strictly inside (0, 1).
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct UnsafeProbability(f64);

impl UnsafeProbability {
    pub fn new(p: f64) -> Result<Self, GeomError> {
        if p > 0.0 && p < 1.0 {
            Ok(Self(p))
        } else {
            Err(GeomError::InvalidProbability(p))
        }
    }

    /// Clamps `p` into `[p_min, 1 - p_min]`. NaN maps to `p_min`.
    pub fn clamped(p: f64, p_min: f64) -> Result<Self, GeomError> {
        let p = if p.is_nan() {
            p_min
        } else {
            p.clamp(p_min, 1.0 - p_min)
        };
        Self::new(p)
    }

    pub fn get(self) -> f64 {
        self.0
    }

    /// `ln(1 - p)`, strictly negative.
    pub fn log_survival_step(self) -> f64 {
        (-self.0).ln_1p()
    }
}

impl TryFrom<f64> for UnsafeProbability {
    type Error = GeomError;

    fn try_from(p: f64) -> Result<Self, Self::Error> {
        Self::new(p)
    }
}

impl From<UnsafeProbability> for f64 {
    fn from(p: UnsafeProbability) -> f64 {
        p.0
    }
}

/// `P(T <= k) = 1 - (1 - p)^k`.
pub fn geom_cdf(p: UnsafeProbability, k: u64) -> f64 {
    if k == 0 {
        return 0.0;
    }
    -(k as f64 * p.log_survival_step()).exp_m1()
}

/// `P(T >= k) = (1 - p)^(k - 1)`; equals 1 for `k <= 1`.
pub fn geom_sf(p: UnsafeProbability, k: u64) -> f64 {
    if k <= 1 {
        return 1.0;
    }
    ((k - 1) as f64 * p.log_survival_step()).exp()
}

/// Smallest `k` with `P(T <= k) >= tau`, i.e. `ceil(log(1 - tau) / log(1 - p))`.
///
/// Returns 0 exactly when `tau == 0`.
pub fn geom_quantile(p: UnsafeProbability, tau: f64) -> Result<u64, GeomError> {
    if !(0.0..1.0).contains(&tau) {
        return Err(GeomError::TauOutOfRange(tau));
    }
    if tau == 0.0 {
        return Ok(0);
    }
    let mut x = (-tau).ln_1p() / p.log_survival_step();
    let nearest = x.round();
    if (x - nearest).abs() <= SNAP_RELATIVE_TOL * x.max(1.0) {
        x = nearest;
    }
    let k = x.ceil().max(1.0);
    to_count(p, k)
}

/// `sup { tau : geom_quantile(p, tau) <= k } = 1 - (1 - p)^k`.
///
/// This is the quantile level at which the closed-form quantile first
/// exceeds `k`; it is the building block of the calibration search grid.
pub fn inv_quantile_level(p: UnsafeProbability, k: u64) -> f64 {
    geom_cdf(p, k)
}

/// Draws `T ~ Geom(p)` on `{1, 2, ...}` by inverse transform:
/// `ceil(ln U / ln(1 - p))` with `U` uniform on (0, 1).
pub fn sample_geometric<R: Rng + ?Sized>(
    p: UnsafeProbability,
    rng: &mut R,
) -> Result<u64, GeomError> {
    let x = sample_geometric_real(p, rng);
    to_count(p, x.ceil().max(1.0))
}

/// The real-valued variate `ln U / ln(1 - p)` whose ceiling is `Geom(p)`.
///
/// Comparing it against a censoring time avoids materialising huge counts.
pub(crate) fn sample_geometric_real<R: Rng + ?Sized>(p: UnsafeProbability, rng: &mut R) -> f64 {
    let u: f64 = Open01.sample(rng);
    u.ln() / p.log_survival_step()
}

fn to_count(p: UnsafeProbability, value: f64) -> Result<u64, GeomError> {
    // 2^63 is exactly representable; anything at or above it overflows.
    if !(value < 9_223_372_036_854_775_808.0) {
        return Err(GeomError::Overflow { p: p.get(), value });
    }
    Ok(value as u64)
}
