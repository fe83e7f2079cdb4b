//! Generation-and-audit oracle and censored outcome generation.
//!
//! An [`Oracle`] answers one question: "is a fresh generation for this prompt
//! unsafe?". Calls for one prompt are sequential and use that prompt's own RNG
//! stream; calls for distinct prompts may run concurrently.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{sample_geometric_real, UnsafeProbability};
use crate::seeds::prompt_rng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("prompt {0} has no true unsafe probability; the synthetic oracle needs one")]
    MissingTrueProbability(u64),
    #[error("{len_a} prompts but {len_b} censoring times")]
    LengthMismatch { len_a: usize, len_b: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub id: u64,
    pub features: Vec<f64>,
    /// Present only for synthetic data.
    pub true_p: Option<UnsafeProbability>,
}

impl PromptRecord {
    pub fn true_p(&self) -> Result<UnsafeProbability, OracleError> {
        self.true_p
            .ok_or(OracleError::MissingTrueProbability(self.id))
    }
}

/// Outcome of auditing one prompt up to its censoring time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CensoredObservation {
    pub prompt_id: u64,
    /// `C`: maximum number of generation-and-audit rounds.
    pub censor_time: u64,
    /// `min(T, C)`.
    pub observed_time: u64,
    /// True iff an unsafe generation occurred at `observed_time`.
    pub event: bool,
    /// Oracle calls actually made (or simulated, on the shortcut path).
    pub draws_used: u64,
}

/// The miscoverage indicator `1{T < q}` is only identified when `q <= C`.
#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
#[error("prompt {prompt_id}: threshold {threshold} exceeds censoring time {censor_time}; indicator unobserved")]
pub struct UnobservedIndicator {
    pub prompt_id: u64,
    pub threshold: u64,
    pub censor_time: u64,
}

impl CensoredObservation {
    pub fn unobserved(prompt_id: u64) -> Self {
        Self {
            prompt_id,
            censor_time: 0,
            observed_time: 0,
            event: false,
            draws_used: 0,
        }
    }

    /// `1{q <= C}`.
    pub fn is_selected(&self, threshold: u64) -> bool {
        threshold <= self.censor_time
    }

    /// `1{T < q}` for a selected observation. When `q <= C`, `T < q` implies
    /// `T < C`, so the event was seen and `T = observed_time`.
    pub fn miscovered_below(&self, threshold: u64) -> Result<bool, UnobservedIndicator> {
        if !self.is_selected(threshold) {
            return Err(UnobservedIndicator {
                prompt_id: self.prompt_id,
                threshold,
                censor_time: self.censor_time,
            });
        }
        Ok(self.event && self.observed_time < threshold)
    }
}

pub trait Oracle: Sync {
    /// One generation-and-audit round: `true` means the output was unsafe.
    fn draw<R: Rng + ?Sized>(
        &self,
        prompt: &PromptRecord,
        rng: &mut R,
    ) -> Result<bool, OracleError>;

    /// The exact unsafe probability, when the oracle knows it. Enables
    /// sampling `min(T, C)` in one draw instead of `min(T, C)` draws.
    fn known_probability(&self, _prompt: &PromptRecord) -> Option<UnsafeProbability> {
        None
    }
}

/// Bernoulli oracle driven by each prompt's `true_p`.
#[derive(Debug, Clone, Copy, Default)]
pub struct SyntheticOracle;

impl Oracle for SyntheticOracle {
    fn draw<R: Rng + ?Sized>(
        &self,
        prompt: &PromptRecord,
        rng: &mut R,
    ) -> Result<bool, OracleError> {
        let p = prompt.true_p()?;
        Ok(rng.random::<f64>() < p.get())
    }

    fn known_probability(&self, prompt: &PromptRecord) -> Option<UnsafeProbability> {
        prompt.true_p
    }
}

/// Oracle selection in run configs. Remote backends would be added here.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleKind {
    #[default]
    Synthetic,
}

/// Audits sequentially until the first unsafe output or until `censor_time`
/// rounds have been spent.
pub fn generate_censored<O: Oracle + ?Sized, R: Rng + ?Sized>(
    oracle: &O,
    prompt: &PromptRecord,
    censor_time: u64,
    rng: &mut R,
) -> Result<CensoredObservation, OracleError> {
    let mut obs = CensoredObservation {
        censor_time,
        ..CensoredObservation::unobserved(prompt.id)
    };
    for j in 1..=censor_time {
        obs.observed_time = j;
        obs.draws_used = j;
        if oracle.draw(prompt, rng)? {
            obs.event = true;
            break;
        }
    }
    Ok(obs)
}

/// Same law as [`generate_censored`] on a synthetic oracle, from a single
/// inverse-transform geometric draw truncated at `censor_time`.
pub fn generate_censored_fast<R: Rng + ?Sized>(
    prompt: &PromptRecord,
    censor_time: u64,
    rng: &mut R,
) -> Result<CensoredObservation, OracleError> {
    let p = prompt.true_p()?;
    Ok(truncated_geometric(prompt.id, p, censor_time, rng))
}

fn truncated_geometric<R: Rng + ?Sized>(
    prompt_id: u64,
    p: UnsafeProbability,
    censor_time: u64,
    rng: &mut R,
) -> CensoredObservation {
    let mut obs = CensoredObservation {
        censor_time,
        ..CensoredObservation::unobserved(prompt_id)
    };
    if censor_time == 0 {
        return obs;
    }
    // ceil(x) <= C  <=>  x <= C for integer C
    let x = sample_geometric_real(p, rng);
    if x <= censor_time as f64 {
        obs.observed_time = (x.ceil() as u64).max(1);
        obs.event = true;
    } else {
        obs.observed_time = censor_time;
    }
    obs.draws_used = obs.observed_time;
    obs
}

/// Generates one censored observation per prompt, each on its own stream
/// derived from `stage_seed` and the prompt id. Censoring times are fixed by
/// the caller before any oracle call is made.
pub fn generate_observations<O: Oracle + ?Sized>(
    oracle: &O,
    prompts: &[PromptRecord],
    censor_times: &[u64],
    stage_seed: u64,
    use_shortcut: bool,
) -> Result<Vec<CensoredObservation>, OracleError> {
    if prompts.len() != censor_times.len() {
        return Err(OracleError::LengthMismatch {
            len_a: prompts.len(),
            len_b: censor_times.len(),
        });
    }
    prompts
        .par_iter()
        .zip(censor_times.par_iter())
        .map(|(prompt, &c)| {
            let mut rng = prompt_rng(stage_seed, prompt.id);
            match oracle.known_probability(prompt).filter(|_| use_shortcut) {
                Some(p) => Ok(truncated_geometric(prompt.id, p, c, &mut rng)),
                None => generate_censored(oracle, prompt, c, &mut rng),
            }
        })
        .collect()
}
