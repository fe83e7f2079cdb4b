//! Unsafe-probability estimator `p̂(x)` and its closed-form quantiles.
//!
//! The estimator is a ReLU multilayer perceptron with a sigmoid output
//! (zero hidden layers gives logistic regression), trained with AdamW on the
//! binary cross-entropy between `p̂(x_i)` and each prompt's empirical unsafe
//! rate `ȳ_i`. Because `T | x` is geometric, any quantile follows from
//! `p̂(x)` via [`geom_quantile`], so the quantile curve is monotone in `tau`
//! by construction.

use std::fs;
use std::io;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{geom_quantile, GeomError, UnsafeProbability};

const MODEL_MAGIC: &[u8; 8] = b"SVCLPM01";

pub const DEFAULT_P_MIN: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("no training examples")]
    Empty,
    #[error("feature dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid training example {index}: {reason}")]
    InvalidExample { index: usize, reason: String },
    #[error("loss became non-finite at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("malformed model file: {0}")]
    Malformed(String),
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// One training prompt: `trials` audited generations, a fraction
/// `unsafe_fraction` of which were unsafe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub features: Vec<f64>,
    pub trials: u64,
    pub unsafe_fraction: f64,
}

impl TrainingExample {
    pub fn from_counts(features: Vec<f64>, trials: u64, unsafe_count: u64) -> Self {
        Self {
            features,
            trials,
            unsafe_fraction: unsafe_count as f64 / trials as f64,
        }
    }

    fn validate(&self, index: usize) -> Result<(), ModelError> {
        let bad = |reason: &str| {
            Err(ModelError::InvalidExample {
                index,
                reason: reason.to_owned(),
            })
        };
        if self.trials == 0 {
            return bad("zero trials");
        }
        if !(0.0..=1.0).contains(&self.unsafe_fraction) {
            return bad("unsafe fraction outside [0, 1]");
        }
        let count = self.unsafe_fraction * self.trials as f64;
        if (count - count.round()).abs() > 1e-9 {
            return bad("unsafe fraction is not a multiple of 1/trials");
        }
        if self.features.iter().any(|v| !v.is_finite()) {
            return bad("non-finite feature");
        }
        Ok(())
    }
}

/// `-[y ln p + (1 - y) ln(1 - p)]`.
pub fn bce(target: f64, p: f64) -> f64 {
    -(xlogy(target, p) + xlogy(1.0 - target, 1.0 - p))
}

fn xlogy(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * y.ln()
    }
}

/// BCE of `sigmoid(logit)` against `target`, evaluated without forming the
/// probability.
fn bce_with_logit(target: f64, logit: f64) -> f64 {
    logit.max(0.0) - target * logit + (-logit.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
}

impl Architecture {
    fn dims(&self) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 2);
        dims.push(self.input_dim);
        dims.extend(&self.hidden);
        dims.push(1);
        dims
    }

    pub fn parameter_count(&self) -> usize {
        self.dims().windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub p_min: f64,
    pub seed: u64,
    /// Start the output bias at the logit of the pooled unsafe rate.
    pub init_output_bias: bool,
    /// Stop once an epoch fails to lower the training loss, keeping the best
    /// parameters seen.
    pub early_stopping: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: vec![32, 32, 32, 32],
            learning_rate: 1e-4,
            weight_decay: 1e-5,
            epochs: 10,
            batch_size: 100,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            p_min: DEFAULT_P_MIN,
            seed: 0,
            init_output_bias: true,
            early_stopping: false,
        }
    }
}

impl TrainConfig {
    pub fn logistic() -> Self {
        Self {
            hidden: Vec::new(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidConfig(m.to_owned()));
        if self.hidden.contains(&0) {
            return bad("hidden layer widths must be positive");
        }
        if !(self.learning_rate > 0.0) || !(self.weight_decay >= 0.0) {
            return bad("learning rate must be positive and weight decay nonnegative");
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("adam betas must lie in [0, 1)");
        }
        if !(self.p_min > 0.0 && self.p_min < 0.5) {
            return bad("p_min must lie in (0, 0.5)");
        }
        Ok(())
    }
}

/// Per-epoch training trace. `epoch_losses[0]` is the loss before training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub epoch_losses: Vec<f64>,
    pub stopped_early: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityModel {
    architecture: Architecture,
    params: Vec<f64>,
    p_min: f64,
}

impl ProbabilityModel {
    pub fn from_parameters(
        architecture: Architecture,
        params: Vec<f64>,
        p_min: f64,
    ) -> Result<Self, ModelError> {
        if params.len() != architecture.parameter_count() {
            return Err(ModelError::Malformed(format!(
                "{} parameters for an architecture needing {}",
                params.len(),
                architecture.parameter_count()
            )));
        }
        if !(p_min > 0.0 && p_min < 0.5) {
            return Err(ModelError::Malformed(format!(
                "p_min {p_min} outside (0, 0.5)"
            )));
        }
        Ok(Self {
            architecture,
            params,
            p_min,
        })
    }

    /// Logistic model that ignores its input and predicts `sigmoid(bias)`.
    pub fn constant(input_dim: usize, bias: f64, p_min: f64) -> Result<Self, ModelError> {
        let mut params = vec![0.0; input_dim + 1];
        params[input_dim] = bias;
        Self::from_parameters(
            Architecture {
                input_dim,
                hidden: Vec::new(),
            },
            params,
            p_min,
        )
    }

    pub fn architecture(&self) -> &Architecture {
        &self.architecture
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn p_min(&self) -> f64 {
        self.p_min
    }

    fn check_dim(&self, features: &[f64]) -> Result<(), ModelError> {
        if features.len() != self.architecture.input_dim {
            return Err(ModelError::DimensionMismatch {
                expected: self.architecture.input_dim,
                got: features.len(),
            });
        }
        Ok(())
    }

    /// `p̂(x)` clamped to `[p_min, 1 - p_min]`.
    pub fn predict_p(&self, features: &[f64]) -> Result<UnsafeProbability, ModelError> {
        self.check_dim(features)?;
        let mut net = Network::new(&self.architecture);
        let logit = net.forward(&self.params, features);
        Ok(UnsafeProbability::clamped(sigmoid(logit), self.p_min)?)
    }

    /// `q̂_τ(x) = geom_quantile(p̂(x), τ)`.
    pub fn predict_quantile(&self, features: &[f64], tau: f64) -> Result<u64, ModelError> {
        let p = self.predict_p(features)?;
        Ok(geom_quantile(p, tau)?)
    }

    /// Mean aggregate BCE over `examples`.
    pub fn loss(&self, examples: &[TrainingExample]) -> f64 {
        let mut net = Network::new(&self.architecture);
        mean_loss(&mut net, &self.params, examples)
    }

    /// Mean loss and its gradient with respect to the flat parameter vector.
    pub fn loss_and_gradient(&self, examples: &[TrainingExample]) -> (f64, Vec<f64>) {
        let mut net = Network::new(&self.architecture);
        let mut grad = vec![0.0; self.params.len()];
        let mut total = 0.0;
        for ex in examples {
            total += net.accumulate_gradient(&self.params, ex, &mut grad);
        }
        let n = examples.len() as f64;
        grad.iter_mut().for_each(|g| *g /= n);
        (total / n, grad)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let arch = &self.architecture;
        let mut out = Vec::with_capacity(48 + 8 * (arch.hidden.len() + self.params.len()));
        out.extend_from_slice(MODEL_MAGIC);
        out.extend_from_slice(&(arch.input_dim as u64).to_le_bytes());
        out.extend_from_slice(&(arch.hidden.len() as u64).to_le_bytes());
        for &w in &arch.hidden {
            out.extend_from_slice(&(w as u64).to_le_bytes());
        }
        out.extend_from_slice(&self.p_min.to_le_bytes());
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for &v in &self.params {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let mut reader = ByteReader { bytes, pos: 0 };
        if reader.take(8)? != MODEL_MAGIC {
            return Err(ModelError::Malformed("bad magic".into()));
        }
        let input_dim = reader.u64()? as usize;
        let depth = reader.u64()? as usize;
        if depth > 1024 {
            return Err(ModelError::Malformed(format!("implausible depth {depth}")));
        }
        let hidden = (0..depth)
            .map(|_| reader.u64().map(|w| w as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let p_min = reader.f64()?;
        let count = reader.u64()? as usize;
        if count.checked_mul(8).is_none_or(|b| b > bytes.len()) {
            return Err(ModelError::Malformed(
                "parameter count exceeds file size".into(),
            ));
        }
        let params = (0..count)
            .map(|_| reader.f64())
            .collect::<Result<Vec<_>, _>>()?;
        if reader.pos != bytes.len() {
            return Err(ModelError::Malformed("trailing bytes".into()));
        }
        Self::from_parameters(Architecture { input_dim, hidden }, params, p_min)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        Self::from_bytes(&fs::read(path)?)
    }
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        let end = self.pos + n;
        let slice = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| ModelError::Malformed("truncated".into()))?;
        self.pos = end;
        Ok(slice)
    }

    fn u64(&mut self) -> Result<u64, ModelError> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn f64(&mut self) -> Result<f64, ModelError> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
}

/// Scratch buffers for forward and backward passes.
struct Network {
    dims: Vec<usize>,
    /// Post-activation values per layer; `acts[0]` is the input.
    acts: Vec<Vec<f64>>,
    deltas: Vec<Vec<f64>>,
}

impl Network {
    fn new(arch: &Architecture) -> Self {
        let dims = arch.dims();
        let acts = dims.iter().map(|&d| vec![0.0; d]).collect();
        let deltas = dims.iter().map(|&d| vec![0.0; d]).collect();
        Self { dims, acts, deltas }
    }

    fn layers(&self) -> usize {
        self.dims.len() - 1
    }

    /// Offsets of (weights, bias) for layer `l` in the flat parameter vector.
    fn offsets(&self, l: usize) -> (usize, usize) {
        let mut off = 0;
        for w in self.dims.windows(2).take(l) {
            off += w[0] * w[1] + w[1];
        }
        (off, off + self.dims[l] * self.dims[l + 1])
    }

    /// Returns the output logit.
    fn forward(&mut self, params: &[f64], input: &[f64]) -> f64 {
        self.acts[0].copy_from_slice(input);
        let last = self.layers() - 1;
        for l in 0..self.layers() {
            let (w_off, b_off) = self.offsets(l);
            let (fan_in, fan_out) = (self.dims[l], self.dims[l + 1]);
            let (prev, next) = self.acts.split_at_mut(l + 1);
            let x = &prev[l];
            for (j, out) in next[0].iter_mut().enumerate() {
                let row = &params[w_off + j * fan_in..w_off + (j + 1) * fan_in];
                let z: f64 = params[b_off + j] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
                *out = if l == last { z } else { z.max(0.0) };
            }
            debug_assert_eq!(next[0].len(), fan_out);
        }
        self.acts[self.layers()][0]
    }

    /// Adds the gradient of one example's loss into `grad`; returns the loss.
    fn accumulate_gradient(
        &mut self,
        params: &[f64],
        ex: &TrainingExample,
        grad: &mut [f64],
    ) -> f64 {
        let logit = self.forward(params, &ex.features);
        let loss = bce_with_logit(ex.unsafe_fraction, logit);
        let top = self.layers();
        self.deltas[top][0] = sigmoid(logit) - ex.unsafe_fraction;
        for l in (0..top).rev() {
            let (w_off, b_off) = self.offsets(l);
            let fan_in = self.dims[l];
            let (lower, upper) = self.deltas.split_at_mut(l + 1);
            let delta_out = &upper[0];
            let x = &self.acts[l];
            for (j, &d) in delta_out.iter().enumerate() {
                grad[b_off + j] += d;
                let g_row = &mut grad[w_off + j * fan_in..w_off + (j + 1) * fan_in];
                g_row.iter_mut().zip(x).for_each(|(g, v)| *g += d * v);
            }
            if l > 0 {
                let delta_in = &mut lower[l];
                for (i, di) in delta_in.iter_mut().enumerate() {
                    if x[i] <= 0.0 {
                        *di = 0.0;
                        continue;
                    }
                    *di = delta_out
                        .iter()
                        .enumerate()
                        .map(|(j, &d)| d * params[w_off + j * fan_in + i])
                        .sum();
                }
            }
        }
        loss
    }
}

fn mean_loss(net: &mut Network, params: &[f64], examples: &[TrainingExample]) -> f64 {
    let total: f64 = examples
        .iter()
        .map(|ex| bce_with_logit(ex.unsafe_fraction, net.forward(params, &ex.features)))
        .sum();
    total / examples.len() as f64
}

/// Fits `p̂` by minimising the mean aggregate BCE with AdamW.
pub fn fit(
    examples: &[TrainingExample],
    config: &TrainConfig,
) -> Result<(ProbabilityModel, FitReport), ModelError> {
    config.validate()?;
    let first = examples.first().ok_or(ModelError::Empty)?;
    let input_dim = first.features.len();
    for (i, ex) in examples.iter().enumerate() {
        if ex.features.len() != input_dim {
            return Err(ModelError::DimensionMismatch {
                expected: input_dim,
                got: ex.features.len(),
            });
        }
        ex.validate(i)?;
    }

    let architecture = Architecture {
        input_dim,
        hidden: config.hidden.clone(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = init_params(&architecture, &mut rng);
    if config.init_output_bias {
        let pooled =
            examples.iter().map(|e| e.unsafe_fraction).sum::<f64>() / examples.len() as f64;
        let p = pooled.clamp(config.p_min, 1.0 - config.p_min);
        let last = params.len() - 1;
        params[last] = (p / (1.0 - p)).ln();
    }

    let mut net = Network::new(&architecture);
    let mut report = FitReport {
        epoch_losses: vec![mean_loss(&mut net, &params, examples)],
        stopped_early: false,
    };
    let mut best = params.clone();
    let mut m = vec![0.0; params.len()];
    let mut v = vec![0.0; params.len()];
    let mut grad = vec![0.0; params.len()];
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut step = 0usize;

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let mut batch_loss = 0.0;
            for &i in batch {
                batch_loss += net.accumulate_gradient(&params, &examples[i], &mut grad);
            }
            if !batch_loss.is_finite() {
                return Err(ModelError::NonFiniteLoss { epoch, step });
            }
            step += 1;
            let scale = 1.0 / batch.len() as f64;
            let bias1 = 1.0 - config.beta1.powi(step as i32);
            let bias2 = 1.0 - config.beta2.powi(step as i32);
            for k in 0..params.len() {
                let g = grad[k] * scale;
                m[k] = config.beta1 * m[k] + (1.0 - config.beta1) * g;
                v[k] = config.beta2 * v[k] + (1.0 - config.beta2) * g * g;
                params[k] *= 1.0 - config.learning_rate * config.weight_decay;
                params[k] -= config.learning_rate * (m[k] / bias1)
                    / ((v[k] / bias2).sqrt() + config.adam_eps);
            }
        }
        let loss = mean_loss(&mut net, &params, examples);
        if !loss.is_finite() {
            return Err(ModelError::NonFiniteLoss { epoch, step });
        }
        let best_loss = report
            .epoch_losses
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        if config.early_stopping && loss >= best_loss {
            report.stopped_early = true;
            break;
        }
        if loss < best_loss {
            best.clone_from(&params);
        }
        report.epoch_losses.push(loss);
        log::debug!("epoch {} loss {loss:.6e}", epoch + 1);
    }

    let params = if config.early_stopping { best } else { params };
    Ok((
        ProbabilityModel {
            architecture,
            params,
            p_min: config.p_min,
        },
        report,
    ))
}

/// Uniform `(-1/sqrt(fan_in), 1/sqrt(fan_in))` for weights and biases.
fn init_params<R: Rng>(arch: &Architecture, rng: &mut R) -> Vec<f64> {
    let dims = arch.dims();
    let mut params = Vec::with_capacity(arch.parameter_count());
    for w in dims.windows(2) {
        let bound = 1.0 / (w[0].max(1) as f64).sqrt();
        for _ in 0..w[0] * w[1] + w[1] {
            params.push(rng.random_range(-bound..bound));
        }
    }
    params
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_examples(
        rng: &mut ChaCha8Rng,
        n: usize,
        dim: usize,
        trials: u64,
    ) -> Vec<TrainingExample> {
        (0..n)
            .map(|_| {
                let features = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
                let count = rng.random_range(0..=trials);
                TrainingExample::from_counts(features, trials, count)
            })
            .collect()
    }

    #[test]
    fn aggregate_bce_equals_mean_of_expanded_bce() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let trials = rng.random_range(1..60u64);
            let count = rng.random_range(0..=trials);
            let p: f64 = rng.random_range(1e-6..1.0 - 1e-6);
            let ybar = count as f64 / trials as f64;
            let expanded: f64 = (0..trials)
                .map(|j| bce(if j < count { 1.0 } else { 0.0 }, p))
                .sum::<f64>()
                / trials as f64;
            assert!((expanded - bce(ybar, p)).abs() <= 1e-10 * expanded.abs().max(1.0));
            let z = (p / (1.0 - p)).ln();
            assert!((bce_with_logit(ybar, z) - bce(ybar, p)).abs() < 1e-9);
        }
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for hidden in [vec![], vec![5], vec![4, 3]] {
            let arch = Architecture {
                input_dim: 3,
                hidden,
            };
            let params = init_params(&arch, &mut rng);
            let model = ProbabilityModel::from_parameters(arch, params, 1e-9).unwrap();
            let examples = random_examples(&mut rng, 7, 3, 20);
            let (_, grad) = model.loss_and_gradient(&examples);
            let h = 1e-5;
            for k in 0..model.params.len() {
                let mut plus = model.clone();
                plus.params[k] += h;
                let mut minus = model.clone();
                minus.params[k] -= h;
                let fd = (plus.loss(&examples) - minus.loss(&examples)) / (2.0 * h);
                let denom = fd.abs().max(grad[k].abs()).max(1e-7);
                assert!(
                    (fd - grad[k]).abs() / denom < 1e-4,
                    "param {k}: fd {fd} analytic {}",
                    grad[k]
                );
            }
        }
    }

    #[test]
    fn constant_model_fits_the_mean() {
        let ex = vec![TrainingExample::from_counts(vec![], 10, 3)];
        let cfg = TrainConfig {
            learning_rate: 0.05,
            epochs: 3000,
            batch_size: 1,
            init_output_bias: false,
            ..TrainConfig::logistic()
        };
        let (model, _) = fit(&ex, &cfg).unwrap();
        assert!((model.predict_p(&[]).unwrap().get() - 0.3).abs() < 1e-3);
    }

    #[test]
    fn separable_clusters_recover_cluster_rates() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut examples = Vec::new();
        for _ in 0..200 {
            examples.push(TrainingExample::from_counts(
                vec![1.0 + rng.random_range(-0.1..0.1)],
                10,
                9,
            ));
            examples.push(TrainingExample::from_counts(
                vec![-1.0 + rng.random_range(-0.1..0.1)],
                10,
                1,
            ));
        }
        let cfg = TrainConfig {
            hidden: vec![8],
            learning_rate: 1e-2,
            epochs: 200,
            batch_size: 40,
            ..TrainConfig::default()
        };
        let (model, _) = fit(&examples, &cfg).unwrap();
        assert!((model.predict_p(&[1.0]).unwrap().get() - 0.9).abs() < 0.05);
        assert!((model.predict_p(&[-1.0]).unwrap().get() - 0.1).abs() < 0.05);
    }

    #[test]
    fn loss_decreases_per_epoch() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let examples: Vec<_> = (0..400)
            .map(|_| {
                let x: f64 = rng.random_range(-2.0..2.0);
                let p = sigmoid(1.5 * x - 1.0);
                let count = (0..50).filter(|_| rng.random::<f64>() < p).count() as u64;
                TrainingExample::from_counts(vec![x, x * x], 50, count)
            })
            .collect();
        let cfg = TrainConfig {
            hidden: vec![16, 16],
            learning_rate: 1e-3,
            epochs: 15,
            batch_size: 50,
            ..TrainConfig::default()
        };
        let (_, report) = fit(&examples, &cfg).unwrap();
        for w in report.epoch_losses.windows(2) {
            assert!(w[1] <= w[0] + 1e-6, "{:?}", report.epoch_losses);
        }
        assert!(report.epoch_losses.last().unwrap() < &report.epoch_losses[0]);
    }

    #[test]
    fn early_stopping_keeps_history_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let examples = random_examples(&mut rng, 100, 2, 10);
        let cfg = TrainConfig {
            hidden: vec![8],
            learning_rate: 0.5,
            epochs: 30,
            batch_size: 10,
            early_stopping: true,
            ..TrainConfig::default()
        };
        let (model, report) = fit(&examples, &cfg).unwrap();
        for w in report.epoch_losses.windows(2) {
            assert!(w[1] < w[0]);
        }
        let best = report
            .epoch_losses
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        assert!((model.loss(&examples) - best).abs() < 1e-12);
    }

    #[test]
    fn training_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let examples = random_examples(&mut rng, 64, 3, 20);
        let cfg = TrainConfig {
            hidden: vec![4],
            epochs: 2,
            batch_size: 16,
            seed: 42,
            ..TrainConfig::default()
        };
        let (a, _) = fit(&examples, &cfg).unwrap();
        let (b, _) = fit(&examples, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn fit_rejects_bad_input() {
        assert!(matches!(
            fit(&[], &TrainConfig::default()),
            Err(ModelError::Empty)
        ));
        let ex = vec![
            TrainingExample::from_counts(vec![1.0, 2.0], 4, 1),
            TrainingExample::from_counts(vec![1.0], 4, 1),
        ];
        assert!(matches!(
            fit(&ex, &TrainConfig::default()),
            Err(ModelError::DimensionMismatch { .. })
        ));
        let bad = vec![TrainingExample {
            features: vec![0.0],
            trials: 3,
            unsafe_fraction: 0.5,
        }];
        assert!(matches!(
            fit(&bad, &TrainConfig::default()),
            Err(ModelError::InvalidExample { .. })
        ));
    }

    #[test]
    fn divergence_is_reported() {
        let ex = vec![TrainingExample::from_counts(vec![1e10], 4, 1)];
        let config = TrainConfig {
            learning_rate: 1e300,
            ..TrainConfig::logistic()
        };
        assert!(matches!(
            fit(&ex, &config),
            Err(ModelError::NonFiniteLoss { epoch: 0, .. })
        ));
        let inf = vec![TrainingExample {
            features: vec![f64::INFINITY],
            trials: 1,
            unsafe_fraction: 0.0,
        }];
        assert!(matches!(
            fit(&inf, &TrainConfig::logistic()),
            Err(ModelError::InvalidExample { .. })
        ));
    }

    #[test]
    fn prediction_contracts() {
        let model = ProbabilityModel::constant(2, -1.2, 1e-9).unwrap();
        let p = model.predict_p(&[3.0, 4.0]).unwrap().get();
        assert!((p - sigmoid(-1.2)).abs() < 1e-15);
        assert_eq!(model.predict_p(&[3.0, 4.0]).unwrap().get(), p);
        assert!(matches!(
            model.predict_p(&[1.0]),
            Err(ModelError::DimensionMismatch { .. })
        ));

        let extreme = ProbabilityModel::constant(1, -800.0, 1e-9).unwrap();
        assert_eq!(extreme.predict_p(&[0.0]).unwrap().get(), 1e-9);
        let high = ProbabilityModel::constant(1, 800.0, 1e-9).unwrap();
        assert_eq!(high.predict_p(&[0.0]).unwrap().get(), 1.0 - 1e-9);
    }

    #[test]
    fn quantile_contracts() {
        let bias = (0.1f64 / 0.9).ln();
        let model = ProbabilityModel::constant(1, bias, 1e-9).unwrap();
        assert_eq!(model.predict_quantile(&[0.0], 0.0).unwrap(), 0);
        assert_eq!(model.predict_quantile(&[0.0], 0.9).unwrap(), 22);
        assert!(model.predict_quantile(&[0.0], 1.0).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let arch = Architecture {
            input_dim: 2,
            hidden: vec![6],
        };
        let params = init_params(&arch, &mut rng);
        let mlp = ProbabilityModel::from_parameters(arch, params, 1e-9).unwrap();
        for _ in 0..1000 {
            let x = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
            let t1: f64 = rng.random_range(0.0..0.99);
            let t2 = rng.random_range(t1..0.999);
            assert!(mlp.predict_quantile(&x, t1).unwrap() <= mlp.predict_quantile(&x, t2).unwrap());
        }
    }

    #[test]
    fn model_bytes_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let arch = Architecture {
            input_dim: 4,
            hidden: vec![3, 2],
        };
        let params = init_params(&arch, &mut rng);
        let model = ProbabilityModel::from_parameters(arch, params, 1e-7).unwrap();
        let bytes = model.to_bytes();
        assert_eq!(&bytes[..8], MODEL_MAGIC);
        assert_eq!(ProbabilityModel::from_bytes(&bytes).unwrap(), model);
        assert!(ProbabilityModel::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut tampered = bytes.clone();
        tampered[0] = b'X';
        assert!(ProbabilityModel::from_bytes(&tampered).is_err());
    }
}
