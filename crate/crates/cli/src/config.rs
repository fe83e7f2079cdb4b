//! Run configuration: one JSON document, dotted-path overrides, validation.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use survcal::calibrate::default_tau_prior;
use survcal::harness::sweep::DEFAULT_BUDGETS;
use survcal::harness::ExperimentConfig;
use survcal::synthgen::SynthConfig;
use survcal::{CalibrationConfig, Mode, TrainConfig};

pub const OUT_ENV: &str = "SURVCAL_OUT";
pub const DEFAULT_OUT: &str = "survcal-out";

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub master_seed: u64,
    pub dataset: DatasetSection,
    pub model: ModelSection,
    pub calibration: CalibrationSection,
    pub harness: HarnessSection,
}

/// Either an existing dataset CSV (`path`) or generator settings.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub path: Option<PathBuf>,
    pub synth: SynthConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    /// Existing model file; when absent the model lives in the output directory.
    pub path: Option<PathBuf>,
    /// Audited outputs simulated per training prompt.
    pub train_draws: u64,
    pub train: TrainConfig,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            path: None,
            train_draws: 500,
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationSection {
    pub mode: Mode,
    pub alpha: f64,
    pub tau_prior: f64,
    pub budget_per_prompt: f64,
    /// Trim target; `M = ⌊budget_per_prompt · gamma⌋` unless `trim_m` is set.
    pub gamma: f64,
    pub trim_m: Option<u64>,
    pub delta: f64,
    pub naive_full_grid: bool,
    pub allocator_tolerance: f64,
    pub use_shortcut: bool,
}

impl Default for CalibrationSection {
    fn default() -> Self {
        let base = CalibrationConfig::default();
        Self {
            mode: Mode::Optimized,
            alpha: base.alpha,
            tau_prior: default_tau_prior(),
            budget_per_prompt: 50.0,
            gamma: 10.0,
            trim_m: None,
            delta: base.delta,
            naive_full_grid: false,
            allocator_tolerance: base.allocator_tolerance,
            use_shortcut: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarnessSection {
    pub runs: usize,
    pub modes: Vec<Mode>,
    pub budgets: Vec<f64>,
    pub gammas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub out_dir: Option<PathBuf>,
}

impl Default for HarnessSection {
    fn default() -> Self {
        let base = ExperimentConfig::default();
        Self {
            runs: base.runs,
            modes: base.modes,
            budgets: DEFAULT_BUDGETS.to_vec(),
            gammas: vec![10.0],
            alphas: vec![0.1],
            out_dir: None,
        }
    }
}

impl RunConfig {
    /// Defaults, then the config file, then `--set` overrides, then `--seed`.
    pub fn resolve(file: Option<&Path>, overrides: &[String], seed: Option<u64>) -> Result<Self> {
        let mut value = match file {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading {}", path.display()))?;
                let parsed: RunConfig = serde_json::from_str(&text)
                    .with_context(|| format!("parsing {}", path.display()))?;
                serde_json::to_value(parsed)?
            }
            None => serde_json::to_value(RunConfig::default())?,
        };
        for item in overrides {
            apply_override(&mut value, item)?;
        }
        let mut config: RunConfig = serde_json::from_value(value).context("applying overrides")?;
        if let Some(seed) = seed {
            config.master_seed = seed;
        }
        config.dataset.synth.seed = config.master_seed;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(path) = &self.dataset.path {
            if !path.exists() {
                bail!("dataset file {} does not exist", path.display());
            }
        } else {
            self.dataset
                .synth
                .validate()
                .map_err(|e| anyhow!("dataset.synth: {e}"))?;
        }
        if let Some(path) = &self.model.path {
            if !path.exists() {
                bail!("model file {} does not exist", path.display());
            }
        }
        if self.model.train_draws == 0 {
            bail!("model.train_draws must be positive");
        }
        self.model
            .train
            .validate()
            .map_err(|e| anyhow!("model.train: {e}"))?;
        let c = &self.calibration;
        if !(c.budget_per_prompt > 0.0) || !(c.gamma > 0.0) {
            bail!("calibration.budget_per_prompt and calibration.gamma must be positive");
        }
        self.calibration_config(1, 0)
            .validate()
            .map_err(|e| anyhow!("calibration: {e}"))?;
        let h = &self.harness;
        if h.budgets.is_empty() || h.gammas.is_empty() || h.alphas.is_empty() {
            bail!("harness.budgets, harness.gammas and harness.alphas must be nonempty");
        }
        for &b in &h.budgets {
            for &g in &h.gammas {
                for &a in &h.alphas {
                    let cell = ExperimentConfig {
                        budget_per_prompt: b,
                        gamma: g,
                        alpha: a,
                        modes: vec![Mode::Basic],
                        ..self.experiment_config()
                    };
                    cell.validate().map_err(|e| anyhow!("harness: {e}"))?;
                }
            }
        }
        if h.modes.is_empty() {
            bail!("harness.modes must be nonempty");
        }
        Ok(())
    }

    pub fn trim_m(&self) -> u64 {
        let c = &self.calibration;
        c.trim_m
            .unwrap_or((c.budget_per_prompt * c.gamma).floor() as u64)
    }

    pub fn calibration_config(&self, n_calibration: usize, seed: u64) -> CalibrationConfig {
        let c = &self.calibration;
        CalibrationConfig {
            alpha: c.alpha,
            tau_prior: c.tau_prior,
            mode: c.mode,
            trim_m: c.mode.is_trimmed().then(|| self.trim_m()),
            budget: c.budget_per_prompt * n_calibration as f64,
            delta: c.delta,
            seed,
            naive_full_grid: c.naive_full_grid,
            allocator_tolerance: c.allocator_tolerance,
        }
    }

    /// Base experiment for sweeps; budgets, gammas and alphas come from the grids.
    pub fn experiment_config(&self) -> ExperimentConfig {
        let c = &self.calibration;
        ExperimentConfig {
            runs: self.harness.runs,
            modes: self.harness.modes.clone(),
            alpha: c.alpha,
            tau_prior: c.tau_prior,
            delta: c.delta,
            budget_per_prompt: c.budget_per_prompt,
            gamma: c.gamma,
            master_seed: self.master_seed,
            use_shortcut: c.use_shortcut,
            naive_full_grid: c.naive_full_grid,
        }
    }

    /// `--out`, then `harness.out_dir`, then the environment, then the default.
    pub fn out_dir(&self, flag: Option<&Path>) -> PathBuf {
        flag.map(Path::to_path_buf)
            .or_else(|| self.harness.out_dir.clone())
            .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
    }
}

/// Sets one leaf, `a.b.c=value`. The value is parsed as JSON when possible and
/// taken as a string otherwise. Only existing keys can be set.
pub fn apply_override(root: &mut Value, item: &str) -> Result<()> {
    let (path, raw) = item
        .split_once('=')
        .ok_or_else(|| anyhow!("override `{item}` is not of the form key=value"))?;
    let mut node = root;
    for key in path.split('.') {
        node = match node {
            Value::Object(map) => map.get_mut(key),
            Value::Array(items) => key.parse::<usize>().ok().and_then(|i| items.get_mut(i)),
            _ => None,
        }
        .ok_or_else(|| anyhow!("unknown config key `{path}`"))?;
    }
    *node = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_owned()));
    Ok(())
}
