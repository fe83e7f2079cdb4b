//! Synthetic prompts with heavy-tailed unsafe probabilities.
//!
//! 90% of prompts have `log10 p ~ U[-4, -3]` and the rest `log10 p ~ U[-6, -5]`.
//! Features are `N(μ(p), σ² I_d)` where `μ_j(p)` is the fourth root of the
//! geometric `τ_j`-quantile, divided by a dataset-wide normalizer.

use std::fs;
use std::io::Read;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{geom_quantile, GeomError, UnsafeProbability};
use crate::oracle::PromptRecord;
use crate::seeds::{derive_seed, STAGE_SYNTH};

const HIGH_BAND: (f64, f64) = (-4.0, -3.0);
const LOW_BAND: (f64, f64) = (-6.0, -5.0);
const HIGH_SHARE: f64 = 0.9;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synth config: {0}")]
    Config(String),
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error("dataset I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("dataset CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("malformed dataset: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n: usize,
    pub d: usize,
    pub sigma: f64,
    pub seed: u64,
    /// `(train, calibration, test)` fractions.
    pub split: [f64; 3],
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n: 100_000,
            d: 10,
            sigma: 0.1,
            seed: 0,
            split: [0.45, 0.45, 0.10],
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Config(m));
        if self.n == 0 {
            return bad("n must be positive".into());
        }
        if self.d < 2 {
            return bad(format!("d must be at least 2, got {}", self.d));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return bad(format!("sigma must be non-negative, got {}", self.sigma));
        }
        if self.split.iter().any(|f| !(0.0..=1.0).contains(f))
            || (self.split.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return bad(format!(
                "split fractions must be in [0, 1] and sum to 1, got {:?}",
                self.split
            ));
        }
        Ok(())
    }

    /// `(⌊f_train n⌋, ⌊f_calib n⌋, remainder)`.
    pub fn split_sizes(&self) -> [usize; 3] {
        let train = (self.split[0] * self.n as f64).floor() as usize;
        let calib = ((self.split[1] * self.n as f64).floor() as usize).min(self.n - train);
        [train, calib, self.n - train - calib]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Calib,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Calib => "calib",
            Split::Test => "test",
        }
    }

    fn parse(s: &str) -> Option<Split> {
        [Split::Train, Split::Calib, Split::Test]
            .into_iter()
            .find(|x| x.as_str() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMetadata {
    pub seed: u64,
    pub n: usize,
    pub d: usize,
    pub sigma: f64,
    pub normalizer: f64,
    /// Which records the normalizer averages over.
    pub normalizer_pool: String,
    pub split_sizes: [usize; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub records: Vec<PromptRecord>,
    pub splits: Vec<Split>,
    pub metadata: DatasetMetadata,
}

impl Dataset {
    pub fn split(&self, which: Split) -> Vec<PromptRecord> {
        self.records
            .iter()
            .zip(&self.splits)
            .filter(|(_, &s)| s == which)
            .map(|(r, _)| r.clone())
            .collect()
    }

    pub fn d(&self) -> usize {
        self.metadata.d
    }

    pub fn to_csv_bytes(&self) -> Result<Vec<u8>, SynthError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["id".to_string(), "p".to_string()];
        header.extend((1..=self.metadata.d).map(|j| format!("x_{j}")));
        header.push("split".into());
        w.write_record(&header)?;
        for (r, s) in self.records.iter().zip(&self.splits) {
            let mut row = vec![
                r.id.to_string(),
                r.true_p
                    .map_or(String::new(), |p| format!("{:.16e}", p.get())),
            ];
            row.extend(r.features.iter().map(|x| format!("{x:.16e}")));
            row.push(s.as_str().into());
            w.write_record(&row)?;
        }
        w.into_inner().map_err(|e| SynthError::Io(e.into_error()))
    }

    /// Writes the CSV and its `.meta.json` sidecar.
    pub fn save(&self, csv_path: &Path) -> Result<(), SynthError> {
        fs::write(csv_path, self.to_csv_bytes()?)?;
        let meta = serde_json::to_vec_pretty(&self.metadata)
            .map_err(|e| SynthError::Malformed(e.to_string()))?;
        fs::write(metadata_path(csv_path), meta)?;
        Ok(())
    }

    /// Reads a dataset CSV; metadata is read alongside when present and
    /// otherwise reconstructed from the rows.
    pub fn load(csv_path: &Path) -> Result<Self, SynthError> {
        let mut bytes = Vec::new();
        fs::File::open(csv_path)?.read_to_end(&mut bytes)?;
        let mut dataset = Self::from_csv_bytes(&bytes)?;
        if let Ok(meta) = fs::read(metadata_path(csv_path)) {
            let meta: DatasetMetadata =
                serde_json::from_slice(&meta).map_err(|e| SynthError::Malformed(e.to_string()))?;
            if meta.n != dataset.records.len() || meta.d != dataset.metadata.d {
                return Err(SynthError::Malformed(
                    "metadata does not match the CSV".into(),
                ));
            }
            dataset.metadata = meta;
        }
        Ok(dataset)
    }

    pub fn from_csv_bytes(bytes: &[u8]) -> Result<Self, SynthError> {
        let mut r = csv::Reader::from_reader(bytes);
        let header = r.headers()?.clone();
        let d = header
            .len()
            .checked_sub(3)
            .filter(|&d| d >= 1)
            .ok_or_else(|| {
                SynthError::Malformed(format!(
                    "expected id,p,x_1..x_d,split header, got {} columns",
                    header.len()
                ))
            })?;
        if &header[0] != "id" || &header[1] != "p" || &header[header.len() - 1] != "split" {
            return Err(SynthError::Malformed(
                "header must be id,p,x_1..x_d,split".into(),
            ));
        }
        let mut records = Vec::new();
        let mut splits = Vec::new();
        for row in r.records() {
            let row = row?;
            let field = |i: usize| -> Result<f64, SynthError> {
                row[i]
                    .parse()
                    .map_err(|_| SynthError::Malformed(format!("bad number {:?}", &row[i])))
            };
            let id = row[0]
                .parse()
                .map_err(|_| SynthError::Malformed(format!("bad id {:?}", &row[0])))?;
            let true_p = if row[1].is_empty() {
                None
            } else {
                Some(UnsafeProbability::new(field(1)?)?)
            };
            let features = (2..2 + d).map(field).collect::<Result<Vec<_>, _>>()?;
            let split = Split::parse(&row[d + 2])
                .ok_or_else(|| SynthError::Malformed(format!("bad split {:?}", &row[d + 2])))?;
            records.push(PromptRecord {
                id,
                features,
                true_p,
            });
            splits.push(split);
        }
        let count = |s: Split| splits.iter().filter(|&&x| x == s).count();
        let metadata = DatasetMetadata {
            seed: 0,
            n: records.len(),
            d,
            sigma: f64::NAN,
            normalizer: f64::NAN,
            normalizer_pool: "unknown".into(),
            split_sizes: [count(Split::Train), count(Split::Calib), count(Split::Test)],
        };
        Ok(Dataset {
            records,
            splits,
            metadata,
        })
    }
}

pub fn metadata_path(csv_path: &Path) -> std::path::PathBuf {
    csv_path.with_extension("meta.json")
}

/// `⌊0.9 n⌋` values from the high-risk band, the rest from the low-risk band,
/// in random order.
pub fn sample_p_pool<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<UnsafeProbability> {
    let high = (HIGH_SHARE * n as f64).floor() as usize;
    let mut pool: Vec<UnsafeProbability> = (0..n)
        .map(|i| {
            let (lo, hi) = if i < high { HIGH_BAND } else { LOW_BAND };
            let p = 10f64.powf(rng.random_range(lo..=hi));
            UnsafeProbability::new(p).expect("band values lie in (0, 1)")
        })
        .collect();
    pool.shuffle(rng);
    pool
}

/// `τ_j = 0.1 + 0.8 (j - 1) / (d - 1)`, `j = 1..d`.
pub fn tau_levels(d: usize) -> Vec<f64> {
    (0..d)
        .map(|j| 0.1 + 0.8 * j as f64 / (d - 1) as f64)
        .collect()
}

/// Un-normalized mean: `q_{τ_j}(p)^{1/4}` for each level.
fn raw_mu(p: UnsafeProbability, levels: &[f64]) -> Result<Vec<f64>, GeomError> {
    levels
        .iter()
        .map(|&t| Ok((geom_quantile(p, t)? as f64).powf(0.25)))
        .collect()
}

pub fn mu_of_p(p: UnsafeProbability, d: usize, normalizer: f64) -> Result<Vec<f64>, GeomError> {
    Ok(raw_mu(p, &tau_levels(d))?
        .into_iter()
        .map(|m| m / normalizer)
        .collect())
}

pub fn generate_dataset(config: &SynthConfig) -> Result<Dataset, SynthError> {
    config.validate()?;
    let mut pool_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, STAGE_SYNTH, 0));
    let mut feature_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, STAGE_SYNTH, 1));
    let mut split_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, STAGE_SYNTH, 2));

    let ps = sample_p_pool(config.n, &mut pool_rng);
    let levels = tau_levels(config.d);
    let raw: Vec<Vec<f64>> = ps
        .iter()
        .map(|&p| raw_mu(p, &levels))
        .collect::<Result<_, _>>()?;
    let normalizer = raw.iter().flatten().sum::<f64>() / (config.n * config.d) as f64;

    let noise = Normal::new(0.0, config.sigma).map_err(|e| SynthError::Config(e.to_string()))?;
    let records: Vec<PromptRecord> = ps
        .iter()
        .zip(raw)
        .enumerate()
        .map(|(i, (&p, mu))| PromptRecord {
            id: i as u64,
            features: mu
                .into_iter()
                .map(|m| m / normalizer + noise.sample(&mut feature_rng))
                .collect(),
            true_p: Some(p),
        })
        .collect();

    let sizes = config.split_sizes();
    let mut order: Vec<usize> = (0..config.n).collect();
    order.shuffle(&mut split_rng);
    let mut splits = vec![Split::Test; config.n];
    for (rank, &i) in order.iter().enumerate() {
        splits[i] = if rank < sizes[0] {
            Split::Train
        } else if rank < sizes[0] + sizes[1] {
            Split::Calib
        } else {
            Split::Test
        };
    }

    Ok(Dataset {
        records,
        splits,
        metadata: DatasetMetadata {
            seed: config.seed,
            n: config.n,
            d: config.d,
            sigma: config.sigma,
            normalizer,
            normalizer_pool: "all".into(),
            split_sizes: sizes,
        },
    })
}
