//! Single-pass mean and standard deviation.

use serde::{Deserialize, Serialize};

/// Welford accumulator.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Welford {
    count: u64,
    mean: f64,
    m2: f64,
}

impl Welford {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> f64 {
        if self.count == 0 {
            f64::NAN
        } else {
            self.mean
        }
    }

    /// Sample standard deviation; 0 for a single value.
    pub fn std(&self) -> f64 {
        match self.count {
            0 => f64::NAN,
            1 => 0.0,
            c => (self.m2 / (c - 1) as f64).sqrt(),
        }
    }

    pub fn summary(&self) -> MeanStd {
        MeanStd {
            mean: self.mean(),
            std: self.std(),
        }
    }
}

impl FromIterator<f64> for Welford {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut w = Welford::default();
        iter.into_iter().for_each(|x| w.push(x));
        w
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}
