//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use statrs::distribution::{ChiSquared, ContinuousCDF};
use survcal::model::Architecture;
use survcal::synthgen::{generate_dataset, Split, SynthConfig};
use survcal::{ProbabilityModel, PromptRecord, UnsafeProbability};

/// Mean weight `(1/n) Σ 1/π_i`.
pub fn mean_weight(pi: &[f64]) -> f64 {
    pi.iter().map(|p| 1.0 / p).sum::<f64>() / pi.len() as f64
}

/// Euclidean projection onto `{π ∈ [lo, 1]^n : c·π <= B}`.
fn project(y: &[f64], costs: &[f64], budget: f64, lo: f64) -> Vec<f64> {
    let clip = |mu: f64| -> Vec<f64> {
        y.iter()
            .zip(costs)
            .map(|(v, c)| (v - mu * c).clamp(lo, 1.0))
            .collect()
    };
    let usage = |p: &[f64]| p.iter().zip(costs).map(|(a, b)| a * b).sum::<f64>();
    let direct = clip(0.0);
    if usage(&direct) <= budget {
        return direct;
    }
    let (mut a, mut b) = (0.0, 1.0);
    while usage(&clip(b)) > budget {
        b *= 2.0;
    }
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if usage(&clip(m)) > budget {
            a = m;
        } else {
            b = m;
        }
    }
    clip(b)
}

/// Minimises `(1/n) Σ 1/π_i` subject to `Σ c_i π_i <= B`, `0 < π <= 1` by
/// projected gradient descent with backtracking.
pub fn pgd_allocation(costs: &[u64], budget: f64) -> Vec<f64> {
    let c: Vec<f64> = costs.iter().map(|&x| x as f64).collect();
    let n = c.len();
    let lo = 1e-12;
    let f = |p: &[f64]| mean_weight(p);
    let mut x = project(&vec![budget / c.iter().sum::<f64>(); n], &c, budget, lo);
    let mut step = 1e-3;
    for _ in 0..20_000 {
        let g: Vec<f64> = x.iter().map(|p| -1.0 / (n as f64 * p * p)).collect();
        let fx = f(&x);
        let mut accepted = false;
        for _ in 0..60 {
            let y: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a - step * b).collect();
            let z = project(&y, &c, budget, lo);
            let decrease: f64 = g
                .iter()
                .zip(z.iter().zip(&x))
                .map(|(gi, (zi, xi))| gi * (zi - xi))
                .sum::<f64>()
                + z.iter().zip(&x).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / (2.0 * step);
            if f(&z) <= fx + decrease + 1e-18 {
                let moved = z
                    .iter()
                    .zip(&x)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                x = z;
                accepted = true;
                step *= 1.5;
                if moved < 1e-15 {
                    return x;
                }
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    x
}

/// Two-sample Kolmogorov–Smirnov statistic and asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    let en = (n * m / (n + m)).sqrt();
    (d, kolmogorov_q((en + 0.12 + 0.11 / en) * d))
}

/// `Q(λ) = 2 Σ (-1)^{k-1} exp(-2 k² λ²)`.
fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=200 {
        let term = (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// χ² homogeneity test of two samples of small integers; bins with small
/// expected counts are pooled into a tail bin. Returns the p-value.
pub fn chi2_homogeneity(a: &[u64], b: &[u64]) -> f64 {
    let max = a.iter().chain(b).copied().max().unwrap_or(0) as usize;
    let mut ca = vec![0.0; max + 1];
    let mut cb = vec![0.0; max + 1];
    a.iter().for_each(|&x| ca[x as usize] += 1.0);
    b.iter().for_each(|&x| cb[x as usize] += 1.0);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let mut bins: Vec<(f64, f64)> = Vec::new();
    let (mut pa, mut pb) = (0.0, 0.0);
    for k in 0..=max {
        pa += ca[k];
        pb += cb[k];
        let total = pa + pb;
        if total * na.min(nb) / (na + nb) >= 5.0 {
            bins.push((pa, pb));
            pa = 0.0;
            pb = 0.0;
        }
    }
    if pa + pb > 0.0 {
        match bins.last_mut() {
            Some(last) => {
                last.0 += pa;
                last.1 += pb;
            }
            None => bins.push((pa, pb)),
        }
    }
    if bins.len() < 2 {
        return 1.0;
    }
    let mut stat = 0.0;
    for &(x, y) in &bins {
        let t = x + y;
        let ea = t * na / (na + nb);
        let eb = t * nb / (na + nb);
        stat += (x - ea).powi(2) / ea + (y - eb).powi(2) / eb;
    }
    let dof = (bins.len() - 1) as f64;
    1.0 - ChiSquared::new(dof).unwrap().cdf(stat)
}

/// Calibration and test prompts from the standard synthetic generator.
pub fn synthetic_split(
    n: usize,
    seed: u64,
) -> (Vec<PromptRecord>, Vec<PromptRecord>, Vec<PromptRecord>) {
    let ds = generate_dataset(&SynthConfig {
        n,
        seed,
        ..Default::default()
    })
    .unwrap();
    (
        ds.split(Split::Train),
        ds.split(Split::Calib),
        ds.split(Split::Test),
    )
}

/// True probabilities, perturbed by a deterministic factor in `[0.5, 2]` so
/// the predictions are informative but imperfect.
pub fn perturbed_predictions(prompts: &[PromptRecord]) -> Vec<UnsafeProbability> {
    prompts
        .iter()
        .map(|r| {
            let factor = 2f64.powf(((r.id * 2654435761) % 1000) as f64 / 500.0 - 1.0);
            UnsafeProbability::new(r.true_p.unwrap().get() * factor).unwrap()
        })
        .collect()
}

pub fn true_predictions(prompts: &[PromptRecord]) -> Vec<UnsafeProbability> {
    prompts.iter().map(|r| r.true_p.unwrap()).collect()
}

/// Logistic model `σ(x_0)` on prompts whose single feature is the logit.
pub fn logit_model() -> ProbabilityModel {
    ProbabilityModel::from_parameters(
        Architecture {
            input_dim: 1,
            hidden: vec![],
        },
        vec![1.0, 0.0],
        1e-12,
    )
    .unwrap()
}

pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub fn sample_variance(xs: &[f64]) -> f64 {
    let (mean, _) = mean_and_se(xs);
    xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)
}
