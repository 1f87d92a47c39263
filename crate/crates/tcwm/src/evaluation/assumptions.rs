//! Empirical checks behind the identifiability argument: the decoder must
//! respond to latent perturbations at a bounded, nonzero rate (A1), and
//! latent distances must rank-order embedding distances (A2).

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::numerics::rng::{self, tags};

use super::{EvalError, Result};

/// Percentiles of the decoder sensitivity ratio over random latent
/// perturbations.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct A1Result {
    pub p5: f64,
    pub p50: f64,
    pub p95: f64,
    pub n_pairs: usize,
}

impl A1Result {
    /// Sensitivities must be bounded away from zero (no collapsed
    /// directions) and concentrated within two orders of magnitude.
    pub fn passes(&self) -> bool {
        self.p5 > 0.0 && self.p5 >= 0.01 * self.p50 && self.p95 <= 100.0 * self.p5
    }
}

/// Finite-difference forward sensitivity of `decode` around rows of
/// `latents` (`n x d`): perturb a random base latent by `delta` along a
/// random direction and measure the output-to-input displacement ratio.
/// Pairs whose stored-precision displacement underflows are resampled.
pub fn check_a1<F>(
    mut decode: F,
    latents: &[f32],
    d: usize,
    n_pairs: usize,
    delta: f64,
    seed: u64,
) -> Result<A1Result>
where
    F: FnMut(&[f32]) -> Result<Vec<f32>>,
{
    if d == 0 || latents.is_empty() || latents.len() % d != 0 || n_pairs == 0 {
        return Err(EvalError::Config("sensitivity check needs latent rows and pairs".into()));
    }
    if !(delta > 0.0) {
        return Err(EvalError::Config("perturbation scale must be positive".into()));
    }
    let n = latents.len() / d;
    let mut r = rng::stream(seed, tags::PERTURB);
    let mut ratios = Vec::with_capacity(n_pairs);
    let mut attempts = 0usize;
    while ratios.len() < n_pairs {
        attempts += 1;
        if attempts > 20 * n_pairs {
            return Err(EvalError::Config(
                "latent perturbations keep underflowing; latents look degenerate".into(),
            ));
        }
        let i = r.gen_range(0..n);
        let base = &latents[i * d..(i + 1) * d];
        let mut dir: Vec<f64> = (0..d).map(|_| r.sample::<f64, _>(StandardNormal)).collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-12 {
            continue;
        }
        for v in dir.iter_mut() {
            *v *= delta / norm;
        }
        let moved: Vec<f32> = base
            .iter()
            .zip(&dir)
            .map(|(b, step)| (*b as f64 + step) as f32)
            .collect();
        // Actual displacement after f32 rounding; resample if it vanished.
        let dz: f64 = moved
            .iter()
            .zip(base)
            .map(|(m, b)| ((*m as f64) - (*b as f64)).powi(2))
            .sum::<f64>()
            .sqrt();
        if dz == 0.0 {
            continue;
        }
        let xa = decode(base)?;
        let xb = decode(&moved)?;
        if xa.len() != xb.len() {
            return Err(EvalError::Config("decoder output width changed".into()));
        }
        let dx: f64 = xa
            .iter()
            .zip(&xb)
            .map(|(p, q)| ((*p as f64) - (*q as f64)).powi(2))
            .sum::<f64>()
            .sqrt();
        ratios.push(dx / dz);
    }
    ratios.sort_by(f64::total_cmp);
    Ok(A1Result {
        p5: percentile(&ratios, 5.0),
        p50: percentile(&ratios, 50.0),
        p95: percentile(&ratios, 95.0),
        n_pairs,
    })
}

/// Rank and linear agreement between latent and embedding pairwise
/// distances over random index pairs. `degenerate_pairs` counts pairs
/// whose embeddings nearly coincide while the latents do not — the
/// failure mode the distance check exists to expose.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct A2Result {
    /// `None` when one of the distance samples is constant.
    pub spearman: Option<f64>,
    pub pearson: Option<f64>,
    pub degenerate_pairs: usize,
    pub n_pairs: usize,
}

pub fn check_a2(
    latents: &[f32],
    d_z: usize,
    embeddings: &[f32],
    d_x: usize,
    n_pairs: usize,
    seed: u64,
) -> Result<A2Result> {
    if d_z == 0 || d_x == 0 || latents.len() % d_z != 0 || embeddings.len() % d_x != 0 {
        return Err(EvalError::Config("latents/embeddings are not flat rows".into()));
    }
    let n = latents.len() / d_z;
    if embeddings.len() / d_x != n || n < 2 {
        return Err(EvalError::Config(format!(
            "need matching rows on both sides, got {n} and {}",
            embeddings.len() / d_x
        )));
    }
    let mut r = rng::stream(seed, tags::EVAL_PAIRS);
    let mut dz = Vec::with_capacity(n_pairs);
    let mut dx = Vec::with_capacity(n_pairs);
    let mut degenerate = 0usize;
    for _ in 0..n_pairs {
        let i = r.gen_range(0..n);
        let mut j = r.gen_range(0..n);
        while j == i {
            j = r.gen_range(0..n);
        }
        let a = row_distance(latents, d_z, i, j);
        let b = row_distance(embeddings, d_x, i, j);
        if b < 1e-9 && a > 1e-6 {
            degenerate += 1;
        }
        dz.push(a);
        dx.push(b);
    }
    Ok(A2Result {
        spearman: spearman(&dz, &dx),
        pearson: pearson(&dz, &dx),
        degenerate_pairs: degenerate,
        n_pairs,
    })
}

fn row_distance(flat: &[f32], d: usize, i: usize, j: usize) -> f64 {
    let (a, b) = (&flat[i * d..(i + 1) * d], &flat[j * d..(j + 1) * d]);
    a.iter()
        .zip(b)
        .map(|(p, q)| ((*p as f64) - (*q as f64)).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Pearson correlation; `None` if either side is constant.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len();
    if n < 2 || n != ys.len() {
        return None;
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
        sxy += (x - mx) * (y - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let rx = average_ranks(xs);
    let ry = average_ranks(ys);
    pearson(&rx, &ry)
}

/// 1-based ranks; runs of exactly equal values share their average rank.
fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0f64; v.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && v[idx[end]] == v[idx[start]] {
            end += 1;
        }
        let avg = (start + 1 + end) as f64 / 2.0;
        for &i in &idx[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    ranks
}

/// Linear-interpolation percentile of an ascending-sorted sample.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let pos = (p / 100.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let w = pos - lo as f64;
        sorted[lo] * (1.0 - w) + sorted[hi] * w
    }
}
