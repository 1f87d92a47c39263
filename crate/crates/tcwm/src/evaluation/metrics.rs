//! Latent-space health metrics: collapse (effective rank of the latent
//! covariance) and open-loop rollout error.

use serde::{Deserialize, Serialize};

use crate::datastore::StandardizationStats;
use crate::model::TcwmModel;
use crate::synthworld::TrajectoryBatch;

use super::linalg::jacobi_eigenvalues;
use super::{EvalError, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CollapseMetrics {
    /// `exp` of the entropy of the normalized covariance spectrum;
    /// 1 means a single used direction, `d` means isotropic use.
    pub effective_rank: f64,
    pub per_dim_variance: Vec<f64>,
}

/// Effective rank of the sample covariance of `latents` (`n x d`).
/// All-identical samples give 1 by convention.
pub fn effective_rank(latents: &[f32], n: usize, d: usize) -> Result<f64> {
    Ok(collapse_metrics(latents, n, d)?.effective_rank)
}

pub fn collapse_metrics(latents: &[f32], n: usize, d: usize) -> Result<CollapseMetrics> {
    if d == 0 || latents.len() != n * d {
        return Err(EvalError::Config("latents are not n x d".into()));
    }
    if n <= d {
        return Err(EvalError::Config(format!(
            "effective rank needs more samples than dimensions, got {n} x {d}"
        )));
    }
    let nf = n as f64;
    let mut mean = vec![0.0f64; d];
    for i in 0..n {
        for j in 0..d {
            mean[j] += latents[i * d + j] as f64 / nf;
        }
    }
    let mut cov = vec![0.0f64; d * d];
    let mut c = vec![0.0f64; d];
    for i in 0..n {
        for j in 0..d {
            c[j] = latents[i * d + j] as f64 - mean[j];
        }
        for a in 0..d {
            for b in a..d {
                cov[a * d + b] += c[a] * c[b] / (nf - 1.0);
            }
        }
    }
    for a in 0..d {
        for b in 0..a {
            cov[a * d + b] = cov[b * d + a];
        }
    }
    let per_dim_variance: Vec<f64> = (0..d).map(|j| cov[j * d + j]).collect();
    let eig = jacobi_eigenvalues(cov, d);
    let total: f64 = eig.iter().map(|v| v.max(0.0)).sum();
    // Variance indistinguishable from the rounding error of the mean
    // subtraction counts as zero (rank 1 by convention).
    let scale = latents.iter().fold(0.0f64, |m, v| m.max(v.abs() as f64));
    let floor = (1e-12 * (1.0 + scale)).powi(2) * d as f64;
    let effective_rank = if total <= floor {
        1.0
    } else {
        let entropy: f64 = eig
            .iter()
            .map(|v| v.max(0.0) / total)
            .filter(|p| *p > 0.0)
            .map(|p| -p * p.ln())
            .sum();
        entropy.exp()
    };
    Ok(CollapseMetrics { effective_rank, per_dim_variance })
}

/// Open-loop rollout error. Every window-complete start in every episode
/// is rolled `horizon` steps forward on true actions, feeding predictions
/// back in; the squared error against the encoded ground truth is
/// normalized per dimension by that dimension's dataset-wide latent
/// variance, so spaces of different scales compare fairly.
pub fn rollout_mse(
    model: &TcwmModel,
    stats: &StandardizationStats,
    batch: &TrajectoryBatch,
    horizon: usize,
) -> Result<Vec<f64>> {
    if horizon == 0 {
        return Ok(Vec::new());
    }
    let d_z = model.cfg.d_latent();
    let h = model.cfg.horizon;
    if batch.d_x != model.cfg.d_x || batch.d_a != model.cfg.d_a {
        return Err(EvalError::Config("dataset does not match model dims".into()));
    }
    // Encode every step once.
    let mut z = vec![0.0f32; batch.n_steps * d_z];
    for t in 0..batch.n_steps {
        let s = stats.apply_vec(batch.proprio_row(t));
        let enc = model.encode_obs(batch.embedding(t), &s)?;
        z[t * d_z..(t + 1) * d_z].copy_from_slice(&enc.z);
    }
    let nf = batch.n_steps as f64;
    let mut var = vec![0.0f64; d_z];
    {
        let mut mean = vec![0.0f64; d_z];
        for t in 0..batch.n_steps {
            for j in 0..d_z {
                mean[j] += z[t * d_z + j] as f64 / nf;
            }
        }
        for t in 0..batch.n_steps {
            for j in 0..d_z {
                var[j] += ((z[t * d_z + j] as f64) - mean[j]).powi(2) / nf;
            }
        }
        for v in var.iter_mut() {
            *v = v.max(1e-12);
        }
    }
    let mut sums = vec![0.0f64; horizon];
    let mut n_starts = 0usize;
    let mut lat: Vec<Vec<f32>> = Vec::new();
    for e in 0..batch.n_episodes() {
        let (s, end) = batch.episode_range(e);
        if end - s < h + horizon + 1 {
            continue;
        }
        for t0 in s + h..end - horizon {
            n_starts += 1;
            lat.clear();
            for t in t0 - h..=t0 {
                lat.push(z[t * d_z..(t + 1) * d_z].to_vec());
            }
            for step in 0..horizon {
                let zs: Vec<&[f32]> = lat[lat.len() - (h + 1)..]
                    .iter()
                    .map(|v| v.as_slice())
                    .collect();
                let actions: Vec<&[f32]> =
                    (t0 + step - h..=t0 + step).map(|t| batch.action(t)).collect();
                let window = model.build_window(&zs, &actions)?;
                let pred = model.predict_next(&window)?;
                let truth = &z[(t0 + step + 1) * d_z..(t0 + step + 2) * d_z];
                sums[step] += pred
                    .iter()
                    .zip(truth)
                    .enumerate()
                    .map(|(j, (p, q))| ((*p as f64) - (*q as f64)).powi(2) / var[j])
                    .sum::<f64>()
                    / d_z as f64;
                lat.push(pred);
            }
        }
    }
    if n_starts == 0 {
        return Err(EvalError::Config(format!(
            "no episode is long enough for prefix {h} plus horizon {horizon}"
        )));
    }
    Ok(sums.into_iter().map(|s| s / n_starts as f64).collect())
}
