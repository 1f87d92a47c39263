//! Cross-validated linear probes from latent blocks to targets.
//!
//! Ridge regression in closed form on contiguous folds: features and
//! targets are centered on the training fold, `(X^T X + alpha I) W = X^T Y`
//! is solved directly, and R^2 is scored on the held-out fold against its
//! own mean, uniform-averaged over target dimensions.

use serde::{Deserialize, Serialize};

use super::linalg::solve_multi;
use super::{EvalError, Result};

/// Which feature block a probe was fit from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BlockLabel {
    /// Leading latent block aligned with the task readout.
    TaskBlock,
    /// Remaining latent dimensions.
    ContextBlock,
    FullLatent,
    RawEmbedding,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeResult {
    pub label: BlockLabel,
    pub folds: usize,
    /// Mean held-out R^2 across folds.
    pub r2_mean: f64,
    /// Sample standard deviation of the fold R^2 values.
    pub r2_std: f64,
    /// Per-target-dimension R^2, averaged across folds.
    pub per_dim_r2: Vec<f64>,
}

/// Fits `folds` contiguous-fold ridge probes from `latents` (`n x d`) to
/// `targets` (`n x k`).
pub fn linear_probe(
    latents: &[f32],
    targets: &[f32],
    n: usize,
    folds: usize,
    alpha: f64,
    label: BlockLabel,
) -> Result<ProbeResult> {
    if n == 0 || latents.len() % n != 0 || targets.len() % n != 0 {
        return Err(EvalError::Config(format!(
            "probe inputs of lengths {} and {} are not {n} rows",
            latents.len(),
            targets.len()
        )));
    }
    let d = latents.len() / n;
    let k = targets.len() / n;
    if d == 0 || k == 0 {
        return Err(EvalError::Config("probe needs nonempty rows".into()));
    }
    if folds < 2 || n < 2 * folds {
        return Err(EvalError::Config(format!(
            "{n} rows cannot support {folds} folds of at least 2 rows"
        )));
    }
    if !(alpha > 0.0) {
        return Err(EvalError::Config(
            "ridge penalty must be positive (alpha = 0 is rank-unsafe)".into(),
        ));
    }
    let bound = |f: usize| f * n / folds;
    let mut fold_r2 = Vec::with_capacity(folds);
    let mut per_dim = vec![0.0f64; k];
    for f in 0..folds {
        let (lo, hi) = (bound(f), bound(f + 1));
        let train: Vec<usize> = (0..n).filter(|i| *i < lo || *i >= hi).collect();
        let test: Vec<usize> = (lo..hi).collect();
        let nt = train.len() as f64;
        let mut x_mean = vec![0.0f64; d];
        let mut y_mean = vec![0.0f64; k];
        for &i in &train {
            for j in 0..d {
                x_mean[j] += latents[i * d + j] as f64 / nt;
            }
            for j in 0..k {
                y_mean[j] += targets[i * k + j] as f64 / nt;
            }
        }
        // Gram and cross-covariance of the centered training fold.
        let mut gram = vec![0.0f64; d * d];
        let mut xty = vec![0.0f64; d * k];
        let mut xc = vec![0.0f64; d];
        for &i in &train {
            for j in 0..d {
                xc[j] = latents[i * d + j] as f64 - x_mean[j];
            }
            for a in 0..d {
                for b in a..d {
                    gram[a * d + b] += xc[a] * xc[b];
                }
                for b in 0..k {
                    xty[a * k + b] += xc[a] * (targets[i * k + b] as f64 - y_mean[b]);
                }
            }
        }
        for a in 0..d {
            for b in 0..a {
                gram[a * d + b] = gram[b * d + a];
            }
            gram[a * d + a] += alpha;
        }
        solve_multi(&mut gram, &mut xty, d, k)?;
        let w = xty; // d x k
        let mut r2s = score_r2(&test, |i, buf: &mut [f64]| {
            for (b, m) in buf.iter_mut().zip(&y_mean) {
                *b = *m;
            }
            for j in 0..d {
                let x = latents[i * d + j] as f64 - x_mean[j];
                for b in 0..k {
                    buf[b] += x * w[j * k + b];
                }
            }
        }, |i, dim| targets[i * k + dim] as f64, k);
        fold_r2.push(r2s.iter().sum::<f64>() / k as f64);
        for (acc, r) in per_dim.iter_mut().zip(r2s.drain(..)) {
            *acc += r / folds as f64;
        }
    }
    let mean = fold_r2.iter().sum::<f64>() / folds as f64;
    let var = fold_r2.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (folds - 1) as f64;
    Ok(ProbeResult { label, folds, r2_mean: mean, r2_std: var.sqrt(), per_dim_r2: per_dim })
}

/// Held-out R^2 per target dimension; a constant held-out target scores 1
/// if predicted exactly and 0 otherwise.
fn score_r2(
    rows: &[usize],
    mut predict_into: impl FnMut(usize, &mut [f64]),
    target: impl Fn(usize, usize) -> f64,
    k: usize,
) -> Vec<f64> {
    let n = rows.len() as f64;
    let mut t_mean = vec![0.0f64; k];
    for &i in rows {
        for (j, m) in t_mean.iter_mut().enumerate() {
            *m += target(i, j) / n;
        }
    }
    let mut ss_res = vec![0.0f64; k];
    let mut ss_tot = vec![0.0f64; k];
    let mut pred = vec![0.0f64; k];
    for &i in rows {
        predict_into(i, &mut pred);
        for j in 0..k {
            let t = target(i, j);
            ss_res[j] += (t - pred[j]).powi(2);
            ss_tot[j] += (t - t_mean[j]).powi(2);
        }
    }
    ss_res
        .iter()
        .zip(&ss_tot)
        .map(|(res, tot)| {
            if *tot <= f64::EPSILON {
                if *res <= f64::EPSILON {
                    1.0
                } else {
                    0.0
                }
            } else {
                1.0 - res / tot
            }
        })
        .collect()
}

/// Probe-efficiency comparison between the task-aligned latent block and
/// the remaining context block.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct A4Result {
    pub task: ProbeResult,
    pub context: ProbeResult,
    /// R^2 divided by block width, per block.
    pub task_efficiency: f64,
    pub context_efficiency: f64,
}

/// Probes the proprio targets separately from the leading `align_dim`
/// latent columns and from the rest, and reports per-dimension efficiency.
pub fn check_a4(
    latents: &[f32],
    n: usize,
    align_dim: usize,
    targets: &[f32],
    folds: usize,
    alpha: f64,
) -> Result<A4Result> {
    if n == 0 || latents.len() % n != 0 {
        return Err(EvalError::Config("latents are not n rows".into()));
    }
    let d = latents.len() / n;
    if align_dim == 0 || align_dim >= d {
        return Err(EvalError::Config(format!(
            "align_dim {align_dim} must split {d} latent dims into two nonempty blocks"
        )));
    }
    let mut task = Vec::with_capacity(n * align_dim);
    let mut context = Vec::with_capacity(n * (d - align_dim));
    for i in 0..n {
        let row = &latents[i * d..(i + 1) * d];
        task.extend_from_slice(&row[..align_dim]);
        context.extend_from_slice(&row[align_dim..]);
    }
    let task = linear_probe(&task, targets, n, folds, alpha, BlockLabel::TaskBlock)?;
    let context = linear_probe(&context, targets, n, folds, alpha, BlockLabel::ContextBlock)?;
    let task_efficiency = task.r2_mean / align_dim as f64;
    let context_efficiency = context.r2_mean / (d - align_dim) as f64;
    Ok(A4Result { task, context, task_efficiency, context_efficiency })
}
