//! Affine recovery: regress the true task state on the estimated one and
//! report how much of it an affine map explains. A fit R^2 of 1 is the
//! testable form of "identified up to an affine transform".

use serde::{Deserialize, Serialize};

use super::linalg::solve_multi;
use super::{EvalError, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AffineFit {
    /// Row-major `d_est x d_true` map: `true_j = sum_i est_i * a[i][j] + b[j]`.
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub d_est: usize,
    pub d_true: usize,
    /// Training R^2 uniform-averaged over true dimensions.
    pub r2: f64,
    pub per_dim_r2: Vec<f64>,
    /// Set when the normal equations were singular and a tiny ridge
    /// (alpha = 1e-6) was used instead.
    pub ridge_fallback: bool,
}

/// Ordinary least squares with intercept from `est` (`n x d_est`) to
/// `true_state` (`n x d_true`); falls back to ridge `alpha = 1e-6` on rank
/// deficiency and flags it.
pub fn affine_recovery(est: &[f32], true_state: &[f32], n: usize) -> Result<AffineFit> {
    if n == 0 || est.len() % n != 0 || true_state.len() % n != 0 {
        return Err(EvalError::Config("affine recovery inputs are not n rows".into()));
    }
    let d_est = est.len() / n;
    let d_true = true_state.len() / n;
    if d_est == 0 || d_true == 0 {
        return Err(EvalError::Config("affine recovery needs nonempty rows".into()));
    }
    if n <= d_est + 1 {
        return Err(EvalError::Config(format!(
            "need more than {} rows to fit {d_est} inputs with intercept, got {n}",
            d_est + 1
        )));
    }
    let nf = n as f64;
    let mut x_mean = vec![0.0f64; d_est];
    let mut y_mean = vec![0.0f64; d_true];
    for i in 0..n {
        for j in 0..d_est {
            x_mean[j] += est[i * d_est + j] as f64 / nf;
        }
        for j in 0..d_true {
            y_mean[j] += true_state[i * d_true + j] as f64 / nf;
        }
    }
    let mut gram = vec![0.0f64; d_est * d_est];
    let mut xty = vec![0.0f64; d_est * d_true];
    let mut xc = vec![0.0f64; d_est];
    for i in 0..n {
        for j in 0..d_est {
            xc[j] = est[i * d_est + j] as f64 - x_mean[j];
        }
        for a in 0..d_est {
            for b in a..d_est {
                gram[a * d_est + b] += xc[a] * xc[b];
            }
            for b in 0..d_true {
                xty[a * d_true + b] += xc[a] * (true_state[i * d_true + b] as f64 - y_mean[b]);
            }
        }
    }
    for a in 0..d_est {
        for b in 0..a {
            gram[a * d_est + b] = gram[b * d_est + a];
        }
    }
    let mut w = xty.clone();
    let mut scratch = gram.clone();
    let ridge_fallback = match solve_multi(&mut scratch, &mut w, d_est, d_true) {
        Ok(()) => false,
        Err(EvalError::Singular { .. }) => {
            w.copy_from_slice(&xty);
            scratch.copy_from_slice(&gram);
            for a in 0..d_est {
                scratch[a * d_est + a] += 1e-6;
            }
            solve_multi(&mut scratch, &mut w, d_est, d_true)?;
            true
        }
        Err(e) => return Err(e),
    };
    let b: Vec<f64> = (0..d_true)
        .map(|j| y_mean[j] - (0..d_est).map(|i| x_mean[i] * w[i * d_true + j]).sum::<f64>())
        .collect();
    let mut ss_res = vec![0.0f64; d_true];
    let mut ss_tot = vec![0.0f64; d_true];
    for i in 0..n {
        for j in 0..d_true {
            let mut pred = b[j];
            for m in 0..d_est {
                pred += est[i * d_est + m] as f64 * w[m * d_true + j];
            }
            let t = true_state[i * d_true + j] as f64;
            ss_res[j] += (t - pred).powi(2);
            ss_tot[j] += (t - y_mean[j]).powi(2);
        }
    }
    let per_dim_r2: Vec<f64> = ss_res
        .iter()
        .zip(&ss_tot)
        .map(|(res, tot)| if *tot <= f64::EPSILON { 1.0 } else { 1.0 - res / tot })
        .collect();
    let r2 = per_dim_r2.iter().sum::<f64>() / d_true as f64;
    Ok(AffineFit { a: w, b, d_est, d_true, r2, per_dim_r2, ridge_fallback })
}
