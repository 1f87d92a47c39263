//! Measurement suite for trained world models.
//!
//! Linear probes with cross-validated ridge regression, the three
//! empirical assumption checks (decoder sensitivity, distance-rank
//! agreement, task-block probe efficiency), affine recovery of the true
//! task state, latent-collapse metrics, open-loop rollout error, SSIM,
//! and observation perturbations. All statistics accumulate in `f64`
//! regardless of the `f32` storage they read from.

use thiserror::Error;

use crate::model::ModelError;
use crate::numerics::NumericsError;

mod affine;
mod assumptions;
pub(crate) mod linalg;
mod metrics;
mod perturb;
mod probe;
mod ssim;

pub use affine::{affine_recovery, AffineFit};
pub use assumptions::{check_a1, check_a2, pearson, spearman, A1Result, A2Result};
pub use metrics::{collapse_metrics, effective_rank, rollout_mse, CollapseMetrics};
pub use perturb::{perturb, PerturbKind};
pub use probe::{check_a4, linear_probe, A4Result, BlockLabel, ProbeResult};
pub use ssim::ssim;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid evaluation input: {0}")]
    Config(String),
    #[error("singular linear system (pivot {pivot:.3e} at column {col})")]
    Singular { col: usize, pivot: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

pub type Result<T> = std::result::Result<T, EvalError>;
