//! End-to-end training of the world model.
//!
//! The objective couples two predictive terms with three regularizers:
//!
//! * `loss_dyn_z`  — MSE of the latent dynamics prediction at step H+1;
//! * `loss_dyn_s`  — MSE of the task-centric head predicting the next
//!   standardized proprio reading from the same latent/action window;
//! * `loss_align`  — batch-contrastive alignment of the latent task block
//!   with the proprio embedding (see [`losses`]);
//! * `loss_rec`    — MSE reconstruction of the joint embedding from the
//!   latent, which keeps the non-task subspace from collapsing;
//! * `loss_l1`     — an l1 penalty on the alignment head weights.
//!
//! `total = loss_dyn_z + loss_dyn_s + lambda_align * loss_align
//!          + lambda_rec * loss_rec + lambda_l1 * loss_l1`
//!
//! [`TrainMode`] selects which terms are active; every gradient is
//! hand-chained through the shared encoder so the whole thing stays a few
//! hundred lines of plain matrix code.

mod losses;
mod trainer;

pub use losses::{loss_align, loss_from_cosines, AlignGrads};
pub use trainer::{train, BatchLosses, Trainer};

use crate::model::ModelError;
use crate::numerics::NumericsError;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training data: {0}")]
    Data(String),
    #[error("model/config mismatch: {0}")]
    Config(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFinite { epoch: usize, batch: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

pub type Result<T> = std::result::Result<T, TrainError>;

/// Which loss terms are active and which layers receive gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainMode {
    /// Full objective.
    Tcwm,
    /// Ablation: no alignment term and no proprio-prediction dynamics term.
    NoAlign,
    /// Ablation: no reconstruction term.
    NoRec,
    /// Ablation: the latent is the joint embedding itself; the projector
    /// and embedding decoder receive no gradient and both regularizers on
    /// the latent geometry are dropped.
    DirectEmbedding,
}

impl TrainMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            TrainMode::Tcwm => "tcwm",
            TrainMode::NoAlign => "no-align",
            TrainMode::NoRec => "no-rec",
            TrainMode::DirectEmbedding => "direct-embedding",
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_align: f32,
    pub lambda_rec: f32,
    pub lambda_l1: f32,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda_align: 0.1, lambda_rec: 1.0, lambda_l1: 1e-3 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub weights: LossWeights,
    /// Fraction of episodes held out for the end-of-training evaluation.
    pub eval_fraction: f32,
    /// Treat the step-(H+1) latent in the dynamics target as a constant.
    pub stop_grad_target: bool,
    /// Keep the positive pair inside the contrastive denominator.
    pub include_positive: bool,
    /// Also fit the observation decoder head (on detached inputs).
    pub train_visual_decoder: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: TrainMode::Tcwm,
            epochs: 100,
            batch_size: 64,
            lr: 1e-3,
            weights: LossWeights::default(),
            eval_fraction: 0.2,
            stop_grad_target: true,
            include_positive: true,
            train_visual_decoder: false,
            seed: 0,
        }
    }
}

/// Per-term loss values, averaged over the windows they were computed on.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub dyn_z: f64,
    pub dyn_s: f64,
    pub align: f64,
    pub rec: f64,
    pub l1: f64,
    pub visual: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train: LossBreakdown,
}

/// Everything a training run produced besides the updated model weights.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub mode: TrainMode,
    pub epochs: Vec<EpochStats>,
    /// Loss terms on the held-out episodes after the final epoch.
    pub final_eval: LossBreakdown,
    pub n_train_windows: usize,
    pub n_eval_windows: usize,
}

impl TrainReport {
    /// Loss curves as CSV, one row per epoch plus a trailing `eval` row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,dyn_z,dyn_s,align,rec,l1,visual,total\n");
        let row = |tag: &str, l: &LossBreakdown| {
            format!(
                "{tag},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e}\n",
                l.dyn_z, l.dyn_s, l.align, l.rec, l.l1, l.visual, l.total
            )
        };
        for e in &self.epochs {
            out.push_str(&row(&e.epoch.to_string(), &e.train));
        }
        out.push_str(&row("eval", &self.final_eval));
        out
    }
}
