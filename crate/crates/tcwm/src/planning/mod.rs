//! Test-time control in latent space.
//!
//! Two planners drive a trained world model without ever touching the
//! environment's true state:
//!
//! * [`cem`] — cross-entropy-method trajectory optimization plus a
//!   receding-horizon control loop for the navigation environment;
//! * [`ddpm`] — a miniature latent diffusion planner (joint denoising of a
//!   future latent trajectory) with a diffusion inverse-dynamics model
//!   decoding actions from consecutive latent pairs.
//!
//! Both consume the [`RolloutModel`] window protocol or raw latents only,
//! so they can be driven by reference dynamics in tests just as well as by
//! a trained model.

pub mod cem;
pub mod ddpm;

pub use cem::{
    mpc_episode, plan_cem, random_episode, rollout, CemConfig, EpisodeOutcome, MpcConfig,
    PlanResult, StepLog,
};
pub use ddpm::{
    ancestral_sample, build_ldp_data, ldp_episode, plan_ldp, train_denoiser, train_ldp,
    ConditionalDenoiser, DiffusionConfig, LdpData, LdpPlan, NoiseSchedule,
};

use crate::model::{ModelError, TcwmModel};
use crate::numerics::NumericsError;
use crate::synthworld::WorldError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("planner config: {0}")]
    Config(String),
    #[error("every candidate produced a non-finite cost")]
    AllCandidatesDiscarded,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    World(#[from] WorldError),
}

pub type Result<T> = std::result::Result<T, PlanError>;

/// Planning cost: squared Euclidean distance between a predicted latent
/// and the goal latent.
pub fn cost(z: &[f32], z_goal: &[f32]) -> f64 {
    debug_assert_eq!(z.len(), z_goal.len());
    z.iter()
        .zip(z_goal)
        .map(|(a, b)| ((a - b) as f64).powi(2))
        .sum()
}

/// The window-based prediction interface planners roll out against. The
/// window is `[z_{t-H} .. z_t, a_{t-H} .. a_t]`, matching the trained
/// dynamics input.
pub trait RolloutModel {
    fn d_latent(&self) -> usize;
    fn d_action(&self) -> usize;
    /// History length `H`; the window holds `H + 1` (latent, action) pairs.
    fn horizon(&self) -> usize;
    fn predict_window(&self, window: &[f32]) -> Result<Vec<f32>>;
}

impl RolloutModel for TcwmModel {
    fn d_latent(&self) -> usize {
        self.cfg.d_latent()
    }

    fn d_action(&self) -> usize {
        self.cfg.d_a
    }

    fn horizon(&self) -> usize {
        self.cfg.horizon
    }

    fn predict_window(&self, window: &[f32]) -> Result<Vec<f32>> {
        Ok(self.predict_next(window)?)
    }
}

/// Reference dynamics `z' = z + a` with no history (`H = 0`). Used to
/// validate planners against closed-form optima and brute-force grids.
#[derive(Debug, Clone, Copy)]
pub struct AdditiveDynamics {
    pub dim: usize,
}

impl RolloutModel for AdditiveDynamics {
    fn d_latent(&self) -> usize {
        self.dim
    }

    fn d_action(&self) -> usize {
        self.dim
    }

    fn horizon(&self) -> usize {
        0
    }

    fn predict_window(&self, window: &[f32]) -> Result<Vec<f32>> {
        if window.len() != 2 * self.dim {
            return Err(PlanError::Config(format!(
                "additive dynamics expects a window of {}, got {}",
                2 * self.dim,
                window.len()
            )));
        }
        let (z, a) = window.split_at(self.dim);
        Ok(z.iter().zip(a).map(|(x, y)| x + y).collect())
    }
}
