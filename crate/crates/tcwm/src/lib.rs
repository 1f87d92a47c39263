//! Task-centric world model at desk scale.
//!
//! The crate trains a compact latent world model on trajectories from a
//! synthetic, fully-observed generative process. Observations arrive as a
//! fixed "visual" embedding plus a low-dimensional proprioceptive readout;
//! the model learns a joint latent whose leading block is contrastively
//! aligned with proprioception and therefore recovers the task-relevant
//! state up to an affine map. Two planners (cross-entropy method and a
//! small latent diffusion planner) consume the learned dynamics, and the
//! evaluation module measures identifiability, latent collapse, rollout
//! error, and robustness to input perturbations.
//!
//! Module map:
//! - [`numerics`]: dense tensors, affine/MLP layers with hand-written
//!   backprop, Adam, finite-difference gradient checking, seeded RNG.
//! - [`synthworld`]: ground-truth latent worlds, the 2-D navigation
//!   environment, trajectory generation, rasterized renders.
//! - [`datastore`]: bit-exact dataset and report persistence (raw
//!   little-endian f32 plus JSON metadata), standardization statistics.
//! - [`model`]: the world-model itself (embedders, projector, heads,
//!   dynamics networks, decoders) and checkpoint I/O.
//! - [`training`]: the five-term objective, its analytic gradients, and
//!   the mini-batch training loop with ablation modes.
//! - [`planning`]: latent CEM with receding-horizon control, and the
//!   DDPM-based trajectory planner with its inverse-dynamics decoder.
//! - [`evaluation`]: ridge probes, affine recovery, effective rank,
//!   distance-correlation diagnostics, rollout MSE, SSIM, perturbations.
//! - [`config`] / [`experiment`]: strict JSON experiment configs and the
//!   end-to-end subcommand flows used by the `tcwm` binary.

pub mod config;
pub mod datastore;
pub mod evaluation;
pub mod experiment;
pub mod model;
pub mod numerics;
pub mod planning;
pub mod synthworld;
pub mod training;
