//! Synthetic ground-truth worlds.
//!
//! A world owns a latent state `z = [z_s, z_c]`: the leading block is the
//! task-relevant state (driven by actions), the trailing block evolves on
//! its own and only pollutes the observations. Observations are emitted as
//! a fixed "visual" embedding `x = g(z) + sigma_x * eps` with exogenous
//! i.i.d. noise, and proprioception is a component-wise diffeomorphism of
//! `z_s` alone. Latent dynamics are first-order Markov.
//!
//! [`WorldSpec`] is the generic world used for identifiability and probing
//! experiments; [`nav::NavEnv`] specialises it to a 2-D navigation arena
//! with walls, a goal, and a rasterized render for the visual decoder.

mod dataset;
pub mod nav;

pub use dataset::{generate_dataset, Policy, TrajectoryBatch, World};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::rng::{self, tags};

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("action dim {dim} value {value} outside box [{lo}, {hi}]")]
    ActionOutOfBounds {
        dim: usize,
        value: f32,
        lo: f32,
        hi: f32,
    },
    #[error("latent has {got} dims, world expects {expected}")]
    LatentDim { expected: usize, got: usize },
    #[error("policy {0} is only defined for the navigation environment")]
    UnsupportedPolicy(&'static str),
}

/// How the task-relevant and distractor latents evolve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DynamicsMode {
    /// `z_s' = rho Q_s z_s + B a`, `z_c' = Q_c z_c`, plus process noise.
    Linear,
    /// Seeded one-hidden-layer tanh net over `[z, a]` (bounded outputs).
    TanhMlp,
}

/// How latents are mixed into the visual embedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MixingMode {
    /// `x = G z` with a dense Gaussian `G` (injective for d_x >= d).
    Linear,
    /// `x = G2 tanh(G1 z)`: an invertible-in-practice smooth mixing.
    TanhMlp,
}

/// The proprioceptive map `m` applied to `z_s` only. All three choices are
/// component-wise strictly monotone, hence diffeomorphisms onto their image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProprioMode {
    Identity,
    /// `s = D z_s + c` with a positive diagonal `D`.
    ScaledShifted,
    /// `s = z_s + 0.3 tanh(z_s)`.
    SmoothMonotone,
}

/// Dimensions, noise scales and mode switches of a generic world. All
/// world parameters (mixing matrices, dynamics matrices, proprio diagonal)
/// are derived deterministically from `seed`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorldConfig {
    pub d_s: usize,
    pub d_c: usize,
    pub d_x: usize,
    pub d_a: usize,
    pub noise_dyn: f32,
    pub noise_embed: f32,
    /// Symmetric per-dimension action bounds `[-action_half, action_half]`.
    pub action_half: f32,
    pub dynamics: DynamicsMode,
    pub mixing: MixingMode,
    pub proprio: ProprioMode,
    /// Multiplies the distractor columns of the mixing map, so `z_c` can be
    /// made to dominate the embedding.
    pub distractor_gain: f32,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            d_s: 4,
            d_c: 12,
            d_x: 64,
            d_a: 2,
            noise_dyn: 0.01,
            noise_embed: 0.05,
            action_half: 1.0,
            dynamics: DynamicsMode::Linear,
            mixing: MixingMode::Linear,
            proprio: ProprioMode::ScaledShifted,
            distractor_gain: 1.0,
            seed: 0,
        }
    }
}

/// A fully instantiated world: config plus the seeded parameter matrices.
#[derive(Debug, Clone)]
pub struct WorldSpec {
    pub cfg: WorldConfig,
    /// `d_s x d_s` contraction for the task block (linear dynamics).
    a_ss: Vec<f32>,
    /// `d_s x d_a` action coupling.
    b_sa: Vec<f32>,
    /// `d_c x d_c` orthogonal map for the distractor block.
    a_cc: Vec<f32>,
    /// Hidden tanh dynamics net weights, only for [`DynamicsMode::TanhMlp`]:
    /// (w1 [m x (d+d_a)], w2 [d x m]).
    dyn_net: Option<(Vec<f32>, Vec<f32>, usize)>,
    /// Linear mixing `d_x x d`, distractor columns pre-scaled.
    g_mix: Vec<f32>,
    /// tanh mixing weights, only for [`MixingMode::TanhMlp`]:
    /// (g1 [m x d], g2 [d_x x m]).
    mix_net: Option<(Vec<f32>, Vec<f32>, usize)>,
    /// Positive diagonal and offset of the scaled-shifted proprio map.
    proprio_diag: Vec<f32>,
    proprio_shift: Vec<f32>,
}

/// Random matrix with i.i.d. N(0, scale^2) entries, row-major `[rows, cols]`.
fn gaussian_matrix(rows: usize, cols: usize, scale: f64, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let n = Normal::new(0.0, scale).unwrap();
    (0..rows * cols).map(|_| n.sample(rng) as f32).collect()
}

/// Random orthogonal `d x d` via Gram-Schmidt on a Gaussian matrix (f64).
fn random_orthogonal(d: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let n = Normal::new(0.0, 1.0).unwrap();
    let mut q: Vec<Vec<f64>> = (0..d)
        .map(|_| (0..d).map(|_| n.sample(rng)).collect())
        .collect();
    for i in 0..d {
        for j in 0..i {
            let dot: f64 = (0..d).map(|k| q[i][k] * q[j][k]).sum();
            for k in 0..d {
                q[i][k] -= dot * q[j][k];
            }
        }
        let norm: f64 = (0..d).map(|k| q[i][k] * q[i][k]).sum::<f64>().sqrt();
        for k in 0..d {
            q[i][k] /= norm.max(1e-12);
        }
    }
    let mut out = vec![0.0f32; d * d];
    for (i, row) in q.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            out[i * d + j] = *v as f32;
        }
    }
    out
}

fn matvec(m: &[f32], rows: usize, cols: usize, x: &[f32], out: &mut [f32]) {
    debug_assert_eq!(m.len(), rows * cols);
    debug_assert_eq!(x.len(), cols);
    debug_assert_eq!(out.len(), rows);
    for r in 0..rows {
        let row = &m[r * cols..(r + 1) * cols];
        let mut acc = 0.0f32;
        for c in 0..cols {
            acc += row[c] * x[c];
        }
        out[r] = acc;
    }
}

impl WorldSpec {
    pub fn new(cfg: WorldConfig) -> Self {
        let mut r = rng::stream(cfg.seed, tags::WORLD_PARAMS);
        let d = cfg.d_s + cfg.d_c;
        // Task block: contraction at rate 0.9 keeps action-driven state
        // stationary with O(1) variance under a uniform policy.
        let mut a_ss = random_orthogonal(cfg.d_s, &mut r);
        for v in &mut a_ss {
            *v *= 0.9;
        }
        let b_sa = gaussian_matrix(cfg.d_s, cfg.d_a, 0.35, &mut r);
        // Distractor block: exactly orthogonal, so its variance neither
        // collapses nor explodes along a trajectory.
        let a_cc = random_orthogonal(cfg.d_c, &mut r);
        let dyn_net = match cfg.dynamics {
            DynamicsMode::Linear => None,
            DynamicsMode::TanhMlp => {
                let m = 2 * d;
                let w1 = gaussian_matrix(m, d + cfg.d_a, 1.0 / (d + cfg.d_a) as f64, &mut r);
                let w2 = gaussian_matrix(d, m, 0.8 / (m as f64).sqrt(), &mut r);
                Some((w1, w2, m))
            }
        };
        let mut g_mix = gaussian_matrix(cfg.d_x, d, 1.0 / (d as f64).sqrt(), &mut r);
        for row in 0..cfg.d_x {
            for c in cfg.d_s..d {
                g_mix[row * d + c] *= cfg.distractor_gain;
            }
        }
        let mix_net = match cfg.mixing {
            MixingMode::Linear => None,
            MixingMode::TanhMlp => {
                let m = cfg.d_x.max(2 * d);
                let g1 = gaussian_matrix(m, d, 1.0 / (d as f64).sqrt(), &mut r);
                let g2 = gaussian_matrix(cfg.d_x, m, 1.0 / (m as f64).sqrt(), &mut r);
                Some((g1, g2, m))
            }
        };
        let proprio_diag: Vec<f32> = (0..cfg.d_s).map(|_| r.gen_range(0.5f32..1.5)).collect();
        let proprio_shift: Vec<f32> = (0..cfg.d_s).map(|_| r.gen_range(-0.3f32..0.3)).collect();
        Self {
            cfg,
            a_ss,
            b_sa,
            a_cc,
            dyn_net,
            g_mix,
            mix_net,
            proprio_diag,
            proprio_shift,
        }
    }

    pub fn d_latent(&self) -> usize {
        self.cfg.d_s + self.cfg.d_c
    }

    pub fn d_proprio(&self) -> usize {
        self.cfg.d_s
    }

    fn check_action(&self, a: &[f32]) -> Result<(), WorldError> {
        let half = self.cfg.action_half;
        for (dim, v) in a.iter().enumerate() {
            if !(-half..=half).contains(v) {
                return Err(WorldError::ActionOutOfBounds {
                    dim,
                    value: *v,
                    lo: -half,
                    hi: half,
                });
            }
        }
        Ok(())
    }

    /// Draws an initial latent: task block uniform in `[-1, 1]`, distractor
    /// block standard normal (its stationary law under orthogonal dynamics).
    pub fn init_latent(&self, rng: &mut ChaCha8Rng) -> Vec<f32> {
        let normal = Normal::new(0.0f64, 1.0).unwrap();
        let mut z = Vec::with_capacity(self.d_latent());
        for _ in 0..self.cfg.d_s {
            z.push(rng.gen_range(-1.0f32..1.0));
        }
        for _ in 0..self.cfg.d_c {
            z.push(normal.sample(rng) as f32);
        }
        z
    }

    /// Ground-truth transition `z' = f(z, a) + noise_dyn * eta`.
    pub fn step_true(
        &self,
        z: &[f32],
        a: &[f32],
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<f32>, WorldError> {
        let d = self.d_latent();
        if z.len() != d {
            return Err(WorldError::LatentDim {
                expected: d,
                got: z.len(),
            });
        }
        self.check_action(a)?;
        let (d_s, d_c, d_a) = (self.cfg.d_s, self.cfg.d_c, self.cfg.d_a);
        let mut next = vec![0.0f32; d];
        match (&self.cfg.dynamics, &self.dyn_net) {
            (DynamicsMode::Linear, _) => {
                matvec(&self.a_ss, d_s, d_s, &z[..d_s], &mut next[..d_s]);
                let mut drive = vec![0.0f32; d_s];
                matvec(&self.b_sa, d_s, d_a, a, &mut drive);
                for k in 0..d_s {
                    next[k] += drive[k];
                }
                matvec(&self.a_cc, d_c, d_c, &z[d_s..], &mut next[d_s..]);
            }
            (DynamicsMode::TanhMlp, Some((w1, w2, m))) => {
                let mut input = z.to_vec();
                input.extend_from_slice(a);
                let mut hidden = vec![0.0f32; *m];
                matvec(w1, *m, d + d_a, &input, &mut hidden);
                for h in &mut hidden {
                    *h = h.tanh();
                }
                matvec(w2, d, *m, &hidden, &mut next);
            }
            (DynamicsMode::TanhMlp, None) => unreachable!("constructed in new()"),
        }
        if self.cfg.noise_dyn > 0.0 {
            let n = Normal::new(0.0f64, self.cfg.noise_dyn as f64).unwrap();
            for v in &mut next {
                *v += n.sample(rng) as f32;
            }
        }
        Ok(next)
    }

    /// Noiseless mixing `g(z)`.
    pub fn mix(&self, z: &[f32]) -> Vec<f32> {
        let d = self.d_latent();
        debug_assert_eq!(z.len(), d);
        let mut x = vec![0.0f32; self.cfg.d_x];
        match (&self.cfg.mixing, &self.mix_net) {
            (MixingMode::Linear, _) => matvec(&self.g_mix, self.cfg.d_x, d, z, &mut x),
            (MixingMode::TanhMlp, Some((g1, g2, m))) => {
                // Distractor gain enters before the nonlinearity.
                let mut zin = z.to_vec();
                for v in &mut zin[self.cfg.d_s..] {
                    *v *= self.cfg.distractor_gain;
                }
                let mut hidden = vec![0.0f32; *m];
                matvec(g1, *m, d, &zin, &mut hidden);
                for h in &mut hidden {
                    *h = h.tanh();
                }
                matvec(g2, self.cfg.d_x, *m, &hidden, &mut x);
            }
            (MixingMode::TanhMlp, None) => unreachable!("constructed in new()"),
        }
        x
    }

    /// Observation emission `x = g(z) + noise_embed * eps`.
    pub fn emit_embedding(&self, z: &[f32], rng: &mut ChaCha8Rng) -> Vec<f32> {
        let mut x = self.mix(z);
        if self.cfg.noise_embed > 0.0 {
            let n = Normal::new(0.0f64, self.cfg.noise_embed as f64).unwrap();
            for v in &mut x {
                *v += n.sample(rng) as f32;
            }
        }
        x
    }

    /// Proprioceptive readout `m(z_s)`. Depends on the task block only.
    pub fn proprio_of(&self, z: &[f32]) -> Vec<f32> {
        let zs = &z[..self.cfg.d_s];
        match self.cfg.proprio {
            ProprioMode::Identity => zs.to_vec(),
            ProprioMode::ScaledShifted => zs
                .iter()
                .enumerate()
                .map(|(k, v)| self.proprio_diag[k] * v + self.proprio_shift[k])
                .collect(),
            ProprioMode::SmoothMonotone => zs.iter().map(|v| v + 0.3 * v.tanh()).collect(),
        }
    }

    /// The linear mixing matrix (for diagnostics); `None` under tanh mixing.
    pub fn linear_mixing(&self) -> Option<(&[f32], usize, usize)> {
        match self.cfg.mixing {
            MixingMode::Linear => Some((&self.g_mix, self.cfg.d_x, self.d_latent())),
            MixingMode::TanhMlp => None,
        }
    }
}
