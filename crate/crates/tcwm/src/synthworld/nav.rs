//! 2-D navigation environment: point agent in `[-1, 1]^2` with velocity
//! actions, axis-aligned walls, a goal position, and distractor latents
//! that leak into the observations but never respond to actions.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{gaussian_matrix, matvec, random_orthogonal, WorldError};
use crate::numerics::rng::{self, tags};

/// Side length of the square render in pixels.
pub const RENDER_SIDE: usize = 16;

/// Axis-aligned wall segment. `axis = 0` is a vertical wall `x = at`
/// spanning `y in [lo, hi]`; `axis = 1` is horizontal, `y = at`,
/// `x in [lo, hi]`. Walls block any motion segment that crosses them.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Wall {
    pub axis: usize,
    pub at: f32,
    pub lo: f32,
    pub hi: f32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NavConfig {
    /// Number of distractor latents mixed into the embedding.
    pub d_c: usize,
    pub d_x: usize,
    pub noise_dyn: f32,
    pub noise_embed: f32,
    /// Per-dimension action bound: `a in [-action_half, action_half]^2`.
    pub action_half: f32,
    pub walls: Vec<Wall>,
    pub goal_tolerance: f32,
    /// Standard deviation of the distractor block (position is O(1), so
    /// raising this makes distractors dominate the embedding).
    pub distractor_std: f32,
    pub seed: u64,
}

impl Default for NavConfig {
    fn default() -> Self {
        Self {
            d_c: 6,
            d_x: 64,
            noise_dyn: 0.01,
            noise_embed: 0.05,
            action_half: 0.2,
            walls: Vec::new(),
            goal_tolerance: 0.1,
            distractor_std: 1.0,
            seed: 0,
        }
    }
}

/// Instantiated navigation world. The full latent is `[pos(2), z_c(d_c)]`;
/// proprioception is the position itself.
#[derive(Debug, Clone)]
pub struct NavEnv {
    pub cfg: NavConfig,
    /// Orthogonal distractor dynamics `d_c x d_c`.
    a_cc: Vec<f32>,
    /// Linear mixing `d_x x (2 + d_c)`.
    g_mix: Vec<f32>,
}

/// Stops `from -> to` at the first wall crossing, with a small standoff so
/// the result is never on a wall. Returns the clamped endpoint.
fn clamp_through_walls(from: [f32; 2], to: [f32; 2], walls: &[Wall]) -> [f32; 2] {
    const STANDOFF: f32 = 1e-3;
    let mut best_t = f32::INFINITY;
    let mut hit: Option<&Wall> = None;
    for w in walls {
        let (p0, p1) = (from[w.axis], to[w.axis]);
        if (p0 - w.at) * (p1 - w.at) > 0.0 || p0 == p1 {
            continue; // both endpoints on the same side, no crossing
        }
        let t = (w.at - p0) / (p1 - p0);
        let other = w.axis ^ 1;
        let cross = from[other] + t * (to[other] - from[other]);
        if cross >= w.lo && cross <= w.hi && t < best_t {
            best_t = t;
            hit = Some(w);
        }
    }
    match hit {
        None => to,
        Some(w) => {
            let mut p = [
                from[0] + best_t * (to[0] - from[0]),
                from[1] + best_t * (to[1] - from[1]),
            ];
            // Step back off the wall on the incoming side.
            let dir = if from[w.axis] < w.at { -1.0 } else { 1.0 };
            p[w.axis] = w.at + dir * STANDOFF;
            p
        }
    }
}

impl NavEnv {
    pub fn new(cfg: NavConfig) -> Self {
        let mut r = rng::stream(cfg.seed, tags::WORLD_PARAMS);
        let d = 2 + cfg.d_c;
        let a_cc = random_orthogonal(cfg.d_c, &mut r);
        let g_mix = gaussian_matrix(cfg.d_x, d, 1.0 / (d as f64).sqrt(), &mut r);
        Self { cfg, a_cc, g_mix }
    }

    pub fn d_latent(&self) -> usize {
        2 + self.cfg.d_c
    }

    pub fn d_proprio(&self) -> usize {
        2
    }

    /// Initial latent: position uniform in `[-0.9, 0.9]^2` (off the outer
    /// boundary), distractors at their stationary scale.
    pub fn init_latent(&self, rng: &mut ChaCha8Rng) -> Vec<f32> {
        let mut z = vec![rng.gen_range(-0.9f32..0.9), rng.gen_range(-0.9f32..0.9)];
        let n = Normal::new(0.0f64, self.cfg.distractor_std as f64).unwrap();
        for _ in 0..self.cfg.d_c {
            z.push(n.sample(rng) as f32);
        }
        z
    }

    pub fn sample_goal(&self, rng: &mut ChaCha8Rng) -> [f32; 2] {
        [rng.gen_range(-0.9f32..0.9), rng.gen_range(-0.9f32..0.9)]
    }

    /// One environment step: position integrates the action (plus process
    /// noise), is clamped to the arena, and never crosses a wall;
    /// distractors rotate under their own dynamics, untouched by actions.
    pub fn step(
        &self,
        z: &[f32],
        a: &[f32],
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<f32>, WorldError> {
        if z.len() != self.d_latent() {
            return Err(WorldError::LatentDim {
                expected: self.d_latent(),
                got: z.len(),
            });
        }
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
        let noise = Normal::new(0.0f64, self.cfg.noise_dyn as f64).unwrap();
        let from = [z[0], z[1]];
        let mut target = [
            z[0] + a[0] + noise.sample(rng) as f32,
            z[1] + a[1] + noise.sample(rng) as f32,
        ];
        for t in &mut target {
            *t = t.clamp(-1.0, 1.0);
        }
        let pos = clamp_through_walls(from, target, &self.cfg.walls);

        let d_c = self.cfg.d_c;
        let mut zc = vec![0.0f32; d_c];
        matvec(&self.a_cc, d_c, d_c, &z[2..], &mut zc);
        for v in &mut zc {
            *v += noise.sample(rng) as f32;
        }
        let mut next = vec![pos[0], pos[1]];
        next.extend(zc);
        Ok(next)
    }

    pub fn mix(&self, z: &[f32]) -> Vec<f32> {
        let d = self.d_latent();
        let mut x = vec![0.0f32; self.cfg.d_x];
        matvec(&self.g_mix, self.cfg.d_x, d, z, &mut x);
        x
    }

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

    pub fn proprio_of(&self, z: &[f32]) -> Vec<f32> {
        z[..2].to_vec()
    }

    pub fn at_goal(&self, pos: &[f32], goal: [f32; 2]) -> bool {
        let dx = pos[0] - goal[0];
        let dy = pos[1] - goal[1];
        (dx * dx + dy * dy).sqrt() <= self.cfg.goal_tolerance
    }

    /// Rasterizes the scene to a `16 x 16` grayscale image in `[0, 1]`.
    ///
    /// Cells are painted background 0.0, walls 0.35, goal 0.6, agent 1.0
    /// (brightest, painted last). Positions snap to their nearest cell, so
    /// any two latents in the same cell render identically and positions a
    /// cell apart differ.
    pub fn render(&self, z: &[f32], goal: [f32; 2]) -> Vec<f32> {
        let n = RENDER_SIDE;
        let mut img = vec![0.0f32; n * n];
        let to_cell = |p: f32| -> usize {
            let u = (p.clamp(-1.0, 1.0) + 1.0) * 0.5 * (n as f32 - 1.0);
            (u + 0.5).floor().clamp(0.0, n as f32 - 1.0) as usize
        };
        for w in &self.cfg.walls {
            let c_at = to_cell(w.at);
            let (c_lo, c_hi) = (to_cell(w.lo), to_cell(w.hi));
            for c in c_lo..=c_hi {
                let (row, col) = if w.axis == 0 { (c, c_at) } else { (c_at, c) };
                img[row * n + col] = 0.35;
            }
        }
        img[to_cell(goal[1]) * n + to_cell(goal[0])] = 0.6;
        img[to_cell(z[1]) * n + to_cell(z[0])] = 1.0;
        img
    }
}
