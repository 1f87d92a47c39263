//! Trajectory batches and dataset generation.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::nav::{NavEnv, RENDER_SIDE};
use super::{WorldError, WorldSpec};
use crate::numerics::rng::{self, tags};

/// Flat row-major trajectory storage. Row `t` holds the observation at
/// step `t` and the action taken *at* that step; episodes are contiguous
/// and delimited by `episode_starts` (ascending, first entry 0).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryBatch {
    pub d_x: usize,
    pub d_p: usize,
    pub d_a: usize,
    /// Ground-truth latent width (0 when unavailable).
    pub d_true: usize,
    pub n_steps: usize,
    pub episode_starts: Vec<usize>,
    pub embeddings: Vec<f32>,
    pub proprio: Vec<f32>,
    pub actions: Vec<f32>,
    /// Flattened `RENDER_SIDE^2` grayscale images, when the world renders.
    pub renders: Option<Vec<f32>>,
    /// Ground-truth latents for evaluation (never shown to the model).
    pub true_latents: Option<Vec<f32>>,
}

impl TrajectoryBatch {
    pub fn embedding(&self, t: usize) -> &[f32] {
        &self.embeddings[t * self.d_x..(t + 1) * self.d_x]
    }

    pub fn proprio_row(&self, t: usize) -> &[f32] {
        &self.proprio[t * self.d_p..(t + 1) * self.d_p]
    }

    pub fn action(&self, t: usize) -> &[f32] {
        &self.actions[t * self.d_a..(t + 1) * self.d_a]
    }

    pub fn true_latent(&self, t: usize) -> Option<&[f32]> {
        self.true_latents
            .as_ref()
            .map(|l| &l[t * self.d_true..(t + 1) * self.d_true])
    }

    pub fn render(&self, t: usize) -> Option<&[f32]> {
        let px = RENDER_SIDE * RENDER_SIDE;
        self.renders.as_ref().map(|r| &r[t * px..(t + 1) * px])
    }

    pub fn n_episodes(&self) -> usize {
        self.episode_starts.len()
    }

    /// `(start, end)` row range of episode `e`.
    pub fn episode_range(&self, e: usize) -> (usize, usize) {
        let start = self.episode_starts[e];
        let end = if e + 1 < self.episode_starts.len() {
            self.episode_starts[e + 1]
        } else {
            self.n_steps
        };
        (start, end)
    }

    /// Splits episodes into a training head and evaluation tail; the split
    /// never cuts an episode. Returns row ranges per side.
    pub fn split_episodes(&self, eval_fraction: f32) -> (Vec<(usize, usize)>, Vec<(usize, usize)>) {
        let n = self.n_episodes();
        let n_eval = ((n as f32 * eval_fraction).round() as usize).min(n);
        let n_train = n - n_eval;
        let train = (0..n_train).map(|e| self.episode_range(e)).collect();
        let eval = (n_train..n).map(|e| self.episode_range(e)).collect();
        (train, eval)
    }
}

/// Behaviour policy used during data generation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Policy {
    /// Per-dimension uniform over the action box.
    UniformRandom,
    /// Navigation only: noisy proportional control toward a per-episode
    /// goal, which concentrates coverage along goal-directed paths.
    GoalSeeking { gain: f32, noise: f32 },
}

/// World interface shared by [`WorldSpec`] and [`NavEnv`] for generation.
pub trait World {
    fn d_latent(&self) -> usize;
    fn d_x(&self) -> usize;
    fn d_p(&self) -> usize;
    fn d_a(&self) -> usize;
    fn action_half(&self) -> f32;
    fn init_latent(&self, rng: &mut ChaCha8Rng) -> Vec<f32>;
    fn step(&self, z: &[f32], a: &[f32], rng: &mut ChaCha8Rng) -> Result<Vec<f32>, WorldError>;
    fn emit(&self, z: &[f32], rng: &mut ChaCha8Rng) -> Vec<f32>;
    fn proprio(&self, z: &[f32]) -> Vec<f32>;
    /// Goal for goal-seeking policies; `None` for generic worlds.
    fn sample_goal(&self, _rng: &mut ChaCha8Rng) -> Option<[f32; 2]> {
        None
    }
    fn render(&self, _z: &[f32], _goal: [f32; 2]) -> Option<Vec<f32>> {
        None
    }
}

impl World for WorldSpec {
    fn d_latent(&self) -> usize {
        WorldSpec::d_latent(self)
    }
    fn d_x(&self) -> usize {
        self.cfg.d_x
    }
    fn d_p(&self) -> usize {
        self.d_proprio()
    }
    fn d_a(&self) -> usize {
        self.cfg.d_a
    }
    fn action_half(&self) -> f32 {
        self.cfg.action_half
    }
    fn init_latent(&self, rng: &mut ChaCha8Rng) -> Vec<f32> {
        WorldSpec::init_latent(self, rng)
    }
    fn step(&self, z: &[f32], a: &[f32], rng: &mut ChaCha8Rng) -> Result<Vec<f32>, WorldError> {
        self.step_true(z, a, rng)
    }
    fn emit(&self, z: &[f32], rng: &mut ChaCha8Rng) -> Vec<f32> {
        self.emit_embedding(z, rng)
    }
    fn proprio(&self, z: &[f32]) -> Vec<f32> {
        self.proprio_of(z)
    }
}

impl World for NavEnv {
    fn d_latent(&self) -> usize {
        NavEnv::d_latent(self)
    }
    fn d_x(&self) -> usize {
        self.cfg.d_x
    }
    fn d_p(&self) -> usize {
        self.d_proprio()
    }
    fn d_a(&self) -> usize {
        2
    }
    fn action_half(&self) -> f32 {
        self.cfg.action_half
    }
    fn init_latent(&self, rng: &mut ChaCha8Rng) -> Vec<f32> {
        NavEnv::init_latent(self, rng)
    }
    fn step(&self, z: &[f32], a: &[f32], rng: &mut ChaCha8Rng) -> Result<Vec<f32>, WorldError> {
        NavEnv::step(self, z, a, rng)
    }
    fn emit(&self, z: &[f32], rng: &mut ChaCha8Rng) -> Vec<f32> {
        self.emit_embedding(z, rng)
    }
    fn proprio(&self, z: &[f32]) -> Vec<f32> {
        self.proprio_of(z)
    }
    fn sample_goal(&self, rng: &mut ChaCha8Rng) -> Option<[f32; 2]> {
        Some(NavEnv::sample_goal(self, rng))
    }
    fn render(&self, z: &[f32], goal: [f32; 2]) -> Option<Vec<f32>> {
        Some(NavEnv::render(self, z, goal))
    }
}

fn policy_action<W: World>(
    policy: &Policy,
    world: &W,
    z: &[f32],
    goal: Option<[f32; 2]>,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f32>, WorldError> {
    let half = world.action_half();
    match policy {
        Policy::UniformRandom => Ok((0..world.d_a()).map(|_| rng.gen_range(-half..=half)).collect()),
        Policy::GoalSeeking { gain, noise } => {
            let goal = goal.ok_or(WorldError::UnsupportedPolicy("goal-seeking"))?;
            let mut a = vec![
                gain * (goal[0] - z[0]) + noise * half * rng.gen_range(-1.0f32..1.0),
                gain * (goal[1] - z[1]) + noise * half * rng.gen_range(-1.0f32..1.0),
            ];
            for v in &mut a {
                *v = v.clamp(-half, half);
            }
            Ok(a)
        }
    }
}

/// Rolls out `n_traj` episodes of `t_steps` each. Every trajectory draws
/// from its own seed stream derived from `(seed, index)`, so generation
/// order (or a future parallel implementation) cannot change the bytes.
pub fn generate_dataset<W: World>(
    world: &W,
    policy: Policy,
    n_traj: usize,
    t_steps: usize,
    seed: u64,
    with_renders: bool,
) -> Result<TrajectoryBatch, WorldError> {
    let (d_x, d_p, d_a, d_true) = (world.d_x(), world.d_p(), world.d_a(), world.d_latent());
    let n_steps = n_traj * t_steps;
    let px = RENDER_SIDE * RENDER_SIDE;
    let mut batch = TrajectoryBatch {
        d_x,
        d_p,
        d_a,
        d_true,
        n_steps,
        episode_starts: (0..n_traj).map(|i| i * t_steps).collect(),
        embeddings: Vec::with_capacity(n_steps * d_x),
        proprio: Vec::with_capacity(n_steps * d_p),
        actions: Vec::with_capacity(n_steps * d_a),
        renders: with_renders.then(|| Vec::with_capacity(n_steps * px)),
        true_latents: Some(Vec::with_capacity(n_steps * d_true)),
    };
    for i in 0..n_traj {
        let mut r = rng::indexed_stream(seed, tags::TRAJECTORY, i as u64);
        let mut z = world.init_latent(&mut r);
        let goal = world.sample_goal(&mut r);
        for _ in 0..t_steps {
            batch.embeddings.extend(world.emit(&z, &mut r));
            batch.proprio.extend(world.proprio(&z));
            batch.true_latents.as_mut().unwrap().extend_from_slice(&z);
            if let Some(buf) = batch.renders.as_mut() {
                let img = world
                    .render(&z, goal.unwrap_or([0.0, 0.0]))
                    .ok_or(WorldError::UnsupportedPolicy("renders"))?;
                buf.extend(img);
            }
            let a = policy_action(&policy, world, &z, goal, &mut r)?;
            batch.actions.extend_from_slice(&a);
            z = world.step(&z, &a, &mut r)?;
        }
    }
    Ok(batch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthworld::nav::NavConfig;
    use crate::synthworld::WorldConfig;

    #[test]
    fn same_seed_reproduces_bytes() {
        let w = WorldSpec::new(WorldConfig::default());
        let a = generate_dataset(&w, Policy::UniformRandom, 3, 10, 42, false).unwrap();
        let b = generate_dataset(&w, Policy::UniformRandom, 3, 10, 42, false).unwrap();
        assert_eq!(a, b);
        let c = generate_dataset(&w, Policy::UniformRandom, 3, 10, 43, false).unwrap();
        assert_ne!(a.embeddings, c.embeddings);
    }

    #[test]
    fn layout_and_boundaries_are_consistent() {
        let w = WorldSpec::new(WorldConfig::default());
        let b = generate_dataset(&w, Policy::UniformRandom, 4, 7, 1, false).unwrap();
        assert_eq!(b.n_steps, 28);
        assert_eq!(b.episode_starts, vec![0, 7, 14, 21]);
        assert_eq!(b.embeddings.len(), 28 * b.d_x);
        assert_eq!(b.proprio.len(), 28 * b.d_p);
        assert_eq!(b.actions.len(), 28 * b.d_a);
        assert_eq!(b.true_latents.as_ref().unwrap().len(), 28 * b.d_true);
        assert_eq!(b.episode_range(3), (21, 28));
        let (train, eval) = b.split_episodes(0.25);
        assert_eq!(train.len(), 3);
        assert_eq!(eval, vec![(21, 28)]);
    }

    /// Monte-Carlo: a uniform policy visits every orthant of the action box.
    #[test]
    fn uniform_policy_covers_action_box() {
        let w = WorldSpec::new(WorldConfig::default());
        let b = generate_dataset(&w, Policy::UniformRandom, 100, 25, 7, false).unwrap();
        let mut seen = [false; 4];
        let mut near_corner = false;
        for t in 0..b.n_steps {
            let a = b.action(t);
            let orthant = (a[0] > 0.0) as usize * 2 + (a[1] > 0.0) as usize;
            seen[orthant] = true;
            near_corner |= a[0].abs() > 0.9 && a[1].abs() > 0.9;
        }
        assert!(seen.iter().all(|s| *s) && near_corner);
    }

    #[test]
    fn goal_seeking_on_generic_world_is_rejected() {
        let w = WorldSpec::new(WorldConfig::default());
        let err = generate_dataset(
            &w,
            Policy::GoalSeeking { gain: 1.0, noise: 0.3 },
            1,
            5,
            0,
            false,
        )
        .unwrap_err();
        assert!(matches!(err, WorldError::UnsupportedPolicy(_)));
    }

    #[test]
    fn goal_seeking_nav_approaches_goal() {
        let mut cfg = NavConfig::default();
        cfg.noise_dyn = 0.0;
        let env = NavEnv::new(cfg);
        let b = generate_dataset(
            &env,
            Policy::GoalSeeking { gain: 1.0, noise: 0.2 },
            20,
            30,
            3,
            true,
        )
        .unwrap();
        // Final positions should on average be much closer to the goal than
        // initial ones. Goals are not stored, so check contraction of motion:
        // displacement over the first 5 steps exceeds that over the last 5.
        let mut early = 0.0f32;
        let mut late = 0.0f32;
        for e in 0..b.n_episodes() {
            let (s, t) = b.episode_range(e);
            let p = |i: usize| b.true_latent(i).unwrap();
            early += (p(s + 5)[0] - p(s)[0]).hypot(p(s + 5)[1] - p(s)[1]);
            late += (p(t - 1)[0] - p(t - 6)[0]).hypot(p(t - 1)[1] - p(t - 6)[1]);
        }
        assert!(late < early, "late {late} early {early}");
        assert_eq!(b.renders.as_ref().unwrap().len(), b.n_steps * 256);
    }
}
