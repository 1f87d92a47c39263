//! Cross-entropy-method planning and the receding-horizon control loop.
//!
//! `plan_cem` fits a diagonal Gaussian over flattened action sequences to
//! the elite fraction of sampled candidates. The previous iteration's full
//! elite set is re-injected into every new population, which makes the
//! elite-mean cost provably non-increasing across iterations — the
//! invariant `PlanResult::elite_trace` is tested against.
//!
//! Candidate sampling uses one derived RNG stream per (iteration,
//! candidate) pair, so population evaluation could be farmed out to
//! parallel workers and still reproduce the serial result bit for bit.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::datastore::StandardizationStats;
use serde::{Deserialize, Serialize};

use crate::model::TcwmModel;
use crate::numerics::rng::{self, tags};
use crate::synthworld::nav::NavEnv;

use super::{cost, PlanError, Result, RolloutModel};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CemConfig {
    /// Population size per iteration (including re-injected elites).
    pub population: usize,
    /// Elite count K.
    pub elites: usize,
    pub iterations: usize,
    /// Planning horizon: length of each candidate action sequence.
    pub plan_horizon: usize,
    /// How many leading actions of the winning plan to execute.
    pub execute_horizon: usize,
    /// Per-dimension action bound; candidates are clamped into
    /// `[-action_half, action_half]`.
    pub action_half: f32,
    /// Lower bound on the per-dimension sampling std.
    pub std_floor: f32,
    /// If every dimension sits at the floor before half the iterations are
    /// done, the std is re-inflated to this value.
    pub reinflate_std: f32,
    pub seed: u64,
}

impl Default for CemConfig {
    fn default() -> Self {
        Self {
            population: 256,
            elites: 32,
            iterations: 10,
            plan_horizon: 5,
            execute_horizon: 1,
            action_half: 1.0,
            std_floor: 1e-6,
            reinflate_std: 0.1,
            seed: 0,
        }
    }
}

impl CemConfig {
    fn validate(&self) -> Result<()> {
        if self.elites == 0 || self.elites > self.population {
            return Err(PlanError::Config(format!(
                "elites = {} must be in 1..={}",
                self.elites, self.population
            )));
        }
        if self.execute_horizon == 0 || self.execute_horizon > self.plan_horizon {
            return Err(PlanError::Config(format!(
                "execute_horizon = {} must be in 1..={}",
                self.execute_horizon, self.plan_horizon
            )));
        }
        if self.iterations == 0 {
            return Err(PlanError::Config("iterations must be positive".into()));
        }
        if !(self.action_half > 0.0) {
            return Err(PlanError::Config("action_half must be positive".into()));
        }
        Ok(())
    }
}

/// Outcome of one `plan_cem` call.
#[derive(Debug, Clone)]
pub struct PlanResult {
    /// Flattened best action sequence, `plan_horizon x d_a`, the
    /// lowest-cost candidate ever evaluated.
    pub actions: Vec<f32>,
    pub cost: f64,
    /// Mean elite cost per iteration; non-increasing by construction.
    pub elite_trace: Vec<f64>,
    /// Number of leading actions to execute (`execute_horizon`).
    pub execute_steps: usize,
}

/// Open-loop rollout: iterates the model's one-step prediction over an
/// action sequence and returns every predicted latent. The history window
/// is bootstrapped by repeating `z0` and zero-padding past actions.
pub fn rollout<M: RolloutModel>(model: &M, z0: &[f32], actions: &[f32]) -> Result<Vec<Vec<f32>>> {
    let (d, d_a, h) = (model.d_latent(), model.d_action(), model.horizon());
    if z0.len() != d {
        return Err(PlanError::Config(format!(
            "rollout start latent has {} dims, model expects {d}",
            z0.len()
        )));
    }
    if actions.len() % d_a != 0 {
        return Err(PlanError::Config(format!(
            "action sequence length {} is not a multiple of d_a = {d_a}",
            actions.len()
        )));
    }
    let n = actions.len() / d_a;
    let a0 = (h + 1) * d;
    let mut window = vec![0.0f32; (h + 1) * (d + d_a)];
    for j in 0..=h {
        window[j * d..(j + 1) * d].copy_from_slice(z0);
    }
    let mut out = Vec::with_capacity(n);
    for step in 0..n {
        window[a0 + h * d_a..a0 + (h + 1) * d_a]
            .copy_from_slice(&actions[step * d_a..(step + 1) * d_a]);
        let z = model.predict_window(&window)?;
        window.copy_within(d..(h + 1) * d, 0);
        window[h * d..(h + 1) * d].copy_from_slice(&z);
        window.copy_within(a0 + d_a..a0 + (h + 1) * d_a, a0);
        out.push(z);
    }
    Ok(out)
}

/// Cost of an action sequence: squared distance of the final predicted
/// latent to the goal. An empty sequence is scored from `z0` itself.
fn sequence_cost<M: RolloutModel>(
    model: &M,
    z0: &[f32],
    z_goal: &[f32],
    actions: &[f32],
) -> Result<f64> {
    let latents = rollout(model, z0, actions)?;
    Ok(match latents.last() {
        Some(z) => cost(z, z_goal),
        None => cost(z0, z_goal),
    })
}

/// Cross-entropy-method planning toward a goal latent.
///
/// Each iteration draws fresh candidates from the current diagonal
/// Gaussian (clamped into the action box), re-injects the previous elite
/// set, scores everything by terminal goal distance, and refits mean and
/// std to the K cheapest candidates (ties broken by lower candidate
/// index). Candidates with non-finite costs are discarded; if an entire
/// population is discarded the planner errors out.
pub fn plan_cem<M: RolloutModel>(
    model: &M,
    z0: &[f32],
    z_goal: &[f32],
    cfg: &CemConfig,
) -> Result<PlanResult> {
    cfg.validate()?;
    let d = model.d_latent();
    if z0.len() != d || z_goal.len() != d {
        return Err(PlanError::Config(format!(
            "latents have dims {} and {}, model expects {d}",
            z0.len(),
            z_goal.len()
        )));
    }
    let d_a = model.d_action();
    let len = cfg.plan_horizon * d_a;
    let mut mean = vec![0.0f32; len];
    let mut std = vec![cfg.action_half; len];
    // (cost, actions) of the current elite set, best first.
    let mut elites: Vec<(f64, Vec<f32>)> = Vec::new();
    let mut best: Option<(f64, Vec<f32>)> = None;
    let mut trace = Vec::with_capacity(cfg.iterations);

    for it in 0..cfg.iterations {
        // Population: carried-over elites first (their costs are already
        // known and the rollout is deterministic), then fresh samples from
        // per-candidate streams.
        let mut scored: Vec<(f64, usize, Vec<f32>)> = elites
            .iter()
            .enumerate()
            .map(|(i, (c, a))| (*c, i, a.clone()))
            .collect();
        for c in elites.len()..cfg.population {
            let mut r = rng::indexed_stream(cfg.seed, tags::PLANNER, (it * cfg.population + c) as u64);
            let actions: Vec<f32> = (0..len)
                .map(|i| {
                    let n: f32 = r.sample(StandardNormal);
                    (mean[i] + std[i] * n).clamp(-cfg.action_half, cfg.action_half)
                })
                .collect();
            let cost = sequence_cost(model, z0, z_goal, &actions)?;
            if cost.is_finite() {
                scored.push((cost, c, actions));
            }
        }
        if scored.is_empty() {
            return Err(PlanError::AllCandidatesDiscarded);
        }
        scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        scored.truncate(cfg.elites);
        elites = scored.into_iter().map(|(c, _, a)| (c, a)).collect();
        let k = elites.len();
        trace.push(elites.iter().map(|(c, _)| *c).sum::<f64>() / k as f64);
        if best.as_ref().map_or(true, |(bc, _)| elites[0].0 < *bc) {
            best = Some(elites[0].clone());
        }
        // Refit the diagonal Gaussian to the elites.
        for i in 0..len {
            let m = elites.iter().map(|(_, a)| a[i] as f64).sum::<f64>() / k as f64;
            let v = elites
                .iter()
                .map(|(_, a)| (a[i] as f64 - m).powi(2))
                .sum::<f64>()
                / k as f64;
            mean[i] = m as f32;
            std[i] = (v.sqrt() as f32).max(cfg.std_floor);
        }
        // A fully collapsed distribution early on gets one more chance.
        if it + 1 < cfg.iterations / 2 && std.iter().all(|s| *s <= cfg.std_floor) {
            std.iter_mut().for_each(|s| *s = cfg.reinflate_std);
        }
    }
    let (cost, actions) = best.expect("at least one iteration ran");
    Ok(PlanResult {
        actions,
        cost,
        elite_trace: trace,
        execute_steps: cfg.execute_horizon,
    })
}

/// Closed-loop episode configuration shared by the MPC and baseline
/// controllers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MpcConfig {
    /// Environment-step budget per episode.
    pub max_steps: usize,
    pub seed: u64,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self { max_steps: 50, seed: 0 }
    }
}

/// One controller step for the episode log.
#[derive(Debug, Clone)]
pub struct StepLog {
    /// Environment steps taken before this replan.
    pub step: usize,
    /// True agent position at replan time.
    pub position: [f32; 2],
    /// Best planned cost (NaN for the random controller, which plans
    /// nothing).
    pub planned_cost: f64,
}

#[derive(Debug, Clone)]
pub struct EpisodeOutcome {
    pub success: bool,
    /// Environment steps executed before success or budget exhaustion.
    pub steps: usize,
    pub final_distance: f32,
    pub log: Vec<StepLog>,
}

/// Initial state and goal for episode `idx`, shared between controllers so
/// comparisons are paired.
fn episode_setup(env: &NavEnv, seed: u64, idx: u64) -> (Vec<f32>, [f32; 2], ChaCha8Rng) {
    let mut ep_rng = rng::indexed_stream(seed, tags::EPISODE, idx);
    let z0 = env.init_latent(&mut ep_rng);
    let goal = env.sample_goal(&mut ep_rng);
    (z0, goal, ep_rng)
}

fn distance(pos: &[f32], goal: [f32; 2]) -> f32 {
    ((pos[0] - goal[0]).powi(2) + (pos[1] - goal[1]).powi(2)).sqrt()
}

/// Receding-horizon control of one navigation episode: encode the current
/// observation, plan with CEM toward the encoded goal observation, execute
/// the first `execute_horizon` actions, replan. Succeeds as soon as the
/// true position is within the environment's goal tolerance (checked
/// before the first action, so starting on the goal succeeds in 0 steps).
///
/// The goal observation is emitted once, from the goal position paired
/// with the episode's initial distractor state.
pub fn mpc_episode(
    env: &NavEnv,
    model: &TcwmModel,
    stats: &StandardizationStats,
    cem: &CemConfig,
    mpc: &MpcConfig,
    episode: u64,
) -> Result<EpisodeOutcome> {
    let (mut z_true, goal, mut ep_rng) = episode_setup(env, mpc.seed, episode);
    let mut goal_latent = z_true.clone();
    goal_latent[0] = goal[0];
    goal_latent[1] = goal[1];
    let x_goal = env.emit_embedding(&goal_latent, &mut ep_rng);
    let s_goal = stats.apply_vec(&env.proprio_of(&goal_latent));
    let z_goal = model.encode_obs(&x_goal, &s_goal)?.z;

    let plan_root = rng::derive_seed(mpc.seed, tags::PLANNER.wrapping_add(episode));
    let mut steps = 0usize;
    let mut log = Vec::new();
    let mut replan = 0u64;
    let mut success = false;
    loop {
        let pos = env.proprio_of(&z_true);
        if env.at_goal(&pos, goal) {
            success = true;
            break;
        }
        if steps >= mpc.max_steps {
            break;
        }
        let x = env.emit_embedding(&z_true, &mut ep_rng);
        let s = stats.apply_vec(&env.proprio_of(&z_true));
        let z = model.encode_obs(&x, &s)?.z;
        let cem_run = CemConfig { seed: rng::derive_seed(plan_root, replan), ..cem.clone() };
        replan += 1;
        let plan = plan_cem(model, &z, &z_goal, &cem_run)?;
        log.push(StepLog { step: steps, position: [pos[0], pos[1]], planned_cost: plan.cost });
        let d_a = model.cfg.d_a;
        let half = env.cfg.action_half;
        for a in plan.actions.chunks(d_a).take(plan.execute_steps) {
            let legal: Vec<f32> = a.iter().map(|v| v.clamp(-half, half)).collect();
            z_true = env.step(&z_true, &legal, &mut ep_rng)?;
            steps += 1;
            if env.at_goal(&env.proprio_of(&z_true), goal) || steps >= mpc.max_steps {
                break;
            }
        }
    }
    let final_distance = distance(&env.proprio_of(&z_true), goal);
    Ok(EpisodeOutcome { success, steps, final_distance, log })
}

/// Uniform-random controller over the same episode protocol; the baseline
/// for closed-loop comparisons.
pub fn random_episode(env: &NavEnv, mpc: &MpcConfig, episode: u64) -> Result<EpisodeOutcome> {
    let (mut z_true, goal, mut ep_rng) = episode_setup(env, mpc.seed, episode);
    let mut act_rng = rng::indexed_stream(
        rng::derive_seed(mpc.seed, tags::PLANNER.wrapping_add(episode)),
        tags::PLANNER,
        0,
    );
    let half = env.cfg.action_half;
    let mut steps = 0usize;
    let mut log = Vec::new();
    let mut success = false;
    loop {
        let pos = env.proprio_of(&z_true);
        if env.at_goal(&pos, goal) {
            success = true;
            break;
        }
        if steps >= mpc.max_steps {
            break;
        }
        log.push(StepLog { step: steps, position: [pos[0], pos[1]], planned_cost: f64::NAN });
        let a: Vec<f32> = (0..2).map(|_| act_rng.gen_range(-half..=half)).collect();
        z_true = env.step(&z_true, &a, &mut ep_rng)?;
        steps += 1;
    }
    let final_distance = distance(&env.proprio_of(&z_true), goal);
    Ok(EpisodeOutcome { success, steps, final_distance, log })
}
