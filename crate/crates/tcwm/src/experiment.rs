//! End-to-end experiment flows behind the `tcwm` binary.
//!
//! Each `run_*` function is one subcommand: it validates its inputs, does
//! the work, and writes every artifact under the directory it was given —
//! nothing is written anywhere else. Artifacts are deterministic: the pair
//! (config, seed) fixes every emitted byte, because all randomness flows
//! from the config's global seed and JSON/CSV serialization is canonical.
//!
//! Layout conventions:
//! - `gen`    writes `<out>/dataset/` (raw f32 arrays + metadata).
//! - `train`  writes `<out>/model/` (checkpoint, standardization stats,
//!   the resolved config snapshot, loss history as JSON and CSV).
//! - `probe`  writes `probe_report.{json,csv}`: ridge probes, effective
//!   rank, open-loop rollout error, and affine recovery of the task block.
//! - `verify` writes `assumption_report.{json,csv}`: decoder sensitivity,
//!   distance correlation, and task/context probe efficiency.
//! - `plan`   writes `plan_report.json` + per-step `episodes.csv`.
//! - `ablate` retrains under a preset overlay and writes a comparison
//!   table next to the per-variant artifacts.
//!
//! A trained model directory is self-describing: `probe`, `verify`, and
//! `plan` read the snapshot stored at training time instead of taking a
//! config of their own, so a report can never mix settings from two runs.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::config::{ConfigError, ExperimentConfig, PlannerKind, WorldKind};
use crate::datastore::{
    self, load_dataset, save_dataset, DatasetMeta, StandardizationStats, StoreError,
};
use crate::evaluation::{
    affine_recovery, check_a1, check_a2, check_a4, collapse_metrics, linear_probe, rollout_mse,
    A1Result, A2Result, A4Result, AffineFit, BlockLabel, CollapseMetrics, EvalError, ProbeResult,
};
use crate::model::{LatentKind, ModelConfig, ModelError, TcwmModel};
use crate::planning::{
    build_ldp_data, ldp_episode, mpc_episode, random_episode, train_ldp, EpisodeOutcome,
    NoiseSchedule, PlanError,
};
use crate::synthworld::nav::NavEnv;
use crate::synthworld::{generate_dataset, TrajectoryBatch, WorldError, WorldSpec};
use crate::training::{train, TrainError, TrainReport};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{path}: {msg}")]
    Artifact { path: PathBuf, msg: String },
}

impl ExperimentError {
    /// Process exit code: 1 for input validation failures, 2 for failures
    /// while the experiment is running.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Config(_) => 1,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, ExperimentError>;

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| ExperimentError::Artifact {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    bytes.push(b'\n');
    Ok(datastore::atomic_write(path, &bytes)?)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| ExperimentError::Artifact {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    serde_json::from_slice(&bytes).map_err(|e| ExperimentError::Artifact {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    Ok(datastore::atomic_write(path, text.as_bytes())?)
}

/// CSV cell for an optional statistic; `nan` marks "not computed".
fn csv_num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.6e}")
    } else {
        "nan".to_string()
    }
}

// ---------------------------------------------------------------------------
// gen
// ---------------------------------------------------------------------------

/// Generates the offline dataset described by `cfg` under `<out>/dataset`.
pub fn run_gen(cfg: &ExperimentConfig, out: &Path) -> Result<PathBuf> {
    let d = &cfg.data;
    let batch = match cfg.world_kind {
        WorldKind::Generic => {
            let world = WorldSpec::new(cfg.world.clone());
            generate_dataset(&world, d.policy, d.n_episodes, d.t_steps, cfg.seed, d.with_renders)?
        }
        WorldKind::Nav => {
            let env = NavEnv::new(cfg.nav.clone());
            generate_dataset(&env, d.policy, d.n_episodes, d.t_steps, cfg.seed, d.with_renders)?
        }
    };
    let dir = out.join("dataset");
    save_dataset(&batch, &dir, cfg.seed, cfg.to_value())?;
    log::info!(
        "generated {} episodes x {} steps ({} world) -> {}",
        d.n_episodes,
        d.t_steps,
        cfg.world_kind,
        dir.display()
    );
    Ok(dir)
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

/// The model's input widths always come from the dataset it is trained on;
/// a config cannot disagree with the data.
fn model_config_for(cfg: &ExperimentConfig, batch: &TrajectoryBatch) -> ModelConfig {
    let mut m = cfg.model.clone();
    m.d_x = batch.d_x;
    m.d_p = batch.d_p;
    m.d_a = batch.d_a;
    m
}

/// Trains a model on the dataset in `data_dir` and writes the checkpoint
/// directory `<out>/model`. Returns the checkpoint path and loss history.
pub fn run_train(cfg: &ExperimentConfig, data_dir: &Path, out: &Path) -> Result<(PathBuf, TrainReport)> {
    let (batch, _meta) = load_dataset(data_dir)?;
    if cfg.training.train_visual_decoder && batch.renders.is_none() {
        return Err(ConfigError::Invalid(format!(
            "train_visual_decoder is set but the dataset in {} has no renders",
            data_dir.display()
        ))
        .into());
    }
    let mut model = TcwmModel::new(model_config_for(cfg, &batch))?;
    let (report, stats) = train(&mut model, &batch, &cfg.training)?;
    let dir = out.join("model");
    fs::create_dir_all(&dir).map_err(|e| ExperimentError::Artifact {
        path: dir.clone(),
        msg: e.to_string(),
    })?;
    model.save(&dir)?;
    write_json(&dir.join("stats.json"), &stats)?;
    write_json(&dir.join("config.json"), &cfg.to_value())?;
    write_json(&dir.join("train_report.json"), &report)?;
    write_text(&dir.join("losses.csv"), &report.to_csv())?;
    log::info!(
        "trained {} for {} epochs (final eval total {:.4}) -> {}",
        cfg.training.mode.as_str(),
        cfg.training.epochs,
        report.final_eval.total,
        dir.display()
    );
    Ok((dir, report))
}

/// A checkpoint directory reloaded with everything needed to use it.
pub struct LoadedModel {
    pub model: TcwmModel,
    pub stats: StandardizationStats,
    pub config: ExperimentConfig,
}

/// Loads a directory written by [`run_train`]: weights, standardization
/// statistics, and the resolved config snapshot.
pub fn load_model_dir(dir: &Path) -> Result<LoadedModel> {
    let model = TcwmModel::load(dir)?;
    let stats: StandardizationStats = read_json(&dir.join("stats.json"))?;
    let mut config: ExperimentConfig = read_json(&dir.join("config.json"))?;
    config.resolve()?;
    Ok(LoadedModel { model, stats, config })
}

fn check_dims(model: &TcwmModel, batch: &TrajectoryBatch, data_dir: &Path) -> Result<()> {
    let m = &model.cfg;
    if m.d_x != batch.d_x || m.d_p != batch.d_p || m.d_a != batch.d_a {
        return Err(ConfigError::Invalid(format!(
            "model expects (d_x, d_p, d_a) = ({}, {}, {}) but the dataset in {} has ({}, {}, {})",
            m.d_x,
            m.d_p,
            m.d_a,
            data_dir.display(),
            batch.d_x,
            batch.d_p,
            batch.d_a
        ))
        .into())
    } else {
        Ok(())
    }
}

/// Encodes every dataset row; returns the flat `n x d_latent` matrix.
fn encode_all(
    model: &TcwmModel,
    stats: &StandardizationStats,
    batch: &TrajectoryBatch,
) -> Result<Vec<f32>> {
    let d = model.cfg.d_latent();
    let mut out = Vec::with_capacity(batch.n_steps * d);
    let mut s_std = vec![0.0f32; batch.d_p];
    for t in 0..batch.n_steps {
        stats.apply(batch.proprio_row(t), &mut s_std);
        let state = model.encode_obs(batch.embedding(t), &s_std)?;
        out.extend_from_slice(&state.z);
    }
    Ok(out)
}

fn standardized_proprio(stats: &StandardizationStats, batch: &TrajectoryBatch) -> Vec<f32> {
    let mut out = vec![0.0f32; batch.n_steps * batch.d_p];
    for t in 0..batch.n_steps {
        stats.apply(batch.proprio_row(t), &mut out[t * batch.d_p..(t + 1) * batch.d_p]);
    }
    out
}

// ---------------------------------------------------------------------------
// probe
// ---------------------------------------------------------------------------

/// Representation-quality report for one (model, dataset) pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeReport {
    pub n_rows: usize,
    pub d_latent: usize,
    /// Ridge probes against the ground-truth state (when the dataset
    /// carries it): the full latent, and optionally the raw joint
    /// embedding as a baseline.
    pub state_probes: Vec<ProbeResult>,
    /// Task/context-block probes against standardized proprioception.
    pub a4: A4Result,
    pub collapse: CollapseMetrics,
    /// Variance-normalized open-loop prediction error per rollout step.
    pub rollout_mse: Vec<f64>,
    /// Affine fit of the task block onto the true task state (when the
    /// dataset records it and names its width).
    pub affine: Option<AffineFit>,
}

impl ProbeReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("quantity,label,value\n");
        for p in &self.state_probes {
            let label = serde_json::to_value(p.label).unwrap();
            let label = label.as_str().unwrap().to_string();
            out.push_str(&format!("state_probe_r2_mean,{label},{}\n", csv_num(p.r2_mean)));
            out.push_str(&format!("state_probe_r2_std,{label},{}\n", csv_num(p.r2_std)));
        }
        out.push_str(&format!("a4_task_r2,task-block,{}\n", csv_num(self.a4.task.r2_mean)));
        out.push_str(&format!(
            "a4_context_r2,context-block,{}\n",
            csv_num(self.a4.context.r2_mean)
        ));
        out.push_str(&format!("a4_task_efficiency,task-block,{}\n", csv_num(self.a4.task_efficiency)));
        out.push_str(&format!(
            "a4_context_efficiency,context-block,{}\n",
            csv_num(self.a4.context_efficiency)
        ));
        out.push_str(&format!("effective_rank,,{}\n", csv_num(self.collapse.effective_rank)));
        for (k, v) in self.rollout_mse.iter().enumerate() {
            out.push_str(&format!("rollout_mse,step-{},{}\n", k + 1, csv_num(*v)));
        }
        if let Some(fit) = &self.affine {
            out.push_str(&format!("affine_r2,task-block,{}\n", csv_num(fit.r2)));
            out.push_str(&format!(
                "affine_ridge_fallback,task-block,{}\n",
                u8::from(fit.ridge_fallback)
            ));
        }
        out
    }
}

/// Width of the true task block recorded in a dataset's config snapshot,
/// when the dataset was generated by this crate.
fn true_task_width(meta: &DatasetMeta) -> Option<usize> {
    let snap = &meta.config_snapshot;
    match snap.get("world_kind")?.as_str()? {
        "generic" => snap.get("world")?.get("d_s")?.as_u64().map(|v| v as usize),
        "nav" => Some(2),
        _ => None,
    }
}

/// Probes a trained model on a dataset and writes
/// `<out>/probe_report.{json,csv}`.
pub fn run_probe(model_dir: &Path, data_dir: &Path, out: &Path) -> Result<ProbeReport> {
    let LoadedModel { model, stats, config } = load_model_dir(model_dir)?;
    let (batch, meta) = load_dataset(data_dir)?;
    check_dims(&model, &batch, data_dir)?;
    let eval = &config.eval;

    let latents = encode_all(&model, &stats, &batch)?;
    let d = model.cfg.d_latent();
    let n = batch.n_steps;

    let mut state_probes = Vec::new();
    let mut affine = None;
    if let Some(true_state) = &batch.true_latents {
        state_probes.push(linear_probe(
            &latents,
            true_state,
            n,
            eval.probe_folds,
            eval.probe_alpha,
            BlockLabel::FullLatent,
        )?);
        if eval.probe_raw_embedding {
            let mut joint = Vec::with_capacity(n * model.cfg.d_joint());
            let mut s_std = vec![0.0f32; batch.d_p];
            for t in 0..n {
                stats.apply(batch.proprio_row(t), &mut s_std);
                joint.extend_from_slice(&model.embed_joint(batch.embedding(t), &s_std)?);
            }
            state_probes.push(linear_probe(
                &joint,
                true_state,
                n,
                eval.probe_folds,
                eval.probe_alpha,
                BlockLabel::RawEmbedding,
            )?);
        }
        if let Some(w) = true_task_width(&meta) {
            let d_true = batch.d_true;
            let d_s = model.cfg.d_s.min(d);
            let mut est = Vec::with_capacity(n * d_s);
            let mut truth = Vec::with_capacity(n * w);
            for t in 0..n {
                est.extend_from_slice(&latents[t * d..t * d + d_s]);
                truth.extend_from_slice(&true_state[t * d_true..t * d_true + w]);
            }
            affine = Some(affine_recovery(&est, &truth, n)?);
        }
    }

    let proprio_std = standardized_proprio(&stats, &batch);
    let a4 = check_a4(&latents, n, model.cfg.d_s, &proprio_std, eval.probe_folds, eval.probe_alpha)?;
    let collapse = collapse_metrics(&latents, n, d)?;
    let curve = rollout_mse(&model, &stats, &batch, eval.rollout_horizon)?;

    let report = ProbeReport {
        n_rows: n,
        d_latent: d,
        state_probes,
        a4,
        collapse,
        rollout_mse: curve,
        affine,
    };
    fs::create_dir_all(out).map_err(|e| ExperimentError::Artifact {
        path: out.to_path_buf(),
        msg: e.to_string(),
    })?;
    write_json(&out.join("probe_report.json"), &report)?;
    write_text(&out.join("probe_report.csv"), &report.to_csv())?;
    log::info!(
        "probe: task R2 {:.3}, effective rank {:.2} -> {}",
        report.a4.task.r2_mean,
        report.collapse.effective_rank,
        out.display()
    );
    Ok(report)
}

// ---------------------------------------------------------------------------
// verify
// ---------------------------------------------------------------------------

/// Empirical checks of the working assumptions behind affine recovery:
/// decoder sensitivity (A1), latent/embedding distance correlation (A2),
/// and proprio-alignment efficiency of the task block (A4).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub a1: Option<A1Result>,
    /// The A1 concentration gate (bounded away from zero, spread within
    /// two orders of magnitude), when A1 ran.
    pub a1_pass: Option<bool>,
    pub a2: Option<A2Result>,
    pub a4: Option<A4Result>,
}

impl AssumptionReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("quantity,value\n");
        if let Some(a1) = &self.a1 {
            out.push_str(&format!("a1_p5,{}\n", csv_num(a1.p5)));
            out.push_str(&format!("a1_p50,{}\n", csv_num(a1.p50)));
            out.push_str(&format!("a1_p95,{}\n", csv_num(a1.p95)));
            out.push_str(&format!("a1_pass,{}\n", u8::from(a1.passes())));
        }
        if let Some(a2) = &self.a2 {
            out.push_str(&format!("a2_spearman,{}\n", csv_num(a2.spearman.unwrap_or(f64::NAN))));
            out.push_str(&format!("a2_pearson,{}\n", csv_num(a2.pearson.unwrap_or(f64::NAN))));
            out.push_str(&format!("a2_degenerate_pairs,{}\n", a2.degenerate_pairs));
        }
        if let Some(a4) = &self.a4 {
            out.push_str(&format!("a4_task_r2,{}\n", csv_num(a4.task.r2_mean)));
            out.push_str(&format!("a4_context_r2,{}\n", csv_num(a4.context.r2_mean)));
            out.push_str(&format!("a4_task_efficiency,{}\n", csv_num(a4.task_efficiency)));
            out.push_str(&format!("a4_context_efficiency,{}\n", csv_num(a4.context_efficiency)));
        }
        out
    }
}

/// Runs the enabled assumption checks and writes
/// `<out>/assumption_report.{json,csv}`.
pub fn run_verify(model_dir: &Path, data_dir: &Path, out: &Path) -> Result<AssumptionReport> {
    let LoadedModel { model, stats, config } = load_model_dir(model_dir)?;
    let (batch, _meta) = load_dataset(data_dir)?;
    check_dims(&model, &batch, data_dir)?;
    let eval = &config.eval;

    let latents = encode_all(&model, &stats, &batch)?;
    let d = model.cfg.d_latent();
    let n = batch.n_steps;

    // The sensitivity check probes the embedding decoder, which the
    // direct-embedding ablation does not have.
    let a1 = if eval.run_a1 && model.cfg.latent == LatentKind::Projected {
        Some(check_a1(
            |z| Ok(model.decode_embedding(z)?),
            &latents,
            d,
            eval.a1_pairs,
            eval.a1_delta,
            config.seed,
        )?)
    } else {
        None
    };
    let a2 = if eval.run_a2 {
        Some(check_a2(&latents, d, &batch.embeddings, batch.d_x, eval.a2_pairs, config.seed)?)
    } else {
        None
    };
    let a4 = if eval.run_a4 {
        let proprio_std = standardized_proprio(&stats, &batch);
        Some(check_a4(&latents, n, model.cfg.d_s, &proprio_std, eval.probe_folds, eval.probe_alpha)?)
    } else {
        None
    };

    let report = AssumptionReport {
        a1_pass: a1.as_ref().map(A1Result::passes),
        a1,
        a2,
        a4,
    };
    fs::create_dir_all(out).map_err(|e| ExperimentError::Artifact {
        path: out.to_path_buf(),
        msg: e.to_string(),
    })?;
    write_json(&out.join("assumption_report.json"), &report)?;
    write_text(&out.join("assumption_report.csv"), &report.to_csv())?;
    log::info!(
        "verify: a1 pass {:?}, a2 spearman {:?} -> {}",
        report.a1_pass,
        report.a2.as_ref().and_then(|a| a.spearman),
        out.display()
    );
    Ok(report)
}

// ---------------------------------------------------------------------------
// plan
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub episode: u64,
    pub success: bool,
    pub steps: usize,
    pub final_distance: f32,
}

/// Closed-loop evaluation summary, paired with a random-action baseline on
/// the same episode seeds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlanReport {
    pub planner: PlannerKind,
    pub episodes: usize,
    pub success_rate: f64,
    pub random_success_rate: f64,
    /// Mean steps over successful planned episodes.
    pub mean_steps_to_goal: Option<f64>,
    pub rows: Vec<EpisodeRow>,
}

fn summarize(planner: PlannerKind, outcomes: &[EpisodeOutcome], random: &[EpisodeOutcome]) -> PlanReport {
    let n = outcomes.len();
    let successes = outcomes.iter().filter(|o| o.success).count();
    let steps: Vec<usize> = outcomes.iter().filter(|o| o.success).map(|o| o.steps).collect();
    PlanReport {
        planner,
        episodes: n,
        success_rate: successes as f64 / n as f64,
        random_success_rate: random.iter().filter(|o| o.success).count() as f64 / n as f64,
        mean_steps_to_goal: if steps.is_empty() {
            None
        } else {
            Some(steps.iter().sum::<usize>() as f64 / steps.len() as f64)
        },
        rows: outcomes
            .iter()
            .enumerate()
            .map(|(e, o)| EpisodeRow {
                episode: e as u64,
                success: o.success,
                steps: o.steps,
                final_distance: o.final_distance,
            })
            .collect(),
    }
}

fn episodes_csv(controller: &str, outcomes: &[EpisodeOutcome], out: &mut String) {
    for (e, o) in outcomes.iter().enumerate() {
        for l in &o.log {
            out.push_str(&format!(
                "{controller},{e},{},{},{},{},{}\n",
                l.step,
                csv_num(l.position[0] as f64),
                csv_num(l.position[1] as f64),
                csv_num(l.planned_cost),
                u8::from(o.success)
            ));
        }
    }
}

/// Runs paired closed-loop episodes (planned vs random actions) on the
/// navigation world the model was trained for, and writes
/// `<out>/plan_report.json` + `<out>/episodes.csv`.
///
/// `episodes` overrides the config's episode budget; `planner` overrides
/// its planner choice. The diffusion planner fits its trajectory denoiser
/// and inverse-dynamics net on the offline dataset first, so it needs
/// `data_dir`.
pub fn run_plan(
    model_dir: &Path,
    episodes: Option<usize>,
    planner: Option<PlannerKind>,
    data_dir: Option<&Path>,
    out: &Path,
) -> Result<PlanReport> {
    let LoadedModel { model, stats, config } = load_model_dir(model_dir)?;
    if config.world_kind != WorldKind::Nav {
        return Err(ConfigError::Invalid(
            "plan needs a model trained on the navigation world (world_kind = \"nav\")".into(),
        )
        .into());
    }
    let planner = planner.unwrap_or(config.planner);
    let episodes = episodes.unwrap_or(config.eval.episodes);
    if episodes == 0 {
        return Err(ConfigError::Invalid("plan needs at least one episode".into()).into());
    }
    let env = NavEnv::new(config.nav.clone());

    let mut outcomes = Vec::with_capacity(episodes);
    match planner {
        PlannerKind::Cem => {
            for e in 0..episodes as u64 {
                outcomes.push(mpc_episode(&env, &model, &stats, &config.cem, &config.mpc, e)?);
            }
        }
        PlannerKind::Ldp => {
            let data_dir = data_dir.ok_or_else(|| {
                ConfigError::Invalid(
                    "the diffusion planner trains on the offline dataset; pass --data".into(),
                )
            })?;
            let (batch, _meta) = load_dataset(data_dir)?;
            check_dims(&model, &batch, data_dir)?;
            let ldp = build_ldp_data(&model, &stats, &batch, config.diffusion.horizon)?;
            let (denoiser, idm) = train_ldp(&ldp, &config.diffusion)?;
            let schedule = NoiseSchedule::linear(
                config.diffusion.t_d,
                config.diffusion.beta_start,
                config.diffusion.beta_end,
            )?;
            let exec = config.cem.execute_horizon.min(config.diffusion.horizon);
            for e in 0..episodes as u64 {
                outcomes.push(ldp_episode(
                    &env, &model, &stats, &denoiser, &idm, &schedule, exec, &config.mpc, e,
                )?);
            }
        }
    }
    let random: Vec<EpisodeOutcome> = (0..episodes as u64)
        .map(|e| random_episode(&env, &config.mpc, e))
        .collect::<std::result::Result<_, _>>()?;

    let report = summarize(planner, &outcomes, &random);
    let mut csv = String::from("controller,episode,step,pos_x,pos_y,planned_cost,success\n");
    episodes_csv(&planner.to_string(), &outcomes, &mut csv);
    episodes_csv("random", &random, &mut csv);
    fs::create_dir_all(out).map_err(|e| ExperimentError::Artifact {
        path: out.to_path_buf(),
        msg: e.to_string(),
    })?;
    write_json(&out.join("plan_report.json"), &report)?;
    write_text(&out.join("episodes.csv"), &csv)?;
    log::info!(
        "plan ({planner}): success {:.0}% vs random {:.0}% over {episodes} episodes -> {}",
        100.0 * report.success_rate,
        100.0 * report.random_success_rate,
        out.display()
    );
    Ok(report)
}

// ---------------------------------------------------------------------------
// ablate
// ---------------------------------------------------------------------------

/// A named overlay shipped with the repository (under `configs/presets/`)
/// plus the sweep that varies the task-block width.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblatePreset {
    NoRec,
    NoAlign,
    DirectEmbedding,
    SplitSweep,
}

impl AblatePreset {
    pub const ALL: &'static [&'static str] =
        &["no-rec", "no-align", "direct-embedding", "split-sweep"];

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "no-rec" => Ok(Self::NoRec),
            "no-align" => Ok(Self::NoAlign),
            "direct-embedding" => Ok(Self::DirectEmbedding),
            "split-sweep" => Ok(Self::SplitSweep),
            _ => Err(ConfigError::Invalid(format!(
                "unknown preset {name:?}; expected one of {}",
                Self::ALL.join(", ")
            ))
            .into()),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Self::NoRec => "no-rec",
            Self::NoAlign => "no-align",
            Self::DirectEmbedding => "direct-embedding",
            Self::SplitSweep => "split-sweep",
        }
    }

    /// The overlay tree, compiled in from the in-repo preset file so the
    /// binary works from any directory. The sweep preset has no overlay:
    /// its sweep list is the ordinary `eval.split_sweep` config field.
    fn overlay(&self) -> Option<(String, Value)> {
        let text = match self {
            Self::NoRec => include_str!("../../../configs/presets/no-rec.json"),
            Self::NoAlign => include_str!("../../../configs/presets/no-align.json"),
            Self::DirectEmbedding => include_str!("../../../configs/presets/direct-embedding.json"),
            Self::SplitSweep => return None,
        };
        let name = format!("preset {}", self.label());
        let tree = crate::config::parse_str(&name, text).expect("in-repo presets parse");
        Some((name, tree))
    }
}

/// One trained variant in an ablation table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblateRow {
    pub label: String,
    pub mode: String,
    pub d_s: usize,
    /// Held-out total loss after the final epoch.
    pub final_eval_total: f64,
    /// Full-latent probe onto the true state, when available.
    pub state_probe_r2: Option<f64>,
    pub a4_task_r2: f64,
    pub a4_task_efficiency: f64,
    pub a4_context_efficiency: f64,
    pub effective_rank: f64,
    pub rollout_mse_step1: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblateReport {
    pub preset: String,
    pub rows: Vec<AblateRow>,
}

impl AblateReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "label,mode,d_s,final_eval_total,state_probe_r2,a4_task_r2,a4_task_efficiency,\
             a4_context_efficiency,effective_rank,rollout_mse_step1\n",
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                r.label,
                r.mode,
                r.d_s,
                csv_num(r.final_eval_total),
                csv_num(r.state_probe_r2.unwrap_or(f64::NAN)),
                csv_num(r.a4_task_r2),
                csv_num(r.a4_task_efficiency),
                csv_num(r.a4_context_efficiency),
                csv_num(r.effective_rank),
                csv_num(r.rollout_mse_step1.unwrap_or(f64::NAN)),
            ));
        }
        out
    }
}

fn ablate_row(label: &str, cfg: &ExperimentConfig, report: &TrainReport, probe: &ProbeReport) -> AblateRow {
    AblateRow {
        label: label.to_string(),
        mode: cfg.training.mode.as_str().to_string(),
        d_s: cfg.model.d_s,
        final_eval_total: report.final_eval.total,
        state_probe_r2: probe
            .state_probes
            .iter()
            .find(|p| matches!(p.label, BlockLabel::FullLatent))
            .map(|p| p.r2_mean),
        a4_task_r2: probe.a4.task.r2_mean,
        a4_task_efficiency: probe.a4.task_efficiency,
        a4_context_efficiency: probe.a4.context_efficiency,
        effective_rank: probe.collapse.effective_rank,
        rollout_mse_step1: probe.rollout_mse.first().copied(),
    }
}

/// Trains and probes the preset's variants against the unmodified config
/// on one shared dataset (generated under `<out>/dataset` unless
/// `data_dir` points at an existing one) and writes
/// `<out>/ablate_report.{json,csv}` next to the per-variant artifacts.
pub fn run_ablate(
    base_layers: &[(String, Value)],
    preset: AblatePreset,
    data_dir: Option<&Path>,
    out: &Path,
) -> Result<AblateReport> {
    let base = ExperimentConfig::from_layers(base_layers)?;
    let mut variants: Vec<(String, ExperimentConfig)> = Vec::new();
    match preset.overlay() {
        None => {
            for &s in &base.eval.split_sweep {
                let mut cfg = base.clone();
                cfg.model.d_s = s;
                cfg.model.align_dim = s;
                cfg.resolve()?;
                variants.push((format!("split-{s}"), cfg));
            }
        }
        Some(overlay) => {
            let mut with_overlay = base_layers.to_vec();
            with_overlay.push(overlay);
            let variant = ExperimentConfig::from_layers(&with_overlay)?;
            variants.push(("full".to_string(), base.clone()));
            variants.push((preset.label().to_string(), variant));
        }
    }

    let data = match data_dir {
        Some(d) => d.to_path_buf(),
        None => run_gen(&base, out)?,
    };
    let mut rows = Vec::with_capacity(variants.len());
    for (label, cfg) in &variants {
        let vdir = out.join(label);
        let (model_dir, report) = run_train(cfg, &data, &vdir)?;
        let probe = run_probe(&model_dir, &data, &vdir)?;
        rows.push(ablate_row(label, cfg, &report, &probe));
    }
    let report = AblateReport { preset: preset.label().to_string(), rows };
    write_json(&out.join("ablate_report.json"), &report)?;
    write_text(&out.join("ablate_report.csv"), &report.to_csv())?;
    log::info!("ablate {}: {} variants -> {}", report.preset, report.rows.len(), out.display());
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_str;

    fn tiny_generic_layers() -> Vec<(String, Value)> {
        vec![(
            "test".to_string(),
            parse_str(
                "test",
                r#"{
                    "seed": 3,
                    "world": {"d_s": 2, "d_c": 4, "d_x": 12, "noise_embed": 0.02},
                    "data": {"n_episodes": 10, "t_steps": 14},
                    "model": {"d_z": 6, "d_s": 2, "d_pe": 2, "align_dim": 2,
                              "hidden": [16], "horizon": 1},
                    "training": {"epochs": 2, "batch_size": 16},
                    "eval": {"a1_pairs": 64, "a2_pairs": 64, "rollout_horizon": 2,
                             "probe_folds": 3, "split_sweep": [1, 2]}
                }"#,
            )
            .unwrap(),
        )]
    }

    fn tiny_nav_layers() -> Vec<(String, Value)> {
        vec![(
            "test".to_string(),
            parse_str(
                "test",
                r#"{
                    "seed": 5,
                    "world_kind": "nav",
                    "nav": {"d_c": 2, "d_x": 10},
                    "data": {"n_episodes": 8, "t_steps": 12},
                    "model": {"d_z": 5, "d_s": 2, "d_pe": 2, "align_dim": 2,
                              "hidden": [16], "horizon": 1},
                    "training": {"epochs": 2, "batch_size": 16},
                    "cem": {"population": 24, "elites": 4, "iterations": 2,
                            "plan_horizon": 2},
                    "mpc": {"max_steps": 4},
                    "eval": {"episodes": 2, "rollout_horizon": 2, "probe_folds": 3,
                             "split_sweep": [1, 2]}
                }"#,
            )
            .unwrap(),
        )]
    }

    #[test]
    fn gen_train_probe_verify_round_trip() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig::from_layers(&tiny_generic_layers()).unwrap();
        let data = run_gen(&cfg, tmp.path()).unwrap();
        let (model_dir, report) = run_train(&cfg, &data, tmp.path()).unwrap();
        assert_eq!(report.epochs.len(), 2);
        assert!(model_dir.join("meta.json").exists());
        assert!(model_dir.join("stats.json").exists());
        assert!(model_dir.join("config.json").exists());
        assert!(model_dir.join("losses.csv").exists());

        let probe = run_probe(&model_dir, &data, tmp.path()).unwrap();
        assert_eq!(probe.d_latent, 6);
        assert_eq!(probe.n_rows, 10 * 14);
        assert_eq!(probe.state_probes.len(), 2); // full latent + raw embedding
        assert!(probe.affine.is_some());
        assert_eq!(probe.rollout_mse.len(), 2);
        assert!(probe.collapse.effective_rank >= 1.0);
        let reread: ProbeReport = read_json(&tmp.path().join("probe_report.json")).unwrap();
        assert_eq!(reread.n_rows, probe.n_rows);

        let verify = run_verify(&model_dir, &data, tmp.path()).unwrap();
        assert!(verify.a1.is_some());
        assert!(verify.a2.is_some());
        assert!(verify.a4.is_some());
        assert!(tmp.path().join("assumption_report.csv").exists());
    }

    #[test]
    fn training_artifacts_are_byte_identical_across_runs() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig::from_layers(&tiny_generic_layers()).unwrap();
        let data = run_gen(&cfg, tmp.path()).unwrap();
        let (dir_a, _) = run_train(&cfg, &data, &tmp.path().join("a")).unwrap();
        let (dir_b, _) = run_train(&cfg, &data, &tmp.path().join("b")).unwrap();
        for name in ["meta.json", "projector.w.f32", "stats.json", "losses.csv"] {
            let a = std::fs::read(dir_a.join(name)).unwrap();
            let b = std::fs::read(dir_b.join(name)).unwrap();
            assert_eq!(a, b, "{name} differs between identical runs");
        }
    }

    #[test]
    fn plan_runs_paired_episodes_on_the_navigation_world() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig::from_layers(&tiny_nav_layers()).unwrap();
        let data = run_gen(&cfg, tmp.path()).unwrap();
        let (model_dir, _) = run_train(&cfg, &data, tmp.path()).unwrap();
        let report = run_plan(&model_dir, Some(2), None, None, tmp.path()).unwrap();
        assert_eq!(report.episodes, 2);
        assert_eq!(report.rows.len(), 2);
        assert!(tmp.path().join("episodes.csv").exists());
        let csv = std::fs::read_to_string(tmp.path().join("episodes.csv")).unwrap();
        assert!(csv.starts_with("controller,episode,step,"));
        assert!(csv.lines().count() > 1);
    }

    #[test]
    fn plan_rejects_models_from_worlds_without_navigation() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig::from_layers(&tiny_generic_layers()).unwrap();
        let data = run_gen(&cfg, tmp.path()).unwrap();
        let (model_dir, _) = run_train(&cfg, &data, tmp.path()).unwrap();
        let err = run_plan(&model_dir, Some(1), None, None, tmp.path()).unwrap_err();
        assert_eq!(err.exit_code(), 1, "{err}");
    }

    #[test]
    fn ldp_planner_requires_a_dataset() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig::from_layers(&tiny_nav_layers()).unwrap();
        let data = run_gen(&cfg, tmp.path()).unwrap();
        let (model_dir, _) = run_train(&cfg, &data, tmp.path()).unwrap();
        let err =
            run_plan(&model_dir, Some(1), Some(PlannerKind::Ldp), None, tmp.path()).unwrap_err();
        assert_eq!(err.exit_code(), 1, "{err}");
    }

    #[test]
    fn ablate_trains_the_preset_against_the_unmodified_config() {
        let tmp = tempfile::tempdir().unwrap();
        let report =
            run_ablate(&tiny_generic_layers(), AblatePreset::NoRec, None, tmp.path()).unwrap();
        assert_eq!(report.rows.len(), 2);
        assert_eq!(report.rows[0].label, "full");
        assert_eq!(report.rows[0].mode, "tcwm");
        assert_eq!(report.rows[1].label, "no-rec");
        assert_eq!(report.rows[1].mode, "no-rec");
        assert!(tmp.path().join("ablate_report.csv").exists());
        assert!(tmp.path().join("full/model/meta.json").exists());
        assert!(tmp.path().join("no-rec/model/meta.json").exists());
        let csv = std::fs::read_to_string(tmp.path().join("ablate_report.csv")).unwrap();
        assert_eq!(csv.lines().count(), 3);
    }

    #[test]
    fn split_sweep_varies_the_task_block_width() {
        let tmp = tempfile::tempdir().unwrap();
        let mut layers = tiny_generic_layers();
        layers.push((
            "sweep".to_string(),
            parse_str("sweep", r#"{"eval": {"split_sweep": [1, 2]}}"#).unwrap(),
        ));
        let report = run_ablate(&layers, AblatePreset::SplitSweep, None, tmp.path()).unwrap();
        assert_eq!(report.rows.len(), 2);
        assert_eq!(report.rows[0].d_s, 1);
        assert_eq!(report.rows[1].d_s, 2);
    }

    #[test]
    fn unknown_presets_are_rejected_with_the_valid_names() {
        let err = AblatePreset::parse("norec").unwrap_err();
        assert_eq!(err.exit_code(), 1);
        assert!(err.to_string().contains("no-rec"), "{err}");
    }
}
