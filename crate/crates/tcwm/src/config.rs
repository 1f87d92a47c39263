//! Strict, overlay-merged experiment configuration.
//!
//! One JSON tree configures an entire experiment: the generating world,
//! dataset shape, model, training objective, planners, and evaluation
//! protocol. Every key has a default, so `{}` is a valid config and a
//! config file only needs the keys it changes. Files are parsed strictly:
//! any key that does not correspond to a real field is collected and the
//! whole list is reported in one error.
//!
//! Configs compose by deep merge. A run is described by an ordered stack
//! of layers (base file, preset overlay, command-line overrides); later
//! layers win key-by-key, objects merge recursively, and arrays replace
//! wholesale. This is what ablation presets are: tiny overlay files that
//! flip a handful of keys on top of any base config.
//!
//! A single global `seed` fans out to every component. The components
//! already separate their random streams by purpose tags, so per-section
//! seeds would add nothing but the opportunity for accidental coupling;
//! they are deliberately not part of the file format, as are the handful
//! of fields the driver derives from context (the model's input widths
//! come from the dataset, its latent kind from the training mode, and the
//! planner's action box from the environment).

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::model::{LatentKind, ModelConfig};
use crate::planning::{CemConfig, DiffusionConfig, MpcConfig};
use crate::synthworld::nav::NavConfig;
use crate::synthworld::{Policy, WorldConfig};
use crate::training::{TrainConfig, TrainMode};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("read {path}: {msg}")]
    Io { path: PathBuf, msg: String },
    #[error("parse {source_name}: {msg}")]
    Parse { source_name: String, msg: String },
    #[error("unknown config keys:\n  {}", keys.join("\n  "))]
    UnknownKeys { keys: Vec<String> },
    #[error("config: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, ConfigError>;

/// Which ground-truth world generates the data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WorldKind {
    /// The generic latent world: configurable dynamics/mixing/proprio maps,
    /// no renderer, no goals.
    Generic,
    /// The 2-D navigation environment: position + distractors, goals,
    /// rasterized renders.
    Nav,
}

impl fmt::Display for WorldKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WorldKind::Generic => "generic",
            WorldKind::Nav => "nav",
        })
    }
}

/// Which planner the closed-loop evaluation drives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlannerKind {
    Cem,
    Ldp,
}

impl fmt::Display for PlannerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PlannerKind::Cem => "cem",
            PlannerKind::Ldp => "ldp",
        })
    }
}

/// Offline dataset shape and collection policy.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DataConfig {
    pub n_episodes: usize,
    /// Steps per episode (so each episode has `t_steps - 1` transitions).
    pub t_steps: usize,
    pub policy: Policy,
    /// Also record rasterized renders (navigation world only).
    pub with_renders: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            n_episodes: 64,
            t_steps: 64,
            policy: Policy::UniformRandom,
            with_renders: false,
        }
    }
}

/// Evaluation protocol: probe hyperparameters, assumption-check sizes and
/// toggles, and the closed-loop episode budget.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalConfig {
    pub probe_folds: usize,
    pub probe_alpha: f64,
    /// Also probe the raw joint embedding as a baseline.
    pub probe_raw_embedding: bool,
    /// Decoder-sensitivity pairs and perturbation scale.
    pub a1_pairs: usize,
    pub a1_delta: f64,
    /// Distance-correlation pairs.
    pub a2_pairs: usize,
    pub run_a1: bool,
    pub run_a2: bool,
    pub run_a4: bool,
    /// Open-loop rollout length for the prediction-error curve.
    pub rollout_horizon: usize,
    /// Closed-loop planning episodes.
    pub episodes: usize,
    /// Task-block widths tried by the split-sweep ablation.
    pub split_sweep: Vec<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            probe_folds: 5,
            probe_alpha: 1.0,
            probe_raw_embedding: true,
            a1_pairs: 4096,
            a1_delta: 1e-3,
            a2_pairs: 2048,
            run_a1: true,
            run_a2: true,
            run_a4: true,
            rollout_horizon: 5,
            episodes: 50,
            split_sweep: vec![1, 2, 4, 8],
        }
    }
}

/// The complete declarative description of one experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Global seed; fans out to every component on [`Self::resolve`].
    pub seed: u64,
    /// Default artifact root; subcommands may override it with `--out`.
    pub out_dir: PathBuf,
    pub world_kind: WorldKind,
    pub world: WorldConfig,
    pub nav: NavConfig,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub training: TrainConfig,
    pub planner: PlannerKind,
    pub cem: CemConfig,
    pub mpc: MpcConfig,
    pub diffusion: DiffusionConfig,
    pub eval: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("out"),
            world_kind: WorldKind::Generic,
            world: WorldConfig::default(),
            nav: NavConfig::default(),
            data: DataConfig::default(),
            model: ModelConfig::default(),
            training: TrainConfig::default(),
            planner: PlannerKind::Cem,
            cem: CemConfig::default(),
            mpc: MpcConfig::default(),
            diffusion: DiffusionConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

/// Keys that exist on the wrapped structs but are not part of the file
/// format: seeds are fanned out from the global seed, and the others are
/// derived from context by the experiment driver.
const DERIVED_KEYS: &[&str] = &[
    "world.seed",
    "nav.seed",
    "model.seed",
    "model.latent",
    "model.d_x",
    "model.d_p",
    "model.d_a",
    "training.seed",
    "cem.seed",
    "cem.action_half",
    "mpc.seed",
    "diffusion.seed",
];

/// Key union for object-valued enum nodes (tagged with `kind`), whose
/// variant-specific keys the default tree cannot enumerate.
const POLICY_KEYS: &[&str] = &["kind", "gain", "noise"];

/// Reads and parses one JSON config file into a layer.
pub fn parse_file(path: &Path) -> Result<(String, Value)> {
    let source_name = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    Ok((source_name.clone(), parse_str(&source_name, &text)?))
}

/// Parses JSON text into a layer tree, requiring a top-level object.
pub fn parse_str(source_name: &str, text: &str) -> Result<Value> {
    let v: Value = serde_json::from_str(text).map_err(|e| ConfigError::Parse {
        source_name: source_name.to_string(),
        msg: e.to_string(),
    })?;
    if !v.is_object() {
        return Err(ConfigError::Parse {
            source_name: source_name.to_string(),
            msg: "a config must be a JSON object".into(),
        });
    }
    Ok(v)
}

/// Recursive overlay merge: objects merge key-by-key, everything else
/// (scalars and arrays) replaces. A tagged-enum node (an object carrying a
/// `kind` key) replaces wholesale when the overlay switches the variant,
/// so stale variant fields cannot leak across the switch.
pub fn deep_merge(base: &mut Value, overlay: &Value) {
    if let (Value::Object(b), Value::Object(o)) = (&mut *base, overlay) {
        let variant_switch = match (b.get("kind"), o.get("kind")) {
            (Some(x), Some(y)) => x != y,
            _ => false,
        };
        if !variant_switch {
            for (k, v) in o {
                match b.get_mut(k) {
                    Some(slot) => deep_merge(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
            return;
        }
    }
    *base = overlay.clone();
}

fn remove_path(tree: &mut Value, path: &str) {
    let mut node = tree;
    let mut parts = path.split('.').peekable();
    while let Some(part) = parts.next() {
        let Some(obj) = node.as_object_mut() else { return };
        if parts.peek().is_none() {
            obj.remove(part);
            return;
        }
        match obj.get_mut(part) {
            Some(child) => node = child,
            None => return,
        }
    }
}

/// The set of legal key paths, encoded as the default config tree with the
/// derived keys removed.
fn schema_tree() -> Value {
    let mut v = serde_json::to_value(ExperimentConfig::default()).expect("config serializes");
    for p in DERIVED_KEYS {
        remove_path(&mut v, p);
    }
    v
}

fn walk_unknown(user: &Value, schema: &Value, path: &str, source_name: &str, out: &mut Vec<String>) {
    let at = |key: &str| {
        if path.is_empty() {
            key.to_string()
        } else {
            format!("{path}.{key}")
        }
    };
    match (user, schema) {
        (Value::Object(u), Value::Object(s)) => {
            if s.contains_key("kind") {
                for k in u.keys() {
                    if !POLICY_KEYS.contains(&k.as_str()) {
                        out.push(format!("{source_name}: {}", at(k)));
                    }
                }
                return;
            }
            for (k, v) in u {
                match s.get(k) {
                    None => out.push(format!("{source_name}: {}", at(k))),
                    Some(sv) => walk_unknown(v, sv, &at(k), source_name, out),
                }
            }
        }
        (Value::Object(_), _) => {
            out.push(format!("{source_name}: {path} holds a plain value, not a section"))
        }
        (_, Value::Object(_)) => {
            out.push(format!("{source_name}: {path} must be a section object"))
        }
        _ => {}
    }
}

impl ExperimentConfig {
    /// Builds a config from an ordered stack of `(source name, tree)`
    /// layers. Every layer is validated against the schema (all offending
    /// keys across all layers are reported together), the layers are
    /// merged onto the defaults in order, and the result is resolved.
    pub fn from_layers(layers: &[(String, Value)]) -> Result<Self> {
        let schema = schema_tree();
        let mut unknown = Vec::new();
        for (source_name, tree) in layers {
            walk_unknown(tree, &schema, "", source_name, &mut unknown);
        }
        if !unknown.is_empty() {
            return Err(ConfigError::UnknownKeys { keys: unknown });
        }
        let mut merged = serde_json::to_value(ExperimentConfig::default()).expect("config serializes");
        for (_, tree) in layers {
            deep_merge(&mut merged, tree);
        }
        let mut cfg: ExperimentConfig =
            serde_json::from_value(merged).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        cfg.resolve()?;
        Ok(cfg)
    }

    /// Reads a single config file (see [`Self::from_layers`]).
    pub fn load(path: &Path) -> Result<Self> {
        Self::from_layers(&[parse_file(path)?])
    }

    /// Fans the global seed out, derives the context-dependent fields, and
    /// validates cross-section consistency. Idempotent; call again after
    /// mutating the config programmatically (e.g. a seed sweep).
    pub fn resolve(&mut self) -> Result<()> {
        self.world.seed = self.seed;
        self.nav.seed = self.seed;
        self.model.seed = self.seed;
        self.training.seed = self.seed;
        self.cem.seed = self.seed;
        self.mpc.seed = self.seed;
        self.diffusion.seed = self.seed;

        self.model.latent = match self.training.mode {
            TrainMode::DirectEmbedding => LatentKind::DirectEmbedding,
            _ => LatentKind::Projected,
        };
        if self.training.train_visual_decoder {
            self.model.with_visual_decoder = true;
        }
        self.cem.action_half = match self.world_kind {
            WorldKind::Generic => self.world.action_half,
            WorldKind::Nav => self.nav.action_half,
        };

        if self.world_kind == WorldKind::Generic {
            if matches!(self.data.policy, Policy::GoalSeeking { .. }) {
                return Err(ConfigError::Invalid(
                    "the goal-seeking policy needs the navigation world (generic worlds have no goals)"
                        .into(),
                ));
            }
            if self.data.with_renders {
                return Err(ConfigError::Invalid(
                    "renders need the navigation world (generic worlds have no renderer)".into(),
                ));
            }
        }
        if self.training.train_visual_decoder && !self.data.with_renders {
            return Err(ConfigError::Invalid(
                "train_visual_decoder needs a dataset generated with renders".into(),
            ));
        }
        if self.data.n_episodes == 0 {
            return Err(ConfigError::Invalid("data.n_episodes must be positive".into()));
        }
        let min_steps = self.model.horizon + 2;
        if self.data.t_steps < min_steps {
            return Err(ConfigError::Invalid(format!(
                "data.t_steps = {} is too short: a history of {} plus a target needs {min_steps} \
                 steps per episode",
                self.data.t_steps, self.model.horizon + 1
            )));
        }
        if self.training.batch_size < 2 {
            return Err(ConfigError::Invalid(
                "training.batch_size must be at least 2 (the contrastive term needs negatives)".into(),
            ));
        }
        if self.eval.probe_folds < 2 {
            return Err(ConfigError::Invalid("eval.probe_folds must be at least 2".into()));
        }
        if !(self.eval.probe_alpha > 0.0) {
            return Err(ConfigError::Invalid("eval.probe_alpha must be positive".into()));
        }
        if self.eval.episodes == 0 {
            return Err(ConfigError::Invalid("eval.episodes must be positive".into()));
        }
        if self.eval.split_sweep.is_empty() {
            return Err(ConfigError::Invalid("eval.split_sweep must not be empty".into()));
        }
        if let Some(bad) = self
            .eval
            .split_sweep
            .iter()
            .find(|s| **s == 0 || **s > self.model.d_z)
        {
            return Err(ConfigError::Invalid(format!(
                "eval.split_sweep entry {bad} is outside 1..={}",
                self.model.d_z
            )));
        }
        if self.planner == PlannerKind::Ldp && self.cem.execute_horizon > self.diffusion.horizon {
            return Err(ConfigError::Invalid(format!(
                "execute horizon {} exceeds the diffusion planning horizon {}",
                self.cem.execute_horizon, self.diffusion.horizon
            )));
        }
        Ok(())
    }

    /// The resolved config as a JSON tree (for snapshots inside artifacts).
    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }
}
