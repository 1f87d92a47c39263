//! The world model.
//!
//! Observations enter as a frozen visual embedding `x_vis` plus raw
//! proprioception; the trainable proprio embedder lifts the (standardized)
//! proprio into `d_pe` dims and the joint embedding is their concatenation.
//! A deterministic linear projector maps the joint embedding to the latent
//! `z`, whose leading `d_s` coordinates form the task block `z_s` (the
//! trailing ones are `z_c`). Two small MLPs predict the next latent and the
//! next proprioception from a flattened history window; linear heads embed
//! `z_s` and proprioception into a shared space for the contrastive
//! alignment loss; a linear decoder reconstructs the joint embedding from
//! the latent (the anti-collapse term), and an optional MLP decodes renders
//! from the visual part of a reconstructed embedding.
//!
//! In direct-embedding mode the projector and decoder are bypassed: the
//! latent *is* the joint embedding and the dynamics networks operate on it
//! directly (the baseline the projected model is compared against).

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datastore::{self, StoreError, DTYPE};
use crate::numerics::rng::{self, tags};
use crate::numerics::{AffineLayer, MlpNet, NumericsError};
use crate::synthworld::nav::RENDER_SIDE;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("checkpoint {path}: {msg}")]
    Checkpoint { path: String, msg: String },
}

type Result<T> = std::result::Result<T, ModelError>;

/// Which latent the dynamics run on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LatentKind {
    /// Linear projection of the joint embedding (the full model).
    Projected,
    /// The joint embedding itself; projector and decoder are unused.
    DirectEmbedding,
}

/// Input fed to the alignment head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlignInput {
    /// The leading `d_s` latent coordinates. This is the default: it pins
    /// the task block to a fixed slice, which the reporting convention and
    /// the recovery diagnostics rely on.
    Slice,
    /// The full latent; the L1 penalty on the head then performs the
    /// selection instead of the slice.
    Full,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_x: usize,
    pub d_p: usize,
    /// Proprio embedding width (defaults to `d_p`).
    pub d_pe: usize,
    pub d_z: usize,
    /// Upper bound on the task-block width; `z_s = z[..d_s]`.
    pub d_s: usize,
    pub d_a: usize,
    /// History length `H`: dynamics consume `H + 1` (latent, action) pairs.
    pub horizon: usize,
    /// InfoNCE temperature.
    pub tau: f32,
    /// Output width of the alignment heads (defaults to `d_s`).
    pub align_dim: usize,
    pub align_input: AlignInput,
    pub latent: LatentKind,
    /// Hidden widths of both dynamics MLPs.
    pub hidden: Vec<usize>,
    pub with_visual_decoder: bool,
    pub vis_hidden: Vec<usize>,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_x: 64,
            d_p: 4,
            d_pe: 4,
            // Overcomplete relative to the 16-dim worlds the defaults pair
            // with: at 16 the training losses distort latent geometry enough
            // to break monotone distance recovery, at 32 they do not.
            d_z: 32,
            d_s: 4,
            d_a: 2,
            horizon: 1,
            tau: 0.1,
            align_dim: 4,
            align_input: AlignInput::Slice,
            latent: LatentKind::Projected,
            hidden: vec![64, 64],
            with_visual_decoder: false,
            vis_hidden: vec![64],
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Width of the joint embedding `[x_vis, proprio_embed]`.
    pub fn d_joint(&self) -> usize {
        self.d_x + self.d_pe
    }

    /// Effective latent width (depends on the latent kind).
    pub fn d_latent(&self) -> usize {
        match self.latent {
            LatentKind::Projected => self.d_z,
            LatentKind::DirectEmbedding => self.d_joint(),
        }
    }

    /// Dynamics window width: `(H+1)` latents followed by `(H+1)` actions.
    pub fn window_len(&self) -> usize {
        (self.horizon + 1) * (self.d_latent() + self.d_a)
    }

    fn validate(&self) -> Result<()> {
        if self.d_s == 0 || self.d_s > self.d_latent() {
            return Err(ModelError::Config(format!(
                "d_s = {} must be in 1..={}",
                self.d_s,
                self.d_latent()
            )));
        }
        if self.tau <= 0.0 {
            return Err(ModelError::Config(format!("tau = {} must be positive", self.tau)));
        }
        if self.align_dim == 0 || self.d_z == 0 || self.d_pe == 0 {
            return Err(ModelError::Config("zero-width component".into()));
        }
        Ok(())
    }
}

/// A latent with its task/distractor views.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    pub z: Vec<f32>,
    pub d_s: usize,
}

impl LatentState {
    pub fn zs(&self) -> &[f32] {
        &self.z[..self.d_s]
    }

    pub fn zc(&self) -> &[f32] {
        &self.z[self.d_s..]
    }
}

#[derive(Debug, Clone)]
pub struct TcwmModel {
    pub cfg: ModelConfig,
    /// `d_p -> d_pe`, the only trainable part of the joint embedding.
    pub proprio_embedder: AffineLayer,
    /// `d_joint -> d_z` deterministic linear encoder.
    pub projector: AffineLayer,
    /// Alignment head over `z_s` (or full `z`): `align_in -> align_dim`.
    pub align_head: AffineLayer,
    /// Proprio head `d_p -> align_dim`.
    pub proprio_head: AffineLayer,
    /// Latent dynamics over the flattened window `-> d_latent`.
    pub dynamics: MlpNet,
    /// Task-centric dynamics over the same window `-> d_p`.
    pub tc_dynamics: MlpNet,
    /// `d_latent -> d_joint` linear reconstruction.
    pub embed_decoder: AffineLayer,
    /// `d_x -> RENDER_SIDE^2`, trained outside the world-model objective.
    pub visual_decoder: Option<MlpNet>,
}

impl TcwmModel {
    /// Builds a freshly initialized model. All weights derive from
    /// `cfg.seed`; components draw from one stream in a fixed order (the
    /// optional visual decoder last, so toggling it perturbs nothing else).
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut r = rng::stream(cfg.seed, tags::MODEL_INIT);
        let d_lat = cfg.d_latent();
        let align_in = match cfg.align_input {
            AlignInput::Slice => cfg.d_s,
            AlignInput::Full => d_lat,
        };
        let proprio_embedder = AffineLayer::xavier(cfg.d_pe, cfg.d_p, &mut r);
        let projector = AffineLayer::xavier(cfg.d_z, cfg.d_joint(), &mut r);
        let align_head = AffineLayer::xavier(cfg.align_dim, align_in, &mut r);
        let proprio_head = AffineLayer::xavier(cfg.align_dim, cfg.d_p, &mut r);
        let dynamics = MlpNet::new(cfg.window_len(), &cfg.hidden, d_lat, &mut r);
        let tc_dynamics = MlpNet::new(cfg.window_len(), &cfg.hidden, cfg.d_p, &mut r);
        let embed_decoder = AffineLayer::xavier(cfg.d_joint(), d_lat, &mut r);
        let visual_decoder = cfg.with_visual_decoder.then(|| {
            MlpNet::new(cfg.d_x, &cfg.vis_hidden, RENDER_SIDE * RENDER_SIDE, &mut r)
        });
        Ok(Self {
            cfg,
            proprio_embedder,
            projector,
            align_head,
            proprio_head,
            dynamics,
            tc_dynamics,
            embed_decoder,
            visual_decoder,
        })
    }

    /// Joint embedding `[x_vis, f_emb(s_std)]`. `s_std` must already be
    /// standardized.
    pub fn embed_joint(&self, x_vis: &[f32], s_std: &[f32]) -> Result<Vec<f32>> {
        if x_vis.len() != self.cfg.d_x || s_std.len() != self.cfg.d_p {
            return Err(NumericsError::ShapeMismatch {
                context: "embed_joint",
                expected: vec![self.cfg.d_x, self.cfg.d_p],
                got: vec![x_vis.len(), s_std.len()],
            }
            .into());
        }
        let mut x = Vec::with_capacity(self.cfg.d_joint());
        x.extend_from_slice(x_vis);
        let mut e = vec![0.0f32; self.cfg.d_pe];
        self.proprio_embedder.forward_into(s_std, &mut e);
        x.extend(e);
        Ok(x)
    }

    /// Deterministic encoder: linear projection (or identity in
    /// direct-embedding mode).
    pub fn encode(&self, x_joint: &[f32]) -> Result<LatentState> {
        if x_joint.len() != self.cfg.d_joint() {
            return Err(NumericsError::ShapeMismatch {
                context: "encode",
                expected: vec![self.cfg.d_joint()],
                got: vec![x_joint.len()],
            }
            .into());
        }
        let z = match self.cfg.latent {
            LatentKind::Projected => {
                let mut z = vec![0.0f32; self.cfg.d_z];
                self.projector.forward_into(x_joint, &mut z);
                z
            }
            LatentKind::DirectEmbedding => x_joint.to_vec(),
        };
        Ok(LatentState {
            z,
            d_s: self.cfg.d_s,
        })
    }

    pub fn encode_obs(&self, x_vis: &[f32], s_std: &[f32]) -> Result<LatentState> {
        self.encode(&self.embed_joint(x_vis, s_std)?)
    }

    /// Assembles the dynamics input from `H+1` latents and `H+1` actions,
    /// oldest first: `[z_{t-H} .. z_t, a_{t-H} .. a_t]`.
    pub fn build_window(&self, latents: &[&[f32]], actions: &[&[f32]]) -> Result<Vec<f32>> {
        let need = self.cfg.horizon + 1;
        if latents.len() != need || actions.len() != need {
            return Err(NumericsError::ShapeMismatch {
                context: "build_window",
                expected: vec![need, need],
                got: vec![latents.len(), actions.len()],
            }
            .into());
        }
        let mut w = Vec::with_capacity(self.cfg.window_len());
        for z in latents {
            w.extend_from_slice(z);
        }
        for a in actions {
            w.extend_from_slice(a);
        }
        Ok(w)
    }

    /// Next-latent prediction from a prebuilt window.
    pub fn predict_next(&self, window: &[f32]) -> Result<Vec<f32>> {
        Ok(self.dynamics.forward(window)?)
    }

    /// Next-proprio prediction (standardized units) from the same window.
    pub fn predict_proprio(&self, window: &[f32]) -> Result<Vec<f32>> {
        Ok(self.tc_dynamics.forward(window)?)
    }

    /// Reconstructs the joint embedding from a latent.
    pub fn decode_embedding(&self, z: &[f32]) -> Result<Vec<f32>> {
        if z.len() != self.cfg.d_latent() {
            return Err(NumericsError::ShapeMismatch {
                context: "decode_embedding",
                expected: vec![self.cfg.d_latent()],
                got: vec![z.len()],
            }
            .into());
        }
        match self.cfg.latent {
            LatentKind::Projected => {
                let mut x = vec![0.0f32; self.cfg.d_joint()];
                self.embed_decoder.forward_into(z, &mut x);
                Ok(x)
            }
            // Identity by construction: the latent is the embedding.
            LatentKind::DirectEmbedding => Ok(z.to_vec()),
        }
    }

    /// Renders the visual part of a (reconstructed) joint embedding.
    pub fn decode_render(&self, x_joint: &[f32]) -> Result<Option<Vec<f32>>> {
        match &self.visual_decoder {
            None => Ok(None),
            Some(net) => Ok(Some(net.forward(&x_joint[..self.cfg.d_x])?)),
        }
    }

    /// The alignment-head input for a latent (slice or full per config).
    pub fn align_input<'z>(&self, z: &'z [f32]) -> &'z [f32] {
        match self.cfg.align_input {
            AlignInput::Slice => &z[..self.cfg.d_s],
            AlignInput::Full => z,
        }
    }

    /// Latent indices whose alignment-head column norm exceeds
    /// `threshold * max_column_norm`. With an all-zero head the set is
    /// empty. Under [`AlignInput::Slice`] only slice indices can appear.
    pub fn effective_split(&self, threshold: f32) -> Vec<usize> {
        let w = self.align_head.weight.data();
        let (o, i) = (self.align_head.out_dim(), self.align_head.in_dim());
        let mut norms = vec![0.0f64; i];
        for r in 0..o {
            for c in 0..i {
                let v = w[r * i + c] as f64;
                norms[c] += v * v;
            }
        }
        for n in &mut norms {
            *n = n.sqrt();
        }
        let max = norms.iter().cloned().fold(0.0f64, f64::max);
        if max <= 0.0 {
            return Vec::new();
        }
        (0..i)
            .filter(|c| norms[*c] > threshold as f64 * max)
            .collect()
    }

    /// World-model layers in their canonical order (visual decoder
    /// excluded: it trains outside this parameter set).
    pub fn layer_names(&self) -> Vec<String> {
        let mut names = vec![
            "proprio_embedder".to_string(),
            "projector".to_string(),
            "align_head".to_string(),
            "proprio_head".to_string(),
        ];
        for k in 0..self.dynamics.layers.len() {
            names.push(format!("dynamics.{k}"));
        }
        for k in 0..self.tc_dynamics.layers.len() {
            names.push(format!("tc_dynamics.{k}"));
        }
        names.push("embed_decoder".to_string());
        names
    }

    pub fn layer(&self, name: &str) -> Option<&AffineLayer> {
        match name {
            "proprio_embedder" => Some(&self.proprio_embedder),
            "projector" => Some(&self.projector),
            "align_head" => Some(&self.align_head),
            "proprio_head" => Some(&self.proprio_head),
            "embed_decoder" => Some(&self.embed_decoder),
            _ => {
                let (net, idx) = name.split_once('.')?;
                let idx: usize = idx.parse().ok()?;
                match net {
                    "dynamics" => self.dynamics.layers.get(idx),
                    "tc_dynamics" => self.tc_dynamics.layers.get(idx),
                    "visual_decoder" => self.visual_decoder.as_ref()?.layers.get(idx),
                    _ => None,
                }
            }
        }
    }

    pub fn layer_mut(&mut self, name: &str) -> Option<&mut AffineLayer> {
        match name {
            "proprio_embedder" => Some(&mut self.proprio_embedder),
            "projector" => Some(&mut self.projector),
            "align_head" => Some(&mut self.align_head),
            "proprio_head" => Some(&mut self.proprio_head),
            "embed_decoder" => Some(&mut self.embed_decoder),
            _ => {
                let (net, idx) = name.split_once('.')?;
                let idx: usize = idx.parse().ok()?;
                match net {
                    "dynamics" => self.dynamics.layers.get_mut(idx),
                    "tc_dynamics" => self.tc_dynamics.layers.get_mut(idx),
                    "visual_decoder" => self.visual_decoder.as_mut()?.layers.get_mut(idx),
                    _ => None,
                }
            }
        }
    }

    /// Flattens parameters of the named layers (weights then bias, in the
    /// given layer order) into one vector.
    pub fn flatten_params(&self, names: &[String]) -> Vec<f32> {
        let mut out = Vec::new();
        for n in names {
            let l = self.layer(n).expect("unknown layer name");
            out.extend_from_slice(l.weight.data());
            out.extend_from_slice(l.bias.data());
        }
        out
    }

    pub fn flatten_grads(&self, names: &[String]) -> Vec<f32> {
        let mut out = Vec::new();
        for n in names {
            let l = self.layer(n).expect("unknown layer name");
            out.extend_from_slice(l.grad_weight.data());
            out.extend_from_slice(l.grad_bias.data());
        }
        out
    }

    /// Writes a flat vector produced by [`Self::flatten_params`] back.
    pub fn set_flat_params(&mut self, names: &[String], flat: &[f32]) {
        let mut k = 0;
        for n in names {
            let l = self.layer_mut(n).expect("unknown layer name");
            let w = l.weight.data_mut();
            w.copy_from_slice(&flat[k..k + w.len()]);
            k += w.len();
            let b = l.bias.data_mut();
            b.copy_from_slice(&flat[k..k + b.len()]);
            k += b.len();
        }
        assert_eq!(k, flat.len(), "flat parameter vector length mismatch");
    }

    pub fn zero_grad(&mut self, names: &[String]) {
        for n in names {
            self.layer_mut(n).expect("unknown layer name").zero_grad();
        }
    }

    /// Saves the checkpoint: `meta.json` (config + tensor shapes) plus one
    /// raw little-endian f32 file per tensor. Byte-identical for identical
    /// models.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let mut names = self.layer_names();
        if let Some(vis) = &self.visual_decoder {
            for k in 0..vis.layers.len() {
                names.push(format!("visual_decoder.{k}"));
            }
        }
        let mut tensors = BTreeMap::new();
        for n in &names {
            let l = self.layer(n).unwrap();
            tensors.insert(format!("{n}.w"), l.weight.shape().to_vec());
            tensors.insert(format!("{n}.b"), l.bias.shape().to_vec());
            datastore::write_f32_file(&dir.join(format!("{n}.w.f32")), l.weight.data())?;
            datastore::write_f32_file(&dir.join(format!("{n}.b.f32")), l.bias.data())?;
        }
        let meta = CheckpointMeta {
            kind: "world-model".to_string(),
            dtype: DTYPE.to_string(),
            config: self.cfg.clone(),
            tensors,
        };
        let bytes = serde_json::to_vec_pretty(&meta).expect("meta serializes");
        datastore::atomic_write(&dir.join("meta.json"), &bytes)?;
        Ok(())
    }

    /// Loads a checkpoint saved by [`Self::save`], validating dtype and
    /// every tensor's shape and byte length.
    pub fn load(dir: &Path) -> Result<Self> {
        let meta_path = dir.join("meta.json");
        let bytes = std::fs::read(&meta_path).map_err(|_| StoreError::MissingFile(meta_path.clone()))?;
        let meta: CheckpointMeta =
            serde_json::from_slice(&bytes).map_err(|e| ModelError::Checkpoint {
                path: meta_path.display().to_string(),
                msg: e.to_string(),
            })?;
        if meta.dtype != DTYPE {
            return Err(StoreError::UnsupportedDtype(meta.dtype).into());
        }
        let mut model = Self::new(meta.config)?;
        let mut names = model.layer_names();
        if let Some(vis) = &model.visual_decoder {
            for k in 0..vis.layers.len() {
                names.push(format!("visual_decoder.{k}"));
            }
        }
        for n in &names {
            let expect_w = meta.tensors.get(&format!("{n}.w")).cloned();
            let expect_b = meta.tensors.get(&format!("{n}.b")).cloned();
            let l = model.layer_mut(n).unwrap();
            let (ws, bs) = (l.weight.shape().to_vec(), l.bias.shape().to_vec());
            if expect_w.as_deref() != Some(&ws[..]) || expect_b.as_deref() != Some(&bs[..]) {
                return Err(ModelError::Checkpoint {
                    path: dir.display().to_string(),
                    msg: format!("tensor {n} shape mismatch: checkpoint {expect_w:?}/{expect_b:?}, model {ws:?}/{bs:?}"),
                });
            }
            let w = datastore::read_f32_file(&dir.join(format!("{n}.w.f32")), n, ws.iter().product())?;
            l.weight.data_mut().copy_from_slice(&w);
            let b = datastore::read_f32_file(&dir.join(format!("{n}.b.f32")), n, bs.iter().product())?;
            l.bias.data_mut().copy_from_slice(&b);
        }
        Ok(model)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointMeta {
    kind: String,
    dtype: String,
    config: ModelConfig,
    tensors: BTreeMap<String, Vec<usize>>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> ModelConfig {
        ModelConfig {
            d_x: 8,
            d_p: 2,
            d_pe: 2,
            d_z: 5,
            d_s: 2,
            d_a: 2,
            align_dim: 2,
            hidden: vec![6],
            seed: 3,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn encode_is_deterministic_and_linear() {
        let m = TcwmModel::new(small_cfg()).unwrap();
        let x: Vec<f32> = (0..10).map(|k| 0.1 * k as f32).collect();
        let a = m.encode(&x).unwrap();
        let b = m.encode(&x).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.zs().len(), 2);
        assert_eq!(a.zc().len(), 3);

        // Linearity: encode(x) - encode(0) is additive.
        let zero = m.encode(&vec![0.0; 10]).unwrap().z;
        let y: Vec<f32> = (0..10).map(|k| -0.05 * k as f32).collect();
        let sum: Vec<f32> = x.iter().zip(&y).map(|(a, b)| a + b).collect();
        let ex = m.encode(&x).unwrap().z;
        let ey = m.encode(&y).unwrap().z;
        let es = m.encode(&sum).unwrap().z;
        for k in 0..5 {
            let lhs = es[k] - zero[k];
            let rhs = (ex[k] - zero[k]) + (ey[k] - zero[k]);
            assert!((lhs - rhs).abs() < 1e-5);
        }
    }

    #[test]
    fn direct_embedding_encode_is_identity() {
        let mut cfg = small_cfg();
        cfg.latent = LatentKind::DirectEmbedding;
        let m = TcwmModel::new(cfg).unwrap();
        let x: Vec<f32> = (0..10).map(|k| 0.3 * k as f32).collect();
        assert_eq!(m.encode(&x).unwrap().z, x);
        assert_eq!(m.decode_embedding(&x).unwrap(), x);
        assert_eq!(m.cfg.window_len(), 2 * (10 + 2));
    }

    #[test]
    fn window_layout_is_latents_then_actions() {
        let m = TcwmModel::new(small_cfg()).unwrap();
        let z0 = vec![1.0; 5];
        let z1 = vec![2.0; 5];
        let a0 = vec![3.0; 2];
        let a1 = vec![4.0; 2];
        let w = m.build_window(&[&z0, &z1], &[&a0, &a1]).unwrap();
        assert_eq!(w.len(), m.cfg.window_len());
        assert_eq!(&w[..5], &z0[..]);
        assert_eq!(&w[5..10], &z1[..]);
        assert_eq!(&w[10..12], &a0[..]);
        assert_eq!(&w[12..14], &a1[..]);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = small_cfg();
        cfg.d_s = 9; // exceeds d_z = 5
        assert!(TcwmModel::new(cfg).is_err());
        let mut cfg = small_cfg();
        cfg.tau = 0.0;
        assert!(TcwmModel::new(cfg).is_err());
    }

    #[test]
    fn effective_split_empty_for_zero_head_and_detects_columns() {
        let mut m = TcwmModel::new(small_cfg()).unwrap();
        m.align_head.weight.data_mut().fill(0.0);
        assert!(m.effective_split(0.1).is_empty());
        // Only column 1 active.
        m.align_head.weight.data_mut()[1] = 1.0;
        assert_eq!(m.effective_split(0.1), vec![1]);
    }

    #[test]
    fn same_seed_same_model_different_seed_differs() {
        let a = TcwmModel::new(small_cfg()).unwrap();
        let b = TcwmModel::new(small_cfg()).unwrap();
        assert_eq!(a.projector.weight.data(), b.projector.weight.data());
        let mut cfg = small_cfg();
        cfg.seed = 4;
        let c = TcwmModel::new(cfg).unwrap();
        assert_ne!(a.projector.weight.data(), c.projector.weight.data());
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let mut cfg = small_cfg();
        cfg.with_visual_decoder = true;
        let m = TcwmModel::new(cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        m.save(dir.path()).unwrap();
        let loaded = TcwmModel::load(dir.path()).unwrap();
        for n in m.layer_names() {
            assert_eq!(
                m.layer(&n).unwrap().weight.data(),
                loaded.layer(&n).unwrap().weight.data(),
                "{n}"
            );
        }
        // Double-save must produce identical bytes.
        let dir2 = tempfile::tempdir().unwrap();
        m.save(dir2.path()).unwrap();
        for entry in std::fs::read_dir(dir.path()).unwrap() {
            let name = entry.unwrap().file_name();
            let a = std::fs::read(dir.path().join(&name)).unwrap();
            let b = std::fs::read(dir2.path().join(&name)).unwrap();
            assert_eq!(a, b, "{name:?}");
        }
    }

    #[test]
    fn corrupt_checkpoint_tensor_is_reported() {
        let m = TcwmModel::new(small_cfg()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        m.save(dir.path()).unwrap();
        let p = dir.path().join("projector.w.f32");
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..8]).unwrap();
        let err = TcwmModel::load(dir.path()).unwrap_err().to_string();
        assert!(err.contains("projector"), "{err}");
    }

    #[test]
    fn flatten_set_round_trip() {
        let mut m = TcwmModel::new(small_cfg()).unwrap();
        let names = m.layer_names();
        let flat = m.flatten_params(&names);
        let mut shifted = flat.clone();
        for v in &mut shifted {
            *v += 0.25;
        }
        m.set_flat_params(&names, &shifted);
        assert_eq!(m.flatten_params(&names), shifted);
        m.set_flat_params(&names, &flat);
        assert_eq!(m.flatten_params(&names), flat);
    }
}
