//! Bit-exact dataset persistence and standardization statistics.
//!
//! A dataset is a directory: `meta.json` (dimensions, counts, dtype, array
//! byte lengths, generator seed and config snapshot), one raw array file
//! per stored quantity (`embeddings.f32`, `proprio.f32`, `actions.f32`,
//! optional `renders.f32` / `latents.f32`), and `boundaries.json` with the
//! episode start offsets. Raw files are little-endian `f32`, row-major, no
//! header; identical generation inputs produce identical bytes.
//!
//! All writes go through a temp-file-then-rename so a crash can never leave
//! a half-written artifact under the target name.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::synthworld::TrajectoryBatch;

pub const DTYPE: &str = "f32le";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("array {name}: file has {got} bytes, meta declares {expected}")]
    ByteLength {
        name: String,
        expected: usize,
        got: usize,
    },
    #[error("unsupported dtype {0:?} (only \"f32le\" is readable)")]
    UnsupportedDtype(String),
    #[error("malformed {path}: {msg}")]
    Malformed { path: PathBuf, msg: String },
    #[error("dataset is empty")]
    Empty,
}

type Result<T> = std::result::Result<T, StoreError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `bytes` to `path` atomically (temp file in the same directory,
/// fsync, rename).
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let tmp = dir.join(format!(
        ".{}.tmp",
        path.file_name().map(|s| s.to_string_lossy()).unwrap_or_default()
    ));
    {
        let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
        f.write_all(bytes).map_err(io_err(&tmp))?;
        f.sync_all().map_err(io_err(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(io_err(path))
}

/// Serializes `values` as raw little-endian f32.
pub fn write_f32_file(path: &Path, values: &[f32]) -> Result<()> {
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    atomic_write(path, &bytes)
}

/// Reads a raw little-endian f32 file, validating the expected element
/// count (`name` labels the array in errors).
pub fn read_f32_file(path: &Path, name: &str, expected_len: usize) -> Result<Vec<f32>> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(StoreError::MissingFile(path.to_path_buf()))
        }
        Err(e) => return Err(io_err(path)(e)),
    };
    if bytes.len() != expected_len * 4 {
        return Err(StoreError::ByteLength {
            name: name.to_string(),
            expected: expected_len * 4,
            got: bytes.len(),
        });
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

/// Dataset metadata. `arrays` maps file stem to element count; a BTreeMap
/// keeps JSON output deterministic.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub dtype: String,
    pub d_x: usize,
    pub d_p: usize,
    pub d_a: usize,
    pub d_true: usize,
    pub n_steps: usize,
    pub n_episodes: usize,
    pub arrays: BTreeMap<String, usize>,
    pub seed: u64,
    /// Opaque snapshot of the generating configuration.
    pub config_snapshot: serde_json::Value,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| StoreError::Malformed {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    bytes.push(b'\n');
    atomic_write(path, &bytes)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(StoreError::MissingFile(path.to_path_buf()))
        }
        Err(e) => return Err(io_err(path)(e)),
    };
    serde_json::from_slice(&bytes).map_err(|e| StoreError::Malformed {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}

/// Persists a batch under `dir` (created if needed).
pub fn save_dataset(
    batch: &TrajectoryBatch,
    dir: &Path,
    seed: u64,
    config_snapshot: serde_json::Value,
) -> Result<()> {
    if batch.n_steps == 0 {
        return Err(StoreError::Empty);
    }
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut arrays = BTreeMap::new();
    arrays.insert("embeddings".to_string(), batch.embeddings.len());
    arrays.insert("proprio".to_string(), batch.proprio.len());
    arrays.insert("actions".to_string(), batch.actions.len());
    write_f32_file(&dir.join("embeddings.f32"), &batch.embeddings)?;
    write_f32_file(&dir.join("proprio.f32"), &batch.proprio)?;
    write_f32_file(&dir.join("actions.f32"), &batch.actions)?;
    if let Some(renders) = &batch.renders {
        arrays.insert("renders".to_string(), renders.len());
        write_f32_file(&dir.join("renders.f32"), renders)?;
    }
    if let Some(latents) = &batch.true_latents {
        arrays.insert("latents".to_string(), latents.len());
        write_f32_file(&dir.join("latents.f32"), latents)?;
    }
    let meta = DatasetMeta {
        dtype: DTYPE.to_string(),
        d_x: batch.d_x,
        d_p: batch.d_p,
        d_a: batch.d_a,
        d_true: batch.d_true,
        n_steps: batch.n_steps,
        n_episodes: batch.n_episodes(),
        arrays,
        seed,
        config_snapshot,
    };
    write_json(&dir.join("meta.json"), &meta)?;
    write_json(&dir.join("boundaries.json"), &batch.episode_starts)
}

/// Loads a dataset directory, validating dtype, byte lengths, and boundary
/// consistency. Returns the batch and its metadata.
pub fn load_dataset(dir: &Path) -> Result<(TrajectoryBatch, DatasetMeta)> {
    let meta: DatasetMeta = read_json(&dir.join("meta.json"))?;
    if meta.dtype != DTYPE {
        return Err(StoreError::UnsupportedDtype(meta.dtype));
    }
    let episode_starts: Vec<usize> = read_json(&dir.join("boundaries.json"))?;
    if episode_starts.first() != Some(&0)
        || episode_starts.windows(2).any(|w| w[0] >= w[1])
        || episode_starts.len() != meta.n_episodes
        || episode_starts.last().copied().unwrap_or(0) >= meta.n_steps
    {
        return Err(StoreError::Malformed {
            path: dir.join("boundaries.json"),
            msg: format!(
                "episode starts must be ascending from 0 below n_steps={}, got {} entries",
                meta.n_steps,
                episode_starts.len()
            ),
        });
    }
    let expect = |name: &str| -> Result<usize> {
        meta.arrays
            .get(name)
            .copied()
            .ok_or_else(|| StoreError::Malformed {
                path: dir.join("meta.json"),
                msg: format!("array {name:?} missing from meta"),
            })
    };
    let embeddings = read_f32_file(&dir.join("embeddings.f32"), "embeddings", expect("embeddings")?)?;
    let proprio = read_f32_file(&dir.join("proprio.f32"), "proprio", expect("proprio")?)?;
    let actions = read_f32_file(&dir.join("actions.f32"), "actions", expect("actions")?)?;
    let renders = if meta.arrays.contains_key("renders") {
        Some(read_f32_file(&dir.join("renders.f32"), "renders", expect("renders")?)?)
    } else {
        None
    };
    let true_latents = if meta.arrays.contains_key("latents") {
        Some(read_f32_file(&dir.join("latents.f32"), "latents", expect("latents")?)?)
    } else {
        None
    };
    let batch = TrajectoryBatch {
        d_x: meta.d_x,
        d_p: meta.d_p,
        d_a: meta.d_a,
        d_true: meta.d_true,
        n_steps: meta.n_steps,
        episode_starts,
        embeddings,
        proprio,
        actions,
        renders,
        true_latents,
    };
    Ok((batch, meta))
}

/// Per-dimension proprioception statistics, computed on the training split
/// only. Standard deviations are population (divide by n) and floored at
/// 1e-6 so standardization can never divide by zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationStats {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

pub const STD_FLOOR: f32 = 1e-6;

/// Computes proprio statistics over the given row ranges (the training
/// split from [`TrajectoryBatch::split_episodes`]).
pub fn compute_stats(batch: &TrajectoryBatch, ranges: &[(usize, usize)]) -> Result<StandardizationStats> {
    let d = batch.d_p;
    let mut n = 0usize;
    let mut mean = vec![0.0f64; d];
    for (s, e) in ranges {
        for t in *s..*e {
            let row = batch.proprio_row(t);
            for k in 0..d {
                mean[k] += row[k] as f64;
            }
        }
        n += e - s;
    }
    if n == 0 {
        return Err(StoreError::Empty);
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut var = vec![0.0f64; d];
    for (s, e) in ranges {
        for t in *s..*e {
            let row = batch.proprio_row(t);
            for k in 0..d {
                let c = row[k] as f64 - mean[k];
                var[k] += c * c;
            }
        }
    }
    let std = var
        .iter()
        .map(|v| ((v / n as f64).sqrt() as f32).max(STD_FLOOR))
        .collect();
    Ok(StandardizationStats {
        mean: mean.iter().map(|m| *m as f32).collect(),
        std,
    })
}

impl StandardizationStats {
    pub fn apply(&self, raw: &[f32], out: &mut [f32]) {
        debug_assert_eq!(raw.len(), self.mean.len());
        for k in 0..raw.len() {
            out[k] = (raw[k] - self.mean[k]) / self.std[k];
        }
    }

    pub fn apply_vec(&self, raw: &[f32]) -> Vec<f32> {
        let mut out = vec![0.0; raw.len()];
        self.apply(raw, &mut out);
        out
    }
}
