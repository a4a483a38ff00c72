//! `XCKP` checkpoint files: JSON metadata (architecture, normalization
//! statistics, provenance) followed by every tensor as little-endian `f32`.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::model::{Architecture, SynthesisModel};
use super::train::TrainConfig;
use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};
use crate::grid::NormStats;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"XCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config: TrainConfig,
    pub seed: u64,
    /// Grid the model was trained on.
    pub grid: String,
    pub tech: String,
    pub density: f64,
    pub epochs: usize,
    /// Grid of the initializing checkpoint, for transferred models.
    pub init: Option<String>,
    pub init_fingerprint: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    pub model: SynthesisModel<f32>,
    pub provenance: Provenance,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    arch: Architecture,
    norm_stats: Option<NormStats>,
    provenance: Provenance,
}

impl ModelCheckpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = Meta {
            arch: self.model.arch.clone(),
            norm_stats: self.model.norm_stats.clone(),
            provenance: self.provenance.clone(),
        };
        let mut w = Writer::new(CHECKPOINT_MAGIC, CHECKPOINT_VERSION);
        w.bytes(&serde_json::to_vec(&meta)?);
        for stack in [&self.model.circuit, &self.model.physical] {
            let tensors = stack.tensors();
            w.u32(tensors.len() as u32);
            for t in tensors {
                w.f32s(t);
            }
        }
        Ok(w.finish())
    }

    pub fn from_bytes(path: &Path, bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::open(path, bytes, CHECKPOINT_MAGIC, CHECKPOINT_VERSION)?;
        let meta: Meta = serde_json::from_slice(r.bytes()?)?;
        if meta.arch.circuit_layers < 1 || meta.arch.physical_layers < 1 || meta.arch.hidden == 0 {
            return Err(r.err(format!("invalid architecture {:?}", meta.arch)));
        }
        let mut model: SynthesisModel<f32> =
            SynthesisModel::new(meta.arch, &mut ChaCha8Rng::seed_from_u64(0));
        for stack in [&mut model.circuit, &mut model.physical] {
            let mut tensors = stack.tensors_mut();
            let count = r.u32()? as usize;
            if count != tensors.len() {
                return Err(r.err(format!(
                    "expected {} tensors, found {count}",
                    tensors.len()
                )));
            }
            for t in tensors.iter_mut() {
                let data = r.f32s()?;
                if data.len() != t.len() {
                    return Err(r.err(format!(
                        "tensor length {} does not match architecture ({})",
                        data.len(),
                        t.len()
                    )));
                }
                t.copy_from_slice(&data);
            }
        }
        r.finish()?;
        model.norm_stats = meta.norm_stats;
        Ok(Self {
            model,
            provenance: meta.provenance,
        })
    }

    /// Hex SHA-256 of the serialized checkpoint.
    pub fn fingerprint(&self) -> String {
        let bytes = self.to_bytes().expect("checkpoint metadata serializes");
        format!("{:x}", Sha256::digest(bytes))
    }
}

pub fn save_checkpoint(ckpt: &ModelCheckpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, ckpt.to_bytes()?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelCheckpoint> {
    let path = path.as_ref();
    ModelCheckpoint::from_bytes(path, &fs::read(path)?)
}

/// Loads a checkpoint meant to initialize training under `cfg`, refusing
/// architecture mismatches up front.
pub fn load_init_checkpoint(path: impl AsRef<Path>, cfg: &TrainConfig) -> Result<ModelCheckpoint> {
    let ckpt = load_checkpoint(path)?;
    ckpt.model
        .arch
        .ensure_matches(&cfg.architecture())
        .map_err(|e| match e {
            Error::Architecture(d) => Error::Architecture(format!("checkpoint vs config: {d}")),
            other => other,
        })?;
    Ok(ckpt)
}
