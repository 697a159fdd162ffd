//! Checkpoint directories: `manifest.json` describing the run and an
//! ordered tensor table, plus `weights.bin` with every tensor's f32
//! little-endian bytes concatenated in table order. Writes go to a fresh
//! sibling directory that is renamed into place, so a crash never leaves a
//! half-written checkpoint at the target path.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams};
use crate::tensor::Tensor;
use crate::trainer::{Checkpoint, TrainConfig};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const WEIGHTS_FILE: &str = "weights.bin";

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    byte_offset: u64,
    byte_len: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    model_config: ModelConfig,
    train_config: TrainConfig,
    vocab_digest: String,
    epoch: usize,
    rng_state: u64,
    tensors: Vec<TensorEntry>,
}

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

fn staging_dir(target: &Path) -> PathBuf {
    let stem = target
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "checkpoint".to_string());
    let unique = format!(
        ".{stem}.tmp-{}-{}",
        std::process::id(),
        TMP_COUNTER.fetch_add(1, Ordering::Relaxed)
    );
    match target.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.join(unique),
        _ => PathBuf::from(unique),
    }
}

/// Writes `checkpoint` to `dir`, replacing any checkpoint already there.
pub fn save_checkpoint(checkpoint: &Checkpoint, dir: &Path) -> Result<()> {
    let staging = staging_dir(dir);
    fs::create_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
    let result = write_files(checkpoint, &staging).and_then(|()| {
        if dir.exists() {
            fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::rename(&staging, dir).map_err(|e| Error::io(dir, e))
    });
    if result.is_err() {
        let _ = fs::remove_dir_all(&staging);
    }
    result
}

fn write_files(checkpoint: &Checkpoint, dir: &Path) -> Result<()> {
    let weights_path = dir.join(WEIGHTS_FILE);
    let file = fs::File::create(&weights_path).map_err(|e| Error::io(&weights_path, e))?;
    let mut writer = BufWriter::new(file);
    let mut entries = Vec::new();
    let mut offset = 0u64;
    for (name, tensor) in checkpoint.params.named_tensors() {
        let byte_len = (tensor.numel() * 4) as u64;
        for v in &tensor.data {
            writer
                .write_all(&v.to_le_bytes())
                .map_err(|e| Error::io(&weights_path, e))?;
        }
        entries.push(TensorEntry {
            name,
            shape: tensor.shape.clone(),
            byte_offset: offset,
            byte_len,
        });
        offset += byte_len;
    }
    writer.flush().map_err(|e| Error::io(&weights_path, e))?;

    let manifest = Manifest {
        format_version: CHECKPOINT_FORMAT_VERSION,
        model_config: checkpoint.params.config.clone(),
        train_config: checkpoint.train_config.clone(),
        vocab_digest: checkpoint.vocab_digest.clone(),
        epoch: checkpoint.epoch,
        rng_state: checkpoint.rng_state,
        tensors: entries,
    };
    let manifest_path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Checkpoint(format!("manifest serialization failed: {e}")))?;
    fs::write(&manifest_path, json).map_err(|e| Error::io(&manifest_path, e))
}

/// Reads a checkpoint directory back, verifying version, table layout, and
/// blob length before reconstructing the parameters.
pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let json = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&json)
        .map_err(|e| Error::Checkpoint(format!("malformed manifest: {e}")))?;
    if manifest.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint format version {} (this build reads {CHECKPOINT_FORMAT_VERSION})",
            manifest.format_version
        )));
    }

    let weights_path = dir.join(WEIGHTS_FILE);
    let blob = fs::read(&weights_path).map_err(|e| Error::io(&weights_path, e))?;
    let mut expected = 0u64;
    for entry in &manifest.tensors {
        if entry.byte_offset != expected {
            return Err(Error::Checkpoint(format!(
                "tensor {} starts at byte {}, expected {expected}",
                entry.name, entry.byte_offset
            )));
        }
        let numel: usize = entry.shape.iter().product();
        if entry.byte_len != (numel * 4) as u64 {
            return Err(Error::Checkpoint(format!(
                "tensor {} declares {} bytes but shape {:?} needs {}",
                entry.name,
                entry.byte_len,
                entry.shape,
                numel * 4
            )));
        }
        expected += entry.byte_len;
    }
    if blob.len() as u64 != expected {
        return Err(Error::Checkpoint(format!(
            "weights blob holds {} bytes, manifest expects {expected}",
            blob.len()
        )));
    }

    let tensors: Vec<(String, Tensor)> = manifest
        .tensors
        .iter()
        .map(|entry| {
            let lo = entry.byte_offset as usize;
            let hi = lo + entry.byte_len as usize;
            let data: Vec<f32> = blob[lo..hi]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            (entry.name.clone(), Tensor::new(entry.shape.clone(), data))
        })
        .collect();
    let params = ModelParams::from_named_tensors(manifest.model_config, tensors)?;
    Ok(Checkpoint {
        params,
        train_config: manifest.train_config,
        vocab_digest: manifest.vocab_digest,
        epoch: manifest.epoch,
        rng_state: manifest.rng_state,
    })
}
