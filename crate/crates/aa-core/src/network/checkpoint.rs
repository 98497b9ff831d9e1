//! Checkpoint files: a JSON header plus an f32 little-endian parameter
//! blob.
//!
//! Layout:
//!
//! ```text
//! magic       4 bytes  "AACK"
//! header_len  u32 LE
//! header      JSON: format version, architecture, param count,
//!             blob SHA-256, seed, epoch, optimizer settings, metadata
//! blob        param_count * f32 LE, flat parameter order
//! ```
//!
//! Parameters are held in f64 in memory but stored as f32; callers that
//! want metrics to be bit-reproducible from the file should call
//! [`NetworkParams::quantize_f32`] before evaluating and saving.

use super::{Architecture, NetworkParams};
use crate::error::{Error, Result};
use crate::eventgen::Provenance;
use crate::util::sha256_hex;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

const MAGIC: &[u8; 4] = b"AACK";
pub const CHECKPOINT_VERSION: u16 = 1;

/// Optimizer settings recorded for audit; moment vectors are not stored
/// (each run re-initializes its optimizer state).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerInfo {
    /// "adam" or "sgd".
    pub name: String,
    pub learning_rate: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
}

/// Run context stored alongside the parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    /// Global seed of the producing run.
    pub seed: u64,
    /// Epochs completed when the checkpoint was written.
    pub epoch: usize,
    pub optimizer: OptimizerInfo,
    /// Free-form run metadata (losses, accuracies, run kind, ...).
    #[serde(default)]
    pub metadata: BTreeMap<String, serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u16,
    architecture: Architecture,
    param_count: usize,
    blob_sha256: String,
    #[serde(flatten)]
    meta: CheckpointMeta,
}

pub fn save_checkpoint(path: &Path, params: &NetworkParams, meta: &CheckpointMeta) -> Result<()> {
    let mut blob = Vec::with_capacity(4 * params.flat_view().len());
    for &v in params.flat_view() {
        blob.extend_from_slice(&(v as f32).to_le_bytes());
    }
    let header = Header {
        format_version: CHECKPOINT_VERSION,
        architecture: params.arch.clone(),
        param_count: params.flat_view().len(),
        blob_sha256: sha256_hex(&blob),
        meta: meta.clone(),
    };
    let header_bytes = serde_json::to_vec(&header)
        .map_err(|e| Error::Format(format!("checkpoint header serialization: {e}")))?;

    let mut out = Vec::with_capacity(8 + header_bytes.len() + blob.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header_bytes.len() as u32).to_le_bytes());
    out.extend_from_slice(&header_bytes);
    out.extend_from_slice(&blob);
    std::fs::write(path, out)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(NetworkParams, CheckpointMeta)> {
    let bytes = std::fs::read(path)?;
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(Error::Format("not a checkpoint file (bad magic)".into()));
    }
    let header_len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    if bytes.len() < 8 + header_len {
        return Err(Error::Format("checkpoint truncated inside header".into()));
    }
    let header: Header = serde_json::from_slice(&bytes[8..8 + header_len])
        .map_err(|e| Error::Format(format!("checkpoint header parse: {e}")))?;
    if header.format_version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
            header.format_version
        )));
    }
    let blob = &bytes[8 + header_len..];
    if blob.len() != 4 * header.param_count {
        return Err(Error::Format(format!(
            "checkpoint blob holds {} bytes, expected {}",
            blob.len(),
            4 * header.param_count
        )));
    }
    if sha256_hex(blob) != header.blob_sha256 {
        return Err(Error::Format(
            "checkpoint blob digest does not match header".into(),
        ));
    }
    let flat: Vec<f64> = blob
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    let params = NetworkParams::from_flat(header.architecture, flat).map_err(|e| {
        Error::Format(format!("checkpoint blob inconsistent with architecture: {e}"))
    })?;
    Ok((params, header.meta))
}
