//! Binary model checkpoint.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! bytes 0..4    magic "PSEQ"
//! bytes 4..8    format version (u32, currently 1)
//! bytes 8..16   metadata length M (u64)
//! next M bytes  metadata JSON (CheckpointMeta)
//! next 8N bytes tensor values (f64), in the model's fixed tensor walk order
//! last 4 bytes  CRC-32 of everything before it (u32)
//! ```
//!
//! The metadata's model spec pins every tensor shape, so the value block
//! needs no per-tensor framing. Serialization is deterministic: the same
//! model and metadata always produce the same bytes, which makes reproduced
//! training runs comparable with a file hash.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{io_error, DataError};
use crate::embeddings::OovPolicy;
use crate::models::{AnyModel, ModelSpec, TrainConfig};
use crate::nn::TensorSet;

pub const MAGIC: [u8; 4] = *b"PSEQ";
pub const FORMAT_VERSION: u32 = 1;

/// Everything needed to rebuild the inference pipeline around the weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub spec: ModelSpec,
    /// Decision threshold for the sigmoid heads.
    pub threshold: f64,
    /// Whether text was lowercased during normalization at training time.
    pub lowercase: bool,
    /// How out-of-vocabulary tokens were vectorized.
    pub oov: OovPolicy,
    /// Padded sequence length used throughout training; inference pads to
    /// the same length so the network sees the dynamics it was fit under.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pad_length: Option<usize>,
    /// Role names behind the tag vocabulary (tagger only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub roles: Option<Vec<String>>,
    /// Entity labels, `NONE` first (tagger only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entity_labels: Option<Vec<String>>,
    /// The resolved configuration the model was trained with.
    pub train_config: TrainConfig,
}

fn corrupt(path: &Path, reason: impl Into<String>) -> DataError {
    DataError::CorruptCheckpoint {
        path: path.display().to_string(),
        reason: reason.into(),
    }
}

pub fn save_checkpoint(
    path: impl AsRef<Path>,
    model: &AnyModel,
    meta: &CheckpointMeta,
) -> Result<(), DataError> {
    let path = path.as_ref();
    if meta.spec != model.spec() {
        return Err(DataError::Checkpoint {
            path: path.display().to_string(),
            reason: "metadata spec does not match the model's shapes".into(),
        });
    }
    let meta_json = serde_json::to_vec(meta).expect("checkpoint metadata serializes");
    let values = model.to_flat();
    let mut buf =
        Vec::with_capacity(4 + 4 + 8 + meta_json.len() + values.len() * 8 + 4);
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(meta_json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&meta_json);
    for v in &values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut hasher = crc32fast::Hasher::new();
    hasher.update(&buf);
    buf.extend_from_slice(&hasher.finalize().to_le_bytes());
    std::fs::write(path, &buf).map_err(|e| io_error(path, e))
}

pub fn load_checkpoint(
    path: impl AsRef<Path>,
) -> Result<(AnyModel, CheckpointMeta), DataError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| io_error(path, e))?;
    if bytes.len() < 4 + 4 + 8 + 4 {
        return Err(corrupt(path, format!("truncated ({} bytes)", bytes.len())));
    }
    if bytes[..4] != MAGIC {
        return Err(corrupt(path, "bad magic; not a model checkpoint"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(DataError::VersionMismatch {
            path: path.display().to_string(),
            found: version,
            supported: FORMAT_VERSION,
        });
    }
    let body_end = bytes.len() - 4;
    let stored_crc = u32::from_le_bytes(bytes[body_end..].try_into().unwrap());
    let mut hasher = crc32fast::Hasher::new();
    hasher.update(&bytes[..body_end]);
    let computed = hasher.finalize();
    if computed != stored_crc {
        return Err(corrupt(
            path,
            format!("CRC mismatch (stored {stored_crc:#010x}, computed {computed:#010x})"),
        ));
    }
    let meta_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let meta_end = 16usize
        .checked_add(meta_len)
        .filter(|&end| end <= body_end)
        .ok_or_else(|| corrupt(path, "metadata length runs past the file"))?;
    let meta: CheckpointMeta = serde_json::from_slice(&bytes[16..meta_end])
        .map_err(|e| corrupt(path, format!("metadata: {e}")))?;
    let mut model = meta.spec.build_zero();
    let expected = model.flat_len() * 8;
    let tensor_bytes = &bytes[meta_end..body_end];
    if tensor_bytes.len() != expected {
        return Err(corrupt(
            path,
            format!(
                "expected {expected} tensor bytes for this spec, found {}",
                tensor_bytes.len()
            ),
        ));
    }
    let values: Vec<f64> = tensor_bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    model.assign_flat(&values);
    Ok((model, meta))
}
