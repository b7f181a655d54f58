//! `W2T1` checkpoint files.
//!
//! Layout: the ASCII magic `W2T1`, a little-endian `u32` metadata length
//! `L`, `L` bytes of UTF-8 JSON metadata (configs, vocabulary, tensor
//! manifest), then every tensor as little-endian `f32` in manifest order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use w2t_numerics::Tensor;

use super::TrainConfig;
use crate::corpus::Vocab;
use crate::model::{Model, ModelConfig, ModelParams};

const MAGIC: &[u8; 4] = b"W2T1";
const FORMAT: &str = "W2T1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("unsupported checkpoint version: magic bytes {0:?}, expected \"W2T1\"")]
    Version(Vec<u8>),
    #[error("truncated checkpoint: {what} needs {needed} bytes, {available} available")]
    Truncated {
        what: &'static str,
        needed: usize,
        available: usize,
    },
    #[error("malformed checkpoint metadata: {0}")]
    Metadata(String),
    #[error("manifest entry {name:?}: {message}")]
    Manifest { name: String, message: String },
    #[error("vocabulary hash mismatch: recorded {recorded}, computed {computed}")]
    VocabHash { recorded: String, computed: String },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub train: TrainConfig,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// Byte offset within the payload.
    offset: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Metadata {
    format: String,
    model: ModelConfig,
    train: TrainConfig,
    vocab: Vocab,
    vocab_hash: String,
    tensors: Vec<TensorEntry>,
}

pub fn write_checkpoint(ckpt: &Checkpoint) -> Vec<u8> {
    let mut offset = 0;
    let tensors = ckpt
        .model
        .params
        .iter()
        .map(|(name, t)| {
            let e = TensorEntry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                offset,
            };
            offset += 4 * t.len();
            e
        })
        .collect();
    let meta = Metadata {
        format: FORMAT.into(),
        model: ckpt.model.config.clone(),
        train: ckpt.train.clone(),
        vocab: ckpt.model.vocab.clone(),
        vocab_hash: ckpt.model.vocab.hash(),
        tensors,
    };
    let json = serde_json::to_vec(&meta).expect("metadata serializes");
    let mut out = Vec::with_capacity(8 + json.len() + offset);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for t in ckpt.model.params.tensors() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    let truncated = |what, needed, available| CheckpointError::Truncated {
        what,
        needed,
        available,
    };
    if bytes.len() < 4 {
        return Err(truncated("magic", 4, bytes.len()));
    }
    if &bytes[..4] != MAGIC {
        return Err(CheckpointError::Version(bytes[..4].to_vec()));
    }
    if bytes.len() < 8 {
        return Err(truncated("metadata length", 8, bytes.len()));
    }
    let len = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    if bytes.len() < 8 + len {
        return Err(truncated("metadata", 8 + len, bytes.len()));
    }
    let meta: Metadata = serde_json::from_slice(&bytes[8..8 + len])
        .map_err(|e| CheckpointError::Metadata(e.to_string()))?;
    if meta.format != FORMAT {
        return Err(CheckpointError::Version(meta.format.into_bytes()));
    }
    let computed = meta.vocab.hash();
    if computed != meta.vocab_hash {
        return Err(CheckpointError::VocabHash {
            recorded: meta.vocab_hash,
            computed,
        });
    }
    meta.model
        .validate()
        .map_err(|e| CheckpointError::Metadata(e.to_string()))?;

    let expected = ModelParams::<f32>::zeros(&meta.model, meta.vocab.len());
    if expected.len() != meta.tensors.len() {
        return Err(CheckpointError::Manifest {
            name: String::new(),
            message: format!(
                "{} tensors listed, configuration needs {}",
                meta.tensors.len(),
                expected.len()
            ),
        });
    }
    let payload = &bytes[8 + len..];
    let mut named = Vec::with_capacity(meta.tensors.len());
    let mut offset = 0;
    for (e, (want_name, want)) in meta.tensors.iter().zip(expected.iter()) {
        let bad = |message: String| CheckpointError::Manifest {
            name: e.name.clone(),
            message,
        };
        if e.name != want_name {
            return Err(bad(format!("expected tensor {want_name:?} here")));
        }
        if e.shape != want.shape() {
            return Err(bad(format!(
                "shape {:?} does not match configuration {:?}",
                e.shape,
                want.shape()
            )));
        }
        if e.offset != offset {
            return Err(bad(format!(
                "offset {} where {offset} was expected",
                e.offset
            )));
        }
        let n = want.len() * 4;
        if payload.len() < offset + n {
            return Err(truncated("tensor payload", offset + n, payload.len()));
        }
        let data = payload[offset..offset + n]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let t = Tensor::new(e.shape.clone(), data).map_err(|err| bad(err.to_string()))?;
        named.push((e.name.clone(), t));
        offset += n;
    }
    if payload.len() != offset {
        return Err(CheckpointError::Metadata(format!(
            "{} trailing bytes after the last tensor",
            payload.len() - offset
        )));
    }
    let params = ModelParams::from_named(&meta.model, meta.vocab.len(), named).map_err(|e| {
        CheckpointError::Manifest {
            name: String::new(),
            message: e.to_string(),
        }
    })?;
    Ok(Checkpoint {
        model: Model {
            config: meta.model,
            vocab: meta.vocab,
            params,
        },
        train: meta.train,
    })
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<(), CheckpointError> {
    fs::write(path, write_checkpoint(ckpt)).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_checkpoint(&bytes)
}
