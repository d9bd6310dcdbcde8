//! Versioned checkpoint container: all four networks, their optimizer
//! states, RNG states and training counters, with a content hash so a
//! truncated or hand-edited file is refused instead of half-loaded.
//!
//! The JSON body is canonicalized (sorted object keys, shortest float
//! representation) before hashing, and floats round-trip bit-exactly.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::guidance::ObsMode;
use crate::neural::{AdamState, DenseNet};
use crate::rng::RngState;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad checkpoint file: {0}")]
    Format(#[from] serde_json::Error),
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checkpoint failed its integrity check: content hash mismatch")]
    Integrity,
    #[error("checkpoint is missing {0}")]
    Missing(&'static str),
}

/// A network together with its optimizer state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkBundle {
    pub net: DenseNet,
    pub optimizer: AdamState,
}

/// Counters and identity of a training run, stored alongside the weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub obs_mode: ObsMode,
    pub hidden: Vec<usize>,
    pub stage: u32,
    pub episodes_trained: u64,
    pub env_steps: u64,
    pub updates_applied: u64,
    pub created_by: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub policy: NetworkBundle,
    pub q1: NetworkBundle,
    pub q2: NetworkBundle,
    pub value: NetworkBundle,
    pub target_value: DenseNet,
    pub policy_rng: RngState,
    pub buffer_rng: RngState,
}

impl Checkpoint {
    pub fn save(&self, path: &std::path::Path) -> Result<(), CheckpointError> {
        // canonical body: serde_json's Value sorts object keys
        let body = serde_json::to_value(self)?;
        let body_str = serde_json::to_string(&body)?;
        let digest = hex_digest(&body_str);
        let file = format!(
            "{{\"version\":{CHECKPOINT_VERSION},\"sha256\":\"{digest}\",\"body\":{body_str}}}\n"
        );
        std::fs::write(path, file)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self, CheckpointError> {
        let text = std::fs::read_to_string(path)?;
        let value: serde_json::Value = serde_json::from_str(&text)?;
        let version = value
            .get("version")
            .and_then(|v| v.as_u64())
            .ok_or(CheckpointError::Missing("version"))?;
        if version != CHECKPOINT_VERSION as u64 {
            return Err(CheckpointError::Version(version as u32));
        }
        let stored = value
            .get("sha256")
            .and_then(|v| v.as_str())
            .ok_or(CheckpointError::Missing("sha256"))?;
        let body = value.get("body").ok_or(CheckpointError::Missing("body"))?;
        let body_str = serde_json::to_string(body)?;
        if hex_digest(&body_str) != stored {
            return Err(CheckpointError::Integrity);
        }
        Ok(serde_json::from_value(body.clone())?)
    }
}

fn hex_digest(text: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(text.as_bytes());
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}
