//! Binary checkpoint container.
//!
//! Layout: 8-byte magic, `u32` version (LE), `u64` payload length (LE),
//! 32-byte SHA-256 of the payload, then the bincode payload.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{RunConfig, RunIoError};
use crate::training::TrainerState;

pub const CHECKPOINT_MAGIC: [u8; 8] = *b"CMQCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;
const HEADER: usize = 8 + 4 + 8 + 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub state: TrainerState,
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>, RunIoError> {
    let payload = bincode::serialize(ckpt).map_err(|e| RunIoError::Corrupt(e.to_string()))?;
    let mut out = Vec::with_capacity(HEADER + payload.len());
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(&Sha256::digest(&payload));
    out.extend_from_slice(&payload);
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint, RunIoError> {
    if bytes.len() < 8 || bytes[..8] != CHECKPOINT_MAGIC {
        return Err(RunIoError::BadMagic);
    }
    if bytes.len() < HEADER {
        return Err(RunIoError::Corrupt(format!(
            "truncated header: {} of {HEADER} bytes",
            bytes.len()
        )));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(RunIoError::Version {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
    let body = &bytes[HEADER..];
    if body.len() as u64 != len {
        return Err(RunIoError::Corrupt(format!(
            "payload is {} bytes, header says {len}",
            body.len()
        )));
    }
    if Sha256::digest(body).as_slice() != &bytes[20..52] {
        return Err(RunIoError::Corrupt("checksum mismatch".into()));
    }
    let ckpt: Checkpoint =
        bincode::deserialize(body).map_err(|e| RunIoError::Corrupt(e.to_string()))?;
    if ckpt.state.env != ckpt.config.env || ckpt.state.model != ckpt.config.model {
        return Err(RunIoError::Corrupt("state does not match its config".into()));
    }
    Ok(ckpt)
}

/// Writes atomically: a sibling temporary file is renamed over `path`.
pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<(), RunIoError> {
    let bytes = encode_checkpoint(ckpt)?;
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    let write = || -> std::io::Result<()> {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    };
    write().map_err(|e| RunIoError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, RunIoError> {
    let bytes = std::fs::read(path).map_err(|e| RunIoError::io(path, e))?;
    decode_checkpoint(&bytes).map_err(|e| e.in_file(path))
}
