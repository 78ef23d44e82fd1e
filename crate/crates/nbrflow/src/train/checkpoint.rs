use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{Estimator, EstimatorConfig};
use crate::neighbors::NeighborhoodTable;
use crate::train::Optimizer;

const MAGIC: &[u8; 16] = b"NBRFLOW-CKPT\0\0\0\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub epoch: usize,
    pub best_valid_nll: f64,
    pub table_digest: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: EstimatorConfig,
    meta: CheckpointMeta,
    n_params: usize,
    optimizer: Option<Optimizer>,
}

/// Layout: 16-byte magic, u32 version, length-prefixed JSON architecture
/// header (which carries the optimizer state), the flat parameter payload as
/// little-endian f64, and a trailing CRC32 over everything after the magic.
pub fn save_checkpoint(
    est: &Estimator,
    optimizer: Option<&Optimizer>,
    meta: &CheckpointMeta,
    path: &Path,
) -> Result<()> {
    let header = Header {
        config: est.config.clone(),
        meta: meta.clone(),
        n_params: est.store.len(),
        optimizer: optimizer.cloned(),
    };
    let header_json = serde_json::to_vec(&header)?;
    let mut bytes = Vec::with_capacity(24 + header_json.len() + est.store.len() * 8);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&header_json);
    for v in est.store.values() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let crc = crc32(&bytes[16..]);
    bytes.extend_from_slice(&crc.to_le_bytes());
    fs::write(path, bytes)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(Estimator, Option<Optimizer>, CheckpointMeta)> {
    let bytes = fs::read(path)?;
    if bytes.len() < 28 || &bytes[..16] != MAGIC {
        return Err(Error::CorruptPayload("bad magic or truncated file".into()));
    }
    let body = &bytes[..bytes.len() - 4];
    let stored_crc = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
    if crc32(&body[16..]) != stored_crc {
        return Err(Error::CorruptPayload("checksum mismatch".into()));
    }
    let version = u32::from_le_bytes(body[16..20].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch { found: version, expected: FORMAT_VERSION });
    }
    let header_len = u32::from_le_bytes(body[20..24].try_into().unwrap()) as usize;
    let header_end = 24 + header_len;
    if body.len() < header_end {
        return Err(Error::CorruptPayload("truncated header".into()));
    }
    let header: Header = serde_json::from_slice(&body[24..header_end])
        .map_err(|e| Error::CorruptPayload(format!("bad header: {e}")))?;
    let payload = &body[header_end..];
    if payload.len() != header.n_params * 8 {
        return Err(Error::CorruptPayload(format!(
            "payload holds {} bytes, expected {}",
            payload.len(),
            header.n_params * 8
        )));
    }
    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    // the rng only shapes the initial weights, which are overwritten below
    let mut est = Estimator::build(header.config, &mut ChaCha8Rng::seed_from_u64(0))?;
    if est.store.len() != header.n_params {
        return Err(Error::CorruptPayload(format!(
            "architecture has {} parameters but payload has {}",
            est.store.len(),
            header.n_params
        )));
    }
    est.store.set_values(values);
    est.set_norms_initialized();
    Ok((est, header.optimizer, header.meta))
}

/// Rejects a table that changed since the checkpoint was written.
pub fn verify_table_digest(meta: &CheckpointMeta, table: &NeighborhoodTable) -> Result<()> {
    match &meta.table_digest {
        Some(d) if *d != table.digest() => Err(Error::DigestMismatch {
            found: table.digest(),
            expected: d.clone(),
        }),
        _ => Ok(()),
    }
}

fn crc32(bytes: &[u8]) -> u32 {
    // IEEE 802.3 polynomial, bit-reflected
    let mut table = [0u32; 256];
    for (i, e) in table.iter_mut().enumerate() {
        let mut c = i as u32;
        for _ in 0..8 {
            c = if c & 1 != 0 { 0xEDB8_8320 ^ (c >> 1) } else { c >> 1 };
        }
        *e = c;
    }
    let mut crc = 0xFFFF_FFFFu32;
    for &b in bytes {
        crc = table[((crc ^ b as u32) & 0xFF) as usize] ^ (crc >> 8);
    }
    !crc
}
