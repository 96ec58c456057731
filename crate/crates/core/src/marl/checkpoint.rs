//! Binary checkpoint container.
//!
//! Layout: 8-byte magic, `u32` version, `u64` header length, JSON header
//! (config, environment tag, architecture, layout, bounds), live then
//! target parameters as little-endian `f64`, and a SHA-256 of everything
//! before it.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diffcore::{Layout, ParameterVector};

use super::nets::{ActorCriticBundle, NetShapes};
use super::trainer::TrainedPair;
use super::{MarlError, TrainerConfig};

const MAGIC: &[u8; 8] = b"STMARLCK";
pub const CHECKPOINT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: TrainerConfig,
    env: String,
    shapes: NetShapes,
    layout: Layout,
    action_bounds: [f64; 2],
    tau: f64,
    gamma: f64,
    params: usize,
}

fn reject(msg: impl Into<String>) -> MarlError {
    MarlError::Checkpoint(msg.into())
}

pub fn write_pair<W: Write>(mut out: W, pair: &TrainedPair) -> Result<(), MarlError> {
    let b = &pair.bundle;
    let header = Header {
        config: pair.config.clone(),
        env: pair.env.clone(),
        shapes: b.shapes.clone(),
        layout: (**b.live.layout()).clone(),
        action_bounds: b.action_bounds,
        tau: b.tau,
        gamma: b.gamma,
        params: b.live.len(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| reject(e.to_string()))?;
    let mut buf = Vec::with_capacity(20 + json.len() + 16 * b.live.len() + DIGEST_LEN);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    for v in b.live.values().iter().chain(b.target.values()) {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    out.write_all(&buf)?;
    Ok(())
}

pub fn read_pair<R: Read>(mut input: R) -> Result<TrainedPair, MarlError> {
    let mut buf = Vec::new();
    input.read_to_end(&mut buf)?;
    if buf.len() < MAGIC.len() || &buf[..MAGIC.len()] != MAGIC {
        return Err(reject("not a checkpoint file (bad magic)"));
    }
    if buf.len() < 20 + DIGEST_LEN {
        return Err(reject(format!("truncated: {} bytes", buf.len())));
    }
    let version = u32::from_le_bytes(buf[8..12].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(reject(format!("unsupported version {version} (expected {CHECKPOINT_VERSION})")));
    }
    let (body, digest) = buf.split_at(buf.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(reject("checksum mismatch (truncated or corrupt)"));
    }
    let header_len = u64::from_le_bytes(body[12..20].try_into().expect("8 bytes")) as usize;
    let rest = body.len() - 20;
    if header_len > rest {
        return Err(reject("header length exceeds file"));
    }
    let header: Header = serde_json::from_slice(&body[20..20 + header_len]).map_err(|e| reject(format!("bad header: {e}")))?;
    let data = &body[20 + header_len..];
    if data.len() != 16 * header.params {
        return Err(reject(format!(
            "expected {} parameter bytes, found {}",
            16 * header.params,
            data.len()
        )));
    }
    let layout = header.shapes.layout();
    if *layout != header.layout || layout.len() != header.params {
        return Err(reject("parameter layout does not match the stored architecture"));
    }
    let floats: Vec<f64> = data
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let (live, target) = floats.split_at(header.params);
    let live = ParameterVector::from_values(layout.clone(), live.to_vec()).map_err(|e| reject(e.to_string()))?;
    let target = ParameterVector::from_values(layout, target.to_vec()).map_err(|e| reject(e.to_string()))?;
    Ok(TrainedPair {
        bundle: ActorCriticBundle {
            shapes: header.shapes,
            live,
            target,
            action_bounds: header.action_bounds,
            tau: header.tau,
            gamma: header.gamma,
        },
        config: header.config,
        env: header.env,
    })
}

/// Writes through a sibling temporary file so a crash never leaves a
/// partial checkpoint at `path`.
pub fn save_pair(path: &Path, pair: &TrainedPair) -> Result<(), MarlError> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::io::BufWriter::new(std::fs::File::create(&tmp)?);
        write_pair(&mut f, pair)?;
        f.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_pair(path: &Path) -> Result<TrainedPair, MarlError> {
    read_pair(std::fs::File::open(path)?)
}
