//! Flat little-endian `f32` parameter blobs with a JSON sidecar.

use crate::error::{Error, IoContext, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::fs;
use std::path::Path;

const MAGIC: &[u8; 8] = b"LUSRPRM1";

/// Serialize parameter groups as `MAGIC | n_groups | (len | values)*`.
pub fn encode_blob(groups: &[&[f32]]) -> Vec<u8> {
    let total: usize = groups.iter().map(|g| g.len()).sum();
    let mut out = Vec::with_capacity(16 + 8 * groups.len() + 4 * total);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(groups.len() as u64).to_le_bytes());
    for g in groups {
        out.extend_from_slice(&(g.len() as u64).to_le_bytes());
        for v in g.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_blob(bytes: &[u8], path: &Path) -> Result<Vec<Vec<f32>>> {
    let bad = |reason: &str| Error::Manifest {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("not a parameter blob"));
    }
    let read_u64 = |at: usize| -> Result<u64> {
        bytes
            .get(at..at + 8)
            .map(|b| u64::from_le_bytes(b.try_into().unwrap()))
            .ok_or_else(|| bad("truncated blob"))
    };
    let n = read_u64(8)? as usize;
    let mut at = 16;
    let mut groups = Vec::with_capacity(n);
    for _ in 0..n {
        let len = read_u64(at)? as usize;
        at += 8;
        let body = bytes
            .get(at..at + 4 * len)
            .ok_or_else(|| bad("truncated blob"))?;
        groups.push(
            body.chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        );
        at += 4 * len;
    }
    if at != bytes.len() {
        return Err(bad("trailing bytes after parameter groups"));
    }
    Ok(groups)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn hash_params(groups: &[&[f32]]) -> String {
    sha256_hex(&encode_blob(groups))
}

/// Write `<stem>.bin` and `<stem>.json`.
pub fn save<M: Serialize>(dir: &Path, stem: &str, groups: &[&[f32]], meta: &M) -> Result<()> {
    fs::create_dir_all(dir).at(dir)?;
    let bin = dir.join(format!("{stem}.bin"));
    fs::write(&bin, encode_blob(groups)).at(&bin)?;
    let json = dir.join(format!("{stem}.json"));
    fs::write(&json, serde_json::to_string_pretty(meta)?).at(&json)?;
    Ok(())
}

pub fn load<M: DeserializeOwned>(dir: &Path, stem: &str) -> Result<(Vec<Vec<f32>>, M)> {
    let json = dir.join(format!("{stem}.json"));
    let bin = dir.join(format!("{stem}.bin"));
    if !json.exists() {
        return Err(Error::MissingArtifact(json));
    }
    if !bin.exists() {
        return Err(Error::MissingArtifact(bin));
    }
    let meta: M = serde_json::from_str(&fs::read_to_string(&json).at(&json)?).map_err(|e| {
        Error::Manifest {
            path: json.clone(),
            reason: e.to_string(),
        }
    })?;
    let groups = decode_blob(&fs::read(&bin).at(&bin)?, &bin)?;
    Ok((groups, meta))
}
