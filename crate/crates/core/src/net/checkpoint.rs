//! Checkpoint files.
//!
//! Layout: the 8-byte magic `PGAZNET1`, a little-endian `u64` byte length
//! of the JSON header, the JSON header itself, then every tensor as raw
//! little-endian `f32` values in header order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::layout::TENSORS;
use super::model::NetParams;
use super::ops::Real;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"PGAZNET1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub dtype: String,
    pub nu_max: f64,
    pub count: usize,
    pub tensors: Vec<TensorEntry>,
}

pub fn encode<F: Real>(params: &NetParams<F>) -> Vec<u8> {
    let header = CheckpointHeader {
        format_version: FORMAT_VERSION,
        dtype: "f32".into(),
        nu_max: params.nu_max(),
        count: params.values().len(),
        tensors: TENSORS
            .iter()
            .map(|t| TensorEntry { name: t.name().into(), shape: t.shape().to_vec(), count: t.len() })
            .collect(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(16 + json.len() + 4 * params.values().len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for v in params.values() {
        out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<NetParams<f32>> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("bad magic"));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let json = bytes.get(16..16usize.saturating_add(hlen)).ok_or_else(|| bad("truncated header"))?;
    let header: CheckpointHeader = serde_json::from_slice(json).map_err(|e| bad(&format!("header: {e}")))?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::CheckpointVersion { found: header.format_version, supported: FORMAT_VERSION });
    }
    if header.dtype != "f32" {
        return Err(bad("only f32 payloads are supported"));
    }
    if header.tensors.len() != TENSORS.len() {
        return Err(bad("tensor list does not match the network"));
    }
    for (e, t) in header.tensors.iter().zip(TENSORS) {
        if e.name != t.name() || e.shape != t.shape() || e.count != t.len() {
            return Err(bad(&format!("tensor {} does not match the network", e.name)));
        }
    }
    let body = &bytes[16 + hlen..];
    if body.len() != header.count * 4 {
        return Err(bad(&format!("expected {} payload bytes, found {}", header.count * 4, body.len())));
    }
    let values = body.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    NetParams::from_values(header.nu_max, values)
}

pub fn save<F: Real>(params: &NetParams<F>, path: &Path) -> Result<()> {
    fs::write(path, encode(params)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<NetParams<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    fn params() -> NetParams<f32> {
        NetParams::init(7.5, &mut stream_rng(11, 0))
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        let p = params();
        save(&p, &path).unwrap();
        let q = load(&path).unwrap();
        assert_eq!(q.nu_max(), 7.5);
        assert!(p.values().iter().zip(q.values()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn wrong_magic() {
        let mut b = encode(&params());
        b[0] = b'X';
        assert!(matches!(decode(&b), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn newer_version_rejected() {
        let b = encode(&params());
        let hlen = u64::from_le_bytes(b[8..16].try_into().unwrap()) as usize;
        let json = std::str::from_utf8(&b[16..16 + hlen]).unwrap().replace("\"format_version\":1", "\"format_version\":2");
        let mut out = b[..8].to_vec();
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(json.as_bytes());
        out.extend_from_slice(&b[16 + hlen..]);
        assert!(matches!(decode(&out), Err(Error::CheckpointVersion { found: 2, .. })));
    }

    #[test]
    fn truncated_payload() {
        let b = encode(&params());
        assert!(decode(&b[..b.len() - 3]).is_err());
        assert!(decode(&b[..12]).is_err());
    }
}
