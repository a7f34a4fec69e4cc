//! Self-describing checkpoint container.
//!
//! Layout: 8-byte magic `IAUGCKPT`, u32 LE format version, u64 LE header
//! length, UTF-8 JSON header, then the parameter blob as little-endian f32.
//! The header carries the model kind and its configuration.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"IAUGCKPT";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header<C> {
    kind: String,
    num_params: usize,
    config: C,
}

/// Content hash of a configuration and its weights (hex, 16 chars).
pub fn content_id<C: Serialize>(kind: &str, config: &C, params: &[f32]) -> String {
    let mut h = Sha256::new();
    h.update(kind.as_bytes());
    h.update(serde_json::to_vec(config).expect("config serializes"));
    for p in params {
        h.update(p.to_le_bytes());
    }
    hex::encode(&h.finalize()[..8])
}

pub fn encode<C: Serialize>(kind: &str, config: &C, params: &[f32]) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(&Header {
        kind: kind.to_owned(),
        num_params: params.len(),
        config,
    })?;
    let mut out = Vec::with_capacity(20 + header.len() + 4 * params.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for p in params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    Ok(out)
}

pub fn decode<C: DeserializeOwned>(kind: &str, bytes: &[u8]) -> Result<(C, Vec<f32>)> {
    let bad = |m: &str| Error::Checkpoint(m.to_owned());
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(bad("missing magic bytes"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported format version {version}")));
    }
    let header_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let body = bytes.get(20..20 + header_len).ok_or_else(|| bad("truncated header"))?;
    let header: Header<C> = serde_json::from_slice(body)?;
    if header.kind != kind {
        return Err(Error::Checkpoint(format!(
            "expected a {kind} checkpoint, found {}",
            header.kind
        )));
    }
    let blob = &bytes[20 + header_len..];
    if blob.len() != 4 * header.num_params {
        return Err(bad("parameter blob length does not match header"));
    }
    let params = blob
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((header.config, params))
}

pub fn save<C: Serialize>(path: &Path, kind: &str, config: &C, params: &[f32]) -> Result<()> {
    fs::write(path, encode(kind, config, params)?)?;
    Ok(())
}

pub fn load<C: DeserializeOwned>(path: &Path, kind: &str) -> Result<(C, Vec<f32>)> {
    let bytes = fs::read(path).map_err(|source| Error::Load {
        path: path.to_owned(),
        source,
    })?;
    decode(kind, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encode_decode() {
        let params = vec![1.5f32, -2.0, 0.0];
        let bytes = encode("toy", &vec![3u32, 4], &params).unwrap();
        let (cfg, p): (Vec<u32>, Vec<f32>) = decode("toy", &bytes).unwrap();
        assert_eq!(cfg, vec![3, 4]);
        assert_eq!(p, params);
        assert!(decode::<Vec<u32>>("other", &bytes).is_err());
        assert!(decode::<Vec<u32>>("toy", &bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn id_depends_on_weights() {
        let a = content_id("k", &1u8, &[1.0]);
        assert_eq!(a, content_id("k", &1u8, &[1.0]));
        assert_ne!(a, content_id("k", &1u8, &[1.0001]));
        assert_ne!(a, content_id("k", &2u8, &[1.0]));
    }
}
