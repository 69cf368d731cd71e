//! Binary container: `JGEN` magic, little-endian u64 header length, JSON
//! header, then a little-endian f64 blob. The header records the blob length
//! and its SHA-256 so truncation and corruption are detected on load.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::signal::io::write_file;

pub const MAGIC: &[u8; 4] = b"JGEN";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Envelope<H> {
    format_version: u32,
    kind: String,
    blob_len: usize,
    blob_sha256: String,
    header: H,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn blob_bytes(blob: &[f64]) -> Vec<u8> {
    blob.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn encode<H: Serialize>(kind: &str, header: &H, blob: &[f64]) -> Result<Vec<u8>> {
    let bytes = blob_bytes(blob);
    let env = Envelope {
        format_version: FORMAT_VERSION,
        kind: kind.to_string(),
        blob_len: blob.len(),
        blob_sha256: sha256_hex(&bytes),
        header,
    };
    let json = serde_json::to_vec(&env).map_err(|e| Error::json(format!("{kind} header"), e))?;
    let mut out = Vec::with_capacity(12 + json.len() + bytes.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&bytes);
    Ok(out)
}

pub fn decode<H: DeserializeOwned>(path: &Path, kind: &str, bytes: &[u8]) -> Result<(H, Vec<f64>)> {
    let integrity = |reason: String| Error::Integrity {
        path: path.to_path_buf(),
        reason,
    };
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(integrity("missing JGEN magic".into()));
    }
    let hlen = u64::from_le_bytes(bytes[4..12].try_into().expect("8 bytes")) as usize;
    let body = &bytes[12..];
    if hlen > body.len() {
        return Err(integrity(format!("header length {hlen} exceeds file size")));
    }
    #[derive(Deserialize)]
    struct Probe {
        format_version: u32,
        kind: String,
    }
    let probe: Probe = serde_json::from_slice(&body[..hlen])
        .map_err(|e| Error::json(path.display().to_string(), e))?;
    if probe.format_version != FORMAT_VERSION {
        return Err(Error::Version {
            found: probe.format_version,
            expected: FORMAT_VERSION,
        });
    }
    if probe.kind != kind {
        return Err(integrity(format!(
            "expected a {kind} file, found {}",
            probe.kind
        )));
    }
    let env: Envelope<H> = serde_json::from_slice(&body[..hlen])
        .map_err(|e| Error::json(path.display().to_string(), e))?;
    let blob = &body[hlen..];
    if blob.len() != env.blob_len * 8 {
        return Err(integrity(format!(
            "blob holds {} bytes, header declares {} values",
            blob.len(),
            env.blob_len
        )));
    }
    if sha256_hex(blob) != env.blob_sha256 {
        return Err(integrity("blob hash mismatch".into()));
    }
    let values = blob
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok((env.header, values))
}

pub fn save<H: Serialize>(path: &Path, kind: &str, header: &H, blob: &[f64]) -> Result<()> {
    write_file(path, &encode(kind, header, blob)?)
}

pub fn load<H: DeserializeOwned>(path: &Path, kind: &str) -> Result<(H, Vec<f64>)> {
    let bytes =
        std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    decode(path, kind, &bytes)
}
