//! Checkpoint file: magic `DLACKPT1`, a little-endian `u32` header length,
//! a JSON header (format version, configuration, parameter inventory with
//! name, shape and offset), then every parameter as little-endian `f32` in
//! inventory order.

use std::fs;
use std::path::Path;

use dla_lab_core::detector::{DetectorConfig, DetectorParams};
use dla_lab_core::params::ParamSet;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, LabResult};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DLACKPT1";
pub const CHECKPOINT_FORMAT: &str = "dla-lab-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset in values (not bytes) into the blob.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub version: u32,
    pub preset: String,
    pub config: DetectorConfig,
    pub params: Vec<ParamEntry>,
    /// Number of `f32` values in the blob.
    pub blob_len: usize,
}

pub fn encode_checkpoint(cfg: &DetectorConfig, params: &DetectorParams) -> Vec<u8> {
    let mut offset = 0;
    let entries = params
        .inventory()
        .into_iter()
        .map(|(name, shape)| {
            let e = ParamEntry {
                name,
                offset,
                shape: shape.clone(),
            };
            offset += shape.iter().product::<usize>();
            e
        })
        .collect();
    let header = CheckpointHeader {
        format: CHECKPOINT_FORMAT.to_string(),
        version: CHECKPOINT_VERSION,
        preset: cfg.preset.clone(),
        config: cfg.clone(),
        params: entries,
        blob_len: offset,
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(12 + json.len() + offset * 4);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for v in params.flatten() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

fn malformed(what: &str, detail: impl ToString) -> LabError {
    LabError::Malformed {
        what: what.to_string(),
        detail: detail.to_string(),
    }
}

/// Parses the header and returns it with the decoded blob.
pub fn decode_checkpoint(bytes: &[u8], what: &str) -> LabResult<(CheckpointHeader, Vec<f64>)> {
    if bytes.len() < 8 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(LabError::BadMagic {
            record: what.to_string(),
        });
    }
    let truncated = || LabError::Truncated { what: what.to_string() };
    if bytes.len() < 12 {
        return Err(truncated());
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let json = bytes.get(12..12 + hlen).ok_or_else(truncated)?;
    let header: CheckpointHeader = serde_json::from_slice(json).map_err(|e| malformed(what, e))?;
    if header.format != CHECKPOINT_FORMAT {
        return Err(malformed(what, format!("format `{}` is not `{CHECKPOINT_FORMAT}`", header.format)));
    }
    if header.version != CHECKPOINT_VERSION {
        return Err(LabError::VersionMismatch {
            what: what.to_string(),
            expected: CHECKPOINT_VERSION,
            found: header.version,
        });
    }
    let mut expect = 0;
    for p in &header.params {
        if p.offset != expect {
            return Err(malformed(what, format!("parameter `{}` does not start at offset {expect}", p.name)));
        }
        expect += p.shape.iter().product::<usize>();
    }
    if expect != header.blob_len {
        return Err(malformed(what, format!("inventory covers {expect} values, blob_len is {}", header.blob_len)));
    }
    let blob = &bytes[12 + hlen..];
    if blob.len() < header.blob_len * 4 {
        return Err(truncated());
    }
    if blob.len() > header.blob_len * 4 {
        return Err(malformed(what, format!("{} trailing bytes", blob.len() - header.blob_len * 4)));
    }
    let values = blob
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
        .collect();
    Ok((header, values))
}

/// Builds parameters for `cfg` from a decoded checkpoint, failing on the
/// first parameter whose name or shape differs.
pub fn params_for(cfg: &DetectorConfig, header: &CheckpointHeader, values: &[f64]) -> LabResult<DetectorParams> {
    let mut params = DetectorParams::zeros(cfg)?;
    let want = params.inventory();
    let n = want.len().max(header.params.len());
    for i in 0..n {
        let expected = want.get(i);
        let found = header.params.get(i);
        let same = matches!((expected, found), (Some((en, es)), Some(f)) if *en == f.name && *es == f.shape);
        if !same {
            let name = expected.map(|e| e.0.clone()).or(found.map(|f| f.name.clone())).unwrap_or_default();
            return Err(LabError::ParamMismatch {
                name,
                expected: expected.map(|e| e.1.clone()),
                found: found.map(|f| f.shape.clone()),
            });
        }
    }
    params.assign_flat(values);
    Ok(params)
}

pub fn save_checkpoint(path: &Path, cfg: &DetectorConfig, params: &DetectorParams) -> LabResult<()> {
    fs::write(path, encode_checkpoint(cfg, params)).map_err(|e| LabError::io(path, e))
}

/// Loads a checkpoint with the configuration stored in it.
pub fn load_checkpoint(path: &Path) -> LabResult<(DetectorConfig, DetectorParams)> {
    let bytes = fs::read(path).map_err(|e| LabError::io(path, e))?;
    let (header, values) = decode_checkpoint(&bytes, &path.display().to_string())?;
    let params = params_for(&header.config, &header, &values)?;
    Ok((header.config, params))
}

/// Loads a checkpoint into the parameter layout of `cfg`.
pub fn load_checkpoint_as(path: &Path, cfg: &DetectorConfig) -> LabResult<DetectorParams> {
    let bytes = fs::read(path).map_err(|e| LabError::io(path, e))?;
    let (header, values) = decode_checkpoint(&bytes, &path.display().to_string())?;
    params_for(cfg, &header, &values)
}
