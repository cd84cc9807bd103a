//! On-disk dataset layout.
//!
//! A dataset directory holds `manifest.json` and two files per record:
//!
//! * `<id>.lnimg`: magic `LNIMG1`, then `C`, `H`, `W` as little-endian `u32`,
//!   then `C*H*W` little-endian `f32` pixel values, channel-major.
//! * `<id>.lines`: one line segment per text line, `x1 y1 x2 y2` in normalized
//!   coordinates, each written with 9 significant digits (`{:.8e}`), which is
//!   enough to round-trip any `f32` exactly.
//!
//! Synthetic records are generated with the ChaCha20 stream cipher keyed by
//! the seed (little-endian in the first 8 key bytes) with the record index as
//! stream id; the generator parameters are recorded in the manifest.

use std::fs;
use std::path::Path;

use dla_lab_core::data::DatasetRecord;
use dla_lab_core::geometry::LineSegment;
use dla_lab_core::numerics::FeatureMap;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, LabResult};

pub const DATASET_FORMAT: &str = "dla-lab-dataset";
pub const DATASET_VERSION: u32 = 1;
pub const IMAGE_MAGIC: &[u8; 6] = b"LNIMG1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorInfo {
    pub rng: String,
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub max_lines: usize,
    /// Index of the first record.
    pub first_index: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub image: String,
    pub lines: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorInfo>,
    pub records: Vec<ManifestEntry>,
}

pub fn encode_image(image: &FeatureMap) -> Vec<u8> {
    let mut out = Vec::with_capacity(18 + image.data().len() * 4);
    out.extend_from_slice(IMAGE_MAGIC);
    for v in [image.channels(), image.height(), image.width()] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for &v in image.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_image(bytes: &[u8], record: &str) -> LabResult<FeatureMap> {
    if bytes.len() < IMAGE_MAGIC.len() || &bytes[..6] != IMAGE_MAGIC {
        return Err(LabError::BadMagic {
            record: record.to_string(),
        });
    }
    let truncated = || LabError::Truncated {
        what: record.to_string(),
    };
    if bytes.len() < 18 {
        return Err(truncated());
    }
    let dim = |i: usize| u32::from_le_bytes(bytes[6 + 4 * i..10 + 4 * i].try_into().expect("4 bytes")) as usize;
    let (c, h, w) = (dim(0), dim(1), dim(2));
    let n = c
        .checked_mul(h)
        .and_then(|v| v.checked_mul(w))
        .ok_or_else(|| LabError::Malformed {
            what: record.to_string(),
            detail: format!("image shape {c}x{h}x{w} overflows"),
        })?;
    let payload = &bytes[18..];
    if payload.len() < n * 4 {
        return Err(truncated());
    }
    if payload.len() > n * 4 {
        return Err(LabError::Malformed {
            what: record.to_string(),
            detail: format!("{} trailing bytes", payload.len() - n * 4),
        });
    }
    let data = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
        .collect();
    Ok(FeatureMap::new(c, h, w, data)?)
}

pub fn encode_lines(lines: &[LineSegment]) -> String {
    let mut s = String::new();
    for l in lines {
        let v = l.to_array();
        s.push_str(&format!("{:.8e} {:.8e} {:.8e} {:.8e}\n", v[0], v[1], v[2], v[3]));
    }
    s
}

/// Values are parsed as `f32`, matching the precision they were written at.
pub fn decode_lines(text: &str, record: &str) -> LabResult<Vec<LineSegment>> {
    let bad = |detail: String| LabError::Malformed {
        what: record.to_string(),
        detail,
    };
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, line)| {
            let v: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse::<f32>().map(f64::from))
                .collect::<Result<_, _>>()
                .map_err(|e| bad(format!("line {}: {e}", i + 1)))?;
            let arr: [f64; 4] = v
                .try_into()
                .map_err(|v: Vec<f64>| bad(format!("line {}: expected 4 values, found {}", i + 1, v.len())))?;
            Ok(LineSegment::from_array(arr))
        })
        .collect()
}

fn write(path: &Path, bytes: &[u8]) -> LabResult<()> {
    fs::write(path, bytes).map_err(|e| LabError::io(path, e))
}

fn read(path: &Path) -> LabResult<Vec<u8>> {
    fs::read(path).map_err(|e| LabError::io(path, e))
}

pub fn save_dataset(dir: &Path, records: &[DatasetRecord], generator: Option<GeneratorInfo>) -> LabResult<()> {
    fs::create_dir_all(dir).map_err(|e| LabError::io(dir, e))?;
    let mut entries = Vec::with_capacity(records.len());
    for r in records {
        let entry = ManifestEntry {
            id: r.id.clone(),
            image: format!("{}.lnimg", r.id),
            lines: format!("{}.lines", r.id),
        };
        write(&dir.join(&entry.image), &encode_image(&r.image))?;
        write(&dir.join(&entry.lines), encode_lines(&r.lines).as_bytes())?;
        entries.push(entry);
    }
    let manifest = Manifest {
        format: DATASET_FORMAT.to_string(),
        version: DATASET_VERSION,
        generator,
        records: entries,
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write(&dir.join("manifest.json"), format!("{text}\n").as_bytes())
}

pub fn load_manifest(dir: &Path) -> LabResult<Manifest> {
    let path = dir.join("manifest.json");
    let bytes = read(&path)?;
    let manifest: Manifest = serde_json::from_slice(&bytes).map_err(|e| LabError::Malformed {
        what: path.display().to_string(),
        detail: e.to_string(),
    })?;
    if manifest.format != DATASET_FORMAT {
        return Err(LabError::Malformed {
            what: path.display().to_string(),
            detail: format!("format `{}` is not `{DATASET_FORMAT}`", manifest.format),
        });
    }
    if manifest.version != DATASET_VERSION {
        return Err(LabError::VersionMismatch {
            what: path.display().to_string(),
            expected: DATASET_VERSION,
            found: manifest.version,
        });
    }
    Ok(manifest)
}

pub fn load_dataset(dir: &Path) -> LabResult<Vec<DatasetRecord>> {
    let manifest = load_manifest(dir)?;
    manifest
        .records
        .iter()
        .map(|e| {
            let image = decode_image(&read(&dir.join(&e.image))?, &e.id)?;
            let text = String::from_utf8(read(&dir.join(&e.lines))?).map_err(|err| LabError::Malformed {
                what: e.id.clone(),
                detail: err.to_string(),
            })?;
            Ok(DatasetRecord {
                id: e.id.clone(),
                image,
                lines: decode_lines(&text, &e.id)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lines_round_trip_exactly_at_f32() {
        let v = [0.1f32 as f64, 1.0, 0.0, 0.333_333_34f32 as f64];
        let l = [LineSegment::from_array(v)];
        assert_eq!(decode_lines(&encode_lines(&l), "x").unwrap(), l);
    }

    #[test]
    fn image_errors_are_distinct() {
        let img = FeatureMap::zeros(1, 2, 2);
        let mut bytes = encode_image(&img);
        assert_eq!(decode_image(&bytes, "r").unwrap(), img);
        assert!(matches!(decode_image(&bytes[..bytes.len() - 1], "r"), Err(LabError::Truncated { .. })));
        bytes[0] ^= 0xff;
        assert!(matches!(decode_image(&bytes, "r"), Err(LabError::BadMagic { record }) if record == "r"));
    }
}
