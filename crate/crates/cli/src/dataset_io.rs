//! Datasets on disk: a JSON manifest and a blob of `count·c·h·w` u8 pixels
//! (sample-major NCHW) followed by `count` u8 labels.

use std::path::Path;

use menet_core::training::Dataset;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::io::{file_name, read_bytes, read_json, resolve, sha256_hex, sibling, write_bytes, write_json};

pub const DATASET_FORMAT: &str = "menet-dataset";
pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format: String,
    pub version: u32,
    pub count: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub class_count: usize,
    pub blob: String,
    pub sha256: String,
}

pub fn encode_dataset(data: &Dataset, blob_name: &str) -> (DatasetManifest, Vec<u8>) {
    let mut blob = Vec::with_capacity(data.images.len() + data.labels.len());
    blob.extend_from_slice(&data.images);
    blob.extend_from_slice(&data.labels);
    let manifest = DatasetManifest {
        format: DATASET_FORMAT.into(),
        version: DATASET_VERSION,
        count: data.count,
        channels: data.channels,
        height: data.height,
        width: data.width,
        class_count: data.class_count,
        blob: blob_name.into(),
        sha256: sha256_hex(&blob),
    };
    (manifest, blob)
}

pub fn decode_dataset(m: &DatasetManifest, blob: &[u8]) -> CliResult<Dataset> {
    if m.format != DATASET_FORMAT || m.version != DATASET_VERSION {
        return Err(CliError::Archive(format!(
            "unsupported dataset {} v{}",
            m.format, m.version
        )));
    }
    let pixels = m
        .count
        .checked_mul(m.channels)
        .and_then(|v| v.checked_mul(m.height))
        .and_then(|v| v.checked_mul(m.width))
        .ok_or_else(|| CliError::Archive("dataset dimensions overflow".into()))?;
    if blob.len() != pixels + m.count {
        return Err(CliError::Archive(format!(
            "dataset blob holds {} bytes, manifest implies {}",
            blob.len(),
            pixels + m.count
        )));
    }
    if sha256_hex(blob) != m.sha256 {
        return Err(CliError::Archive("dataset checksum mismatch".into()));
    }
    Ok(Dataset::new(
        m.channels,
        m.height,
        m.width,
        m.class_count,
        blob[..pixels].to_vec(),
        blob[pixels..].to_vec(),
    )?)
}

/// Writes `<manifest>` and the blob beside it with a `.bin` extension.
pub fn save_dataset(manifest_path: &Path, data: &Dataset) -> CliResult<()> {
    let blob_path = sibling(manifest_path, "bin");
    let (manifest, blob) = encode_dataset(data, &file_name(&blob_path)?);
    write_bytes(&blob_path, &blob)?;
    write_json(manifest_path, &manifest)
}

pub fn load_dataset(manifest_path: &Path) -> CliResult<Dataset> {
    let manifest: DatasetManifest = read_json(manifest_path)?;
    let blob = read_bytes(&resolve(manifest_path, &manifest.blob))?;
    decode_dataset(&manifest, &blob)
}

#[cfg(test)]
mod tests {
    use super::*;
    use menet_core::training::synthetic_separable;

    #[test]
    fn round_trip_is_exact() {
        let d = synthetic_separable(10, 3, 8, 2, 5).unwrap();
        let (m, blob) = encode_dataset(&d, "d.bin");
        assert_eq!(blob.len(), 10 * 3 * 64 + 10);
        assert_eq!(&blob[blob.len() - 10..], d.labels.as_slice());
        assert_eq!(decode_dataset(&m, &blob).unwrap(), d);
    }

    #[test]
    fn rejects_bad_blobs() {
        let d = synthetic_separable(4, 1, 4, 2, 5).unwrap();
        let (m, mut blob) = encode_dataset(&d, "d.bin");
        assert!(decode_dataset(&m, &blob[1..]).is_err());
        blob[0] ^= 0xff;
        assert!(decode_dataset(&m, &blob).is_err());
    }
}
