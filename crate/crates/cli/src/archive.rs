//! Weight archives: a JSON manifest plus a raw little-endian blob.
//!
//! The manifest records the model configuration and, for every parameter and
//! BN running statistic, its name, NCHW shape, byte offset and length in the
//! blob and a SHA-256 of those bytes. Tensors are stored back to back in the
//! order the network visits them.

use std::collections::BTreeMap;
use std::path::Path;

use menet_core::layers::Layer;
use menet_core::menet::{build_menet, MENetConfig, Network};
use menet_core::tensor::{Shape4, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::io::{file_name, read_bytes, read_json, resolve, sha256_hex, sibling, write_bytes, write_json};

pub const ARCHIVE_FORMAT: &str = "menet-weights";
pub const ARCHIVE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F64,
    F32,
}

impl Dtype {
    pub fn width(self) -> usize {
        match self {
            Dtype::F64 => 8,
            Dtype::F32 => 4,
        }
    }

    fn encode(self, values: &[f64], out: &mut Vec<u8>) {
        for &v in values {
            match self {
                Dtype::F64 => out.extend_from_slice(&v.to_le_bytes()),
                Dtype::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
            }
        }
    }

    fn decode(self, bytes: &[u8]) -> Vec<f64> {
        match self {
            Dtype::F64 => bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect(),
            Dtype::F32 => bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")) as f64)
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntryKind {
    Param,
    Buffer,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchiveEntry {
    pub name: String,
    pub kind: EntryKind,
    pub shape: [usize; 4],
    pub offset: usize,
    pub length: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchiveManifest {
    pub format: String,
    pub version: u32,
    pub dtype: Dtype,
    pub byte_order: String,
    pub model: MENetConfig,
    pub blob: String,
    pub blob_length: usize,
    pub entries: Vec<ArchiveEntry>,
}

/// Named tensors of one network together with its configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightArchive {
    pub model: MENetConfig,
    pub tensors: Vec<(String, EntryKind, Tensor)>,
}

impl WeightArchive {
    pub fn from_network(net: &mut Network) -> Self {
        let mut tensors = Vec::new();
        net.visit_params("", &mut |name, p| {
            tensors.push((name, EntryKind::Param, p.value.clone()))
        });
        net.visit_buffers("", &mut |name, t| tensors.push((name, EntryKind::Buffer, t.clone())));
        WeightArchive {
            model: net.config.clone(),
            tensors,
        }
    }

    /// Builds the configured network and overwrites every parameter and
    /// buffer. Missing, unexpected or reshaped tensors are errors.
    pub fn to_network(&self) -> CliResult<Network> {
        let mut net = build_menet(&self.model, 0)?;
        let mut by_name: BTreeMap<&str, &Tensor> = BTreeMap::new();
        for (name, _, t) in &self.tensors {
            if by_name.insert(name, t).is_some() {
                return Err(CliError::Archive(format!("duplicate tensor {name}")));
            }
        }
        let mut problems = Vec::new();
        let mut used = 0usize;
        let mut assign = |name: String, slot: &mut Tensor| match by_name.get(name.as_str()) {
            Some(t) if t.shape() == slot.shape() => {
                *slot = (*t).clone();
                used += 1;
            }
            Some(t) => problems.push(format!(
                "{name}: archive shape {} != model shape {}",
                t.shape(),
                slot.shape()
            )),
            None => problems.push(format!("{name}: missing from archive")),
        };
        net.visit_params("", &mut |name, p| assign(name, &mut p.value));
        net.visit_buffers("", &mut |name, t| assign(name, t));
        if used != by_name.len() && problems.is_empty() {
            problems.push(format!(
                "{} tensors in the archive do not belong to the model",
                by_name.len() - used
            ));
        }
        match problems.first() {
            Some(p) => Err(CliError::Archive(p.clone())),
            None => Ok(net),
        }
    }

    /// Manifest and blob bytes for the given storage type.
    pub fn encode(&self, dtype: Dtype, blob_name: &str) -> (ArchiveManifest, Vec<u8>) {
        let mut blob = Vec::new();
        let mut entries = Vec::with_capacity(self.tensors.len());
        for (name, kind, t) in &self.tensors {
            let offset = blob.len();
            dtype.encode(t.data(), &mut blob);
            entries.push(ArchiveEntry {
                name: name.clone(),
                kind: *kind,
                shape: t.shape().as_array(),
                offset,
                length: blob.len() - offset,
                sha256: sha256_hex(&blob[offset..]),
            });
        }
        let manifest = ArchiveManifest {
            format: ARCHIVE_FORMAT.into(),
            version: ARCHIVE_VERSION,
            dtype,
            byte_order: "little".into(),
            model: self.model.clone(),
            blob: blob_name.into(),
            blob_length: blob.len(),
            entries,
        };
        (manifest, blob)
    }

    /// Inverse of [`WeightArchive::encode`], verifying layout and checksums.
    pub fn decode(manifest: &ArchiveManifest, blob: &[u8]) -> CliResult<Self> {
        if manifest.format != ARCHIVE_FORMAT || manifest.version != ARCHIVE_VERSION {
            return Err(CliError::Archive(format!(
                "unsupported archive {} v{}",
                manifest.format, manifest.version
            )));
        }
        if manifest.byte_order != "little" {
            return Err(CliError::Archive(format!(
                "unsupported byte order {}",
                manifest.byte_order
            )));
        }
        if blob.len() != manifest.blob_length {
            return Err(CliError::Archive(format!(
                "blob holds {} bytes, manifest expects {}",
                blob.len(),
                manifest.blob_length
            )));
        }
        let mut spans: Vec<(usize, usize, &str)> = Vec::new();
        let mut tensors = Vec::with_capacity(manifest.entries.len());
        for e in &manifest.entries {
            let [n, c, h, w] = e.shape;
            let shape = Shape4::new(n, c, h, w)?;
            let end = e.offset.checked_add(e.length).filter(|&end| end <= blob.len());
            let Some(end) = end else {
                return Err(CliError::Archive(format!("{}: bytes outside the blob", e.name)));
            };
            if e.length != shape.numel() * manifest.dtype.width() {
                return Err(CliError::Archive(format!(
                    "{}: {} bytes cannot hold shape {shape}",
                    e.name, e.length
                )));
            }
            let bytes = &blob[e.offset..end];
            if sha256_hex(bytes) != e.sha256 {
                return Err(CliError::Archive(format!("{}: checksum mismatch", e.name)));
            }
            spans.push((e.offset, end, &e.name));
            tensors.push((
                e.name.clone(),
                e.kind,
                Tensor::from_vec(shape, manifest.dtype.decode(bytes))?,
            ));
        }
        spans.sort();
        if let Some(w) = spans.windows(2).find(|w| w[1].0 < w[0].1) {
            return Err(CliError::Archive(format!("{} overlaps {}", w[0].2, w[1].2)));
        }
        Ok(WeightArchive {
            model: manifest.model.clone(),
            tensors,
        })
    }

    /// Writes `<manifest>` and the blob beside it with a `.bin` extension.
    pub fn save(&self, manifest_path: &Path, dtype: Dtype) -> CliResult<()> {
        let blob_path = sibling(manifest_path, "bin");
        let (manifest, blob) = self.encode(dtype, &file_name(&blob_path)?);
        write_bytes(&blob_path, &blob)?;
        write_json(manifest_path, &manifest)
    }

    pub fn load(manifest_path: &Path) -> CliResult<Self> {
        let manifest: ArchiveManifest = read_json(manifest_path)?;
        let blob = read_bytes(&resolve(manifest_path, &manifest.blob))?;
        Self::decode(&manifest, &blob)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> MENetConfig {
        MENetConfig {
            stage_repeats: vec![1, 1, 1],
            input_size: 8,
            stem_channels: 8,
            stem_pool: false,
            num_classes: 2,
            ..MENetConfig::new(24, 4, 1.0, 2)
        }
    }

    fn archive() -> WeightArchive {
        let mut net = build_menet(&tiny(), 3).unwrap();
        net.stem_bn.running_mean.fill(0.125);
        WeightArchive::from_network(&mut net)
    }

    #[test]
    fn f64_round_trip_is_exact() {
        let a = archive();
        let (m, blob) = a.encode(Dtype::F64, "w.bin");
        assert_eq!(WeightArchive::decode(&m, &blob).unwrap(), a);
        let mut net = a.to_network().unwrap();
        assert_eq!(WeightArchive::from_network(&mut net), a);
        assert!(m
            .entries
            .iter()
            .any(|e| e.kind == EntryKind::Buffer && e.name == "stage1.bn.running_mean"));
    }

    #[test]
    fn f32_round_trip_within_single_precision() {
        let a = archive();
        let (m, blob) = a.encode(Dtype::F32, "w.bin");
        let b = WeightArchive::decode(&m, &blob).unwrap();
        for ((_, _, x), (_, _, y)) in a.tensors.iter().zip(&b.tensors) {
            for (u, v) in x.data().iter().zip(y.data()) {
                assert!((u - v).abs() <= u.abs() * 2f64.powi(-23), "{u} {v}");
            }
        }
    }

    #[test]
    fn corruption_is_detected() {
        let (m, mut blob) = archive().encode(Dtype::F64, "w.bin");
        blob[3] ^= 1;
        assert!(matches!(WeightArchive::decode(&m, &blob), Err(CliError::Archive(e)) if e.contains("checksum")));

        let (mut m, blob) = archive().encode(Dtype::F64, "w.bin");
        m.entries[1].offset = 0;
        m.entries[1].sha256 = m.entries[0].sha256.clone();
        m.entries[1].length = m.entries[0].length;
        m.entries[1].shape = m.entries[0].shape;
        assert!(matches!(WeightArchive::decode(&m, &blob), Err(CliError::Archive(e)) if e.contains("overlaps")));
    }

    #[test]
    fn mismatched_model_is_rejected() {
        let mut a = archive();
        a.model.fusion_width = 3;
        assert!(matches!(a.to_network(), Err(CliError::Archive(_))));
        let mut a = archive();
        a.tensors.pop();
        assert!(a.to_network().unwrap_err().to_string().contains("missing"));
    }
}
