// SPDX-License-Identifier: MIT OR Apache-2.0

//! Activation dumps: a JSON manifest plus one raw tensor file per layer.
//!
//! Layer files hold little-endian `f32`, row-major (`records × d`), records in
//! manifest order. The manifest carries per-file SHA-256 hashes and the first
//! four values of the first record as an endianness cross-check.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use steerprobe::{ActivationRecord, Error, LabelSet, ProbeDataset, Split};

use crate::error::Result;
use crate::fsio::{write_atomic, write_json};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const DUMP_FORMAT: &str = "steerprobe-dump/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordMeta {
    pub id: String,
    pub label: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerFile {
    pub layer: usize,
    pub file: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DumpManifest {
    pub format: String,
    pub model_id: String,
    pub num_layers: usize,
    pub dim: usize,
    pub label_set: LabelSet,
    pub records: Vec<RecordMeta>,
    pub files: Vec<LayerFile>,
    pub cross_check: Vec<f32>,
    pub content_hash: String,
}

pub fn layer_file_name(layer: usize) -> String {
    format!("layer_{layer:03}.f32")
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Write `dataset` under `dir`. The manifest is written last, so a dump with
/// a manifest is complete.
pub fn save_dump(dataset: &ProbeDataset, model_id: &str, dir: &Path) -> Result<DumpManifest> {
    dataset.validate()?;
    std::fs::create_dir_all(dir)?;
    let (num_layers, dim) = (dataset.num_layers(), dataset.dim());
    let mut files = Vec::with_capacity(num_layers);
    for layer in 1..=num_layers {
        let mut bytes = Vec::with_capacity(dataset.len() * dim * 4);
        for record in &dataset.records {
            for v in &record.layers[layer - 1] {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        let file = layer_file_name(layer);
        write_atomic(&dir.join(&file), &bytes)?;
        files.push(LayerFile {
            layer,
            file,
            bytes: bytes.len() as u64,
            sha256: sha256_hex(&bytes),
        });
    }
    let records = dataset
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| RecordMeta {
            id: r.id.clone(),
            label: r.label,
            split: dataset.split.get(i).copied(),
        })
        .collect();
    let cross_check = dataset
        .records
        .first()
        .map(|r| r.layers[0].iter().take(4).copied().collect())
        .unwrap_or_default();
    let manifest = DumpManifest {
        format: DUMP_FORMAT.into(),
        model_id: model_id.into(),
        num_layers,
        dim,
        label_set: dataset.label_set.clone(),
        records,
        files,
        cross_check,
        content_hash: dataset.content_hash(),
    };
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<DumpManifest> {
    let text = std::fs::read_to_string(dir.join(MANIFEST_FILE))?;
    let manifest: DumpManifest = serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("dump manifest in {} is malformed: {e}", dir.display())))?;
    if manifest.format != DUMP_FORMAT {
        return Err(Error::Format(format!("unknown dump format {:?}", manifest.format)).into());
    }
    Ok(manifest)
}

fn check_shape(m: &DumpManifest) -> std::result::Result<(), Error> {
    let k = m.label_set.len();
    if let Some(r) = m.records.iter().find(|r| r.label >= k) {
        return Err(Error::Format(format!("record {} has label {} outside a {k}-label set", r.id, r.label)));
    }
    if m.num_layers > 0 && m.dim == 0 {
        return Err(Error::Format("manifest declares zero-dimensional states".into()));
    }
    if m.files.len() != m.num_layers {
        return Err(Error::Format(format!(
            "manifest lists {} layer files for {} layers",
            m.files.len(),
            m.num_layers
        )));
    }
    for (i, f) in m.files.iter().enumerate() {
        if f.layer != i + 1 {
            return Err(Error::Format(format!("layer file {} is out of order", f.file)));
        }
        let expected = (m.records.len() * m.dim * 4) as u64;
        if f.bytes != expected {
            return Err(Error::Format(format!(
                "layer {} declares {} bytes but {} records × d={} need {expected}",
                f.layer,
                f.bytes,
                m.records.len(),
                m.dim
            )));
        }
    }
    let want = if m.records.is_empty() { 0 } else { m.dim.min(4) };
    if m.cross_check.len() != want {
        return Err(Error::Format(format!(
            "cross-check holds {} values, expected {want}",
            m.cross_check.len()
        )));
    }
    let splits = m.records.iter().filter(|r| r.split.is_some()).count();
    if splits != 0 && splits != m.records.len() {
        return Err(Error::Format("split is assigned to only some records".into()));
    }
    Ok(())
}

/// Load and verify a dump written by [`save_dump`].
pub fn load_dump(dir: &Path) -> Result<ProbeDataset> {
    let manifest = read_manifest(dir)?;
    check_shape(&manifest)?;
    let n = manifest.records.len();
    let d = manifest.dim;
    let mut layers: Vec<Vec<Vec<f32>>> = vec![Vec::with_capacity(manifest.num_layers); n];
    for f in &manifest.files {
        let bytes = std::fs::read(dir.join(&f.file))?;
        if bytes.len() as u64 != f.bytes {
            return Err(Error::Corruption(format!(
                "layer {} file {} has {} bytes, manifest says {}",
                f.layer,
                f.file,
                bytes.len(),
                f.bytes
            ))
            .into());
        }
        if sha256_hex(&bytes) != f.sha256 {
            return Err(Error::Corruption(format!("layer {} file {} fails its hash check", f.layer, f.file)).into());
        }
        for (i, row) in bytes.chunks_exact(d * 4).enumerate() {
            layers[i].push(
                row.chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect(),
            );
        }
    }
    if let Some(first) = layers.first() {
        if first[0][..manifest.cross_check.len()] != manifest.cross_check[..] {
            return Err(Error::Corruption("cross-check values differ; wrong byte order?".into()).into());
        }
    }
    let split: Vec<Split> = manifest.records.iter().filter_map(|r| r.split).collect();
    let records = manifest
        .records
        .into_iter()
        .zip(layers)
        .map(|(meta, layers)| ActivationRecord::new(meta.id, meta.label, layers))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let mut dataset = ProbeDataset::new(manifest.label_set, records)?;
    dataset.split = split;
    dataset.validate()?;
    if dataset.content_hash() != manifest.content_hash {
        return Err(Error::Corruption("dump content hash does not match its manifest".into()).into());
    }
    Ok(dataset)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dataset(n: usize) -> ProbeDataset {
        let records = (0..n)
            .map(|i| {
                let layers = (0..3)
                    .map(|l| (0..5).map(|j| (i * 100 + l * 10 + j) as f32 * 0.37 - 1.5).collect())
                    .collect();
                ActivationRecord::new(format!("r{i}"), i % 3, layers).unwrap()
            })
            .collect();
        steerprobe::stratified_split(LabelSet::big_five(), records, 0.7, 4).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let ds = dataset(12);
        let m = save_dump(&ds, "toy", dir.path()).unwrap();
        assert_eq!(m.files[0].bytes, 12 * 5 * 4);
        let back = load_dump(dir.path()).unwrap();
        assert_eq!(back, ds);
        assert_eq!(back.content_hash(), ds.content_hash());
    }

    #[test]
    fn files_are_little_endian() {
        let dir = tempfile::tempdir().unwrap();
        let ds = dataset(6);
        save_dump(&ds, "toy", dir.path()).unwrap();
        let bytes = std::fs::read(dir.path().join("layer_002.f32")).unwrap();
        assert_eq!(&bytes[..4], &ds.records[0].layers[1][0].to_le_bytes());
    }

    #[test]
    fn truncation_names_the_layer() {
        let dir = tempfile::tempdir().unwrap();
        save_dump(&dataset(6), "toy", dir.path()).unwrap();
        let path = dir.path().join("layer_002.f32");
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        let err = load_dump(dir.path()).unwrap_err().to_string();
        assert!(err.contains("corruption") && err.contains("layer 2"), "{err}");
    }

    #[test]
    fn flipped_byte_fails_hash() {
        let dir = tempfile::tempdir().unwrap();
        save_dump(&dataset(6), "toy", dir.path()).unwrap();
        let path = dir.path().join("layer_003.f32");
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[7] ^= 0x40;
        std::fs::write(&path, &bytes).unwrap();
        let err = load_dump(dir.path()).unwrap_err().to_string();
        assert!(err.contains("layer 3") && err.contains("hash"), "{err}");
    }

    #[test]
    fn dimension_mismatch_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        save_dump(&dataset(6), "toy", dir.path()).unwrap();
        let mut m = read_manifest(dir.path()).unwrap();
        m.dim = 4;
        write_json(&dir.path().join(MANIFEST_FILE), &m).unwrap();
        let err = load_dump(dir.path()).unwrap_err();
        assert_eq!(err.class(), "format");
    }

    #[test]
    fn empty_dataset_dumps() {
        let dir = tempfile::tempdir().unwrap();
        let ds = ProbeDataset::new(LabelSet::big_five(), Vec::new()).unwrap();
        let m = save_dump(&ds, "toy", dir.path()).unwrap();
        assert!(m.files.is_empty() && m.records.is_empty());
        assert_eq!(load_dump(dir.path()).unwrap(), ds);
    }
}
