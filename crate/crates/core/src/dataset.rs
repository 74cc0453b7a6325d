// SPDX-License-Identifier: MIT OR Apache-2.0

//! Per-layer activation records and the stratified probe dataset.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::labels::LabelSet;

/// Final-token hidden states of one prompt, one vector per layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationRecord {
    pub id: String,
    pub label: usize,
    /// `layers[l]` is the state after layer `l + 1`.
    pub layers: Vec<Vec<f32>>,
}

impl ActivationRecord {
    pub fn new(id: impl Into<String>, label: usize, layers: Vec<Vec<f32>>) -> Result<Self> {
        let record = Self {
            id: id.into(),
            label,
            layers,
        };
        record.validate()?;
        Ok(record)
    }

    pub fn validate(&self) -> Result<()> {
        let Some(first) = self.layers.first() else {
            return Err(Error::Input(format!("record {} has no layers", self.id)));
        };
        let dim = first.len();
        if dim == 0 {
            return Err(Error::Input(format!("record {} has zero-dimensional states", self.id)));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.len() != dim {
                return Err(Error::Input(format!(
                    "record {} layer {} has dimension {}, expected {dim}",
                    self.id,
                    i + 1,
                    layer.len()
                )));
            }
            if layer.iter().any(|v| !v.is_finite()) {
                return Err(Error::Input(format!(
                    "record {} layer {} has a non-finite component",
                    self.id,
                    i + 1
                )));
            }
        }
        Ok(())
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn dim(&self) -> usize {
        self.layers.first().map_or(0, Vec::len)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Labelled records plus an optional train/test assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeDataset {
    pub label_set: LabelSet,
    pub records: Vec<ActivationRecord>,
    /// One entry per record when the dataset has been split; empty otherwise.
    #[serde(default)]
    pub split: Vec<Split>,
}

impl ProbeDataset {
    pub fn new(label_set: LabelSet, records: Vec<ActivationRecord>) -> Result<Self> {
        let dataset = Self {
            label_set,
            records,
            split: Vec::new(),
        };
        dataset.validate()?;
        Ok(dataset)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.label_set.len();
        let shape = self.records.first().map(|r| (r.num_layers(), r.dim()));
        for record in &self.records {
            record.validate()?;
            if record.label >= k {
                return Err(Error::Input(format!(
                    "record {} has label index {} outside a {k}-label set",
                    record.id, record.label
                )));
            }
            if Some((record.num_layers(), record.dim())) != shape {
                return Err(Error::Input(format!(
                    "record {} shape differs from the first record",
                    record.id
                )));
            }
        }
        if !self.split.is_empty() && self.split.len() != self.records.len() {
            return Err(Error::Input(format!(
                "split covers {} of {} records",
                self.split.len(),
                self.records.len()
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn num_layers(&self) -> usize {
        self.records.first().map_or(0, ActivationRecord::num_layers)
    }

    pub fn dim(&self) -> usize {
        self.records.first().map_or(0, ActivationRecord::dim)
    }

    pub fn is_split(&self) -> bool {
        !self.split.is_empty() || self.records.is_empty()
    }

    /// Indices of records assigned to `which`.
    pub fn indices(&self, which: Split) -> Vec<usize> {
        self.split
            .iter()
            .enumerate()
            .filter(|(_, s)| **s == which)
            .map(|(i, _)| i)
            .collect()
    }

    /// Design matrix (f64 rows) and labels for one layer (1-based) of one split.
    pub fn layer_view(&self, layer: usize, which: Split) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
        if layer == 0 || layer > self.num_layers() {
            return Err(Error::Input(format!(
                "layer {layer} outside 1..={}",
                self.num_layers()
            )));
        }
        if !self.is_split() {
            return Err(Error::Input("dataset has not been split".into()));
        }
        let idx = self.indices(which);
        let xs = idx
            .iter()
            .map(|&i| self.records[i].layers[layer - 1].iter().map(|&v| f64::from(v)).collect())
            .collect();
        let ys = idx.iter().map(|&i| self.records[i].label).collect();
        Ok((xs, ys))
    }

    pub fn labels_of(&self, which: Split) -> Vec<usize> {
        self.indices(which).iter().map(|&i| self.records[i].label).collect()
    }

    /// SHA-256 over label ids, record ids, labels, split and little-endian state bytes.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for id in self.label_set.ids() {
            hasher.update(id.as_bytes());
            hasher.update([0u8]);
        }
        hasher.update((self.records.len() as u64).to_le_bytes());
        for (i, record) in self.records.iter().enumerate() {
            hasher.update(record.id.as_bytes());
            hasher.update([0u8]);
            hasher.update((record.label as u64).to_le_bytes());
            let split = match self.split.get(i) {
                None => 0u8,
                Some(Split::Train) => 1,
                Some(Split::Test) => 2,
            };
            hasher.update([split]);
            for layer in &record.layers {
                for v in layer {
                    hasher.update(v.to_le_bytes());
                }
            }
        }
        hex::encode(hasher.finalize())
    }
}

/// Assign each label's records to train/test so the per-label train fraction
/// is `ratio` to within one record.
pub fn stratified_split(
    label_set: LabelSet,
    records: Vec<ActivationRecord>,
    ratio: f64,
    seed: u64,
) -> Result<ProbeDataset> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Domain(format!("split ratio {ratio} outside (0, 1)")));
    }
    let mut dataset = ProbeDataset::new(label_set, records)?;
    let k = dataset.label_set.len();
    let mut by_label: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, record) in dataset.records.iter().enumerate() {
        by_label[record.label].push(i);
    }
    for (label, members) in by_label.iter().enumerate() {
        if members.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "label {:?} has {} record(s); at least 2 are required",
                dataset.label_set.labels()[label].id,
                members.len()
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = vec![Split::Test; dataset.records.len()];
    for members in &mut by_label {
        members.shuffle(&mut rng);
        let n = members.len();
        let n_train = ((ratio * n as f64).round() as usize).clamp(1, n - 1);
        for &i in &members[..n_train] {
            split[i] = Split::Train;
        }
    }
    dataset.split = split;
    Ok(dataset)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn records(per_label: &[usize]) -> Vec<ActivationRecord> {
        let mut out = Vec::new();
        for (label, &n) in per_label.iter().enumerate() {
            for i in 0..n {
                let v = (label * 1000 + i) as f32;
                out.push(ActivationRecord::new(format!("r{label}-{i}"), label, vec![vec![v, 1.0]]).unwrap());
            }
        }
        out
    }

    #[test]
    fn split_is_seventy_thirty_per_label() {
        let ds = stratified_split(LabelSet::big_five(), records(&[100, 100, 100]), 0.7, 7).unwrap();
        assert_eq!(ds.indices(Split::Train).len(), 210);
        assert_eq!(ds.indices(Split::Test).len(), 90);
        for label in 0..3 {
            let train = ds.labels_of(Split::Train).iter().filter(|&&l| l == label).count();
            assert_eq!(train, 70);
        }
    }

    #[test]
    fn split_is_deterministic() {
        let a = stratified_split(LabelSet::big_five(), records(&[20, 21, 22]), 0.7, 3).unwrap();
        let b = stratified_split(LabelSet::big_five(), records(&[20, 21, 22]), 0.7, 3).unwrap();
        assert_eq!(a.split, b.split);
        assert_eq!(a.content_hash(), b.content_hash());
        let c = stratified_split(LabelSet::big_five(), records(&[20, 21, 22]), 0.7, 4).unwrap();
        assert_ne!(a.split, c.split);
    }

    #[test]
    fn single_label_records_are_insufficient() {
        let err = stratified_split(LabelSet::big_five(), records(&[10]), 0.7, 0).unwrap_err();
        assert!(matches!(err, Error::InsufficientData(_)));
    }

    #[test]
    fn ratio_must_be_open_interval() {
        assert!(matches!(
            stratified_split(LabelSet::big_five(), records(&[5, 5, 5]), 1.0, 0),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn ragged_records_are_rejected() {
        assert!(ActivationRecord::new("x", 0, vec![vec![1.0], vec![1.0, 2.0]]).is_err());
        assert!(ActivationRecord::new("x", 0, vec![vec![f32::NAN]]).is_err());
    }
}
