// SPDX-License-Identifier: MIT OR Apache-2.0

//! Probe-store files: a JSON document holding a [`ProbeStack`].
//!
//! Floats are written in shortest round-trip form, so a load reproduces every
//! weight bit for bit.

use std::path::Path;

use serde::{Deserialize, Serialize};
use steerprobe::{Error, LabelSet, LayerProbe, ProbeStack};

use crate::error::Result;
use crate::fsio::write_json;

pub const STORE_FORMAT: &str = "steerprobe-probes/1";

#[derive(Debug, Serialize, Deserialize)]
struct StoreFile {
    format: String,
    label_set: LabelSet,
    dataset_hash: String,
    probes: Vec<LayerProbe>,
}

pub fn save_probes(stack: &ProbeStack, path: &Path) -> Result<()> {
    stack.validate()?;
    let file = StoreFile {
        format: STORE_FORMAT.into(),
        label_set: stack.label_set.clone(),
        dataset_hash: stack.dataset_hash.clone(),
        probes: stack.probes.clone(),
    };
    write_json(path, &file)
}

/// Load a probe store. With `expected_dataset_hash`, a provenance mismatch is
/// logged as a warning and the stack is still returned.
pub fn load_probes(path: &Path, expected_dataset_hash: Option<&str>) -> Result<ProbeStack> {
    let text = std::fs::read_to_string(path)?;
    let file: StoreFile = serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("probe store {} is malformed: {e}", path.display())))?;
    if file.format != STORE_FORMAT {
        return Err(Error::Format(format!("unknown probe store format {:?}", file.format)).into());
    }
    let stack = ProbeStack::new(file.label_set, file.dataset_hash, file.probes)?;
    if let Some(expected) = expected_dataset_hash {
        if expected != stack.dataset_hash {
            log::warn!(
                "probe store {} was trained on dataset {} but the supplied dump is {}",
                path.display(),
                stack.dataset_hash,
                expected
            );
        }
    }
    Ok(stack)
}

/// True when the store's provenance matches `dataset_hash`.
pub fn provenance_matches(stack: &ProbeStack, dataset_hash: &str) -> bool {
    stack.dataset_hash == dataset_hash
}

#[cfg(test)]
mod tests {
    use super::*;
    use steerprobe::probe::TrainingMeta;
    use steerprobe::ProbeFamily;

    fn probe(layer: usize, k: usize) -> LayerProbe {
        LayerProbe {
            layer,
            family: ProbeFamily::Linear,
            weights: (0..k).map(|y| vec![0.1 + y as f64 / 3.0, -1e-17, std::f64::consts::PI * layer as f64]).collect(),
            biases: (0..k).map(|y| (y as f64).sqrt() / 7.0).collect(),
            hidden: None,
            meta: TrainingMeta { regularization: 1e-4, seed: 9, residual: 1e-9, iterations: 12, objective: 0.3 },
        }
    }

    fn stack() -> ProbeStack {
        ProbeStack::new(LabelSet::big_five(), "abc".into(), (1..=4).map(|l| probe(l, 3)).collect()).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("probes.json");
        let s = stack();
        save_probes(&s, &path).unwrap();
        let back = load_probes(&path, Some("abc")).unwrap();
        for (a, b) in s.probes.iter().zip(&back.probes) {
            for (ra, rb) in a.weights.iter().zip(&b.weights) {
                assert!(ra.iter().zip(rb).all(|(x, y)| x.to_bits() == y.to_bits()));
            }
            assert!(a.biases.iter().zip(&b.biases).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        assert_eq!(back, s);
    }

    #[test]
    fn provenance_mismatch_is_not_fatal() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("probes.json");
        save_probes(&stack(), &path).unwrap();
        let back = load_probes(&path, Some("other")).unwrap();
        assert!(!provenance_matches(&back, "other"));
    }

    fn edit(path: &Path, f: impl FnOnce(&mut serde_json::Value)) {
        let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
        f(&mut v);
        std::fs::write(path, serde_json::to_string(&v).unwrap()).unwrap();
    }

    #[test]
    fn class_count_mismatch_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("probes.json");
        save_probes(&stack(), &path).unwrap();
        edit(&path, |v| {
            let labels = v["label_set"].as_array_mut().unwrap();
            labels.push(serde_json::json!({"id": "O", "display": "Openness"}));
        });
        assert_eq!(load_probes(&path, None).unwrap_err().class(), "format");
    }

    #[test]
    fn missing_layers_are_listed() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("probes.json");
        save_probes(&stack(), &path).unwrap();
        edit(&path, |v| {
            let probes = v["probes"].as_array_mut().unwrap();
            probes.remove(2);
            probes.remove(1);
        });
        let err = load_probes(&path, None).unwrap_err();
        assert_eq!(err.class(), "format");
        assert!(err.to_string().contains("[2, 3]"), "{err}");
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(32))]
        #[test]
        fn arbitrary_finite_weights_survive_storage(
            vals in proptest::collection::vec(proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO, 9)
        ) {
            let mut s = stack();
            s.probes[0].weights = vals.chunks(3).map(<[f64]>::to_vec).collect();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("p.json");
            save_probes(&s, &path).unwrap();
            let back = load_probes(&path, None).unwrap();
            let bits = |p: &LayerProbe| p.weights.iter().flatten().map(|v| v.to_bits()).collect::<Vec<_>>();
            proptest::prop_assert_eq!(bits(&s.probes[0]), bits(&back.probes[0]));
        }
    }
}
