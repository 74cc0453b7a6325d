// SPDX-License-Identifier: MIT OR Apache-2.0

//! Trained per-layer classifiers and the stack that spans all layers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::LabelSet;

/// Hidden width of the two-layer probe family.
pub const MLP_HIDDEN: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ProbeFamily {
    #[default]
    Linear,
    /// `W2 · tanh(W1 x + b1) + b2` with hidden width [`MLP_HIDDEN`].
    Mlp2,
}

impl std::fmt::Display for ProbeFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ProbeFamily::Linear => f.write_str("linear"),
            ProbeFamily::Mlp2 => f.write_str("mlp2"),
        }
    }
}

/// First stage of an mlp2 probe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HiddenStage {
    /// `hidden × d`
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub regularization: f64,
    pub seed: u64,
    /// Gradient norm at termination.
    pub residual: f64,
    pub iterations: usize,
    /// Regularized training loss at termination.
    #[serde(default)]
    pub objective: f64,
}

/// Classifier for one layer. For the linear family
/// `score(y, R) = weights[y] · R + biases[y]`; for mlp2 the same affine map is
/// applied to the hidden activations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerProbe {
    /// 1-based layer index.
    pub layer: usize,
    pub family: ProbeFamily,
    /// `k × d` for linear, `k × hidden` for mlp2.
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden: Option<HiddenStage>,
    pub meta: TrainingMeta,
}

impl LayerProbe {
    pub fn num_classes(&self) -> usize {
        self.weights.len()
    }

    /// Input dimension d.
    pub fn input_dim(&self) -> usize {
        match &self.hidden {
            Some(h) => h.weights.first().map_or(0, Vec::len),
            None => self.weights.first().map_or(0, Vec::len),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.weights.len();
        if k < 2 || self.biases.len() != k {
            return Err(Error::Format(format!(
                "layer {} probe has {k} weight rows and {} biases",
                self.layer,
                self.biases.len()
            )));
        }
        let width = self.weights[0].len();
        if self.weights.iter().any(|row| row.len() != width) {
            return Err(Error::Format(format!("layer {} probe has ragged weights", self.layer)));
        }
        match (self.family, &self.hidden) {
            (ProbeFamily::Linear, None) => {}
            (ProbeFamily::Mlp2, Some(h)) => {
                if h.weights.len() != width || h.biases.len() != width {
                    return Err(Error::Format(format!(
                        "layer {} mlp2 hidden stage does not match output width {width}",
                        self.layer
                    )));
                }
            }
            _ => {
                return Err(Error::Format(format!(
                    "layer {} probe family {} inconsistent with stored stages",
                    self.layer, self.family
                )))
            }
        }
        Ok(())
    }

    fn features(&self, x: &[f64]) -> Vec<f64> {
        match &self.hidden {
            None => x.to_vec(),
            Some(h) => h
                .weights
                .iter()
                .zip(&h.biases)
                .map(|(row, b)| (dot(row, x) + b).tanh())
                .collect(),
        }
    }

    /// Affine class scores (logits).
    pub fn scores(&self, x: &[f64]) -> Vec<f64> {
        let z = self.features(x);
        self.weights
            .iter()
            .zip(&self.biases)
            .map(|(row, b)| dot(row, &z) + b)
            .collect()
    }

    pub fn probabilities(&self, x: &[f64]) -> Vec<f64> {
        softmax(&self.scores(x))
    }

    /// Argmax over classes; ties go to the lowest index.
    pub fn predict(&self, x: &[f64]) -> usize {
        argmax(&self.scores(x))
    }
}

/// Probes for layers `1..=L`, all sharing k, d and family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeStack {
    pub label_set: LabelSet,
    /// Content hash of the dataset the probes were trained on.
    pub dataset_hash: String,
    pub probes: Vec<LayerProbe>,
}

impl ProbeStack {
    pub fn new(label_set: LabelSet, dataset_hash: String, mut probes: Vec<LayerProbe>) -> Result<Self> {
        probes.sort_by_key(|p| p.layer);
        let stack = Self {
            label_set,
            dataset_hash,
            probes,
        };
        stack.validate()?;
        Ok(stack)
    }

    pub fn validate(&self) -> Result<()> {
        if self.probes.is_empty() {
            return Err(Error::Format("probe stack is empty".into()));
        }
        let missing: Vec<usize> = (1..=self.probes.iter().map(|p| p.layer).max().unwrap_or(0))
            .filter(|l| !self.probes.iter().any(|p| p.layer == *l))
            .collect();
        if !missing.is_empty() {
            return Err(Error::Format(format!("probe stack is missing layers {missing:?}")));
        }
        for (i, probe) in self.probes.iter().enumerate() {
            if probe.layer != i + 1 {
                return Err(Error::Format(format!("duplicate probe for layer {}", probe.layer)));
            }
        }
        let k = self.label_set.len();
        let first = &self.probes[0];
        for probe in &self.probes {
            probe.validate()?;
            if probe.num_classes() != k {
                return Err(Error::Format(format!(
                    "layer {} probe has {} classes but the label set has {k}",
                    probe.layer,
                    probe.num_classes()
                )));
            }
            if probe.input_dim() != first.input_dim() || probe.family != first.family {
                return Err(Error::Format(format!(
                    "layer {} probe differs in dimension or family from layer 1",
                    probe.layer
                )));
            }
        }
        Ok(())
    }

    pub fn num_layers(&self) -> usize {
        self.probes.len()
    }

    pub fn dim(&self) -> usize {
        self.probes[0].input_dim()
    }

    pub fn family(&self) -> ProbeFamily {
        self.probes[0].family
    }

    /// Probe for 1-based `layer`.
    pub fn layer(&self, layer: usize) -> Option<&LayerProbe> {
        layer.checked_sub(1).and_then(|i| self.probes.get(i))
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub(crate) fn log_sum_exp(scores: &[f64]) -> f64 {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln()
}

/// Index of the largest element; ties resolve to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}
