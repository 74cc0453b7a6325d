// SPDX-License-Identifier: MIT OR Apache-2.0

//! Per-layer probes and V-information estimates.
//!
//! `I_V(R_ℓ → Y) = H_V(Y) − H_V(Y | R_ℓ)`, where both entropies are the test
//! cross-entropy of the best probe in the family: fitted on the layer's
//! representations for the conditional term, on zero-filled inputs of the
//! same dimension for the null term.

mod objective;
pub(crate) mod optim;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{ProbeDataset, Split};
use crate::error::{Error, Result};
use crate::probe::{log_sum_exp, HiddenStage, LayerProbe, ProbeFamily, ProbeStack, TrainingMeta, MLP_HIDDEN};
use objective::{LinearSoftmax, MlpSoftmax};
use optim::Objective;

/// Parameter count above which the linear family switches from Newton to L-BFGS.
const NEWTON_MAX_PARAMS: usize = 1500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LogBase {
    #[default]
    Natural,
    Two,
}

impl LogBase {
    fn from_nats(self, nats: f64) -> f64 {
        match self {
            LogBase::Natural => nats,
            LogBase::Two => nats / std::f64::consts::LN_2,
        }
    }
}

fn default_regularization() -> f64 {
    1e-4
}
fn default_tolerance() -> f64 {
    1e-8
}
fn default_max_iterations() -> usize {
    20_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VInfoConfig {
    #[serde(default)]
    pub log_base: LogBase,
    /// L2 strength λ on probe weights.
    #[serde(default = "default_regularization")]
    pub regularization: f64,
    /// Gradient-norm stopping tolerance.
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default)]
    pub family: ProbeFamily,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for VInfoConfig {
    fn default() -> Self {
        Self {
            log_base: LogBase::Natural,
            regularization: default_regularization(),
            tolerance: default_tolerance(),
            family: ProbeFamily::Linear,
            max_iterations: default_max_iterations(),
            seed: 0,
        }
    }
}

impl VInfoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(Error::Config(format!("tolerance {} must be positive", self.tolerance)));
        }
        if !(self.regularization >= 0.0 && self.regularization.is_finite()) {
            return Err(Error::Config(format!(
                "regularization {} must be finite and non-negative",
                self.regularization
            )));
        }
        Ok(())
    }

    pub fn with_family(mut self, family: ProbeFamily) -> Self {
        self.family = family;
        self
    }
}

/// Fit a probe of `config.family` on explicit data.
pub fn fit_probe(
    xs: &[Vec<f64>],
    ys: &[usize],
    k: usize,
    layer: usize,
    config: &VInfoConfig,
    seed: u64,
) -> Result<LayerProbe> {
    config.validate()?;
    if xs.is_empty() || xs.len() != ys.len() {
        return Err(Error::Input(format!(
            "{} inputs for {} labels",
            xs.len(),
            ys.len()
        )));
    }
    if let Some(bad) = ys.iter().find(|&&y| y >= k) {
        return Err(Error::Input(format!("label {bad} outside a {k}-label set")));
    }
    let mut distinct: Vec<usize> = ys.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::DegenerateLabels(format!(
            "training data for layer {layer} contains a single label"
        )));
    }
    let d = xs[0].len();
    if d == 0 || xs.iter().any(|x| x.len() != d) {
        return Err(Error::Input("training inputs have inconsistent dimension".into()));
    }
    match config.family {
        ProbeFamily::Linear => {
            let obj = LinearSoftmax { xs, ys, k, d, lambda: config.regularization };
            let start = vec![0.0; obj.dim()];
            let sol = if obj.k * (d + 1) <= NEWTON_MAX_PARAMS {
                optim::newton(&obj, start, config.tolerance, config.max_iterations.min(500))?
            } else {
                optim::lbfgs(&obj, start, config.tolerance, config.max_iterations)?
            };
            let (weights, biases) = obj.unpack(&sol.theta);
            Ok(LayerProbe {
                layer,
                family: ProbeFamily::Linear,
                weights,
                biases,
                hidden: None,
                meta: TrainingMeta {
                    regularization: config.regularization,
                    seed,
                    residual: sol.residual,
                    iterations: sol.iterations,
                    objective: sol.value,
                },
            })
        }
        ProbeFamily::Mlp2 => {
            let flat: Vec<f64> = xs.iter().flatten().copied().collect();
            let obj = MlpSoftmax {
                x: DMatrix::from_row_slice(xs.len(), d, &flat),
                ys,
                k,
                d,
                hidden: MLP_HIDDEN,
                lambda: config.regularization,
            };
            let (o_b1, o_w2, o_b2, total) = obj.offsets();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w1_init = Normal::new(0.0, 1.0 / (d as f64).sqrt()).expect("valid std");
            let w2_init = Normal::new(0.0, 0.1 / (MLP_HIDDEN as f64).sqrt()).expect("valid std");
            let mut start = vec![0.0; total];
            for v in &mut start[..o_b1] {
                *v = w1_init.sample(&mut rng);
            }
            for v in &mut start[o_w2..o_b2] {
                *v = w2_init.sample(&mut rng);
            }
            let sol = optim::lbfgs(&obj, start, config.tolerance, config.max_iterations)?;
            let t = &sol.theta;
            let hidden = HiddenStage {
                weights: (0..MLP_HIDDEN).map(|r| t[r * d..(r + 1) * d].to_vec()).collect(),
                biases: t[o_b1..o_w2].to_vec(),
            };
            let weights = (0..k)
                .map(|r| t[o_w2 + r * MLP_HIDDEN..o_w2 + (r + 1) * MLP_HIDDEN].to_vec())
                .collect();
            Ok(LayerProbe {
                layer,
                family: ProbeFamily::Mlp2,
                weights,
                biases: t[o_b2..].to_vec(),
                hidden: Some(hidden),
                meta: TrainingMeta {
                    regularization: config.regularization,
                    seed,
                    residual: sol.residual,
                    iterations: sol.iterations,
                    objective: sol.value,
                },
            })
        }
    }
}

/// Train the probe for 1-based `layer` on the dataset's train split.
pub fn train_layer_probe(
    dataset: &ProbeDataset,
    layer: usize,
    config: &VInfoConfig,
    seed: u64,
) -> Result<LayerProbe> {
    let (xs, ys) = dataset.layer_view(layer, Split::Train)?;
    if xs.is_empty() {
        return Err(Error::InsufficientData("train split is empty".into()));
    }
    fit_probe(&xs, &ys, dataset.label_set.len(), layer, config, seed)
}

/// Mean `−log f[x](y)` over the given samples, in `base` units.
pub fn cross_entropy(probe: &LayerProbe, xs: &[Vec<f64>], ys: &[usize], base: LogBase) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::Input("cannot evaluate entropy on an empty split".into()));
    }
    let dim = probe.input_dim();
    let mut total = 0.0;
    for (x, &y) in xs.iter().zip(ys) {
        if x.len() != dim || y >= probe.num_classes() {
            return Err(Error::Input(format!(
                "sample of dimension {} / label {y} does not fit a probe with d={dim}, k={}",
                x.len(),
                probe.num_classes()
            )));
        }
        let scores = probe.scores(x);
        total += log_sum_exp(&scores) - scores[y];
    }
    Ok(base.from_nats(total / xs.len() as f64))
}

pub fn accuracy(probe: &LayerProbe, xs: &[Vec<f64>], ys: &[usize]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let hits = xs.iter().zip(ys).filter(|(x, &y)| probe.predict(x) == y).count();
    hits as f64 / xs.len() as f64
}

/// `H_V(Y | R_ℓ)`: test-split cross-entropy of `probe` at its own layer.
pub fn conditional_v_entropy(probe: &LayerProbe, dataset: &ProbeDataset, base: LogBase) -> Result<f64> {
    if probe.num_classes() != dataset.label_set.len() || probe.input_dim() != dataset.dim() {
        return Err(Error::Input("probe and dataset disagree on k or d".into()));
    }
    let (xs, ys) = dataset.layer_view(probe.layer, Split::Test)?;
    cross_entropy(probe, &xs, &ys, base)
}

/// `H_V(Y)`: fit the family on zero-filled `dim`-vectors against the train
/// labels and evaluate on the test labels.
pub fn null_v_entropy(
    train_labels: &[usize],
    test_labels: &[usize],
    k: usize,
    dim: usize,
    config: &VInfoConfig,
) -> Result<f64> {
    if test_labels.is_empty() {
        return Err(Error::Input("null entropy needs at least one test label".into()));
    }
    let zeros = vec![vec![0.0; dim.max(1)]; train_labels.len()];
    let probe = fit_probe(&zeros, train_labels, k, 0, config, config.seed)?;
    let test_zeros = vec![vec![0.0; dim.max(1)]; test_labels.len()];
    cross_entropy(&probe, &test_zeros, test_labels, config.log_base)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerVInfo {
    pub layer: usize,
    pub conditional_entropy: f64,
    pub v_information: f64,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub train_cross_entropy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VInfoReport {
    pub family: ProbeFamily,
    pub log_base: LogBase,
    pub null_entropy: f64,
    pub layers: Vec<LayerVInfo>,
}

impl VInfoReport {
    pub fn values(&self) -> Vec<f64> {
        self.layers.iter().map(|l| l.v_information).collect()
    }
}

fn layer_seed(seed: u64, layer: usize) -> u64 {
    seed ^ (layer as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Train every layer's probe (in parallel) and report `I_V(R_ℓ → Y)` per layer.
pub fn v_information(dataset: &ProbeDataset, config: &VInfoConfig) -> Result<(VInfoReport, ProbeStack)> {
    config.validate()?;
    if dataset.num_layers() == 0 {
        return Err(Error::InsufficientData("dataset has no records".into()));
    }
    let k = dataset.label_set.len();
    let null_entropy = null_v_entropy(
        &dataset.labels_of(Split::Train),
        &dataset.labels_of(Split::Test),
        k,
        dataset.dim(),
        config,
    )?;
    let results = (1..=dataset.num_layers())
        .into_par_iter()
        .map(|layer| {
            let probe = train_layer_probe(dataset, layer, config, layer_seed(config.seed, layer))?;
            let (train_x, train_y) = dataset.layer_view(layer, Split::Train)?;
            let (test_x, test_y) = dataset.layer_view(layer, Split::Test)?;
            let conditional = cross_entropy(&probe, &test_x, &test_y, config.log_base)?;
            let row = LayerVInfo {
                layer,
                conditional_entropy: conditional,
                v_information: null_entropy - conditional,
                train_accuracy: accuracy(&probe, &train_x, &train_y),
                test_accuracy: accuracy(&probe, &test_x, &test_y),
                train_cross_entropy: cross_entropy(&probe, &train_x, &train_y, config.log_base)?,
            };
            Ok((row, probe))
        })
        .collect::<Result<Vec<_>>>()?;
    let (layers, probes): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    for row in &layers {
        if row.v_information < 0.0 {
            log::warn!(
                "layer {} has negative V-information {:.4}; the probe generalizes worse than the prior",
                row.layer,
                row.v_information
            );
        }
    }
    let stack = ProbeStack::new(dataset.label_set.clone(), dataset.content_hash(), probes)?;
    Ok((
        VInfoReport {
            family: config.family,
            log_base: config.log_base,
            null_entropy,
            layers,
        },
        stack,
    ))
}

/// Mean of each consecutive group of `group` values; a trailing partial group
/// is averaged over its own size.
pub fn layer_group_average(values: &[f64], group: usize) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::Input("no values to group".into()));
    }
    if group == 0 {
        return Err(Error::Input("group size must be at least 1".into()));
    }
    Ok(values
        .chunks(group)
        .map(|c| c.iter().sum::<f64>() / c.len() as f64)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn probe_from(weights: Vec<Vec<f64>>, biases: Vec<f64>) -> LayerProbe {
        LayerProbe {
            layer: 1,
            family: ProbeFamily::Linear,
            weights,
            biases,
            hidden: None,
            meta: TrainingMeta { regularization: 0.0, seed: 0, residual: 0.0, iterations: 0, objective: 0.0 },
        }
    }

    #[test]
    fn perfect_predictor_has_zero_entropy() {
        let p = probe_from(vec![vec![800.0, 0.0], vec![0.0, 800.0]], vec![0.0, 0.0]);
        let xs = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let h = cross_entropy(&p, &xs, &[0, 1], LogBase::Natural).unwrap();
        assert!(h.abs() < 1e-300_f64.max(0.0) + 1e-12);
    }

    #[test]
    fn uniform_predictor_has_log_k_entropy() {
        let p = probe_from(vec![vec![0.0]; 3], vec![0.0; 3]);
        let xs = vec![vec![1.0]; 6];
        let h = cross_entropy(&p, &xs, &[0, 1, 2, 0, 1, 2], LogBase::Natural).unwrap();
        assert!((h - 3f64.ln()).abs() < 1e-12);
        assert!((h - 1.0986).abs() < 1e-4);
    }

    #[test]
    fn peaked_predictor_matches_closed_form() {
        // Predicts its argmax with probability 0.9 and 0.05 elsewhere; right 9 times in 10.
        let (hi, lo) = (0.9f64.ln(), 0.05f64.ln());
        let p = probe_from(
            vec![vec![hi, lo, lo], vec![lo, hi, lo], vec![lo, lo, hi]],
            vec![0.0; 3],
        );
        let onehot = |c: usize| {
            let mut v = vec![0.0; 3];
            v[c] = 1.0;
            v
        };
        let xs: Vec<Vec<f64>> = (0..10).map(|i| onehot(i % 3)).collect();
        let mut ys: Vec<usize> = (0..10).map(|i| i % 3).collect();
        ys[9] = (ys[9] + 1) % 3;
        let h = cross_entropy(&p, &xs, &ys, LogBase::Natural).unwrap();
        let oracle = 0.9 * -(0.9f64.ln()) + 0.1 * -(0.05f64.ln());
        assert!((h - oracle).abs() < 1e-12);
        assert!((h - 0.3944).abs() < 1e-4);
    }

    #[test]
    fn null_entropy_matches_prior_cross_entropy() {
        let cfg = VInfoConfig::default();
        let balanced: Vec<usize> = (0..300).map(|i| i % 3).collect();
        let h = null_v_entropy(&balanced, &balanced, 3, 16, &cfg).unwrap();
        assert!((h - 3f64.ln()).abs() < 0.01);

        let skewed: Vec<usize> = (0..400).map(|i| match i % 4 { 0 | 1 => 0, 2 => 1, _ => 2 }).collect();
        let h = null_v_entropy(&skewed, &skewed, 3, 16, &cfg).unwrap();
        let oracle = -(0.5 * 0.5f64.ln() + 2.0 * 0.25 * 0.25f64.ln());
        assert!((oracle - 1.0397).abs() < 1e-4);
        assert!((h - oracle).abs() < 1e-6);

        let two = VInfoConfig { log_base: LogBase::Two, ..VInfoConfig::default() };
        let pairs: Vec<usize> = (0..100).map(|i| i % 2).collect();
        let h = null_v_entropy(&pairs, &pairs, 2, 4, &two).unwrap();
        assert!((h - 1.0).abs() < 0.01);
    }

    #[test]
    fn single_label_training_is_degenerate() {
        let xs = vec![vec![1.0], vec![2.0]];
        let err = fit_probe(&xs, &[1, 1], 3, 1, &VInfoConfig::default(), 0).unwrap_err();
        assert!(matches!(err, Error::DegenerateLabels(_)));
    }

    #[test]
    fn unregularized_separable_data_hits_the_iteration_cap() {
        let xs = vec![vec![-1.0], vec![1.0]];
        let cfg = VInfoConfig {
            regularization: 0.0,
            tolerance: 1e-300,
            max_iterations: 5,
            ..VInfoConfig::default()
        };
        assert!(matches!(fit_probe(&xs, &[0, 1], 2, 1, &cfg, 0), Err(Error::Convergence { .. })));
    }

    #[test]
    fn empty_split_entropy_is_an_input_error() {
        let p = probe_from(vec![vec![0.0]; 2], vec![0.0; 2]);
        assert!(matches!(cross_entropy(&p, &[], &[], LogBase::Natural), Err(Error::Input(_))));
    }

    #[test]
    fn group_average() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0];
        assert_eq!(layer_group_average(&v, 4).unwrap(), vec![2.5, 6.5]);
        assert_eq!(layer_group_average(&v, 1).unwrap(), v.to_vec());
        assert_eq!(layer_group_average(&[1.0, 2.0, 3.0, 4.0, 6.0], 4).unwrap(), vec![2.5, 6.0]);
        assert_eq!(layer_group_average(&vec![0.5; 28], 4).unwrap().len(), 7);
        assert!(layer_group_average(&[], 4).is_err());
    }
}
