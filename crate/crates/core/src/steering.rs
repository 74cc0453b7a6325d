// SPDX-License-Identifier: MIT OR Apache-2.0

//! Hyperplane-crossing edits and the per-token, per-layer steering loop.
//!
//! For target label `ŷ` with probe row `(w, b)` the edit is
//!
//! ```text
//! Δ = ((σ⁻¹(p̂) − b − w·R) / ‖w‖²) · w
//! ```
//!
//! the minimum-norm shift that puts the target row's affine score exactly on
//! `σ⁻¹(p̂)`. Other rows are left alone (one-vs-rest reading of the binary
//! formula); the skip test still uses the full k-way argmax.

use crate::config::SteeringConfig;
use crate::error::{Error, Result};
use crate::probe::{argmax, dot, LayerProbe, ProbeFamily, ProbeStack};
use crate::runtime::{Decoding, GenerateOptions, HookMode, LayerHook, Runtime};
use crate::trace::{EditRecord, GenerationTrace, SkipReason, TokenId};

/// Weight rows with a smaller norm are treated as degenerate.
pub const MIN_WEIGHT_NORM: f64 = 1e-12;

/// `log(p / (1 − p))`.
pub fn logit(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("probability {p} outside (0, 1)")));
    }
    Ok((p / (1.0 - p)).ln())
}

fn target_row(probe: &LayerProbe, target: usize) -> Result<(&[f64], f64)> {
    if probe.family != ProbeFamily::Linear {
        return Err(Error::UnsupportedFamily(format!(
            "steering needs a linear probe, layer {} is {}",
            probe.layer, probe.family
        )));
    }
    let w = probe
        .weights
        .get(target)
        .ok_or_else(|| Error::Config(format!("target label {target} outside the probe's classes")))?;
    let norm_sq = dot(w, w);
    if !(norm_sq.sqrt() >= MIN_WEIGHT_NORM) {
        return Err(Error::DegenerateProbe(format!(
            "layer {} weight row {target} has norm {:.3e}",
            probe.layer,
            norm_sq.sqrt()
        )));
    }
    Ok((w, probe.biases[target]))
}

/// Edit vector that moves `state` onto the target row's `σ⁻¹(p̂)` level set.
pub fn perturbation(probe: &LayerProbe, state: &[f64], target: usize, p_hat: f64) -> Result<Vec<f64>> {
    let level = logit(p_hat)?;
    perturbation_to_level(probe, state, target, level)
}

fn perturbation_to_level(probe: &LayerProbe, state: &[f64], target: usize, level: f64) -> Result<Vec<f64>> {
    let (w, b) = target_row(probe, target)?;
    if state.len() != w.len() {
        return Err(Error::Input(format!(
            "state has dimension {}, probe expects {}",
            state.len(),
            w.len()
        )));
    }
    let coef = (level - b - dot(w, state)) / dot(w, w);
    Ok(w.iter().map(|v| coef * v).collect())
}

/// One guarded edit: skip when the probe already predicts `target` (and
/// `skip_if_target` is set), otherwise add `Δ`. When `selected` is given, Δ is
/// kept only on those coordinates and every other coordinate is copied through.
pub fn steer_layer_masked(
    probe: &LayerProbe,
    state: &[f64],
    target: usize,
    p_hat: f64,
    skip_if_target: bool,
    selected: Option<&[usize]>,
) -> Result<(Vec<f64>, EditRecord)> {
    let level = logit(p_hat)?;
    let (w, b) = target_row(probe, target)?;
    let pre_score = dot(w, state) + b;
    let pre_argmax = argmax(&probe.scores(state));
    let mut record = EditRecord {
        step: 0,
        layer: probe.layer,
        applied: false,
        pre_score,
        post_score: pre_score,
        delta_norm: 0.0,
        skip_reason: SkipReason::AlreadyTarget,
        pre_argmax,
    };
    if skip_if_target && pre_argmax == target {
        return Ok((state.to_vec(), record));
    }
    let delta = perturbation_to_level(probe, state, target, level)?;
    let mut out = state.to_vec();
    let mut norm_sq = 0.0;
    match selected {
        None => {
            for ((o, d), r) in out.iter_mut().zip(&delta).zip(state) {
                *o = r + d;
                norm_sq += d * d;
            }
        }
        Some(keep) => {
            for &j in keep.iter().filter(|&&j| j < state.len()) {
                out[j] = state[j] + delta[j];
                norm_sq += delta[j] * delta[j];
            }
        }
    }
    record.applied = true;
    record.skip_reason = SkipReason::None;
    record.delta_norm = norm_sq.sqrt();
    record.post_score = dot(w, &out) + b;
    Ok((out, record))
}

/// [`steer_layer_masked`] without a neuron restriction.
pub fn steer_layer(
    probe: &LayerProbe,
    state: &[f64],
    target: usize,
    p_hat: f64,
    skip_if_target: bool,
) -> Result<(Vec<f64>, EditRecord)> {
    steer_layer_masked(probe, state, target, p_hat, skip_if_target, None)
}

/// Runtime hook applying [`steer_layer_masked`] at every in-range layer of
/// every decoding step. Out-of-range layers pass through and are logged with
/// [`SkipReason::OutsideLayerRange`].
pub struct SteeringHook<'a> {
    stack: &'a ProbeStack,
    config: &'a SteeringConfig,
    records: Vec<EditRecord>,
}

impl<'a> SteeringHook<'a> {
    pub fn new(stack: &'a ProbeStack, config: &'a SteeringConfig) -> Result<Self> {
        config.validate(stack.num_layers(), stack.label_set.len())?;
        if stack.family() != ProbeFamily::Linear {
            return Err(Error::UnsupportedFamily(format!(
                "steering needs linear probes, stack holds {}",
                stack.family()
            )));
        }
        Ok(Self {
            stack,
            config,
            records: Vec::new(),
        })
    }

    pub fn into_records(self) -> Vec<EditRecord> {
        self.records
    }
}

impl LayerHook for SteeringHook<'_> {
    fn on_layer(&mut self, layer: usize, step: usize, state: &[f64]) -> Result<Vec<f64>> {
        let probe = self
            .stack
            .layer(layer)
            .ok_or_else(|| Error::Config(format!("no probe for layer {layer}")))?;
        let (out, mut record) = if self.config.layers.contains(layer) {
            let selected = self.config.patch.as_ref().and_then(|p| p.for_layer(layer));
            steer_layer_masked(
                probe,
                state,
                self.config.target,
                self.config.p_hat,
                self.config.skip_if_target,
                selected,
            )?
        } else {
            let (w, b) = target_row(probe, self.config.target)?;
            let score = dot(w, state) + b;
            let record = EditRecord {
                step,
                layer,
                applied: false,
                pre_score: score,
                post_score: score,
                delta_norm: 0.0,
                skip_reason: SkipReason::OutsideLayerRange,
                pre_argmax: probe.predict(state),
            };
            (state.to_vec(), record)
        };
        record.step = step;
        self.records.push(record);
        Ok(out)
    }
}

/// Greedy in-pass steered generation of `config.max_tokens` tokens.
pub fn steered_generate(
    runtime: &dyn Runtime,
    stack: &ProbeStack,
    prompt: &[TokenId],
    config: &SteeringConfig,
) -> Result<GenerationTrace> {
    steered_generate_with(runtime, stack, prompt, config, HookMode::InPass, Decoding::Greedy)
}

pub fn steered_generate_with(
    runtime: &dyn Runtime,
    stack: &ProbeStack,
    prompt: &[TokenId],
    config: &SteeringConfig,
    hook_mode: HookMode,
    decoding: Decoding,
) -> Result<GenerationTrace> {
    let info = runtime.info();
    if info.num_layers != stack.num_layers() || info.hidden_dim != stack.dim() {
        return Err(Error::Config(format!(
            "runtime has L={}, d={} but the probe stack has L={}, d={}",
            info.num_layers,
            info.hidden_dim,
            stack.num_layers(),
            stack.dim()
        )));
    }
    let mut hook = SteeringHook::new(stack, config)?;
    let options = GenerateOptions {
        max_tokens: config.max_tokens,
        hook_mode,
        decoding,
    };
    let mut trace = runtime.generate(prompt, &options, Some(&mut hook))?;
    trace.edits = hook.into_records();
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::probe::TrainingMeta;

    fn probe(weights: Vec<Vec<f64>>, biases: Vec<f64>) -> LayerProbe {
        LayerProbe {
            layer: 1,
            family: ProbeFamily::Linear,
            weights,
            biases,
            hidden: None,
            meta: TrainingMeta {
                regularization: 0.0,
                seed: 0,
                residual: 0.0,
                iterations: 0,
                objective: 0.0,
            },
        }
    }

    #[test]
    fn logit_values() {
        assert_eq!(logit(0.5).unwrap(), 0.0);
        assert!((logit(0.993307).unwrap() - 5.0).abs() < 1e-4);
        assert!((logit(0.99).unwrap() - 4.59512).abs() < 1e-4);
        assert!((logit(0.99).unwrap() - 99f64.ln()).abs() < 1e-12);
        assert!(matches!(logit(1.0), Err(Error::Domain(_))));
        assert!(matches!(logit(0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn hand_evaluated_edits() {
        let p = probe(vec![vec![3.0, 4.0], vec![0.0, 1.0]], vec![0.0, 0.0]);
        let level = logit(0.5).unwrap() + 5.0;
        let d = perturbation_to_level(&p, &[0.0, 0.0], 0, level).unwrap();
        assert!((d[0] - 0.6).abs() < 1e-12 && (d[1] - 0.8).abs() < 1e-12);
        assert!((3.0 * d[0] + 4.0 * d[1] - 5.0).abs() < 1e-12);

        let p = probe(vec![vec![3.0, 4.0], vec![0.0, 1.0]], vec![-1.0, 0.0]);
        let d = perturbation(&p, &[1.0, 1.0], 0, 0.5).unwrap();
        assert!((d[0] + 0.72).abs() < 1e-12 && (d[1] + 0.96).abs() < 1e-12);
        assert!((3.0 * (1.0 + d[0]) + 4.0 * (1.0 + d[1]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn point_on_level_set_needs_no_edit() {
        let p = probe(vec![vec![3.0, 4.0], vec![1.0, 0.0]], vec![0.0, 0.0]);
        let d = perturbation(&p, &[0.0, 0.0], 0, 0.5).unwrap();
        assert!(d.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn degenerate_and_nonlinear_probes_are_rejected() {
        let p = probe(vec![vec![0.0, 0.0], vec![1.0, 0.0]], vec![0.0, 0.0]);
        assert!(matches!(perturbation(&p, &[1.0, 1.0], 0, 0.9), Err(Error::DegenerateProbe(_))));
        let mut m = probe(vec![vec![1.0], vec![-1.0]], vec![0.0, 0.0]);
        m.family = ProbeFamily::Mlp2;
        assert!(matches!(perturbation(&m, &[1.0], 0, 0.9), Err(Error::UnsupportedFamily(_))));
    }

    #[test]
    fn skip_branch_and_flag() {
        let p = probe(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![0.0, 0.0]);
        let state = [2.0, 0.5];
        let (out, rec) = steer_layer(&p, &state, 0, 0.99, true).unwrap();
        assert_eq!(out, state.to_vec());
        assert!(!rec.applied);
        assert_eq!(rec.skip_reason, SkipReason::AlreadyTarget);

        let (out, rec) = steer_layer(&p, &state, 0, 0.99, false).unwrap();
        assert!(rec.applied);
        assert!((out[0] - logit(0.99).unwrap()).abs() < 1e-12);
        assert!((rec.post_score - logit(0.99).unwrap()).abs() < 1e-12);

        let (out, rec) = steer_layer(&p, &state, 1, 0.99, true).unwrap();
        assert!(rec.applied);
        assert_eq!(rec.pre_argmax, 0);
        assert!((out[1] - logit(0.99).unwrap()).abs() < 1e-12);
        assert_eq!(out[0], state[0]);
    }

    #[test]
    fn masking_copies_unselected_coordinates() {
        let p = probe(vec![vec![1.0, 1.0, 1.0], vec![0.0, 0.0, 1.0]], vec![0.0, 0.0]);
        let state = [0.1, -0.2, 3.0];
        let (out, rec) = steer_layer_masked(&p, &state, 0, 0.99, true, Some(&[1])).unwrap();
        assert_eq!(out[0], state[0]);
        assert_eq!(out[2], state[2]);
        assert_ne!(out[1], state[1]);
        assert!(rec.applied);
        let (none, _) = steer_layer_masked(&p, &state, 0, 0.99, true, Some(&[])).unwrap();
        assert_eq!(none, state.to_vec());
    }
}
