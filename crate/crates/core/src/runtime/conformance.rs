// SPDX-License-Identifier: MIT OR Apache-2.0

//! Contract-conformance suite for [`Runtime`] implementations.

use serde::Serialize;

use super::{GenerateOptions, IdentityHook, LayerHook, Runtime};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize)]
pub struct ConformanceCheck {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl ConformanceCheck {
    fn new(name: &'static str, outcome: std::result::Result<String, String>) -> Self {
        match outcome {
            Ok(detail) => Self { name, passed: true, detail },
            Err(detail) => Self { name, passed: false, detail },
        }
    }
}

/// Records `(layer, step)` of every call and the states it saw.
#[derive(Default)]
struct Recorder {
    calls: Vec<(usize, usize)>,
    states: Vec<Vec<f64>>,
}

impl LayerHook for Recorder {
    fn on_layer(&mut self, layer: usize, step: usize, state: &[f64]) -> Result<Vec<f64>> {
        self.calls.push((layer, step));
        self.states.push(state.to_vec());
        Ok(state.to_vec())
    }
}

/// Run every contract check against `runtime` using `prompt` as probe text.
pub fn run_conformance(runtime: &dyn Runtime, prompt: &str, max_tokens: usize) -> Vec<ConformanceCheck> {
    let info = runtime.info().clone();
    let (layers, dim) = (info.num_layers, info.hidden_dim);
    let tokens = runtime.encode(prompt);
    let options = GenerateOptions::greedy(max_tokens.max(1));
    let t = options.max_tokens;
    let mut checks = Vec::new();

    checks.push(ConformanceCheck::new(
        "info",
        if layers >= 1 && dim >= 1 {
            Ok(format!("L={layers}, d={dim}"))
        } else {
            Err(format!("L={layers}, d={dim}"))
        },
    ));

    checks.push(ConformanceCheck::new(
        "capture-shape",
        match runtime.capture(&tokens) {
            Ok(states) if states.len() == layers && states.iter().all(|s| s.len() == dim) => {
                Ok(format!("{layers} vectors of length {dim}"))
            }
            Ok(states) => Err(format!("got {} vectors", states.len())),
            Err(e) => Err(e.to_string()),
        },
    ));

    checks.push(ConformanceCheck::new(
        "capture-deterministic",
        match (runtime.capture(&tokens), runtime.capture(&tokens)) {
            (Ok(a), Ok(b)) if a == b => Ok("identical".into()),
            (Ok(_), Ok(_)) => Err("captures differ".into()),
            (Err(e), _) | (_, Err(e)) => Err(e.to_string()),
        },
    ));

    checks.push(ConformanceCheck::new(
        "capture-empty-rejected",
        match runtime.capture(&[]) {
            Err(Error::Input(_)) => Ok("input error".into()),
            Err(e) => Err(format!("wrong error class: {e}")),
            Ok(_) => Err("empty sequence accepted".into()),
        },
    ));

    let plain = runtime.generate(&tokens, &options, None);
    checks.push(ConformanceCheck::new(
        "generate-deterministic",
        match (&plain, runtime.generate(&tokens, &options, None)) {
            (Ok(a), Ok(b)) if *a == b && a.tokens.len() == t => Ok(format!("{t} tokens")),
            (Ok(a), Ok(_)) => Err(format!("reruns differ or wrong length {}", a.tokens.len())),
            (Err(e), _) => Err(e.to_string()),
            (_, Err(e)) => Err(e.to_string()),
        },
    ));

    let mut identity = IdentityHook;
    checks.push(ConformanceCheck::new(
        "identity-hook-non-interference",
        match (&plain, runtime.generate(&tokens, &options, Some(&mut identity))) {
            (Ok(a), Ok(b)) if *a == b => Ok("bit-identical trace".into()),
            (Ok(_), Ok(_)) => Err("identity hook changed the trace".into()),
            (Err(e), _) => Err(e.to_string()),
            (_, Err(e)) => Err(e.to_string()),
        },
    ));

    let mut recorder = Recorder::default();
    let order = runtime
        .generate(&tokens, &options, Some(&mut recorder))
        .map_err(|e| e.to_string())
        .and_then(|_| {
            let expected: Vec<(usize, usize)> = (1..=t)
                .flat_map(|step| (1..=layers).map(move |layer| (layer, step)))
                .collect();
            if recorder.calls == expected {
                Ok(format!("{} calls, ascending layers per step", expected.len()))
            } else {
                Err(format!("call sequence {:?}", &recorder.calls[..recorder.calls.len().min(12)]))
            }
        });
    checks.push(ConformanceCheck::new("hook-call-order", order));

    let mut bad = |_: usize, _: usize, s: &[f64]| -> Result<Vec<f64>> { Ok(vec![0.0; s.len() + 1]) };
    checks.push(ConformanceCheck::new(
        "hook-dimension-enforced",
        match runtime.generate(&tokens, &options, Some(&mut bad)) {
            Err(Error::HookContract { .. }) => Ok("hook-contract error".into()),
            Err(e) => Err(format!("wrong error class: {e}")),
            Ok(_) => Err("wrong-dimension replacement accepted".into()),
        },
    ));

    checks.push(ConformanceCheck::new("hook-propagation", propagation(runtime, &tokens, layers)));
    checks
}

/// A perturbation at layer 1 of step 1 must change the states at every higher layer.
fn propagation(runtime: &dyn Runtime, tokens: &[u32], layers: usize) -> std::result::Result<String, String> {
    if layers < 2 {
        return Ok("single layer; nothing downstream".into());
    }
    let options = GenerateOptions::greedy(1);
    let mut clean = Recorder::default();
    runtime
        .generate(tokens, &options, Some(&mut clean))
        .map_err(|e| e.to_string())?;
    let mut seen = Vec::new();
    let mut perturb = |layer: usize, _: usize, s: &[f64]| -> Result<Vec<f64>> {
        seen.push(s.to_vec());
        let mut out = s.to_vec();
        if layer == 1 {
            for (i, v) in out.iter_mut().enumerate() {
                *v += 0.5 * ((i as f64) * 0.7 + 0.3).sin();
            }
        }
        Ok(out)
    };
    runtime
        .generate(tokens, &options, Some(&mut perturb))
        .map_err(|e| e.to_string())?;
    let unchanged: Vec<usize> = (2..=layers)
        .filter(|l| clean.states[l - 1] == seen[l - 1])
        .collect();
    if unchanged.is_empty() {
        Ok(format!("layers 2..={layers} all changed"))
    } else {
        Err(format!("layers {unchanged:?} did not react to a layer-1 edit"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labels::LabelSet;
    use crate::runtime::{SyntheticRuntime, SyntheticRuntimeSpec};

    #[test]
    fn synthetic_runtime_conforms() {
        let rt = SyntheticRuntime::new(SyntheticRuntimeSpec::new(
            LabelSet::big_five(),
            vec![0.0, 1.0, 2.0, 4.0],
            0.5,
            3,
        ))
        .unwrap();
        for check in run_conformance(&rt, "You are an AI assistant with the personality of Neuroticism.", 8) {
            assert!(check.passed, "{}: {}", check.name, check.detail);
        }
    }
}
