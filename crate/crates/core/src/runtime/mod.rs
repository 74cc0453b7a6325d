// SPDX-License-Identifier: MIT OR Apache-2.0

//! Model-runtime contract: final-token capture and hook-mediated generation.
//!
//! A runtime exposes `L` layers of `d`-dimensional hidden states. During
//! generation the runtime calls a [`LayerHook`] once per layer per decoding
//! step, in ascending layer order, and continues with whatever state the hook
//! returns. Real-model adapters live outside this crate and implement
//! [`Runtime`]; [`conformance`] checks an implementation against the contract.

pub mod conformance;
pub mod synthetic;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{ActivationRecord, ProbeDataset};
use crate::error::{Error, Result};
use crate::labels::{LabelSet, PromptSpec};
use crate::trace::{GenerationTrace, TokenId};

pub use synthetic::{SyntheticRuntime, SyntheticRuntimeSpec, TraitCoding};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuntimeInfo {
    pub id: String,
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub vocabulary: String,
}

/// Callback invoked with `(layer, step, state)`; returns the replacement state.
///
/// `layer` and `step` are 1-based. The replacement must have the same dimension
/// as `state`.
pub trait LayerHook {
    fn on_layer(&mut self, layer: usize, step: usize, state: &[f64]) -> Result<Vec<f64>>;
}

impl<F> LayerHook for F
where
    F: FnMut(usize, usize, &[f64]) -> Result<Vec<f64>>,
{
    fn on_layer(&mut self, layer: usize, step: usize, state: &[f64]) -> Result<Vec<f64>> {
        self(layer, step, state)
    }
}

/// Returns every state unchanged.
#[derive(Debug, Default, Clone, Copy)]
pub struct IdentityHook;

impl LayerHook for IdentityHook {
    fn on_layer(&mut self, _layer: usize, _step: usize, state: &[f64]) -> Result<Vec<f64>> {
        Ok(state.to_vec())
    }
}

/// When a hook sees each layer's state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HookMode {
    /// At each layer's output; layer ℓ+1 consumes the edited layer-ℓ state.
    #[default]
    InPass,
    /// After an unedited pass; edits reach the cache and the readout only.
    PostHoc,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Decoding {
    #[default]
    Greedy,
    Sample { temperature: f64, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerateOptions {
    pub max_tokens: usize,
    #[serde(default)]
    pub hook_mode: HookMode,
    #[serde(default)]
    pub decoding: Decoding,
}

impl GenerateOptions {
    pub fn greedy(max_tokens: usize) -> Self {
        Self {
            max_tokens,
            hook_mode: HookMode::InPass,
            decoding: Decoding::Greedy,
        }
    }
}

/// The adapter contract.
pub trait Runtime: Send + Sync {
    fn info(&self) -> &RuntimeInfo;

    fn encode(&self, text: &str) -> Vec<TokenId>;

    fn token_text(&self, token: TokenId) -> String;

    /// Hidden states of the final token of `tokens` after each layer (`L × d`).
    fn capture(&self, tokens: &[TokenId]) -> Result<Vec<Vec<f64>>>;

    /// Decode `options.max_tokens` tokens after `prompt`, calling `hook` at every
    /// layer of every decoding step. Prompt tokens are never passed to the hook.
    fn generate(
        &self,
        prompt: &[TokenId],
        options: &GenerateOptions,
        hook: Option<&mut dyn LayerHook>,
    ) -> Result<GenerationTrace>;
}

/// One activation record per prompt, in prompt order.
pub fn extract_probe_dataset(
    runtime: &dyn Runtime,
    prompts: &[PromptSpec],
    label_set: &LabelSet,
) -> Result<ProbeDataset> {
    let k = label_set.len();
    if let Some(bad) = prompts.iter().find(|p| p.label >= k) {
        return Err(Error::Input(format!(
            "prompt about {:?} carries label index {} outside the {k}-label set",
            bad.entity, bad.label
        )));
    }
    let records = prompts
        .par_iter()
        .enumerate()
        .map(|(i, prompt)| {
            let tokens = runtime.encode(&prompt.rendered_text);
            let states = runtime.capture(&tokens)?;
            let layers = states
                .into_iter()
                .map(|layer| layer.into_iter().map(|v| v as f32).collect())
                .collect();
            ActivationRecord::new(format!("p{i:05}"), prompt.label, layers)
        })
        .collect::<Result<Vec<_>>>()?;
    ProbeDataset::new(label_set.clone(), records)
}
