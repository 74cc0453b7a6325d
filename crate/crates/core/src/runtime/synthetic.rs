// SPDX-License-Identifier: MIT OR Apache-2.0

//! Deterministic layered stand-in model with label-conditioned geometry.
//!
//! Each position carries a *belief* `β ∈ Δ^{k-1}` over the labels. At layer ℓ
//! the emitted state is
//!
//! ```text
//! h_ℓ = s_ℓ · Σ_y β_y μ_y  +  Σ_j c_j π_j  +  σ ε_ℓ
//! ```
//!
//! where `μ_y` and `π_j` are the trait and content halves of an orthonormal
//! basis (dense ±1/√d Hadamard rows by default, or a random rotation), `c` is a token-driven content vector and `ε` is standard
//! Gaussian noise keyed on (prompt, position, layer). Class centroids at layer
//! ℓ therefore sit `s_ℓ √2` apart.
//!
//! Layer ℓ+1 reads the hook-edited noiseless signal of layer ℓ: the belief is
//! re-decoded as `softmax(γ · Mᵀx / s_ℓ)` (layers with `s_ℓ = 0` pass the belief
//! through unchanged) and mixed with attention over the cache. Attention at
//! layer ℓ averages the decoded beliefs of earlier positions whose token carries
//! label evidence (persona words and vocabulary-block words). Cache entries
//! hold post-hook states.
//!
//! The readout scores block-`y` tokens with `G (z_y − ½) + u_v · Pᵀh_L` and
//! neutral tokens with `u_v · Pᵀh_L`, where `z = Mᵀh_L / s_L`. At the exact
//! centroid of label y, block y's tokens tie at `G/2` while every other token
//! scores at most 0, which is what the end-to-end oracles rely on.

use std::collections::HashMap;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Decoding, GenerateOptions, HookMode, LayerHook, Runtime, RuntimeInfo};
use crate::error::{Error, Result};
use crate::labels::{words, LabelSet};
use crate::probe::{argmax, dot, softmax};
use crate::trace::{GenerationTrace, TokenId};

const TAG_BASIS: u64 = 0x0b;
const TAG_CONTENT: u64 = 0xc0;
const TAG_EMBED: u64 = 0xe0;
const TAG_READOUT: u64 = 0x0d;
const TAG_NOISE_PROMPT: u64 = 0x51;
const TAG_NOISE_GEN: u64 = 0x52;

/// Range of hashed ids given to words outside the vocabulary.
const CONTEXT_BUCKETS: u32 = 1 << 16;

pub const END_OF_QUESTION: &str = "<eoq>";

fn default_hidden() -> usize {
    16
}
fn default_readout_gain() -> f64 {
    10.0
}
fn default_content_gain() -> f64 {
    0.5
}
fn default_attention_mix() -> f64 {
    0.3
}
fn default_sharpness() -> f64 {
    8.0
}
fn default_neutral() -> Vec<String> {
    [
        "the", "a", "it", "is", "and", "of", "to", "that", "in", "this", "with", "for", "on", "as",
        "very", "really", "quite", "about", "so", "just",
    ]
    .into_iter()
    .map(String::from)
    .collect()
}

/// How the orthonormal basis is laid out over the hidden coordinates.
///
/// Probing and unrestricted steering are rotation invariant, so the choice
/// only shows up in coordinate-level analyses such as neuron patches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraitCoding {
    /// Signed, permuted Hadamard rows: every direction spreads evenly over all
    /// coordinates. Needs a power-of-two hidden size.
    #[default]
    Dense,
    /// QR of a Gaussian matrix.
    Rotated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticRuntimeSpec {
    pub label_set: LabelSet,
    /// Centroid scale `s_ℓ` per layer; its length is the layer count L.
    pub separation: Vec<f64>,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default)]
    pub coding: TraitCoding,
    /// Per-coordinate standard deviation σ of the state noise.
    pub noise: f64,
    #[serde(default = "default_neutral")]
    pub neutral_tokens: Vec<String>,
    #[serde(default = "default_readout_gain")]
    pub readout_gain: f64,
    #[serde(default = "default_content_gain")]
    pub content_gain: f64,
    /// Weight of attention in the belief mixture, in [0, 1).
    #[serde(default = "default_attention_mix")]
    pub attention_mix: f64,
    /// Softmax sharpness γ of the belief decoder.
    #[serde(default = "default_sharpness")]
    pub sharpness: f64,
    pub seed: u64,
}

impl SyntheticRuntimeSpec {
    pub fn new(label_set: LabelSet, separation: Vec<f64>, noise: f64, seed: u64) -> Self {
        Self {
            label_set,
            separation,
            hidden: default_hidden(),
            coding: TraitCoding::default(),
            noise,
            neutral_tokens: default_neutral(),
            readout_gain: default_readout_gain(),
            content_gain: default_content_gain(),
            attention_mix: default_attention_mix(),
            sharpness: default_sharpness(),
            seed,
        }
    }

    pub fn with_hidden(mut self, hidden: usize) -> Self {
        self.hidden = hidden;
        self
    }

    pub fn with_coding(mut self, coding: TraitCoding) -> Self {
        self.coding = coding;
        self
    }

    pub fn num_layers(&self) -> usize {
        self.separation.len()
    }

    fn validate(&self) -> Result<()> {
        let k = self.label_set.len();
        if self.separation.is_empty() {
            return Err(Error::Spec("at least one layer is required".into()));
        }
        if self.hidden < k {
            return Err(Error::Spec(format!(
                "hidden dimension {} is smaller than the label count {k}",
                self.hidden
            )));
        }
        if self.coding == TraitCoding::Dense && !self.hidden.is_power_of_two() {
            return Err(Error::Spec(format!(
                "dense coding needs a power-of-two hidden dimension, got {}",
                self.hidden
            )));
        }
        if self.separation.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(Error::Spec("separation values must be finite and non-negative".into()));
        }
        if !self.noise.is_finite() || self.noise < 0.0 {
            return Err(Error::Spec(format!("noise scale {} is invalid", self.noise)));
        }
        if !(0.0..1.0).contains(&self.attention_mix) {
            return Err(Error::Spec("attention_mix must lie in [0, 1)".into()));
        }
        if !(self.sharpness > 0.0 && self.sharpness.is_finite()) {
            return Err(Error::Spec("sharpness must be positive".into()));
        }
        if !self.readout_gain.is_finite() || !self.content_gain.is_finite() {
            return Err(Error::Spec("gains must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct CacheEntry {
    state: Vec<f64>,
    belief: Vec<f64>,
    salient: bool,
}

/// Per-layer attention cache of one generation stream.
#[derive(Debug, Clone)]
pub struct LayerCache {
    layers: Vec<Vec<CacheEntry>>,
    salient_sum: Vec<Vec<f64>>,
    salient_count: Vec<usize>,
}

impl LayerCache {
    fn new(num_layers: usize, k: usize) -> Self {
        Self {
            layers: vec![Vec::new(); num_layers],
            salient_sum: vec![vec![0.0; k]; num_layers],
            salient_count: vec![0; num_layers],
        }
    }

    fn push(&mut self, layer: usize, entry: CacheEntry) {
        let i = layer - 1;
        if entry.salient {
            for (acc, b) in self.salient_sum[i].iter_mut().zip(&entry.belief) {
                *acc += b;
            }
            self.salient_count[i] += 1;
        }
        self.layers[i].push(entry);
    }

    fn replace(&mut self, layer: usize, position: usize, state: Vec<f64>, belief: Vec<f64>) {
        let i = layer - 1;
        let entry = &mut self.layers[i][position];
        if entry.salient {
            for ((acc, old), new) in self.salient_sum[i].iter_mut().zip(&entry.belief).zip(&belief) {
                *acc += new - old;
            }
        }
        entry.state = state;
        entry.belief = belief;
    }

    fn attention(&self, layer: usize) -> Option<Vec<f64>> {
        let i = layer - 1;
        let n = self.salient_count[i];
        (n > 0).then(|| self.salient_sum[i].iter().map(|v| v / n as f64).collect())
    }

    /// Number of cached positions.
    pub fn len(&self) -> usize {
        self.layers.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Post-hook states cached at 1-based `layer`, in position order.
    pub fn states(&self, layer: usize) -> Vec<&[f64]> {
        self.layers[layer - 1].iter().map(|e| e.state.as_slice()).collect()
    }
}

/// Deterministic synthetic runtime built from a [`SyntheticRuntimeSpec`].
#[derive(Debug, Clone)]
pub struct SyntheticRuntime {
    spec: SyntheticRuntimeSpec,
    info: RuntimeInfo,
    /// `k` orthonormal trait directions μ_y.
    trait_basis: Vec<Vec<f64>>,
    /// `d − k` orthonormal content directions π_j.
    content_basis: Vec<Vec<f64>>,
    /// Per layer ≥ 2: content recurrence, `m × m`.
    content_maps: Vec<Vec<Vec<f64>>>,
    vocab: Vec<String>,
    word_ids: HashMap<String, TokenId>,
    /// Evidence label of each vocabulary id.
    evidence: Vec<Option<usize>>,
    emit_start: usize,
    /// Readout content direction per emittable token.
    readout_dirs: Vec<Vec<f64>>,
    /// Block label of each emittable token (None for neutral tokens).
    readout_labels: Vec<Option<usize>>,
}

/// Build a synthetic runtime, validating the vocabulary partition.
pub fn build_synthetic(spec: SyntheticRuntimeSpec) -> Result<SyntheticRuntime> {
    SyntheticRuntime::new(spec)
}

impl SyntheticRuntime {
    pub fn new(spec: SyntheticRuntimeSpec) -> Result<Self> {
        spec.validate()?;
        let k = spec.label_set.len();
        let d = spec.hidden;
        let m = d - k;
        let num_layers = spec.num_layers();

        let persona = persona_tokens(&spec.label_set);
        let mut vocab = vec![END_OF_QUESTION.to_string()];
        let mut evidence = vec![None];
        let mut word_ids: HashMap<String, TokenId> = HashMap::new();
        let mut insert = |word: String, label: Option<usize>, vocab: &mut Vec<String>, evidence: &mut Vec<Option<usize>>| -> Result<()> {
            if word_ids.contains_key(&word) || word == END_OF_QUESTION {
                return Err(Error::Spec(format!("vocabulary word {word:?} is not unique")));
            }
            word_ids.insert(word.clone(), vocab.len() as TokenId);
            vocab.push(word);
            evidence.push(label);
            Ok(())
        };
        for (word, label) in persona {
            insert(word, Some(label), &mut vocab, &mut evidence)?;
        }
        let emit_start = vocab.len();
        let mut readout_labels = Vec::new();
        for (label, entry) in spec.label_set.labels().iter().enumerate() {
            let lexicon = entry
                .lexicon
                .as_ref()
                .filter(|l| !l.is_empty())
                .ok_or_else(|| Error::Spec(format!("label {:?} has no vocabulary block", entry.id)))?;
            for word in lexicon {
                insert(normalize_word(word), Some(label), &mut vocab, &mut evidence)?;
                readout_labels.push(Some(label));
            }
        }
        for word in &spec.neutral_tokens {
            insert(normalize_word(word), None, &mut vocab, &mut evidence)?;
            readout_labels.push(None);
        }

        let basis = match spec.coding {
            TraitCoding::Dense => hadamard_basis(d, mix(&[spec.seed, TAG_BASIS])),
            TraitCoding::Rotated => orthonormal_basis(d, mix(&[spec.seed, TAG_BASIS])),
        };
        let trait_basis = basis[..k].to_vec();
        let content_basis = basis[k..].to_vec();
        let content_maps = (0..num_layers)
            .map(|l| {
                let g = gaussian(mix(&[spec.seed, TAG_CONTENT, l as u64]), m * m);
                let scale = 0.8 / (m.max(1) as f64).sqrt();
                (0..m).map(|r| g[r * m..(r + 1) * m].iter().map(|v| v * scale).collect()).collect()
            })
            .collect();
        let readout_dirs = (0..readout_labels.len())
            .map(|i| {
                let scale = 1.0 / (m.max(1) as f64).sqrt();
                gaussian(mix(&[spec.seed, TAG_READOUT, i as u64]), m)
                    .into_iter()
                    .map(|v| v * scale)
                    .collect()
            })
            .collect();

        let info = RuntimeInfo {
            id: format!("synthetic-L{num_layers}-d{d}-seed{}", spec.seed),
            num_layers,
            hidden_dim: d,
            vocabulary: format!(
                "{} label blocks ({} tokens) + {} neutral tokens; unknown words hash into {} context ids",
                k,
                readout_labels.iter().filter(|l| l.is_some()).count(),
                spec.neutral_tokens.len(),
                CONTEXT_BUCKETS
            ),
        };
        Ok(Self {
            spec,
            info,
            trait_basis,
            content_basis,
            content_maps,
            vocab,
            word_ids,
            evidence,
            emit_start,
            readout_dirs,
            readout_labels,
        })
    }

    pub fn spec(&self) -> &SyntheticRuntimeSpec {
        &self.spec
    }

    /// Centroid of label `label` at 1-based `layer` (noise- and content-free).
    pub fn centroid(&self, layer: usize, label: usize) -> Vec<f64> {
        let s = self.spec.separation[layer - 1];
        self.trait_basis[label].iter().map(|v| v * s).collect()
    }

    pub fn trait_direction(&self, label: usize) -> &[f64] {
        &self.trait_basis[label]
    }

    /// Label owning `token`'s vocabulary block, if any.
    pub fn block_of(&self, token: TokenId) -> Option<usize> {
        let i = token as usize;
        if i >= self.emit_start && i < self.vocab.len() {
            self.readout_labels[i - self.emit_start]
        } else {
            None
        }
    }

    /// Logits over the emittable vocabulary for a final-layer state.
    /// Index `i` corresponds to token id `emit_start + i`.
    pub fn readout_logits(&self, state: &[f64]) -> Vec<f64> {
        let s = *self.spec.separation.last().expect("validated non-empty");
        let z: Vec<f64> = if s > 0.0 {
            self.trait_basis.iter().map(|mu| dot(mu, state) / s).collect()
        } else {
            vec![0.0; self.trait_basis.len()]
        };
        let q: Vec<f64> = self.content_basis.iter().map(|p| dot(p, state)).collect();
        self.readout_dirs
            .iter()
            .zip(&self.readout_labels)
            .map(|(u, label)| {
                let content = dot(u, &q);
                match label {
                    Some(y) => self.spec.readout_gain * (z[*y] - 0.5) + content,
                    None => content,
                }
            })
            .collect()
    }

    pub fn emit_token_id(&self, index: usize) -> TokenId {
        (self.emit_start + index) as TokenId
    }

    fn embed(&self, token: TokenId) -> Vec<f64> {
        let m = self.content_basis.len();
        gaussian(mix(&[self.spec.seed, TAG_EMBED, u64::from(token)]), m)
            .into_iter()
            .map(|v| v * self.spec.content_gain)
            .collect()
    }

    fn decode_belief(&self, layer: usize, signal: &[f64], carried: &[f64]) -> Vec<f64> {
        let s = self.spec.separation[layer - 1];
        if s > 0.0 {
            let z: Vec<f64> = self
                .trait_basis
                .iter()
                .map(|mu| self.spec.sharpness * dot(mu, signal) / s)
                .collect();
            softmax(&z)
        } else {
            carried.to_vec()
        }
    }

    fn compose(&self, layer: usize, belief: &[f64], content: &[f64]) -> Vec<f64> {
        let s = self.spec.separation[layer - 1];
        let mut out = vec![0.0; self.spec.hidden];
        for (mu, b) in self.trait_basis.iter().zip(belief) {
            let w = s * b;
            for (o, v) in out.iter_mut().zip(mu) {
                *o += w * v;
            }
        }
        for (p, c) in self.content_basis.iter().zip(content) {
            for (o, v) in out.iter_mut().zip(p) {
                *o += c * v;
            }
        }
        out
    }

    /// Run one position through every layer. Returns the post-hook states.
    fn step(
        &self,
        token: TokenId,
        noise_key: u64,
        cache: &mut LayerCache,
        mut hook: Option<(&mut dyn LayerHook, usize, HookMode)>,
    ) -> Result<Vec<Vec<f64>>> {
        let k = self.trait_basis.len();
        let d = self.spec.hidden;
        let a = self.spec.attention_mix;
        let evidence = self.evidence.get(token as usize).copied().flatten();
        let salient = evidence.is_some();
        let embedding = self.embed(token);
        let uniform = vec![1.0 / k as f64; k];
        let in_pass = matches!(hook, Some((_, _, HookMode::InPass)));

        let mut states = Vec::with_capacity(self.info.num_layers);
        let mut signals = Vec::<Vec<f64>>::with_capacity(self.info.num_layers);
        let mut beliefs: Vec<Vec<f64>> = Vec::with_capacity(self.info.num_layers);
        for layer in 1..=self.info.num_layers {
            let vertical = if layer == 1 {
                evidence.map(|y| {
                    let mut v = vec![0.0; k];
                    v[y] = 1.0;
                    v
                })
            } else {
                Some(self.decode_belief(layer - 1, &signals[layer - 2], &beliefs[layer - 2]))
            };
            let belief = match (vertical, cache.attention(layer)) {
                (Some(v), Some(att)) => v.iter().zip(&att).map(|(x, y)| (1.0 - a) * x + a * y).collect(),
                (Some(v), None) => v,
                (None, Some(att)) => att,
                (None, None) => uniform.clone(),
            };
            let content: Vec<f64> = if layer == 1 {
                embedding.iter().map(|e| e.tanh()).collect()
            } else {
                let prev = &signals[layer - 2];
                let projected: Vec<f64> = self.content_basis.iter().map(|p| dot(p, prev)).collect();
                self.content_maps[layer - 1]
                    .iter()
                    .zip(&embedding)
                    .map(|(row, e)| (dot(row, &projected) + e).tanh())
                    .collect()
            };
            let mut signal = self.compose(layer, &belief, &content);
            let noise = gaussian(mix(&[noise_key, layer as u64]), d);
            let mut state: Vec<f64> = signal
                .iter()
                .zip(&noise)
                .map(|(x, e)| x + self.spec.noise * e)
                .collect();
            if in_pass {
                if let Some((h, t, _)) = hook.as_mut() {
                    let edited = h.on_layer(layer, *t, &state)?;
                    check_dim(layer, *t, d, &edited)?;
                    for ((x, new), old) in signal.iter_mut().zip(&edited).zip(&state) {
                        *x += new - old;
                    }
                    state = edited;
                }
            }
            let decoded = self.decode_belief(layer, &signal, &belief);
            cache.push(
                layer,
                CacheEntry {
                    state: state.clone(),
                    belief: decoded,
                    salient,
                },
            );
            states.push(state);
            signals.push(signal);
            beliefs.push(belief);
        }

        if let Some((h, t, HookMode::PostHoc)) = hook {
            let position = cache.len() - 1;
            for layer in 1..=self.info.num_layers {
                let i = layer - 1;
                let edited = h.on_layer(layer, t, &states[i])?;
                check_dim(layer, t, d, &edited)?;
                let signal: Vec<f64> = signals[i]
                    .iter()
                    .zip(&edited)
                    .zip(&states[i])
                    .map(|((x, new), old)| x + (new - old))
                    .collect();
                let decoded = self.decode_belief(layer, &signal, &beliefs[i]);
                cache.replace(layer, position, edited.clone(), decoded);
                states[i] = edited;
            }
        }
        Ok(states)
    }

    fn encode_prompt(&self, prompt: &[TokenId]) -> Result<(LayerCache, Vec<Vec<f64>>, u64)> {
        if prompt.is_empty() {
            return Err(Error::Input("token sequence is empty".into()));
        }
        let mut cache = LayerCache::new(self.info.num_layers, self.trait_basis.len());
        let mut prefix = FNV_OFFSET;
        let mut last = Vec::new();
        for (pos, &token) in prompt.iter().enumerate() {
            prefix = fnv_extend(prefix, token);
            let key = mix(&[self.spec.seed, TAG_NOISE_PROMPT, prefix, pos as u64]);
            last = self.step(token, key, &mut cache, None)?;
        }
        Ok((cache, last, prefix))
    }

    /// [`Runtime::generate`], additionally returning the attention cache.
    pub fn generate_with_cache(
        &self,
        prompt: &[TokenId],
        options: &GenerateOptions,
        mut hook: Option<&mut dyn LayerHook>,
    ) -> Result<(GenerationTrace, LayerCache)> {
        if options.max_tokens < 1 {
            return Err(Error::Config("max_tokens must be at least 1".into()));
        }
        let start = std::time::Instant::now();
        let (mut cache, _, prompt_hash) = self.encode_prompt(prompt)?;
        let mut sampler = match options.decoding {
            Decoding::Greedy => None,
            Decoding::Sample { temperature, seed } => {
                if !(temperature > 0.0 && temperature.is_finite()) {
                    return Err(Error::Config(format!("temperature {temperature} must be positive")));
                }
                Some((temperature, ChaCha8Rng::seed_from_u64(seed)))
            }
        };
        let mut fed = self.word_ids.get(END_OF_QUESTION).copied().unwrap_or(0);
        let mut tokens = Vec::with_capacity(options.max_tokens);
        for step in 1..=options.max_tokens {
            let position = prompt.len() + step - 1;
            let key = mix(&[self.spec.seed, TAG_NOISE_GEN, prompt_hash, position as u64]);
            let hook_arg = hook
                .as_deref_mut()
                .map(|h| (h as &mut dyn LayerHook, step, options.hook_mode));
            let states = self.step(fed, key, &mut cache, hook_arg)?;
            let logits = self.readout_logits(states.last().expect("at least one layer"));
            let index = match sampler.as_mut() {
                None => argmax(&logits),
                Some((temperature, rng)) => {
                    let scaled: Vec<f64> = logits.iter().map(|l| l / *temperature).collect();
                    sample(&softmax(&scaled), rng)
                }
            };
            fed = self.emit_token_id(index);
            tokens.push(fed);
        }
        let trace = GenerationTrace {
            prompt_text: prompt.iter().map(|t| self.token_text(*t)).collect::<Vec<_>>().join(" "),
            prompt_tokens: prompt.to_vec(),
            token_text: tokens.iter().map(|t| self.token_text(*t)).collect(),
            tokens,
            edits: Vec::new(),
            verdicts: Vec::new(),
            elapsed: start.elapsed(),
        };
        Ok((trace, cache))
    }
}

impl Runtime for SyntheticRuntime {
    fn info(&self) -> &RuntimeInfo {
        &self.info
    }

    fn encode(&self, text: &str) -> Vec<TokenId> {
        words(text)
            .map(|w| match self.word_ids.get(&w) {
                Some(id) => *id,
                None => self.vocab.len() as TokenId + (fnv_str(&w) % u64::from(CONTEXT_BUCKETS)) as TokenId,
            })
            .collect()
    }

    fn token_text(&self, token: TokenId) -> String {
        match self.vocab.get(token as usize) {
            Some(w) => w.clone(),
            None => format!("<ctx{}>", token as usize - self.vocab.len()),
        }
    }

    fn capture(&self, tokens: &[TokenId]) -> Result<Vec<Vec<f64>>> {
        Ok(self.encode_prompt(tokens)?.1)
    }

    fn generate(
        &self,
        prompt: &[TokenId],
        options: &GenerateOptions,
        hook: Option<&mut dyn LayerHook>,
    ) -> Result<GenerationTrace> {
        Ok(self.generate_with_cache(prompt, options, hook)?.0)
    }
}

fn check_dim(layer: usize, step: usize, expected: usize, state: &[f64]) -> Result<()> {
    if state.len() != expected {
        return Err(Error::HookContract {
            layer,
            step,
            expected,
            got: state.len(),
        });
    }
    Ok(())
}

fn normalize_word(word: &str) -> String {
    word.trim().to_lowercase()
}

/// Words of label display names that occur in exactly one label.
fn persona_tokens(labels: &LabelSet) -> Vec<(String, usize)> {
    let mut owners: HashMap<String, Vec<usize>> = HashMap::new();
    let mut order = Vec::new();
    for (i, label) in labels.labels().iter().enumerate() {
        for w in words(&label.display) {
            let entry = owners.entry(w.clone()).or_default();
            if entry.is_empty() {
                order.push(w);
            }
            if !entry.contains(&i) {
                entry.push(i);
            }
        }
    }
    order
        .into_iter()
        .filter_map(|w| match owners[&w].as_slice() {
            [only] => Some((w, *only)),
            _ => None,
        })
        .collect()
}

fn orthonormal_basis(d: usize, key: u64) -> Vec<Vec<f64>> {
    let g = gaussian(key, d * d);
    let matrix = DMatrix::from_row_slice(d, d, &g);
    let qr = matrix.qr();
    let q = qr.q();
    let r = qr.r();
    (0..d)
        .map(|j| {
            let sign = if r[(j, j)] < 0.0 { -1.0 } else { 1.0 };
            (0..d).map(|i| sign * q[(i, j)]).collect()
        })
        .collect()
}

/// Rows of a Sylvester Hadamard matrix scaled by 1/√d, with seeded row order,
/// column permutation and column signs.
fn hadamard_basis(d: usize, key: u64) -> Vec<Vec<f64>> {
    use rand::seq::SliceRandom;
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    let mut rows: Vec<usize> = (0..d).collect();
    rows.shuffle(&mut rng);
    let mut cols: Vec<usize> = (0..d).collect();
    cols.shuffle(&mut rng);
    let signs: Vec<f64> = (0..d).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
    let scale = 1.0 / (d as f64).sqrt();
    rows.into_iter()
        .map(|r| {
            (0..d)
                .map(|j| {
                    let c = cols[j];
                    let entry = if (r & c).count_ones() % 2 == 0 { 1.0 } else { -1.0 };
                    entry * signs[j] * scale
                })
                .collect()
        })
        .collect()
}

fn sample(probs: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

pub(crate) fn gaussian(key: u64, n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
}

pub(crate) fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

pub(crate) fn mix(parts: &[u64]) -> u64 {
    parts.iter().fold(0x5EED_u64, |h, p| splitmix(h ^ splitmix(*p)))
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0100_0000_01b3;

fn fnv_extend(mut h: u64, token: TokenId) -> u64 {
    for b in token.to_le_bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

pub(crate) fn fnv_str(s: &str) -> u64 {
    s.bytes().fold(FNV_OFFSET, |mut h, b| {
        h ^= u64::from(b);
        h.wrapping_mul(FNV_PRIME)
    })
}
