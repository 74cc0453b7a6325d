// SPDX-License-Identifier: MIT OR Apache-2.0

use steerprobe::interpret::{masking_importance, project_2d, silhouette, MaskingConfig, TsneConfig};
use steerprobe::labels::{numbered_entities, prompt_grid, PERSONALITY_TEMPLATE};
use steerprobe::probing::{cross_entropy, fit_probe};
use steerprobe::runtime::conformance::run_conformance;
use steerprobe::runtime::extract_probe_dataset;
use steerprobe::{
    stratified_split, v_information, GenerateOptions, HookMode, LabelSet, LayerHook, LogBase, ProbeDataset,
    ProbeFamily, Runtime, Split, SyntheticRuntime, SyntheticRuntimeSpec, VInfoConfig,
};

fn runtime(separation: Vec<f64>, seed: u64) -> SyntheticRuntime {
    SyntheticRuntime::new(SyntheticRuntimeSpec::new(LabelSet::big_five(), separation, 0.5, seed)).unwrap()
}

fn dataset(rt: &SyntheticRuntime, per_label: usize, seed: u64) -> ProbeDataset {
    let labels = LabelSet::big_five();
    let prompts = prompt_grid(&labels, PERSONALITY_TEMPLATE, &numbered_entities(per_label)).unwrap();
    let raw = extract_probe_dataset(rt, &prompts, &labels).unwrap();
    stratified_split(labels, raw.records, 0.7, seed).unwrap()
}

#[test]
fn v_information_never_exceeds_the_null_entropy() {
    let rt = runtime(vec![0.0, 1.0, 2.0, 4.0], 3);
    let ds = dataset(&rt, 80, 3);
    let (report, stack) = v_information(&ds, &VInfoConfig::default()).unwrap();
    assert_eq!(stack.num_layers(), 4);
    for layer in &report.layers {
        assert!(layer.v_information <= report.null_entropy + 1e-9, "{layer:?}");
    }
    let v = report.values();
    assert!(v[3] > v[0] + 0.5, "{v:?}");
}

#[test]
fn mlp_probe_fits_training_data_at_least_as_well_as_linear() {
    let rt = runtime(vec![1.0], 5);
    let ds = dataset(&rt, 40, 5);
    let (xs, ys) = ds.layer_view(1, Split::Train).unwrap();
    let linear = fit_probe(&xs, &ys, 3, 1, &VInfoConfig::default(), 5).unwrap();
    let mlp_config = VInfoConfig::default().with_family(ProbeFamily::Mlp2);
    let mlp = fit_probe(&xs, &ys, 3, 1, &mlp_config, 5).unwrap();
    let ce_linear = cross_entropy(&linear, &xs, &ys, LogBase::Natural).unwrap();
    let ce_mlp = cross_entropy(&mlp, &xs, &ys, LogBase::Natural).unwrap();
    assert!(ce_mlp <= ce_linear + 0.02, "mlp {ce_mlp} vs linear {ce_linear}");
}

#[test]
fn zero_separation_class_means_are_within_noise() {
    let rt = runtime(vec![0.0, 3.0], 11);
    let ds = dataset(&rt, 300, 11);
    let d = ds.dim();
    for (layer, expect_signal) in [(0usize, false), (1, true)] {
        let mut means = vec![vec![0.0f64; d]; 3];
        let mut counts = [0usize; 3];
        for r in &ds.records {
            counts[r.label] += 1;
            for (m, v) in means[r.label].iter_mut().zip(&r.layers[layer]) {
                *m += *v as f64;
            }
        }
        for (m, c) in means.iter_mut().zip(counts) {
            m.iter_mut().for_each(|v| *v /= c as f64);
        }
        // Pooled within-class variance per coordinate.
        let mut within = 0.0;
        for r in &ds.records {
            within += r.layers[layer].iter().zip(&means[r.label]).map(|(v, m)| (*v as f64 - m).powi(2)).sum::<f64>();
        }
        within /= (ds.len() * d) as f64;
        let mut sq = 0.0;
        let mut pairs = 0;
        for a in 0..3 {
            for b in (a + 1)..3 {
                sq += means[a].iter().zip(&means[b]).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / d as f64;
                pairs += 1;
            }
        }
        let rms = (sq / pairs as f64).sqrt();
        // Under pure noise the expected RMS is sqrt(2 σ² / n).
        let noise_floor = (2.0 * within / 300.0).sqrt();
        if expect_signal {
            assert!(rms > 5.0 * noise_floor, "layer {}: {rms} vs {noise_floor}", layer + 1);
        } else {
            assert!(rms < 1.5 * noise_floor, "layer {}: {rms} vs {noise_floor}", layer + 1);
        }
    }
}

#[test]
fn top_layer_embedding_separates_labels() {
    let rt = runtime(vec![0.0, 4.0], 2);
    let ds = dataset(&rt, 100, 2);
    let points: Vec<Vec<f64>> = ds.records.iter().map(|r| r.layers[1].iter().map(|v| *v as f64).collect()).collect();
    let labels: Vec<usize> = ds.records.iter().map(|r| r.label).collect();
    let cfg = TsneConfig { iterations: 500, ..TsneConfig::default() };
    let emb = project_2d(&points, &labels, &cfg).unwrap();
    let flat: Vec<Vec<f64>> = emb.iter().map(|p| vec![p.x, p.y]).collect();
    let s = silhouette(&flat, &labels).unwrap();
    assert!(s >= 0.5, "silhouette {s}");
}

#[test]
fn masking_recovers_linear_word_weights() {
    let text = "alpha beta gamma delta epsilon zeta eta theta iota kappa";
    let weight = |w: &str| match w {
        "alpha" => 2.0,
        "delta" => 1.0,
        "theta" => 0.5,
        _ => 0.0,
    };
    let score = move |t: &str| -> steerprobe::Result<f64> { Ok(t.split_whitespace().map(weight).sum()) };
    let cfg = MaskingConfig { rounds: 1000, ..MaskingConfig::default() };
    let r = masking_importance(text, &score, &cfg).unwrap();
    // Uniform masks of size c over n tokens with linear scoring give an
    // expected score of w_i / n + (c - 1)(W - w_i) / (n (n - 1)).
    let (n, c) = (10.0, 2.0);
    let total: f64 = text.split_whitespace().map(weight).sum();
    for (tok, s) in r.tokens.iter().zip(&r.scores) {
        let w = weight(tok);
        let expected = w / n + (c - 1.0) * (total - w) / (n * (n - 1.0));
        assert!((s - expected).abs() <= 0.25 * expected, "{tok}: {s} vs {expected}");
    }
}

/// Replaces every state with the centroid of one label.
struct CentroidHook<'a> {
    rt: &'a SyntheticRuntime,
    label: usize,
}

impl LayerHook for CentroidHook<'_> {
    fn on_layer(&mut self, layer: usize, _step: usize, _state: &[f64]) -> steerprobe::Result<Vec<f64>> {
        Ok(self.rt.centroid(layer, self.label))
    }
}

#[test]
fn centroid_states_emit_their_label_block() {
    let rt = runtime(vec![1.0, 2.0, 3.0, 4.0], 4);
    let prompt = rt.encode("Tell me about the weather today?");
    for label in 0..3 {
        let mut hook = CentroidHook { rt: &rt, label };
        let trace = rt.generate(&prompt, &GenerateOptions::greedy(40), Some(&mut hook)).unwrap();
        let hits = trace.tokens.iter().filter(|t| rt.block_of(**t) == Some(label)).count();
        assert!(hits as f64 >= 0.95 * trace.tokens.len() as f64, "label {label}: {hits}/40");
    }
}

/// Adds a constant to coordinate 0 and remembers what it returned.
struct Shift {
    returned: Vec<(usize, usize, Vec<f64>)>,
}

impl LayerHook for Shift {
    fn on_layer(&mut self, layer: usize, step: usize, state: &[f64]) -> steerprobe::Result<Vec<f64>> {
        let mut out = state.to_vec();
        out[0] += 0.75;
        self.returned.push((layer, step, out.clone()));
        Ok(out)
    }
}

#[test]
fn cache_holds_the_states_the_hook_returned() {
    let rt = runtime(vec![0.5, 1.0, 2.0], 6);
    let prompt = rt.encode("What do you think of the ocean?");
    let captured = rt.capture(&prompt).unwrap();
    for mode in [HookMode::InPass, HookMode::PostHoc] {
        let mut hook = Shift { returned: Vec::new() };
        let options = GenerateOptions { hook_mode: mode, ..GenerateOptions::greedy(6) };
        let (_, cache) = rt.generate_with_cache(&prompt, &options, Some(&mut hook)).unwrap();
        assert_eq!(cache.len(), prompt.len() + 6);
        for (layer, step, state) in &hook.returned {
            let cached = cache.states(*layer)[prompt.len() + step - 1];
            assert_eq!(cached, state.as_slice(), "{mode:?} layer {layer} step {step}");
        }
        for layer in 1..=3 {
            assert_eq!(cache.states(layer)[prompt.len() - 1], captured[layer - 1].as_slice());
        }
    }
}

#[test]
fn synthetic_runtime_passes_conformance() {
    let rt = runtime(vec![0.0, 1.0, 2.0, 3.0], 1);
    for check in run_conformance(&rt, "Describe a quiet morning?", 8) {
        assert!(check.passed, "{}: {}", check.name, check.detail);
    }
}
