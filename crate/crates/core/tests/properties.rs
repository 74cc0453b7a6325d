// SPDX-License-Identifier: MIT OR Apache-2.0

use proptest::prelude::*;
use steerprobe::interpret::{neuron_importance, weight_mass_fraction};
use steerprobe::probe::TrainingMeta;
use steerprobe::{
    perturbation, stratified_split, steer_layer, ActivationRecord, Judge, Label, LabelSet, LayerProbe, LexiconJudge,
    ProbeFamily, Split,
};

fn probe(weights: Vec<Vec<f64>>, biases: Vec<f64>) -> LayerProbe {
    LayerProbe {
        layer: 1,
        family: ProbeFamily::Linear,
        weights,
        biases,
        hidden: None,
        meta: TrainingMeta { regularization: 0.0, seed: 0, residual: 0.0, iterations: 0, objective: 0.0 },
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

/// (probe, state, target) with every weight row bounded away from zero.
fn instance() -> impl Strategy<Value = (LayerProbe, Vec<f64>, usize)> {
    (2usize..12, 2usize..5).prop_flat_map(|(d, k)| {
        (
            prop::collection::vec(prop::collection::vec(-3.0f64..3.0, d), k),
            prop::collection::vec(-2.0f64..2.0, k),
            prop::collection::vec(-4.0f64..4.0, d),
            0..k,
        )
            .prop_filter("non-degenerate rows", |(w, ..)| w.iter().all(|r| dot(r, r) > 0.05))
            .prop_map(|(w, b, x, t)| (probe(w, b), x, t))
    })
}

fn ln_odds(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

proptest! {
    #[test]
    fn edit_lands_exactly_on_the_level_set((p, x, t) in instance(), p_hat in 0.01f64..0.999) {
        let delta = perturbation(&p, &x, t, p_hat).unwrap();
        let score = dot(&p.weights[t], &add(&x, &delta)) + p.biases[t];
        let scale = 1.0 + dot(&p.weights[t], &x).abs() + p.biases[t].abs();
        prop_assert!((score - ln_odds(p_hat)).abs() <= 1e-10 * scale);
    }

    #[test]
    fn no_feasible_edit_is_shorter(
        (p, x, t) in instance(),
        p_hat in 0.05f64..0.99,
        noise in prop::collection::vec(-1.0f64..1.0, 12),
    ) {
        let delta = perturbation(&p, &x, t, p_hat).unwrap();
        let w = &p.weights[t];
        // Project the noise onto the level set's tangent space, so delta + v stays feasible.
        let v: Vec<f64> = noise[..w.len()].to_vec();
        let c = dot(&v, w) / dot(w, w);
        let tangent: Vec<f64> = v.iter().zip(w).map(|(a, b)| a - c * b).collect();
        let other = add(&delta, &tangent);
        let score = dot(w, &add(&x, &other)) + p.biases[t];
        prop_assert!((score - ln_odds(p_hat)).abs() < 1e-8);
        prop_assert!(dot(&other, &other) >= dot(&delta, &delta) - 1e-12);
    }

    #[test]
    fn second_edit_is_negligible((p, x, t) in instance(), p_hat in 0.01f64..0.999) {
        let delta = perturbation(&p, &x, t, p_hat).unwrap();
        let again = perturbation(&p, &add(&x, &delta), t, p_hat).unwrap();
        let n1 = dot(&delta, &delta).sqrt();
        prop_assert!(dot(&again, &again).sqrt() <= 1e-9 * (1.0 + n1));
    }

    #[test]
    fn higher_confidence_gives_higher_target_score((p, x, t) in instance(), a in 0.05f64..0.95, gap in 0.01f64..0.04) {
        let (lo, _) = steer_layer(&p, &x, t, a, false).unwrap();
        let (hi, _) = steer_layer(&p, &x, t, a + gap, false).unwrap();
        let s = |v: &[f64]| dot(&p.weights[t], v) + p.biases[t];
        prop_assert!(s(&hi) > s(&lo));
    }

    #[test]
    fn skip_rule_returns_the_state_untouched((p, x, _) in instance(), p_hat in 0.05f64..0.99) {
        let own = p.predict(&x);
        let (out, rec) = steer_layer(&p, &x, own, p_hat, true).unwrap();
        prop_assert!(out.iter().zip(&x).all(|(a, b)| a.to_bits() == b.to_bits()));
        prop_assert!(!rec.applied);
    }

    #[test]
    fn split_partitions_each_label(counts in prop::collection::vec(2usize..30, 2..5), ratio in 0.1f64..0.9, seed: u64) {
        let labels = LabelSet::new(
            (0..counts.len()).map(|i| Label::new(format!("l{i}"), format!("label {i}"))).collect(),
        ).unwrap();
        let mut records = Vec::new();
        for (label, &n) in counts.iter().enumerate() {
            for i in 0..n {
                records.push(ActivationRecord::new(format!("{label}-{i}"), label, vec![vec![i as f32]]).unwrap());
            }
        }
        let ds = stratified_split(labels, records, ratio, seed).unwrap();
        prop_assert_eq!(ds.split.len(), ds.records.len());
        for (label, &n) in counts.iter().enumerate() {
            let train = ds.records.iter().zip(&ds.split).filter(|(r, s)| r.label == label && **s == Split::Train).count();
            let expected = ((ratio * n as f64).round() as usize).clamp(1, n - 1);
            prop_assert_eq!(train, expected);
        }
    }

    #[test]
    fn weight_mass_grows_with_the_fraction(w in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 20), 3)) {
        prop_assume!(w.iter().flatten().any(|v| v.abs() > 1e-3));
        let p = probe(w, vec![0.0; 3]);
        let fractions: Vec<f64> = (1..=20).map(|i| i as f64 / 20.0).collect();
        let mass = weight_mass_fraction(&p, &fractions).unwrap();
        prop_assert!(mass.windows(2).all(|m| m[0] <= m[1] + 1e-12));
        prop_assert!((mass[19] - 1.0).abs() < 1e-12);
        // The top share is at least the uniform share.
        prop_assert!(mass.iter().zip(&fractions).all(|(m, f)| *m >= f - 1e-12));
    }

    #[test]
    fn importance_follows_column_permutations(
        w in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 8), 3),
        perm in Just((0..8).collect::<Vec<usize>>()).prop_shuffle(),
    ) {
        let permuted: Vec<Vec<f64>> = w.iter().map(|row| perm.iter().map(|&j| row[j]).collect()).collect();
        let a = neuron_importance(&probe(w, vec![0.0; 3])).unwrap();
        let b = neuron_importance(&probe(permuted, vec![0.0; 3])).unwrap();
        for (i, &j) in perm.iter().enumerate() {
            prop_assert_eq!(b[i].to_bits(), a[j].to_bits());
        }
    }

    #[test]
    fn lexicon_counts_match_substring_search(words in prop::collection::vec(0usize..6, 0..40)) {
        let vocab = ["calm", "steady", "worried", "tense", "very", "the"];
        let labels = LabelSet::new(vec![
            Label::new("a", "A").with_lexicon(["calm", "very steady"]),
            Label::new("b", "B").with_lexicon(["worried", "tense"]),
        ]).unwrap();
        let judge = LexiconJudge::new(&labels).unwrap();
        let text: Vec<&str> = words.iter().map(|&i| vocab[i]).collect();
        let text = text.join(" ");
        // Overlapping occurrence count of " phrase " inside " text ".
        let padded = format!(" {text} ");
        let occurrences = |phrase: &str| {
            let needle = format!(" {phrase} ");
            (0..padded.len()).filter(|&i| padded[i..].starts_with(&needle)).count()
        };
        let expected = [occurrences("calm") + occurrences("very steady"), occurrences("worried") + occurrences("tense")];
        prop_assert_eq!(judge.counts(&text), expected.to_vec());
        let best = if expected[1] > expected[0] { 1 } else { 0 };
        prop_assert_eq!(judge.classify(&text).unwrap(), best);
        prop_assert_eq!(judge.rate(&text, 1).unwrap() as usize, 1 + expected[1].min(4));
    }
}
