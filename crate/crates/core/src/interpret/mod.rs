// SPDX-License-Identifier: MIT OR Apache-2.0

//! Probe-weight concentration, neuron patches, token importance and 2-D
//! embeddings of layer representations.

mod embed;
mod importance;

pub use embed::{project_2d, silhouette, EmbeddedPoint, TsneConfig};
pub use importance::{
    masking_importance, surrogate_importance, ImportanceMethod, ImportanceResult, MaskingConfig,
    SurrogateConfig, DEFAULT_MASK_TOKEN,
};

use crate::config::PatchSpec;
use crate::error::{Error, Result};
use crate::probe::{LayerProbe, ProbeFamily, ProbeStack};

/// Per-coordinate importance `Σ_y |W[y][j]|` of a linear probe.
pub fn neuron_importance(probe: &LayerProbe) -> Result<Vec<f64>> {
    if probe.family != ProbeFamily::Linear {
        return Err(Error::UnsupportedFamily(format!(
            "neuron importance needs a linear probe, layer {} is {}",
            probe.layer, probe.family
        )));
    }
    let d = probe.input_dim();
    let mut agg = vec![0.0; d];
    for row in &probe.weights {
        for (a, w) in agg.iter_mut().zip(row) {
            *a += w.abs();
        }
    }
    Ok(agg)
}

/// Coordinates by descending importance; ties keep the lower index first.
pub fn neuron_ranking(importance: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..importance.len()).collect();
    order.sort_by(|&a, &b| importance[b].total_cmp(&importance[a]).then(a.cmp(&b)));
    order
}

fn top_count(fraction: f64, d: usize) -> usize {
    ((fraction * d as f64).round() as usize).min(d)
}

/// Share of total absolute weight mass held by the top `φ·d` coordinates, per φ.
pub fn weight_mass_fraction(probe: &LayerProbe, fractions: &[f64]) -> Result<Vec<f64>> {
    if let Some(bad) = fractions.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
        return Err(Error::Domain(format!("fraction {bad} outside (0, 1]")));
    }
    let agg = neuron_importance(probe)?;
    let total: f64 = agg.iter().sum();
    if !(total > 0.0) {
        return Err(Error::DegenerateProbe(format!("layer {} probe has no weight mass", probe.layer)));
    }
    let order = neuron_ranking(&agg);
    Ok(fractions
        .iter()
        .map(|&f| {
            let top = order[..top_count(f, agg.len())].iter().fold(0.0, |acc, &j| acc + agg[j]);
            top / total
        })
        .collect())
}

/// Per-layer top-`φ` coordinate sets; steering restricted by the result keeps
/// each Δ on those coordinates (coefficient 1) and zero elsewhere.
pub fn build_patch(stack: &ProbeStack, fraction: f64) -> Result<PatchSpec> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::Domain(format!("patch fraction {fraction} outside [0, 1]")));
    }
    let selected = stack
        .probes
        .iter()
        .map(|probe| {
            let agg = neuron_importance(probe)?;
            let mut keep = neuron_ranking(&agg)[..top_count(fraction, agg.len())].to_vec();
            keep.sort_unstable();
            Ok(keep)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PatchSpec { fraction, selected })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::probe::TrainingMeta;

    fn probe(weights: Vec<Vec<f64>>) -> LayerProbe {
        let k = weights.len();
        LayerProbe {
            layer: 1,
            family: ProbeFamily::Linear,
            weights,
            biases: vec![0.0; k],
            hidden: None,
            meta: TrainingMeta { regularization: 0.0, seed: 0, residual: 0.0, iterations: 0, objective: 0.0 },
        }
    }

    #[test]
    fn uniform_and_concentrated_mass() {
        let p = probe(vec![vec![0.5; 100], vec![-0.5; 100]]);
        assert_eq!(weight_mass_fraction(&p, &[0.1]).unwrap(), vec![0.1]);
        let p = probe(vec![vec![8.0, 1.0, -1.0], vec![0.0, 0.0, 0.0]]);
        let f = weight_mass_fraction(&p, &[1.0 / 3.0, 1.0]).unwrap();
        assert!((f[0] - 0.8).abs() < 1e-12);
        assert_eq!(f[1], 1.0);
        let none = weight_mass_fraction(&p, &[0.1]).unwrap()[0];
        assert!(none == 0.0 && none.is_sign_positive());
    }

    #[test]
    fn zero_probe_and_bad_fractions_fail() {
        let p = probe(vec![vec![0.0; 4], vec![0.0; 4]]);
        assert!(matches!(weight_mass_fraction(&p, &[0.5]), Err(Error::DegenerateProbe(_))));
        let p = probe(vec![vec![1.0; 4], vec![0.0; 4]]);
        assert!(matches!(weight_mass_fraction(&p, &[0.0]), Err(Error::Domain(_))));
        assert!(matches!(weight_mass_fraction(&p, &[1.5]), Err(Error::Domain(_))));
    }

    #[test]
    fn ranking_breaks_ties_toward_lower_index() {
        assert_eq!(neuron_ranking(&[1.0, 3.0, 3.0, 0.5]), vec![1, 2, 0, 3]);
    }

    #[test]
    fn patch_sizes_follow_the_fraction() {
        let labels = crate::labels::LabelSet::big_five();
        let p = probe(vec![
            (0..10).map(|j| j as f64).collect(),
            vec![0.0; 10],
            vec![1.0; 10],
        ]);
        let stack = ProbeStack::new(labels, String::new(), vec![p]).unwrap();
        let patch = build_patch(&stack, 0.2).unwrap();
        assert_eq!(patch.selected, vec![vec![8, 9]]);
        assert_eq!(build_patch(&stack, 1.0).unwrap().selected[0], (0..10).collect::<Vec<_>>());
        assert!(build_patch(&stack, 0.0).unwrap().selected[0].is_empty());
        assert!(matches!(build_patch(&stack, -0.1), Err(Error::Domain(_))));
    }
}
