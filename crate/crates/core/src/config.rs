// SPDX-License-Identifier: MIT OR Apache-2.0

//! Steering configuration and the neuron patch applied to perturbations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Inclusive 1-based layer range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerRange {
    pub lo: usize,
    pub hi: usize,
}

impl LayerRange {
    pub fn new(lo: usize, hi: usize) -> Self {
        Self { lo, hi }
    }

    pub fn all(layers: usize) -> Self {
        Self { lo: 1, hi: layers }
    }

    pub fn contains(&self, layer: usize) -> bool {
        (self.lo..=self.hi).contains(&layer)
    }

    pub fn len(&self) -> usize {
        if self.hi >= self.lo {
            self.hi - self.lo + 1
        } else {
            0
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl std::str::FromStr for LayerRange {
    type Err = Error;

    /// Parses `LO:HI`.
    fn from_str(s: &str) -> Result<Self> {
        let (lo, hi) = s
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("layer range {s:?} is not LO:HI")))?;
        let parse = |v: &str| {
            v.trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("layer range {s:?} is not LO:HI")))
        };
        Ok(Self::new(parse(lo)?, parse(hi)?))
    }
}

impl std::fmt::Display for LayerRange {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}", self.lo, self.hi)
    }
}

/// Per-layer neuron subsets that perturbations are restricted to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchSpec {
    pub fraction: f64,
    /// `selected[l]` lists the kept coordinates for layer `l + 1`, ascending.
    pub selected: Vec<Vec<usize>>,
}

impl PatchSpec {
    pub fn for_layer(&self, layer: usize) -> Option<&[usize]> {
        layer
            .checked_sub(1)
            .and_then(|i| self.selected.get(i))
            .map(Vec::as_slice)
    }
}

/// Default target probability.
pub const DEFAULT_P_HAT: f64 = 0.99;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteeringConfig {
    /// Target label index.
    pub target: usize,
    pub p_hat: f64,
    pub layers: LayerRange,
    pub max_tokens: usize,
    #[serde(default = "default_true")]
    pub skip_if_target: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patch: Option<PatchSpec>,
}

fn default_true() -> bool {
    true
}

impl SteeringConfig {
    pub fn new(target: usize, layers: LayerRange, max_tokens: usize) -> Self {
        Self {
            target,
            p_hat: DEFAULT_P_HAT,
            layers,
            max_tokens,
            skip_if_target: true,
            patch: None,
        }
    }

    pub fn with_p_hat(mut self, p_hat: f64) -> Self {
        self.p_hat = p_hat;
        self
    }

    /// Check the config against a model with `num_layers` layers and `k` labels.
    pub fn validate(&self, num_layers: usize, k: usize) -> Result<()> {
        if !(self.p_hat > 0.0 && self.p_hat < 1.0) {
            return Err(Error::Domain(format!("target probability {} outside (0, 1)", self.p_hat)));
        }
        if self.layers.lo < 1 || self.layers.lo > self.layers.hi || self.layers.hi > num_layers {
            return Err(Error::Config(format!(
                "layer range {} invalid for a {num_layers}-layer model",
                self.layers
            )));
        }
        if self.max_tokens < 1 {
            return Err(Error::Config("max_tokens must be at least 1".into()));
        }
        if self.target >= k {
            return Err(Error::Config(format!(
                "target label {} outside a {k}-label set",
                self.target
            )));
        }
        if let Some(patch) = &self.patch {
            if patch.selected.len() != num_layers {
                return Err(Error::Config(format!(
                    "patch covers {} layers, model has {num_layers}",
                    patch.selected.len()
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_layer_range() {
        let r: LayerRange = "2:7".parse().unwrap();
        assert_eq!(r, LayerRange::new(2, 7));
        assert_eq!(r.len(), 6);
        assert!("27".parse::<LayerRange>().is_err());
    }

    #[test]
    fn validation_rejects_bad_configs() {
        let ok = SteeringConfig::new(0, LayerRange::all(8), 10);
        assert!(ok.validate(8, 3).is_ok());
        assert!(matches!(ok.clone().with_p_hat(1.5).validate(8, 3), Err(Error::Domain(_))));
        assert!(matches!(ok.clone().with_p_hat(0.0).validate(8, 3), Err(Error::Domain(_))));
        let mut inverted = ok.clone();
        inverted.layers = LayerRange::new(5, 4);
        assert!(matches!(inverted.validate(8, 3), Err(Error::Config(_))));
        let mut beyond = ok.clone();
        beyond.layers = LayerRange::new(1, 9);
        assert!(beyond.validate(8, 3).is_err());
        let mut zero = ok;
        zero.max_tokens = 0;
        assert!(zero.validate(8, 3).is_err());
    }
}
