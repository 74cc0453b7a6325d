// SPDX-License-Identifier: MIT OR Apache-2.0

//! Token importance by random masking and by a sparse linear surrogate.
//!
//! Masks are drawn from a hash of (seed, round, token text, occurrence index)
//! rather than from token positions, so permuting the tokens permutes the
//! scores with them whenever the scorer is order-insensitive.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::runtime::synthetic::{fnv_str, mix};

/// Replacement text for masked tokens.
pub const DEFAULT_MASK_TOKEN: &str = "<mask>";

const TAG_MASKING: u64 = 0x3a5c;
const TAG_SURROGATE: u64 = 0x3a5d;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ImportanceMethod {
    Masking,
    Surrogate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceResult {
    pub tokens: Vec<String>,
    pub scores: Vec<f64>,
    pub method: ImportanceMethod,
    pub mask_rate: f64,
    /// Rounds (masking) or variants (surrogate) requested.
    pub rounds: usize,
    pub seed: u64,
    /// Rounds or variants dropped because the scorer failed.
    pub skipped: usize,
    /// Surrogate only: the selected L1 strength.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub penalty: Option<f64>,
}

impl ImportanceResult {
    /// Token indices by descending score; ties keep the earlier token first.
    pub fn ranking(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.scores.len()).collect();
        order.sort_by(|&a, &b| self.scores[b].total_cmp(&self.scores[a]).then(a.cmp(&b)));
        order
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskingConfig {
    pub mask_rate: f64,
    pub rounds: usize,
    pub seed: u64,
    pub mask_token: String,
}

impl Default for MaskingConfig {
    fn default() -> Self {
        Self {
            mask_rate: 0.15,
            rounds: 100,
            seed: 0,
            mask_token: DEFAULT_MASK_TOKEN.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateConfig {
    pub mask_rate: f64,
    pub variants: usize,
    pub seed: u64,
    pub mask_token: String,
    /// Candidate L1 strengths; the one with the lowest held-out error wins.
    pub penalties: Vec<f64>,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        Self {
            mask_rate: 0.15,
            variants: 1000,
            seed: 0,
            mask_token: DEFAULT_MASK_TOKEN.into(),
            penalties: vec![1e-5, 1e-4, 1e-3, 1e-2],
        }
    }
}

fn tokenize(text: &str, mask_rate: f64) -> Result<Vec<String>> {
    if !(mask_rate > 0.0 && mask_rate < 1.0) {
        return Err(Error::Domain(format!("mask rate {mask_rate} outside (0, 1)")));
    }
    let tokens: Vec<String> = text.split_whitespace().map(str::to_owned).collect();
    if tokens.len() < 2 {
        return Err(Error::Input(format!("importance needs at least 2 tokens, got {}", tokens.len())));
    }
    Ok(tokens)
}

/// Stable per-token identity: hash of the text and its occurrence index.
fn identities(tokens: &[String]) -> Vec<u64> {
    let mut seen: std::collections::HashMap<&str, u64> = std::collections::HashMap::new();
    tokens
        .iter()
        .map(|t| {
            let n = seen.entry(t.as_str()).or_insert(0);
            let id = mix(&[fnv_str(t), *n]);
            *n += 1;
            id
        })
        .collect()
}

fn render(tokens: &[String], masked: &[bool], mask_token: &str) -> String {
    tokens
        .iter()
        .zip(masked)
        .map(|(t, m)| if *m { mask_token } else { t.as_str() })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Mask `round(m·n)` tokens (at least one) per round, re-score, and split the
/// score drop equally among the masked tokens. A token's score is its total
/// attributed drop divided by the number of completed rounds.
pub fn masking_importance(
    text: &str,
    score: &(dyn Fn(&str) -> Result<f64> + Sync),
    config: &MaskingConfig,
) -> Result<ImportanceResult> {
    let tokens = tokenize(text, config.mask_rate)?;
    if config.rounds == 0 {
        return Err(Error::Config("masking needs at least one round".into()));
    }
    let n = tokens.len();
    let count = ((config.mask_rate * n as f64).round() as usize).clamp(1, n);
    let ids = identities(&tokens);
    let base = score(text)?;
    let rounds: Vec<Option<Vec<f64>>> = (0..config.rounds)
        .into_par_iter()
        .map(|round| {
            let mut order: Vec<(u64, usize)> = ids
                .iter()
                .enumerate()
                .map(|(i, id)| (mix(&[config.seed, TAG_MASKING, round as u64, *id]), i))
                .collect();
            order.sort_unstable();
            let mut masked = vec![false; n];
            for &(_, i) in &order[..count] {
                masked[i] = true;
            }
            match score(&render(&tokens, &masked, &config.mask_token)) {
                Ok(v) => {
                    let share = (base - v) / count as f64;
                    Some(masked.iter().map(|m| if *m { share } else { 0.0 }).collect())
                }
                Err(e) => {
                    log::warn!("masking round {round} skipped: {e}");
                    None
                }
            }
        })
        .collect();
    let done: Vec<&Vec<f64>> = rounds.iter().flatten().collect();
    let mut scores = vec![0.0; n];
    for r in &done {
        for (s, v) in scores.iter_mut().zip(r.iter()) {
            *s += v;
        }
    }
    if !done.is_empty() {
        scores.iter_mut().for_each(|s| *s /= done.len() as f64);
    }
    Ok(ImportanceResult {
        tokens,
        scores,
        method: ImportanceMethod::Masking,
        mask_rate: config.mask_rate,
        rounds: config.rounds,
        seed: config.seed,
        skipped: config.rounds - done.len(),
        penalty: None,
    })
}

/// Fit `score ≈ c + Σ β_i keep_i` with an L1 penalty over randomly masked
/// variants (each token masked independently with probability `m`); scores are β.
pub fn surrogate_importance(
    text: &str,
    score: &(dyn Fn(&str) -> Result<f64> + Sync),
    config: &SurrogateConfig,
) -> Result<ImportanceResult> {
    let tokens = tokenize(text, config.mask_rate)?;
    if config.variants < 10 {
        return Err(Error::Config("the surrogate needs at least 10 variants".into()));
    }
    if config.penalties.is_empty() || config.penalties.iter().any(|p| !(*p >= 0.0)) {
        return Err(Error::Config("surrogate penalty grid must be non-empty and non-negative".into()));
    }
    let n = tokens.len();
    let ids = identities(&tokens);
    let threshold = (config.mask_rate * u64::MAX as f64) as u64;
    let draw = |v: usize| -> Vec<bool> {
        ids.iter()
            .map(|id| mix(&[config.seed, TAG_SURROGATE, v as u64, *id]) < threshold)
            .collect()
    };

    // A token that is masked in every variant or in none has no identifiable
    // coefficient; draw extra variants, up to as many again, until each varies.
    let mut masks: Vec<Vec<bool>> = (0..config.variants).map(draw).collect();
    let varies = |masks: &[Vec<bool>]| (0..n).all(|j| masks.iter().any(|m| m[j]) && masks.iter().any(|m| !m[j]));
    let mut next = config.variants;
    while !varies(&masks) && next < 2 * config.variants {
        masks.push(draw(next));
        next += 1;
    }
    if !varies(&masks) {
        return Err(Error::InsufficientData(
            "some token was never (or always) masked; raise the variant count".into(),
        ));
    }

    let ys: Vec<Option<f64>> = masks
        .par_iter()
        .map(|m| match score(&render(&tokens, m, &config.mask_token)) {
            Ok(v) => Some(v),
            Err(e) => {
                log::warn!("surrogate variant skipped: {e}");
                None
            }
        })
        .collect();
    let (xs, y): (Vec<Vec<f64>>, Vec<f64>) = masks
        .iter()
        .zip(&ys)
        .filter_map(|(m, y)| y.map(|y| (m.iter().map(|mm| if *mm { 0.0 } else { 1.0 }).collect(), y)))
        .unzip();
    let skipped = masks.len() - y.len();
    if y.len() < 10 {
        return Err(Error::Judge(format!("only {} surrogate variants could be scored", y.len())));
    }

    let split = y.len() * 4 / 5;
    let mut best = (f64::INFINITY, config.penalties[0]);
    for &alpha in &config.penalties {
        let (beta, c) = lasso(&xs[..split], &y[..split], alpha);
        let mse = xs[split..]
            .iter()
            .zip(&y[split..])
            .map(|(x, y)| {
                let pred = c + x.iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>();
                (pred - y).powi(2)
            })
            .sum::<f64>()
            / (y.len() - split).max(1) as f64;
        if mse < best.0 {
            best = (mse, alpha);
        }
    }
    let (scores, _) = lasso(&xs, &y, best.1);
    Ok(ImportanceResult {
        tokens,
        scores,
        method: ImportanceMethod::Surrogate,
        mask_rate: config.mask_rate,
        rounds: config.variants,
        seed: config.seed,
        skipped,
        penalty: Some(best.1),
    })
}

/// Coordinate-descent lasso with an unpenalized intercept:
/// `min (1/2n)‖y − c − Xβ‖² + α‖β‖₁`. Returns `(β, c)`.
pub(crate) fn lasso(xs: &[Vec<f64>], y: &[f64], alpha: f64) -> (Vec<f64>, f64) {
    let n = xs.len();
    let p = xs.first().map_or(0, Vec::len);
    let nf = n as f64;
    let x_mean: Vec<f64> = (0..p).map(|j| xs.iter().map(|x| x[j]).sum::<f64>() / nf).collect();
    let y_mean = y.iter().sum::<f64>() / nf;
    let cols: Vec<Vec<f64>> = (0..p).map(|j| xs.iter().map(|x| x[j] - x_mean[j]).collect()).collect();
    let sq: Vec<f64> = cols.iter().map(|c| c.iter().map(|v| v * v).sum::<f64>() / nf).collect();
    let mut resid: Vec<f64> = y.iter().map(|v| v - y_mean).collect();
    let mut beta = vec![0.0; p];
    for _ in 0..10_000 {
        let mut max_step: f64 = 0.0;
        for j in 0..p {
            if sq[j] == 0.0 {
                continue;
            }
            let rho = cols[j].iter().zip(&resid).map(|(a, r)| a * r).sum::<f64>() / nf + sq[j] * beta[j];
            let updated = soft_threshold(rho, alpha) / sq[j];
            let step = updated - beta[j];
            if step != 0.0 {
                for (r, a) in resid.iter_mut().zip(&cols[j]) {
                    *r -= step * a;
                }
                beta[j] = updated;
                max_step = max_step.max(step.abs());
            }
        }
        if max_step < 1e-12 {
            break;
        }
    }
    let intercept = y_mean - beta.iter().zip(&x_mean).map(|(b, m)| b * m).sum::<f64>();
    (beta, intercept)
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}
