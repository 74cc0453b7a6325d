// SPDX-License-Identifier: MIT OR Apache-2.0

//! Exact t-SNE and the silhouette score used to summarize it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::runtime::synthetic::gaussian;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmbeddedPoint {
    pub x: f64,
    pub y: f64,
    pub label: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub exaggeration: f64,
    pub exaggeration_iterations: usize,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: 200.0,
            exaggeration: 12.0,
            exaggeration_iterations: 250,
            seed: 0,
        }
    }
}

fn squared_distances(points: &[Vec<f64>]) -> Vec<f64> {
    let n = points.len();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let v: f64 = points[i].iter().zip(&points[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    d
}

/// Row-conditional affinities at the target perplexity, symmetrized.
fn affinities(dist: &[f64], n: usize, perplexity: f64) -> Vec<f64> {
    let target = perplexity.ln();
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        let row = &dist[i * n..(i + 1) * n];
        let (mut lo, mut hi, mut beta) = (0.0f64, f64::INFINITY, 1.0f64);
        let scale = row
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(_, v)| *v)
            .fold(f64::INFINITY, f64::min);
        for _ in 0..100 {
            let mut sum = 0.0;
            let mut weighted = 0.0;
            for (j, &dij) in row.iter().enumerate() {
                if j == i {
                    continue;
                }
                let w = (-(dij - scale) * beta).exp();
                sum += w;
                weighted += w * (dij - scale);
            }
            let entropy = sum.ln() + beta * weighted / sum;
            if (entropy - target).abs() < 1e-5 {
                break;
            }
            if entropy > target {
                lo = beta;
                beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
            } else {
                hi = beta;
                beta = (beta + lo) / 2.0;
            }
        }
        let mut sum = 0.0;
        for (j, &dij) in row.iter().enumerate() {
            if j != i {
                let w = (-(dij - scale) * beta).exp();
                p[i * n + j] = w;
                sum += w;
            }
        }
        for j in 0..n {
            p[i * n + j] /= sum;
        }
    }
    let mut sym = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            sym[i * n + j] = ((p[i * n + j] + p[j * n + i]) / (2.0 * n as f64)).max(1e-12);
        }
    }
    sym
}

/// 2-D t-SNE embedding of `points`, deterministic given the seed.
pub fn project_2d(points: &[Vec<f64>], labels: &[usize], config: &TsneConfig) -> Result<Vec<EmbeddedPoint>> {
    let n = points.len();
    if n < 3 {
        return Err(Error::Input(format!("embedding needs at least 3 points, got {n}")));
    }
    if labels.len() != n {
        return Err(Error::Input(format!("{n} points but {} labels", labels.len())));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::Input("points have inconsistent dimension".into()));
    }
    let perplexity = config.perplexity.min((n - 1) as f64 / 3.0).max(1.0);
    let p = affinities(&squared_distances(points), n, perplexity);

    let init = gaussian(config.seed ^ 0x75e, 2 * n);
    let mut y: Vec<[f64; 2]> = (0..n).map(|i| [1e-4 * init[2 * i], 1e-4 * init[2 * i + 1]]).collect();
    let mut velocity = vec![[0.0; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];
    let mut q = vec![0.0; n * n];
    for iter in 0..config.iterations {
        let exaggeration = if iter < config.exaggeration_iterations { config.exaggeration } else { 1.0 };
        let momentum = if iter < config.exaggeration_iterations { 0.5 } else { 0.8 };
        let mut z = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                let dx = y[i][0] - y[j][0];
                let dy = y[i][1] - y[j][1];
                let w = 1.0 / (1.0 + dx * dx + dy * dy);
                q[i * n + j] = w;
                q[j * n + i] = w;
                z += 2.0 * w;
            }
        }
        for i in 0..n {
            let mut grad = [0.0; 2];
            for j in 0..n {
                if i == j {
                    continue;
                }
                let w = q[i * n + j];
                let coef = 4.0 * (exaggeration * p[i * n + j] - w / z) * w;
                grad[0] += coef * (y[i][0] - y[j][0]);
                grad[1] += coef * (y[i][1] - y[j][1]);
            }
            for c in 0..2 {
                gains[i][c] = if (grad[c] > 0.0) != (velocity[i][c] > 0.0) {
                    gains[i][c] + 0.2
                } else {
                    (gains[i][c] * 0.8).max(0.01)
                };
                velocity[i][c] = momentum * velocity[i][c] - config.learning_rate * gains[i][c] * grad[c];
            }
        }
        for i in 0..n {
            y[i][0] += velocity[i][0];
            y[i][1] += velocity[i][1];
        }
        let (mx, my) = y.iter().fold((0.0, 0.0), |(a, b), v| (a + v[0], b + v[1]));
        for v in &mut y {
            v[0] -= mx / n as f64;
            v[1] -= my / n as f64;
        }
    }
    Ok(y
        .into_iter()
        .zip(labels)
        .map(|(v, &label)| EmbeddedPoint { x: v[0], y: v[1], label })
        .collect())
}

/// Mean silhouette coefficient of labeled points (Euclidean distance).
/// Points whose label is a singleton contribute 0.
pub fn silhouette(points: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    let n = points.len();
    if n < 2 || labels.len() != n {
        return Err(Error::Input("silhouette needs at least 2 labeled points".into()));
    }
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let sizes: Vec<usize> = (0..k).map(|c| labels.iter().filter(|l| **l == c).count()).collect();
    if sizes.iter().filter(|s| **s > 0).count() < 2 {
        return Err(Error::Input("silhouette needs at least 2 distinct labels".into()));
    }
    let dist = squared_distances(points);
    let mut total = 0.0;
    for i in 0..n {
        let mut sums = vec![0.0; k];
        for j in 0..n {
            if i != j {
                sums[labels[j]] += dist[i * n + j].sqrt();
            }
        }
        let own = labels[i];
        if sizes[own] <= 1 {
            continue;
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k)
            .filter(|c| *c != own && sizes[*c] > 0)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    Ok(total / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn silhouette_of_separated_clusters_is_near_one() {
        let pts = vec![vec![0.0], vec![0.1], vec![10.0], vec![10.1]];
        let s = silhouette(&pts, &[0, 0, 1, 1]).unwrap();
        // a = 0.1 everywhere; b is 10.05 for the outer points and 9.95 for the inner ones.
        let oracle = (2.0 * (1.0 - 0.1 / 10.05) + 2.0 * (1.0 - 0.1 / 9.95)) / 4.0;
        assert!((s - oracle).abs() < 1e-12, "{s} vs {oracle}");
    }

    #[test]
    fn tsne_is_deterministic_and_validates_input() {
        let pts: Vec<Vec<f64>> = (0..12).map(|i| vec![(i % 3) as f64 * 5.0, (i as f64).sin()]).collect();
        let labels: Vec<usize> = (0..12).map(|i| i % 3).collect();
        let cfg = TsneConfig { iterations: 300, ..TsneConfig::default() };
        let a = project_2d(&pts, &labels, &cfg).unwrap();
        let b = project_2d(&pts, &labels, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 12);
        assert!(a.iter().all(|p| p.x.is_finite() && p.y.is_finite()));
        assert!(project_2d(&pts[..2], &labels[..2], &cfg).is_err());
    }
}
