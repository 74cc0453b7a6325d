// SPDX-License-Identifier: MIT OR Apache-2.0

//! Regularized multinomial cross-entropy for the two probe families.

use nalgebra::DMatrix;

use super::optim::Objective;
use crate::probe::log_sum_exp;

/// Mean NLL + (λ/2)‖W‖² for `score_y = w_y·x + b_y`. Biases are unpenalized.
///
/// Parameters are laid out class-major: `[w_0, b_0, w_1, b_1, …]`.
pub(crate) struct LinearSoftmax<'a> {
    pub xs: &'a [Vec<f64>],
    pub ys: &'a [usize],
    pub k: usize,
    pub d: usize,
    pub lambda: f64,
}

impl LinearSoftmax<'_> {
    fn scores(&self, theta: &[f64], x: &[f64], out: &mut [f64]) {
        let stride = self.d + 1;
        for (y, s) in out.iter_mut().enumerate() {
            let block = &theta[y * stride..(y + 1) * stride];
            *s = block[..self.d].iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + block[self.d];
        }
    }

    pub fn unpack(&self, theta: &[f64]) -> (Vec<Vec<f64>>, Vec<f64>) {
        let stride = self.d + 1;
        let weights = (0..self.k)
            .map(|y| theta[y * stride..y * stride + self.d].to_vec())
            .collect();
        let biases = (0..self.k).map(|y| theta[y * stride + self.d]).collect();
        (weights, biases)
    }
}

impl Objective for LinearSoftmax<'_> {
    fn dim(&self) -> usize {
        self.k * (self.d + 1)
    }

    fn value_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        let n = self.xs.len() as f64;
        let stride = self.d + 1;
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut scores = vec![0.0; self.k];
        let mut loss = 0.0;
        for (x, &y) in self.xs.iter().zip(self.ys) {
            self.scores(theta, x, &mut scores);
            let lse = log_sum_exp(&scores);
            loss += lse - scores[y];
            for (c, s) in scores.iter().enumerate() {
                let g = ((s - lse).exp() - if c == y { 1.0 } else { 0.0 }) / n;
                let block = &mut grad[c * stride..(c + 1) * stride];
                for (gj, xj) in block[..self.d].iter_mut().zip(x) {
                    *gj += g * xj;
                }
                block[self.d] += g;
            }
        }
        let mut penalty = 0.0;
        for c in 0..self.k {
            for j in 0..self.d {
                let w = theta[c * stride + j];
                penalty += w * w;
                grad[c * stride + j] += self.lambda * w;
            }
        }
        loss / n + 0.5 * self.lambda * penalty
    }

    fn hessian(&self, theta: &[f64]) -> Option<DMatrix<f64>> {
        let p = self.dim();
        let stride = self.d + 1;
        let n = self.xs.len() as f64;
        let mut h = DMatrix::<f64>::zeros(p, p);
        let mut scores = vec![0.0; self.k];
        let mut xt = vec![0.0; stride];
        for x in self.xs {
            self.scores(theta, x, &mut scores);
            let lse = log_sum_exp(&scores);
            let probs: Vec<f64> = scores.iter().map(|s| (s - lse).exp()).collect();
            xt[..self.d].copy_from_slice(x);
            xt[self.d] = 1.0;
            for a in 0..self.k {
                for b in a..self.k {
                    let coef = (if a == b { probs[a] } else { 0.0 } - probs[a] * probs[b]) / n;
                    if coef == 0.0 {
                        continue;
                    }
                    for i in 0..stride {
                        let ci = coef * xt[i];
                        for j in 0..stride {
                            h[(a * stride + i, b * stride + j)] += ci * xt[j];
                        }
                    }
                }
            }
        }
        for a in 0..self.k {
            for b in (a + 1)..self.k {
                for i in 0..stride {
                    for j in 0..stride {
                        h[(b * stride + j, a * stride + i)] = h[(a * stride + i, b * stride + j)];
                    }
                }
            }
            for j in 0..self.d {
                h[(a * stride + j, a * stride + j)] += self.lambda;
            }
        }
        Some(h)
    }
}

/// Two-layer tanh network: `W2 · tanh(W1 x + b1) + b2`, penalty on W1 and W2.
///
/// Layout: `[W1 (h×d, row-major), b1 (h), W2 (k×h, row-major), b2 (k)]`.
pub(crate) struct MlpSoftmax<'a> {
    pub x: DMatrix<f64>,
    pub ys: &'a [usize],
    pub k: usize,
    pub d: usize,
    pub hidden: usize,
    pub lambda: f64,
}

impl MlpSoftmax<'_> {
    pub fn offsets(&self) -> (usize, usize, usize, usize) {
        let w1 = self.hidden * self.d;
        let b1 = w1 + self.hidden;
        let w2 = b1 + self.k * self.hidden;
        (w1, b1, w2, w2 + self.k)
    }
}

impl Objective for MlpSoftmax<'_> {
    fn dim(&self) -> usize {
        self.offsets().3
    }

    fn value_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        let (o_b1, o_w2, o_b2, _) = self.offsets();
        let (h, d, k) = (self.hidden, self.d, self.k);
        let n = self.x.nrows();
        let w1 = DMatrix::from_row_slice(h, d, &theta[..o_b1]);
        let b1 = &theta[o_b1..o_w2];
        let w2 = DMatrix::from_row_slice(k, h, &theta[o_w2..o_b2]);
        let b2 = &theta[o_b2..];

        let mut z = &self.x * w1.transpose();
        for mut row in z.row_iter_mut() {
            for (v, b) in row.iter_mut().zip(b1) {
                *v = (*v + b).tanh();
            }
        }
        let mut s = &z * w2.transpose();
        let mut loss = 0.0;
        for (i, mut row) in s.row_iter_mut().enumerate() {
            for (v, b) in row.iter_mut().zip(b2) {
                *v += b;
            }
            let scores: Vec<f64> = row.iter().copied().collect();
            let lse = log_sum_exp(&scores);
            loss += lse - scores[self.ys[i]];
            for (c, v) in row.iter_mut().enumerate() {
                *v = ((scores[c] - lse).exp() - if c == self.ys[i] { 1.0 } else { 0.0 }) / n as f64;
            }
        }
        let g = s;
        let g_w2 = g.transpose() * &z + &w2 * self.lambda;
        let g_b2: Vec<f64> = (0..k).map(|c| g.column(c).sum()).collect();
        let mut dz = &g * &w2;
        for (v, zv) in dz.iter_mut().zip(z.iter()) {
            *v *= 1.0 - zv * zv;
        }
        let g_w1 = dz.transpose() * &self.x + &w1 * self.lambda;
        let g_b1: Vec<f64> = (0..h).map(|j| dz.column(j).sum()).collect();

        for r in 0..h {
            for c in 0..d {
                grad[r * d + c] = g_w1[(r, c)];
            }
        }
        grad[o_b1..o_w2].copy_from_slice(&g_b1);
        for r in 0..k {
            for c in 0..h {
                grad[o_w2 + r * h + c] = g_w2[(r, c)];
            }
        }
        grad[o_b2..].copy_from_slice(&g_b2);
        let penalty = w1.norm_squared() + w2.norm_squared();
        loss / n as f64 + 0.5 * self.lambda * penalty
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn finite_difference(obj: &dyn Objective, theta: &[f64]) -> Vec<f64> {
        let mut scratch = vec![0.0; obj.dim()];
        (0..theta.len())
            .map(|i| {
                let h = 1e-6;
                let mut plus = theta.to_vec();
                plus[i] += h;
                let mut minus = theta.to_vec();
                minus[i] -= h;
                (obj.value_grad(&plus, &mut scratch) - obj.value_grad(&minus, &mut scratch)) / (2.0 * h)
            })
            .collect()
    }

    fn data() -> (Vec<Vec<f64>>, Vec<usize>) {
        let xs = vec![
            vec![0.3, -1.2],
            vec![1.5, 0.2],
            vec![-0.7, 0.9],
            vec![0.1, 0.1],
            vec![2.0, -0.5],
        ];
        (xs, vec![0, 1, 2, 1, 0])
    }

    #[test]
    fn linear_gradient_and_hessian_match_finite_differences() {
        let (xs, ys) = data();
        let obj = LinearSoftmax { xs: &xs, ys: &ys, k: 3, d: 2, lambda: 0.1 };
        let theta: Vec<f64> = (0..obj.dim()).map(|i| ((i as f64) * 0.37).sin()).collect();
        let mut grad = vec![0.0; obj.dim()];
        obj.value_grad(&theta, &mut grad);
        for (a, b) in grad.iter().zip(finite_difference(&obj, &theta)) {
            assert!((a - b).abs() < 1e-7, "{a} vs {b}");
        }
        let h = obj.hessian(&theta).unwrap();
        for i in 0..obj.dim() {
            let mut plus = theta.clone();
            plus[i] += 1e-6;
            let mut minus = theta.clone();
            minus[i] -= 1e-6;
            let mut gp = vec![0.0; obj.dim()];
            let mut gm = vec![0.0; obj.dim()];
            obj.value_grad(&plus, &mut gp);
            obj.value_grad(&minus, &mut gm);
            for j in 0..obj.dim() {
                let fd = (gp[j] - gm[j]) / 2e-6;
                assert!((h[(j, i)] - fd).abs() < 1e-6, "H[{j},{i}] {} vs {fd}", h[(j, i)]);
            }
        }
    }

    #[test]
    fn mlp_gradient_matches_finite_differences() {
        let (xs, ys) = data();
        let flat: Vec<f64> = xs.iter().flatten().copied().collect();
        let obj = MlpSoftmax {
            x: DMatrix::from_row_slice(5, 2, &flat),
            ys: &ys,
            k: 3,
            d: 2,
            hidden: 4,
            lambda: 0.05,
        };
        let theta: Vec<f64> = (0..obj.dim()).map(|i| ((i as f64) * 0.61).cos() * 0.5).collect();
        let mut grad = vec![0.0; obj.dim()];
        obj.value_grad(&theta, &mut grad);
        for (a, b) in grad.iter().zip(finite_difference(&obj, &theta)) {
            assert!((a - b).abs() < 1e-7, "{a} vs {b}");
        }
    }
}
