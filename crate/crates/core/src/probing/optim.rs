// SPDX-License-Identifier: MIT OR Apache-2.0

//! Smooth unconstrained minimizers used for probe fitting.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub(crate) trait Objective: Sync {
    fn dim(&self) -> usize;

    /// Objective value; writes the gradient into `grad`.
    fn value_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64;

    /// Dense Hessian, when affordable.
    fn hessian(&self, _theta: &[f64]) -> Option<DMatrix<f64>> {
        None
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Solution {
    pub theta: Vec<f64>,
    pub value: f64,
    pub residual: f64,
    pub iterations: usize,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(theta: &[f64], t: f64, dir: &[f64]) -> Vec<f64> {
    theta.iter().zip(dir).map(|(x, d)| x + t * d).collect()
}

/// Damped Newton with backtracking; stops when the gradient norm ≤ `tol`.
pub(crate) fn newton(obj: &dyn Objective, start: Vec<f64>, tol: f64, max_iter: usize) -> Result<Solution> {
    let n = obj.dim();
    let mut theta = start;
    let mut grad = vec![0.0; n];
    let mut value = obj.value_grad(&theta, &mut grad);
    let mut new_grad = vec![0.0; n];
    for iteration in 0..max_iter {
        let gnorm = norm(&grad);
        if gnorm <= tol {
            return Ok(Solution { theta, value, residual: gnorm, iterations: iteration });
        }
        let hessian = obj
            .hessian(&theta)
            .expect("newton requires an objective with a Hessian");
        let scale = (hessian.trace().abs() / n as f64).max(1.0);
        let g = DVector::from_column_slice(&grad);
        let mut damping = 1e-12 * scale;
        let direction = loop {
            let mut h = hessian.clone();
            for i in 0..n {
                h[(i, i)] += damping;
            }
            if let Some(chol) = h.cholesky() {
                break chol.solve(&(-&g));
            }
            damping *= 100.0;
            if damping > scale * 1e6 {
                break -&g;
            }
        };
        let direction: Vec<f64> = direction.iter().copied().collect();
        let slope = dot(&grad, &direction);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let candidate = axpy(&theta, t, &direction);
            let candidate_value = obj.value_grad(&candidate, &mut new_grad);
            let armijo = candidate_value <= value + 1e-4 * t * slope;
            let flat = candidate_value <= value + 1e-13 * value.abs().max(1.0) && norm(&new_grad) < gnorm;
            if candidate_value.is_finite() && (armijo || flat) {
                theta = candidate;
                value = candidate_value;
                std::mem::swap(&mut grad, &mut new_grad);
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            return Err(Error::Convergence { iterations: iteration, residual: gnorm });
        }
    }
    let residual = norm(&grad);
    if residual <= tol {
        Ok(Solution { theta, value, residual, iterations: max_iter })
    } else {
        Err(Error::Convergence { iterations: max_iter, residual })
    }
}

/// Limited-memory BFGS with backtracking Armijo line search.
pub(crate) fn lbfgs(obj: &dyn Objective, start: Vec<f64>, tol: f64, max_iter: usize) -> Result<Solution> {
    const MEMORY: usize = 12;
    let n = obj.dim();
    let mut theta = start;
    let mut grad = vec![0.0; n];
    let mut value = obj.value_grad(&theta, &mut grad);
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut new_grad = vec![0.0; n];
    let mut stalls = 0;
    for iteration in 0..max_iter {
        let gnorm = norm(&grad);
        if gnorm <= tol {
            return Ok(Solution { theta, value, residual: gnorm, iterations: iteration });
        }
        // Two-loop recursion.
        let mut q = grad.clone();
        let mut alphas = Vec::with_capacity(s_hist.len());
        for (s, y) in s_hist.iter().zip(&y_hist).rev() {
            let rho = 1.0 / dot(y, s);
            let alpha = rho * dot(s, &q);
            for (qi, yi) in q.iter_mut().zip(y) {
                *qi -= alpha * yi;
            }
            alphas.push((alpha, rho));
        }
        let gamma = match (s_hist.last(), y_hist.last()) {
            (Some(s), Some(y)) => dot(s, y) / dot(y, y),
            _ => 1.0 / gnorm.max(1.0),
        };
        for qi in q.iter_mut() {
            *qi *= gamma;
        }
        for ((s, y), (alpha, rho)) in s_hist.iter().zip(&y_hist).zip(alphas.into_iter().rev()) {
            let beta = rho * dot(y, &q);
            for (qi, si) in q.iter_mut().zip(s) {
                *qi += (alpha - beta) * si;
            }
        }
        let mut direction: Vec<f64> = q.into_iter().map(|v| -v).collect();
        let mut slope = dot(&grad, &direction);
        if !(slope < 0.0) {
            s_hist.clear();
            y_hist.clear();
            direction = grad.iter().map(|g| -g / gnorm.max(1.0)).collect();
            slope = dot(&grad, &direction);
        }
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..50 {
            let candidate = axpy(&theta, t, &direction);
            let candidate_value = obj.value_grad(&candidate, &mut new_grad);
            let armijo = candidate_value <= value + 1e-4 * t * slope;
            let flat = candidate_value <= value + 1e-13 * value.abs().max(1.0) && norm(&new_grad) < gnorm;
            if candidate_value.is_finite() && (armijo || flat) {
                let s: Vec<f64> = direction.iter().map(|d| t * d).collect();
                let y: Vec<f64> = new_grad.iter().zip(&grad).map(|(a, b)| a - b).collect();
                if dot(&s, &y) > 1e-300 {
                    s_hist.push(s);
                    y_hist.push(y);
                    if s_hist.len() > MEMORY {
                        s_hist.remove(0);
                        y_hist.remove(0);
                    }
                }
                theta = candidate;
                value = candidate_value;
                std::mem::swap(&mut grad, &mut new_grad);
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            // Restart from steepest descent once before giving up.
            stalls += 1;
            s_hist.clear();
            y_hist.clear();
            if stalls > 3 {
                return Err(Error::Convergence { iterations: iteration, residual: gnorm });
            }
        } else {
            stalls = 0;
        }
    }
    let residual = norm(&grad);
    if residual <= tol {
        Ok(Solution { theta, value, residual, iterations: max_iter })
    } else {
        Err(Error::Convergence { iterations: max_iter, residual })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Strictly convex quartic-plus-quadratic bowl.
    struct Bowl;

    impl Objective for Bowl {
        fn dim(&self) -> usize {
            3
        }

        fn value_grad(&self, t: &[f64], g: &mut [f64]) -> f64 {
            let c = [1.0, -2.0, 0.5];
            let mut v = 0.0;
            for i in 0..3 {
                let r = t[i] - c[i];
                v += r * r + 0.25 * r.powi(4);
                g[i] = 2.0 * r + r.powi(3);
            }
            v
        }

        fn hessian(&self, t: &[f64]) -> Option<DMatrix<f64>> {
            let c = [1.0, -2.0, 0.5];
            Some(DMatrix::from_fn(3, 3, |i, j| {
                if i == j {
                    2.0 + 3.0 * (t[i] - c[i]).powi(2)
                } else {
                    0.0
                }
            }))
        }
    }

    #[test]
    fn both_solvers_find_the_bowl_minimum() {
        for sol in [
            newton(&Bowl, vec![5.0, 5.0, 5.0], 1e-10, 100).unwrap(),
            lbfgs(&Bowl, vec![5.0, 5.0, 5.0], 1e-10, 1000).unwrap(),
        ] {
            assert!((sol.theta[0] - 1.0).abs() < 1e-9);
            assert!((sol.theta[1] + 2.0).abs() < 1e-9);
            assert!((sol.theta[2] - 0.5).abs() < 1e-9);
            assert!(sol.residual <= 1e-10);
        }
    }

    #[test]
    fn iteration_cap_reports_residual() {
        match lbfgs(&Bowl, vec![50.0, 50.0, 50.0], 1e-14, 2) {
            Err(Error::Convergence { residual, .. }) => assert!(residual > 0.0),
            other => panic!("expected convergence error, got {other:?}"),
        }
    }
}
