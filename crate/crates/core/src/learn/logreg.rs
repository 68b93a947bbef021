use alloc::collections::VecDeque;
use alloc::vec::Vec;

use super::Matrix;
use crate::math;
use crate::{Error, Result};

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct LogRegConfig {
    /// L2 strength on the weights (the bias is not penalized).
    pub l2: f64,
    pub max_iter: usize,
    /// Stop once the gradient's largest component is at most this.
    pub tol: f64,
    /// Number of L-BFGS correction pairs kept.
    pub memory: usize,
}

impl Default for LogRegConfig {
    fn default() -> Self {
        Self {
            l2: 1.0,
            max_iter: 2500,
            tol: 1e-6,
            memory: 10,
        }
    }
}

impl LogRegConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(Error::InvalidConfig("l2 must be finite and non-negative"));
        }
        if self.max_iter == 0 || self.memory == 0 {
            return Err(Error::InvalidConfig("max_iter and memory must be positive"));
        }
        if self.tol.is_nan() || self.tol <= 0.0 {
            return Err(Error::InvalidConfig("tol must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct LogRegModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl LogRegModel {
    pub fn decision(&self, row: &[f64]) -> f64 {
        self.bias + row.iter().zip(&self.weights).map(|(x, w)| x * w).sum::<f64>()
    }

    pub fn predict_proba(&self, x: &Matrix) -> Result<Vec<f64>> {
        if x.cols() != self.weights.len() {
            return Err(Error::DimensionMismatch {
                expected: self.weights.len(),
                found: x.cols(),
            });
        }
        Ok(x.iter_rows().map(|r| math::sigmoid(self.decision(r))).collect())
    }
}

/// Mean log-loss plus `l2 / (2n) · ‖w‖²`, and its gradient. `params` is the
/// weights followed by the bias.
fn objective(x: &Matrix, y: &[bool], l2: f64, params: &[f64], grad: &mut [f64]) -> f64 {
    let d = x.cols();
    let n = x.rows() as f64;
    let (w, b) = (&params[..d], params[d]);
    grad.iter_mut().for_each(|g| *g = 0.0);
    let mut loss = 0.0;
    for (r, &yi) in x.iter_rows().zip(y) {
        let z = b + r.iter().zip(w).map(|(a, c)| a * c).sum::<f64>();
        let t = if yi { 1.0 } else { 0.0 };
        loss += math::softplus(z) - t * z;
        let resid = math::sigmoid(z) - t;
        for (g, a) in grad[..d].iter_mut().zip(r) {
            *g += resid * a;
        }
        grad[d] += resid;
    }
    let wsq: f64 = w.iter().map(|v| v * v).sum();
    for (g, wi) in grad[..d].iter_mut().zip(w) {
        *g = (*g + l2 * wi) / n;
    }
    grad[d] /= n;
    (loss + 0.5 * l2 * wsq) / n
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// L2-regularized logistic regression by L-BFGS with a backtracking Armijo
/// line search. Deterministic given its inputs.
pub fn fit_logreg(x: &Matrix, y: &[bool], config: &LogRegConfig) -> Result<LogRegModel> {
    config.validate()?;
    if x.rows() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.rows(),
            found: y.len(),
        });
    }
    if x.rows() == 0 {
        return Err(Error::EmptyDataset);
    }
    x.check_finite()?;

    let p = x.cols() + 1;
    let mut params = alloc::vec![0.0; p];
    let mut grad = alloc::vec![0.0; p];
    let mut f = objective(x, y, config.l2, &params, &mut grad);
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(config.memory);
    let mut trial = alloc::vec![0.0; p];
    let mut trial_grad = alloc::vec![0.0; p];
    let mut alphas = alloc::vec![0.0; config.memory];

    let mut iterations = 0;
    let mut converged = inf_norm(&grad) <= config.tol;
    while !converged && iterations < config.max_iter {
        iterations += 1;

        // two-loop recursion for -H·g
        let mut dir: Vec<f64> = grad.iter().map(|g| -g).collect();
        for (k, (s, yv, rho)) in history.iter().enumerate().rev() {
            let a = rho * dot(s, &dir);
            alphas[k] = a;
            dir.iter_mut().zip(yv).for_each(|(d, yi)| *d -= a * yi);
        }
        let gamma = match history.back() {
            Some((s, yv, _)) => dot(s, yv) / dot(yv, yv),
            None => 1.0 / inf_norm(&grad).max(1.0),
        };
        dir.iter_mut().for_each(|d| *d *= gamma);
        for (k, (s, yv, rho)) in history.iter().enumerate() {
            let b = rho * dot(yv, &dir);
            let a = alphas[k];
            dir.iter_mut().zip(s).for_each(|(d, si)| *d += (a - b) * si);
        }
        let mut slope = dot(&grad, &dir);
        if slope.is_nan() || slope >= 0.0 {
            // lost descent: restart from steepest descent
            history.clear();
            dir = grad.iter().map(|g| -g).collect();
            slope = dot(&grad, &dir);
        }

        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            for ((t, pv), d) in trial.iter_mut().zip(&params).zip(&dir) {
                *t = pv + step * d;
            }
            let ft = objective(x, y, config.l2, &trial, &mut trial_grad);
            if ft.is_finite() && ft <= f + 1e-4 * step * slope {
                let s: Vec<f64> = trial.iter().zip(&params).map(|(a, b)| a - b).collect();
                let yv: Vec<f64> = trial_grad.iter().zip(&grad).map(|(a, b)| a - b).collect();
                let sy = dot(&s, &yv);
                if sy > 1e-12 {
                    if history.len() == config.memory {
                        history.pop_front();
                    }
                    history.push_back((s, yv, 1.0 / sy));
                }
                params.copy_from_slice(&trial);
                grad.copy_from_slice(&trial_grad);
                f = ft;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            // no decrease representable in f64: we are at the optimum's noise floor
            break;
        }
        converged = inf_norm(&grad) <= config.tol;
    }

    let bias = params.pop().unwrap_or(0.0);
    Ok(LogRegModel {
        weights: params,
        bias,
        iterations,
        converged,
    })
}
