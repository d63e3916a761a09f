//! Multinomial logistic regression fitted by full-batch gradient descent.

use serde::{Deserialize, Serialize};

use super::{softmax, ModelError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LogisticParams {
    /// L2 strength on the weights (bias unpenalized).
    pub l2: f64,
    pub max_iter: usize,
    /// Stop once the gradient's infinity norm drops below this.
    pub tol: f64,
}

impl Default for LogisticParams {
    fn default() -> Self {
        Self {
            l2: 1.0,
            max_iter: 5000,
            tol: 1e-6,
        }
    }
}

/// Per-class weights and biases on the standardized feature scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl LinearModel {
    pub fn margin(&self, z: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.bias)
            .map(|(w, b)| w.iter().zip(z).map(|(a, x)| a * x).sum::<f64>() + b)
            .collect()
    }
}

/// Parameters packed as K rows of (d weights, bias).
struct Objective<'a> {
    x: &'a [Vec<f64>],
    y: &'a [usize],
    k: usize,
    d: usize,
    l2: f64,
}

impl Objective<'_> {
    fn scores(&self, theta: &[f64], row: &[f64]) -> Vec<f64> {
        (0..self.k)
            .map(|c| {
                let w = &theta[c * (self.d + 1)..(c + 1) * (self.d + 1)];
                w[..self.d].iter().zip(row).map(|(a, b)| a * b).sum::<f64>() + w[self.d]
            })
            .collect()
    }

    /// Mean cross-entropy plus `l2 / (2n) * ||W||^2`.
    fn loss(&self, theta: &[f64]) -> f64 {
        let n = self.x.len() as f64;
        let mut ce = 0.0;
        for (row, &y) in self.x.iter().zip(self.y) {
            let s = self.scores(theta, row);
            let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + s.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            ce += lse - s[y];
        }
        ce / n + self.l2 / (2.0 * n) * self.penalty(theta)
    }

    fn penalty(&self, theta: &[f64]) -> f64 {
        theta
            .chunks(self.d + 1)
            .map(|w| w[..self.d].iter().map(|v| v * v).sum::<f64>())
            .sum()
    }

    fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        let n = self.x.len() as f64;
        let stride = self.d + 1;
        let mut g = vec![0.0; theta.len()];
        for (row, &y) in self.x.iter().zip(self.y) {
            let p = softmax(&self.scores(theta, row));
            for c in 0..self.k {
                let r = p[c] - if c == y { 1.0 } else { 0.0 };
                let gc = &mut g[c * stride..(c + 1) * stride];
                for (gj, xj) in gc.iter_mut().zip(row) {
                    *gj += r * xj;
                }
                gc[self.d] += r;
            }
        }
        for c in 0..self.k {
            for j in 0..self.d {
                let i = c * stride + j;
                g[i] = g[i] / n + self.l2 / n * theta[i];
            }
            g[c * stride + self.d] /= n;
        }
        g
    }
}

pub(super) fn train(x: &[Vec<f64>], y: &[usize], k: usize, p: &LogisticParams) -> Result<LinearModel, ModelError> {
    let d = x.first().map_or(0, Vec::len);
    let obj = Objective { x, y, k, d, l2: p.l2 };
    let (theta, iterations, converged) = descend(&obj, vec![0.0; k * (d + 1)], p)?;
    let weights = theta.chunks(d + 1).map(|w| w[..d].to_vec()).collect();
    let bias = theta.chunks(d + 1).map(|w| w[d]).collect();
    Ok(LinearModel {
        weights,
        bias,
        iterations,
        converged,
    })
}

/// Gradient descent with Armijo backtracking. Returns the parameters, the
/// iteration count and whether the gradient tolerance was met.
fn descend(obj: &Objective, mut theta: Vec<f64>, p: &LogisticParams) -> Result<(Vec<f64>, usize, bool), ModelError> {
    let mut loss = obj.loss(&theta);
    let mut step = 1.0;
    for it in 0..p.max_iter {
        let g = obj.gradient(&theta);
        let gmax = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if gmax < p.tol {
            return Ok((theta, it, true));
        }
        let gg: f64 = g.iter().map(|v| v * v).sum();
        step *= 2.0;
        loop {
            let cand: Vec<f64> = theta.iter().zip(&g).map(|(t, gi)| t - step * gi).collect();
            let cl = obj.loss(&cand);
            if !cl.is_finite() && step < 1e-300 {
                return Err(ModelError::NonFiniteLoss(it));
            }
            if cl <= loss - 0.5 * step * gg {
                theta = cand;
                loss = cl;
                break;
            }
            step *= 0.5;
            if step < 1e-20 {
                // no further decrease is representable
                return Ok((theta, it, false));
            }
        }
        if !loss.is_finite() {
            return Err(ModelError::NonFiniteLoss(it));
        }
    }
    Ok((theta, p.max_iter, false))
}
