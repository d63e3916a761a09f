//! RBF support vector machine trained with SMO, one-vs-rest for multiclass.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ModelError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvmParams {
    pub c: f64,
    /// Kernel width; `None` uses the median pairwise training distance.
    pub sigma: Option<f64>,
    /// KKT violation tolerance.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SvmParams {
    fn default() -> Self {
        Self {
            c: 1.0,
            sigma: None,
            tol: 1e-3,
            max_iter: 1_000_000,
        }
    }
}

/// One binary machine: `f(x) = sum_i coef_i K(sv_i, x) + bias` with `coef_i = alpha_i y_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinarySvm {
    pub support: Vec<Vec<f64>>,
    pub coef: Vec<f64>,
    pub bias: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub sigma: f64,
    pub c: f64,
    pub n_classes: usize,
    /// A single class-1-vs-0 machine for two classes, otherwise one per class.
    pub machines: Vec<BinarySvm>,
}

pub fn rbf_kernel(z1: &[f64], z2: &[f64], sigma: f64) -> Result<f64, ModelError> {
    if z1.len() != z2.len() {
        return Err(ModelError::DimensionMismatch {
            expected: z1.len(),
            got: z2.len(),
        });
    }
    if !(sigma > 0.0) {
        return Err(ModelError::NonPositiveSigma);
    }
    Ok(rbf(z1, z2, sigma))
}

fn rbf(a: &[f64], b: &[f64], sigma: f64) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    (-d2 / (2.0 * sigma * sigma)).exp()
}

pub fn median_pairwise_distance(x: &[Vec<f64>]) -> f64 {
    let mut d = Vec::with_capacity(x.len() * x.len().saturating_sub(1) / 2);
    for i in 0..x.len() {
        for j in i + 1..x.len() {
            d.push(x[i].iter().zip(&x[j]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt());
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    let m = d.len();
    let med = if m % 2 == 1 { d[m / 2] } else { 0.5 * (d[m / 2 - 1] + d[m / 2]) };
    if med > 0.0 {
        med
    } else {
        1.0
    }
}

/// Dual SMO with second-order working-set selection on a precomputed kernel.
fn smo(kernel: &[Vec<f64>], y: &[f64], c: f64, tol: f64, max_iter: usize) -> Result<(Vec<f64>, f64, usize), ModelError> {
    let n = y.len();
    let q = |i: usize, j: usize| y[i] * y[j] * kernel[i][j];
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let up = |a: f64, yi: f64| (yi > 0.0 && a < c) || (yi < 0.0 && a > 0.0);
    let low = |a: f64, yi: f64| (yi > 0.0 && a > 0.0) || (yi < 0.0 && a < c);
    let mut iter = 0;
    loop {
        let mut gmax = f64::NEG_INFINITY;
        let mut i = usize::MAX;
        for t in 0..n {
            if up(alpha[t], y[t]) && -y[t] * grad[t] > gmax {
                gmax = -y[t] * grad[t];
                i = t;
            }
        }
        let mut gmin = f64::INFINITY;
        let mut j = usize::MAX;
        let mut best = f64::INFINITY;
        for t in 0..n {
            if !low(alpha[t], y[t]) {
                continue;
            }
            let v = -y[t] * grad[t];
            gmin = gmin.min(v);
            if i != usize::MAX && v < gmax {
                let b = gmax - v;
                let mut a = q(i, i) + q(t, t) - 2.0 * y[i] * y[t] * q(i, t);
                if a <= 0.0 {
                    a = 1e-12;
                }
                let score = -b * b / a;
                if score < best {
                    best = score;
                    j = t;
                }
            }
        }
        if i == usize::MAX || j == usize::MAX || gmax - gmin < tol {
            break;
        }
        if iter >= max_iter {
            return Err(ModelError::NoConvergence(max_iter));
        }
        iter += 1;

        let (ai, aj) = (alpha[i], alpha[j]);
        if y[i] != y[j] {
            let mut quad = q(i, i) + q(j, j) + 2.0 * q(i, j);
            if quad <= 0.0 {
                quad = 1e-12;
            }
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let mut quad = q(i, i) + q(j, j) - 2.0 * q(i, j);
            if quad <= 0.0 {
                quad = 1e-12;
            }
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - ai, alpha[j] - aj);
        for t in 0..n {
            grad[t] += q(t, i) * di + q(t, j) * dj;
        }
    }

    // offset from free vectors, else the midpoint of the feasible interval
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut sum_free, mut n_free) = (0.0, 0usize);
    for t in 0..n {
        let yg = y[t] * grad[t];
        if alpha[t] >= c {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            n_free += 1;
            sum_free += yg;
        }
    }
    let rho = if n_free > 0 { sum_free / n_free as f64 } else { (ub + lb) / 2.0 };
    Ok((alpha, -rho, iter))
}

fn train_binary(x: &[Vec<f64>], kernel: &[Vec<f64>], y: &[f64], p: &SvmParams) -> Result<BinarySvm, ModelError> {
    let (alpha, bias, iterations) = smo(kernel, y, p.c, p.tol, p.max_iter)?;
    let mut support = Vec::new();
    let mut coef = Vec::new();
    for (i, &a) in alpha.iter().enumerate() {
        if a > 0.0 {
            support.push(x[i].clone());
            coef.push(a * y[i]);
        }
    }
    Ok(BinarySvm {
        support,
        coef,
        bias,
        iterations,
    })
}

pub(super) fn train(x: &[Vec<f64>], labels: &[usize], k: usize, p: &SvmParams) -> Result<SvmModel, ModelError> {
    let sigma = p.sigma.unwrap_or_else(|| median_pairwise_distance(x));
    if !(sigma > 0.0) {
        return Err(ModelError::NonPositiveSigma);
    }
    let kernel: Vec<Vec<f64>> = x
        .par_iter()
        .map(|a| x.iter().map(|b| rbf(a, b, sigma)).collect())
        .collect();
    let positives: Vec<usize> = if k == 2 { vec![1] } else { (0..k).collect() };
    let machines = positives
        .par_iter()
        .map(|&pos| {
            let y: Vec<f64> = labels.iter().map(|&l| if l == pos { 1.0 } else { -1.0 }).collect();
            train_binary(x, &kernel, &y, p)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SvmModel {
        sigma,
        c: p.c,
        n_classes: k,
        machines,
    })
}

impl BinarySvm {
    pub fn decision(&self, z: &[f64], sigma: f64) -> f64 {
        self.support
            .iter()
            .zip(&self.coef)
            .map(|(s, c)| c * rbf(s, z, sigma))
            .sum::<f64>()
            + self.bias
    }
}

impl SvmModel {
    /// Per-class decision scores; the binary case reports `[-f, f]`.
    pub fn decision(&self, z: &[f64]) -> Vec<f64> {
        if self.n_classes == 2 {
            let f = self.machines[0].decision(z, self.sigma);
            vec![-f, f]
        } else {
            self.machines.iter().map(|m| m.decision(z, self.sigma)).collect()
        }
    }
}
