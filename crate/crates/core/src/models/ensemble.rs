//! Bagged classification forests and softmax gradient boosting over one tree type.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{presort, Binning, Criterion, Grower, Limits, Tree};
use super::{softmax, ModelError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleMode {
    Bagging,
    Boosting,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Growth {
    /// Expand every node up to `max_depth`.
    #[default]
    DepthWise,
    /// Expand the highest-gain leaf until `max_leaves`.
    LeafWise,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMethod {
    #[default]
    Exact,
    Histogram,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaggingParams {
    pub n_trees: usize,
    /// `None` grows until leaves are pure or too small.
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    /// Features tried per split; `None` means `floor(sqrt(d))`.
    pub max_features: Option<usize>,
}

impl Default for BaggingParams {
    fn default() -> Self {
        Self {
            n_trees: 300,
            max_depth: None,
            min_samples_leaf: 2,
            max_features: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoostingParams {
    pub n_rounds: usize,
    pub learning_rate: f64,
    pub growth: Growth,
    pub max_depth: Option<usize>,
    /// Leaf budget in leaf-wise mode.
    pub max_leaves: usize,
    /// L2 penalty on leaf values.
    pub lambda: f64,
    pub split: SplitMethod,
    pub bins: usize,
    pub min_samples_leaf: usize,
    pub min_child_weight: f64,
}

impl Default for BoostingParams {
    fn default() -> Self {
        Self {
            n_rounds: 200,
            learning_rate: 0.1,
            growth: Growth::DepthWise,
            max_depth: Some(3),
            max_leaves: 31,
            lambda: 1.0,
            split: SplitMethod::Exact,
            bins: 64,
            min_samples_leaf: 1,
            min_child_weight: 0.0,
        }
    }
}

/// Trees over standardized features. Bagging trees hold class-probability
/// leaves; boosting trees hold one score each and add to the margin of
/// `tree_class[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeEnsemble {
    pub mode: EnsembleMode,
    pub n_classes: usize,
    pub trees: Vec<Tree>,
    pub tree_class: Vec<usize>,
    pub learning_rate: f64,
    /// Log class priors (boosting); zeros for bagging.
    pub base_score: Vec<f64>,
}

impl TreeEnsemble {
    /// Weight and leaf-value component through which each tree feeds the margin of `class`.
    pub fn class_terms(&self, class: usize) -> Vec<(&Tree, usize, f64)> {
        match self.mode {
            EnsembleMode::Bagging => {
                let w = 1.0 / self.trees.len().max(1) as f64;
                self.trees.iter().map(|t| (t, class, w)).collect()
            }
            EnsembleMode::Boosting => self
                .trees
                .iter()
                .zip(&self.tree_class)
                .filter(|(_, &c)| c == class)
                .map(|(t, _)| (t, 0, 1.0))
                .collect(),
        }
    }

    /// Bagging: averaged leaf probabilities. Boosting: log-odds scores.
    pub fn margin(&self, z: &[f64]) -> Vec<f64> {
        let mut out = self.base_score.clone();
        match self.mode {
            EnsembleMode::Bagging => {
                let w = 1.0 / self.trees.len().max(1) as f64;
                for t in &self.trees {
                    for (o, v) in out.iter_mut().zip(t.predict(z)) {
                        *o += w * v;
                    }
                }
            }
            EnsembleMode::Boosting => {
                for (t, &c) in self.trees.iter().zip(&self.tree_class) {
                    out[c] += t.predict(z)[0];
                }
            }
        }
        out
    }

    pub fn proba_from_margin(&self, m: &[f64]) -> Vec<f64> {
        match self.mode {
            EnsembleMode::Bagging => {
                let s: f64 = m.iter().sum();
                m.iter().map(|v| v / s).collect()
            }
            EnsembleMode::Boosting => softmax(m),
        }
    }

    pub fn predict_proba(&self, z: &[f64]) -> Vec<f64> {
        self.proba_from_margin(&self.margin(z))
    }

    pub fn max_depth(&self) -> usize {
        self.trees.iter().map(Tree::depth).max().unwrap_or(0)
    }
}

pub(super) fn train_bagging(
    x: &[Vec<f64>],
    y: &[usize],
    k: usize,
    p: &BaggingParams,
    seed: u64,
) -> Result<TreeEnsemble, ModelError> {
    let n = x.len();
    let d = x.first().map_or(0, Vec::len);
    let order = presort(x);
    let max_features = p.max_features.unwrap_or(((d as f64).sqrt().floor() as usize).max(1)).min(d);
    let trees: Vec<Tree> = (0..p.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(t as u64 + 1);
            let mut weight = vec![0.0; n];
            for _ in 0..n {
                weight[rng.random_range(0..n)] += 1.0;
            }
            let mut stats = vec![0.0; n * k];
            for i in 0..n {
                stats[i * k + y[i]] = weight[i];
            }
            let g = Grower {
                x,
                order: &order,
                binning: None,
                stats: &stats,
                m: k,
                weight: &weight,
                criterion: Criterion::Gini,
                limits: Limits {
                    max_depth: p.max_depth,
                    max_leaves: None,
                    min_samples_leaf: p.min_samples_leaf as f64,
                    min_child_weight: 0.0,
                    max_features: Some(max_features),
                },
            };
            g.grow(Some(&mut rng))
        })
        .collect();
    Ok(TreeEnsemble {
        mode: EnsembleMode::Bagging,
        n_classes: k,
        tree_class: vec![0; trees.len()],
        trees,
        learning_rate: 1.0,
        base_score: vec![0.0; k],
    })
}

pub(super) fn train_boosting(
    x: &[Vec<f64>],
    y: &[usize],
    k: usize,
    p: &BoostingParams,
) -> Result<TreeEnsemble, ModelError> {
    let n = x.len();
    let mut counts = vec![0.0f64; k];
    for &c in y {
        counts[c] += 1.0;
    }
    // absent classes get a tiny floor so the log prior stays finite
    let base: Vec<f64> = counts.iter().map(|c| (c.max(1e-3) / n as f64).ln()).collect();
    let order = presort(x);
    let binning = (p.split == SplitMethod::Histogram).then(|| Binning::new(x, p.bins));
    let weight = vec![1.0; n];
    let limits = Limits {
        max_depth: p.max_depth,
        max_leaves: (p.growth == Growth::LeafWise).then_some(p.max_leaves),
        min_samples_leaf: p.min_samples_leaf as f64,
        min_child_weight: p.min_child_weight,
        max_features: None,
    };
    let mut margins: Vec<Vec<f64>> = vec![base.clone(); n];
    let mut trees = Vec::with_capacity(p.n_rounds * k);
    let mut tree_class = Vec::with_capacity(p.n_rounds * k);
    for _ in 0..p.n_rounds {
        let prob: Vec<Vec<f64>> = margins.iter().map(|m| softmax(m)).collect();
        let round: Vec<Tree> = (0..k)
            .into_par_iter()
            .map(|c| {
                let mut stats = vec![0.0; n * 2];
                for i in 0..n {
                    let pi = prob[i][c];
                    stats[2 * i] = if y[i] == c { 1.0 } else { 0.0 } - pi;
                    stats[2 * i + 1] = pi * (1.0 - pi);
                }
                Grower {
                    x,
                    order: &order,
                    binning: binning.as_ref(),
                    stats: &stats,
                    m: 2,
                    weight: &weight,
                    criterion: Criterion::Newton {
                        lambda: p.lambda,
                        scale: p.learning_rate,
                    },
                    limits,
                }
                .grow(None)
            })
            .collect();
        for (c, t) in round.into_iter().enumerate() {
            for (m, row) in margins.iter_mut().zip(x) {
                m[c] += t.predict(row)[0];
            }
            trees.push(t);
            tree_class.push(c);
        }
    }
    Ok(TreeEnsemble {
        mode: EnsembleMode::Boosting,
        n_classes: k,
        trees,
        tree_class,
        learning_rate: p.learning_rate,
        base_score: base,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::testdata::{rings, xor};
    use crate::models::Preprocessor;

    fn log_loss(e: &TreeEnsemble, x: &[Vec<f64>], y: &[usize]) -> f64 {
        x.iter()
            .zip(y)
            .map(|(r, &c)| -e.predict_proba(r)[c].ln())
            .sum::<f64>()
            / x.len() as f64
    }

    #[test]
    fn boosting_loss_monotone_per_round() {
        let d = rings(120, 2);
        let x = Preprocessor::fit(&d.rows).transform_all(&d.rows);
        for (lr, split) in [(0.1, SplitMethod::Exact), (0.3, SplitMethod::Histogram)] {
            let p = BoostingParams {
                n_rounds: 40,
                learning_rate: lr,
                split,
                ..Default::default()
            };
            let full = train_boosting(&x, &d.labels, 3, &p).unwrap();
            let mut last = f64::INFINITY;
            for r in 0..=40 {
                let mut e = full.clone();
                e.trees.truncate(r * 3);
                e.tree_class.truncate(r * 3);
                let l = log_loss(&e, &x, &d.labels);
                assert!(l <= last + 1e-12, "round {r}: {l} > {last}");
                last = l;
            }
        }
    }

    #[test]
    fn zero_rounds_and_stumps_predict_priors() {
        let d = rings(60, 1);
        let x = Preprocessor::fit(&d.rows).transform_all(&d.rows);
        let mut y = d.labels.clone();
        y[0] = 1;
        let priors = [19.0 / 60.0, 21.0 / 60.0, 20.0 / 60.0];
        for (rounds, depth) in [(0, Some(3)), (10, Some(0))] {
            let p = BoostingParams {
                n_rounds: rounds,
                max_depth: depth,
                ..Default::default()
            };
            let e = train_boosting(&x, &y, 3, &p).unwrap();
            for r in &x {
                for (a, b) in e.predict_proba(r).iter().zip(priors) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn depth_and_leaf_limits() {
        let d = rings(150, 3);
        let x = Preprocessor::fit(&d.rows).transform_all(&d.rows);
        let p = BoostingParams {
            n_rounds: 5,
            ..Default::default()
        };
        assert!(train_boosting(&x, &d.labels, 3, &p).unwrap().max_depth() <= 3);
        let p = BoostingParams {
            n_rounds: 5,
            growth: Growth::LeafWise,
            max_depth: None,
            max_leaves: 6,
            split: SplitMethod::Histogram,
            ..Default::default()
        };
        let e = train_boosting(&x, &d.labels, 3, &p).unwrap();
        assert!(e.trees.iter().all(|t| t.n_leaves() <= 6));
        assert!(e.trees.iter().any(|t| t.n_leaves() == 6));
        for t in &e.trees {
            for node in &t.nodes {
                assert!(node.value.iter().all(|v| v.is_finite()));
                if let Some(s) = &node.split {
                    assert!(s.threshold.is_finite());
                }
            }
        }
    }

    #[test]
    fn bagging_invariant_to_thread_count() {
        let d = rings(90, 6);
        let x = Preprocessor::fit(&d.rows).transform_all(&d.rows);
        let p = BaggingParams {
            n_trees: 40,
            ..Default::default()
        };
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| train_bagging(&x, &d.labels, 3, &p, 17).unwrap())
        };
        let (a, b) = (run(1), run(4));
        assert_eq!(a, b);
        for r in &x {
            let pa = a.predict_proba(r);
            assert_eq!(pa, b.predict_proba(r));
            assert!((pa.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert_ne!(train_bagging(&x, &d.labels, 3, &p, 18).unwrap(), a);
    }

    #[test]
    fn xor_needs_two_levels() {
        let d = xor();
        let x = Preprocessor::fit(&d.rows).transform_all(&d.rows);
        let p = BoostingParams {
            n_rounds: 50,
            max_depth: Some(2),
            ..Default::default()
        };
        let e = train_boosting(&x, &d.labels, 2, &p).unwrap();
        for (r, &y) in x.iter().zip(&d.labels) {
            assert_eq!(crate::models::argmax(&e.margin(r)), y);
        }
    }
}
