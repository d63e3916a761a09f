//! Exact Shapley attributions for tree ensembles (path-dependent TreeSHAP)
//! and linear models, plus global and per-class aggregation.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fmt::{fmt_full, fmt_sig9};
use crate::models::{DataMatrix, LinearModel, ModelParams, TrainedModel, Tree, TreeEnsemble};

/// Local-accuracy tolerance reported with every explanation run.
pub const LOCAL_ACCURACY_TOL: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExplainError {
    #[error("model kind {0} cannot be explained (only linear and tree ensembles)")]
    Unsupported(String),
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("no attributions to aggregate")]
    Empty,
    #[error("{labels} labels for {rows} attributions")]
    LabelMismatch { labels: usize, rows: usize },
    #[error("io: {0}")]
    Io(String),
}

/// Attributions of one input: `phi[class][feature]` on the model margin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    pub subject_id: String,
    pub window_start: f64,
    pub phi: Vec<Vec<f64>>,
    pub base: Vec<f64>,
    pub margin: Vec<f64>,
}

impl Attribution {
    /// Largest `|sum(phi) + base - margin|` over outputs.
    pub fn local_accuracy_error(&self) -> f64 {
        self.phi
            .iter()
            .zip(&self.base)
            .zip(&self.margin)
            .map(|((p, b), m)| (p.iter().sum::<f64>() + b - m).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Copy)]
struct PathElem {
    feature: Option<usize>,
    zero: f64,
    one: f64,
    weight: f64,
}

fn extend(path: &mut Vec<PathElem>, zero: f64, one: f64, feature: Option<usize>) {
    let l = path.len();
    path.push(PathElem {
        feature,
        zero,
        one,
        weight: if l == 0 { 1.0 } else { 0.0 },
    });
    let lf = (l + 1) as f64;
    for i in (0..l).rev() {
        path[i + 1].weight += one * path[i].weight * (i + 1) as f64 / lf;
        path[i].weight = zero * path[i].weight * (l - i) as f64 / lf;
    }
}

fn unwind(path: &mut Vec<PathElem>, idx: usize) {
    let l = path.len() - 1;
    let (one, zero) = (path[idx].one, path[idx].zero);
    let lf = (l + 1) as f64;
    let mut next = path[l].weight;
    for j in (0..l).rev() {
        if one != 0.0 {
            let t = path[j].weight;
            path[j].weight = next * lf / ((j + 1) as f64 * one);
            next = t - path[j].weight * zero * (l - j) as f64 / lf;
        } else {
            path[j].weight = path[j].weight * lf / (zero * (l - j) as f64);
        }
    }
    for j in idx..l {
        path[j].feature = path[j + 1].feature;
        path[j].zero = path[j + 1].zero;
        path[j].one = path[j + 1].one;
    }
    path.pop();
}

fn unwound_sum(path: &[PathElem], idx: usize) -> f64 {
    let l = path.len() - 1;
    let (one, zero) = (path[idx].one, path[idx].zero);
    let mut total = 0.0;
    if one != 0.0 {
        let mut next = path[l].weight;
        for j in (0..l).rev() {
            let t = next / ((j + 1) as f64 * one);
            total += t;
            next = path[j].weight - t * zero * (l - j) as f64;
        }
    } else {
        for j in (0..l).rev() {
            total += path[j].weight / (zero * (l - j) as f64);
        }
    }
    total * (l + 1) as f64
}

struct Walk<'a> {
    tree: &'a Tree,
    x: &'a [f64],
    component: usize,
    scale: f64,
}

impl Walk<'_> {
    fn recurse(&self, node: usize, mut path: Vec<PathElem>, zero: f64, one: f64, feature: Option<usize>, phi: &mut [f64]) {
        extend(&mut path, zero, one, feature);
        let n = &self.tree.nodes[node];
        let Some(s) = &n.split else {
            let v = n.value[self.component] * self.scale;
            for i in 1..path.len() {
                let w = unwound_sum(&path, i);
                let e = path[i];
                if let Some(f) = e.feature {
                    phi[f] += w * (e.one - e.zero) * v;
                }
            }
            return;
        };
        let (hot, cold) = if self.x[s.feature] <= s.threshold {
            (s.left, s.right)
        } else {
            (s.right, s.left)
        };
        let (mut in_zero, mut in_one) = (1.0, 1.0);
        if let Some(k) = (1..path.len()).find(|&k| path[k].feature == Some(s.feature)) {
            in_zero = path[k].zero;
            in_one = path[k].one;
            unwind(&mut path, k);
        }
        let cover = n.cover;
        let hz = self.tree.nodes[hot].cover / cover;
        let cz = self.tree.nodes[cold].cover / cover;
        self.recurse(hot, path.clone(), hz * in_zero, in_one, Some(s.feature), phi);
        self.recurse(cold, path, cz * in_zero, 0.0, Some(s.feature), phi);
    }
}

/// Cover-weighted expectation of one leaf-value component.
pub fn tree_expectation(tree: &Tree, component: usize) -> f64 {
    fn go(t: &Tree, i: usize, c: usize) -> f64 {
        let n = &t.nodes[i];
        match &n.split {
            None => n.value[c],
            Some(s) => (t.nodes[s.left].cover * go(t, s.left, c) + t.nodes[s.right].cover * go(t, s.right, c)) / n.cover,
        }
    }
    go(tree, 0, component)
}

/// Path-dependent TreeSHAP of a single tree; `phi` receives `scale` times the attributions.
pub fn tree_shap_single(tree: &Tree, x: &[f64], component: usize, scale: f64, phi: &mut [f64]) {
    let walk = Walk { tree, x, component, scale };
    walk.recurse(0, Vec::with_capacity(tree.depth() + 2), 1.0, 1.0, None, phi);
}

/// Attributions of every class margin of an ensemble: `(phi[class][feature], base[class])`.
pub fn tree_shap(ens: &TreeEnsemble, x: &[f64]) -> (Vec<Vec<f64>>, Vec<f64>) {
    let d = x.len();
    let mut phi = vec![vec![0.0; d]; ens.n_classes];
    let mut base = ens.base_score.clone();
    for (c, (p, b)) in phi.iter_mut().zip(base.iter_mut()).enumerate() {
        for (tree, comp, w) in ens.class_terms(c) {
            tree_shap_single(tree, x, comp, w, p);
            *b += w * tree_expectation(tree, comp);
        }
    }
    (phi, base)
}

/// `phi = w * (z - background)` per class; base is the margin at the background point.
pub fn linear_shap(model: &LinearModel, z: &[f64], background: &[f64]) -> Result<(Vec<Vec<f64>>, Vec<f64>), ExplainError> {
    let d = model.weights.first().map_or(0, Vec::len);
    if z.len() != d || background.len() != d {
        return Err(ExplainError::SchemaMismatch(format!(
            "expected {d} features, got {} (background {})",
            z.len(),
            background.len()
        )));
    }
    let phi = model
        .weights
        .iter()
        .map(|w| w.iter().zip(z.iter().zip(background)).map(|(wj, (x, m))| wj * (x - m)).collect())
        .collect();
    Ok((phi, model.margin(background)))
}

/// Explains every row of `data` on the standardized scale the model was trained on.
pub fn explain_model(model: &TrainedModel, data: &DataMatrix) -> Result<Vec<Attribution>, ExplainError> {
    if !matches!(model.params, ModelParams::Linear(_) | ModelParams::Trees(_)) {
        return Err(ExplainError::Unsupported(model.kind_name().into()));
    }
    if data.feature_names() != model.features {
        return Err(ExplainError::SchemaMismatch(format!(
            "model features {:?} differ from data {:?}",
            model.features,
            data.feature_names()
        )));
    }
    let background = vec![0.0; model.features.len()];
    (0..data.n_rows())
        .into_par_iter()
        .map(|i| {
            let z = model.preprocessor.transform(&data.rows[i]);
            let (phi, base, margin) = match &model.params {
                ModelParams::Linear(m) => {
                    let (phi, base) = linear_shap(m, &z, &background)?;
                    (phi, base, m.margin(&z))
                }
                ModelParams::Trees(e) => {
                    let (phi, base) = tree_shap(e, &z);
                    (phi, base, e.margin(&z))
                }
                _ => unreachable!("checked above"),
            };
            Ok(Attribution {
                subject_id: data.groups[i].clone(),
                window_start: data.window_starts[i],
                phi,
                base,
                margin,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Importance {
    pub feature: String,
    pub mean_abs_shap: f64,
}

/// Mean absolute attribution per feature, summed over classes, largest first.
pub fn global_importance(attrs: &[Attribution], features: &[String]) -> Result<Vec<Importance>, ExplainError> {
    if attrs.is_empty() {
        return Err(ExplainError::Empty);
    }
    let d = features.len();
    let mut sums = vec![0.0; d];
    for a in attrs {
        for p in &a.phi {
            if p.len() != d {
                return Err(ExplainError::SchemaMismatch(format!("{} attributions for {d} features", p.len())));
            }
            for (s, v) in sums.iter_mut().zip(p) {
                *s += v.abs();
            }
        }
    }
    let mut out: Vec<(usize, f64)> = sums.into_iter().map(|s| s / attrs.len() as f64).enumerate().collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(out
        .into_iter()
        .map(|(j, v)| Importance {
            feature: features[j].clone(),
            mean_abs_shap: v,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSummaryRow {
    pub class: String,
    pub feature: String,
    pub n: usize,
    pub mean_shap: f64,
    pub mean_abs_shap: f64,
    /// Pearson correlation of feature value and attribution; absent when either is constant.
    pub correlation: Option<f64>,
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    if a.len() < 2 {
        return None;
    }
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    (saa > 0.0 && sbb > 0.0).then(|| sab / (saa * sbb).sqrt())
}

/// Per-class blocks: rows whose label is `c` summarized through output `c`
/// (or the single output when attributions have one).
pub fn class_summary(
    attrs: &[Attribution],
    labels: &[usize],
    values: &[Vec<f64>],
    features: &[String],
    classes: &[String],
) -> Result<Vec<ClassSummaryRow>, ExplainError> {
    if labels.len() != attrs.len() || values.len() != attrs.len() {
        return Err(ExplainError::LabelMismatch {
            labels: labels.len(),
            rows: attrs.len(),
        });
    }
    let mut out = Vec::new();
    for (c, class) in classes.iter().enumerate() {
        let idx: Vec<usize> = (0..attrs.len()).filter(|&i| labels[i] == c).collect();
        if idx.is_empty() {
            continue;
        }
        for (j, feature) in features.iter().enumerate() {
            let phi: Vec<f64> = idx
                .iter()
                .map(|&i| {
                    let a = &attrs[i];
                    a.phi[if a.phi.len() > 1 { c } else { 0 }][j]
                })
                .collect();
            let n = phi.len() as f64;
            let paired: (Vec<f64>, Vec<f64>) = idx
                .iter()
                .zip(&phi)
                .filter(|(&i, _)| values[i][j].is_finite())
                .map(|(&i, &p)| (values[i][j], p))
                .unzip();
            out.push(ClassSummaryRow {
                class: class.clone(),
                feature: feature.clone(),
                n: phi.len(),
                mean_shap: phi.iter().sum::<f64>() / n,
                mean_abs_shap: phi.iter().map(|v| v.abs()).sum::<f64>() / n,
                correlation: pearson(&paired.0, &paired.1),
            });
        }
    }
    Ok(out)
}

/// Long-format attribution table: one line per (window, class, feature).
pub fn write_attributions_csv<W: Write>(
    out: W,
    attrs: &[Attribution],
    values: &[Vec<f64>],
    features: &[String],
    classes: &[String],
) -> Result<(), ExplainError> {
    let io = |e: csv::Error| ExplainError::Io(e.to_string());
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["subject_id", "window_start", "class", "feature", "value", "shap"])
        .map_err(io)?;
    for (a, row) in attrs.iter().zip(values) {
        for (c, phi) in a.phi.iter().enumerate() {
            for (j, f) in features.iter().enumerate() {
                let v = if row[j].is_finite() { fmt_sig9(row[j]) } else { String::new() };
                w.write_record([
                    a.subject_id.as_str(),
                    &fmt_full(a.window_start),
                    &classes[c],
                    f,
                    &v,
                    &fmt_full(phi[j]),
                ])
                .map_err(io)?;
            }
        }
    }
    w.flush().map_err(|e| ExplainError::Io(e.to_string()))
}

pub fn write_class_summary_csv<W: Write>(out: W, rows: &[ClassSummaryRow]) -> Result<(), ExplainError> {
    let io = |e: csv::Error| ExplainError::Io(e.to_string());
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["class", "feature", "n", "mean_shap", "mean_abs_shap", "correlation"])
        .map_err(io)?;
    for r in rows {
        w.write_record([
            r.class.clone(),
            r.feature.clone(),
            r.n.to_string(),
            fmt_sig9(r.mean_shap),
            fmt_sig9(r.mean_abs_shap),
            r.correlation.map(fmt_sig9).unwrap_or_default(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| ExplainError::Io(e.to_string()))
}
