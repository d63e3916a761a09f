//! Classifier families trained on window feature matrices.
//!
//! Every trained model carries its own preprocessor (training-column mean
//! imputation followed by standardization), so prediction takes raw feature
//! rows exactly as they appear in the feature CSV.

mod ensemble;
mod knn;
mod logistic;
mod svm;
pub mod tree;

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{FeatureColumn, FeatureVector};

pub use ensemble::{BaggingParams, BoostingParams, EnsembleMode, Growth, SplitMethod, TreeEnsemble};
pub use knn::{KnnModel, KnnParams};
pub use logistic::{LinearModel, LogisticParams};
pub use svm::{median_pairwise_distance, rbf_kernel, BinarySvm, SvmModel, SvmParams};
pub use tree::{Node, Split, Tree};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("training data has a single class")]
    SingleClass,
    #[error("training data is empty")]
    EmptyData,
    #[error("loss became non-finite at iteration {0}")]
    NonFiniteLoss(usize),
    #[error("k = {k} exceeds the {n} training rows")]
    KTooLarge { k: usize, n: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("kernel width must be positive")]
    NonPositiveSigma,
    #[error("SMO did not converge within {0} iterations")]
    NoConvergence(usize),
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("model kind {0} produces decision scores, not probabilities")]
    ScoresOnly(&'static str),
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
}

/// Feature rows with labels and subject groups. Missing entries are NaN until a
/// model's preprocessor imputes them.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    pub columns: Vec<FeatureColumn>,
    pub classes: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub groups: Vec<String>,
    pub window_starts: Vec<f64>,
}

impl DataMatrix {
    /// Builds a matrix whose class order is the sorted set of labels present.
    pub fn from_features(columns: Vec<FeatureColumn>, rows: &[FeatureVector]) -> Result<Self, ModelError> {
        let classes: Vec<String> = rows
            .iter()
            .map(|r| r.label.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        Self::with_classes(columns, classes, rows)
    }

    pub fn with_classes(
        columns: Vec<FeatureColumn>,
        classes: Vec<String>,
        rows: &[FeatureVector],
    ) -> Result<Self, ModelError> {
        if rows.is_empty() {
            return Err(ModelError::EmptyData);
        }
        let d = columns.len();
        let mut m = DataMatrix {
            columns,
            classes,
            rows: Vec::with_capacity(rows.len()),
            labels: Vec::with_capacity(rows.len()),
            groups: Vec::with_capacity(rows.len()),
            window_starts: Vec::with_capacity(rows.len()),
        };
        for r in rows {
            if r.values.len() != d {
                return Err(ModelError::DimensionMismatch { expected: d, got: r.values.len() });
            }
            let label = m
                .classes
                .iter()
                .position(|c| *c == r.label)
                .ok_or_else(|| ModelError::SchemaMismatch(format!("label {:?} not in class set", r.label)))?;
            m.rows.push(r.values.iter().map(|v| v.unwrap_or(f64::NAN)).collect());
            m.labels.push(label);
            m.groups.push(r.subject_id.clone());
            m.window_starts.push(r.window_start);
        }
        Ok(m)
    }

    /// Dense matrix with generic column names, mainly for tests and synthetic studies.
    pub fn from_dense(rows: Vec<Vec<f64>>, labels: Vec<usize>, n_classes: usize) -> Self {
        let d = rows.first().map_or(0, Vec::len);
        let n = rows.len();
        DataMatrix {
            columns: (0..d)
                .map(|j| FeatureColumn {
                    name: format!("f{j}"),
                    group: format!("G{j}"),
                    unit: String::new(),
                })
                .collect(),
            classes: (0..n_classes).map(|k| format!("c{k}")).collect(),
            rows,
            labels,
            groups: (0..n).map(|i| format!("s{i}")).collect(),
            window_starts: vec![0.0; n],
        }
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.name.clone()).collect()
    }

    /// Sorted distinct subject ids.
    pub fn subjects(&self) -> Vec<String> {
        self.groups.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect()
    }

    pub fn select_rows(&self, idx: &[usize]) -> Self {
        DataMatrix {
            columns: self.columns.clone(),
            classes: self.classes.clone(),
            rows: idx.iter().map(|&i| self.rows[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            groups: idx.iter().map(|&i| self.groups[i].clone()).collect(),
            window_starts: idx.iter().map(|&i| self.window_starts[i]).collect(),
        }
    }

    pub fn select_columns(&self, cols: &[usize]) -> Self {
        DataMatrix {
            columns: cols.iter().map(|&j| self.columns[j].clone()).collect(),
            rows: self.rows.iter().map(|r| cols.iter().map(|&j| r[j]).collect()).collect(),
            ..self.clone()
        }
    }

    /// Row indices whose subject is in `subjects`.
    pub fn rows_for_subjects(&self, subjects: &BTreeSet<String>) -> Vec<usize> {
        (0..self.n_rows()).filter(|&i| subjects.contains(&self.groups[i])).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.n_classes()];
        for &y in &self.labels {
            c[y] += 1;
        }
        c
    }
}

/// Column imputation and standardization fitted on training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocessor {
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
}

impl Preprocessor {
    pub fn fit(rows: &[Vec<f64>]) -> Self {
        let d = rows.first().map_or(0, Vec::len);
        let mut means = vec![0.0; d];
        let mut scales = vec![1.0; d];
        for j in 0..d {
            let vals: Vec<f64> = rows.iter().map(|r| r[j]).filter(|v| v.is_finite()).collect();
            if vals.is_empty() {
                continue;
            }
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            means[j] = mean;
            scales[j] = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
        }
        Self { means, scales }
    }

    pub fn transform(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.means.iter().zip(&self.scales))
            .map(|(&v, (&m, &s))| if v.is_finite() { (v - m) / s } else { 0.0 })
            .collect()
    }

    pub fn transform_all(&self, rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
        rows.iter().map(|r| self.transform(r)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelConfig {
    Logistic(LogisticParams),
    Knn(KnnParams),
    Bagging(BaggingParams),
    Boosting(BoostingParams),
    Svm(SvmParams),
}

impl ModelConfig {
    /// Named presets for the seven classifier variants.
    pub fn preset(name: &str) -> Result<Self, ModelError> {
        Ok(match name {
            "logistic" | "lr" => ModelConfig::Logistic(LogisticParams::default()),
            "knn" => ModelConfig::Knn(KnnParams::default()),
            "random_forest" | "rf" | "bagging" => ModelConfig::Bagging(BaggingParams::default()),
            "gbm" => ModelConfig::Boosting(BoostingParams {
                lambda: 0.0,
                ..BoostingParams::default()
            }),
            "xgboost" | "boosting" => ModelConfig::Boosting(BoostingParams::default()),
            "lightgbm" => ModelConfig::Boosting(BoostingParams {
                growth: Growth::LeafWise,
                max_depth: None,
                max_leaves: 31,
                split: SplitMethod::Histogram,
                ..BoostingParams::default()
            }),
            "svm" => ModelConfig::Svm(SvmParams::default()),
            other => return Err(ModelError::InvalidConfig(format!("unknown model preset {other:?}"))),
        })
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            ModelConfig::Logistic(_) => "logistic",
            ModelConfig::Knn(_) => "knn",
            ModelConfig::Bagging(_) => "bagging",
            ModelConfig::Boosting(_) => "boosting",
            ModelConfig::Svm(_) => "svm",
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidConfig(m.into()));
        match self {
            ModelConfig::Logistic(p) => {
                if !(p.l2 >= 0.0 && p.l2.is_finite()) || p.max_iter == 0 || !(p.tol > 0.0) {
                    return bad("logistic: l2 >= 0, max_iter >= 1, tol > 0");
                }
            }
            ModelConfig::Knn(p) => {
                if p.k == 0 {
                    return bad("knn: k must be positive");
                }
            }
            ModelConfig::Bagging(p) => {
                if p.n_trees == 0 || p.min_samples_leaf == 0 || p.max_features == Some(0) {
                    return bad("bagging: n_trees, min_samples_leaf and max_features must be positive");
                }
            }
            ModelConfig::Boosting(p) => {
                if !(p.learning_rate > 0.0 && p.learning_rate <= 1.0) {
                    return bad("boosting: learning_rate in (0, 1]");
                }
                if !(p.lambda >= 0.0) || p.min_samples_leaf == 0 || !(p.min_child_weight >= 0.0) {
                    return bad("boosting: lambda >= 0, min_samples_leaf >= 1, min_child_weight >= 0");
                }
                if p.growth == Growth::LeafWise && p.max_leaves < 2 {
                    return bad("boosting: max_leaves >= 2 in leaf-wise mode");
                }
                if !(2..=256).contains(&p.bins) {
                    return bad("boosting: bins in [2, 256]");
                }
            }
            ModelConfig::Svm(p) => {
                if !(p.c > 0.0) || !(p.tol > 0.0) || p.max_iter == 0 {
                    return bad("svm: c > 0, tol > 0, max_iter >= 1");
                }
                if let Some(s) = p.sigma {
                    if !(s > 0.0) {
                        return Err(ModelError::NonPositiveSigma);
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelParams {
    Linear(LinearModel),
    Knn(KnnModel),
    Trees(TreeEnsemble),
    Svm(SvmModel),
}

/// A fitted model with its preprocessing and provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub config: ModelConfig,
    pub seed: u64,
    pub features: Vec<String>,
    pub classes: Vec<String>,
    pub preprocessor: Preprocessor,
    pub params: ModelParams,
}

pub fn train(data: &DataMatrix, config: &ModelConfig, seed: u64) -> Result<TrainedModel, ModelError> {
    config.validate()?;
    if data.n_rows() == 0 {
        return Err(ModelError::EmptyData);
    }
    if data.class_counts().iter().filter(|&&c| c > 0).count() < 2 {
        return Err(ModelError::SingleClass);
    }
    let preprocessor = Preprocessor::fit(&data.rows);
    let x = preprocessor.transform_all(&data.rows);
    let k = data.n_classes();
    let y = &data.labels;
    let params = match config {
        ModelConfig::Logistic(p) => ModelParams::Linear(logistic::train(&x, y, k, p)?),
        ModelConfig::Knn(p) => ModelParams::Knn(knn::train(&x, y, k, p)?),
        ModelConfig::Bagging(p) => ModelParams::Trees(ensemble::train_bagging(&x, y, k, p, seed)?),
        ModelConfig::Boosting(p) => ModelParams::Trees(ensemble::train_boosting(&x, y, k, p)?),
        ModelConfig::Svm(p) => ModelParams::Svm(svm::train(&x, y, k, p)?),
    };
    Ok(TrainedModel {
        config: config.clone(),
        seed,
        features: data.feature_names(),
        classes: data.classes.clone(),
        preprocessor,
        params,
    })
}

pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// Index of the largest value, smallest index on ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

impl TrainedModel {
    pub fn kind_name(&self) -> &'static str {
        self.config.kind_name()
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    fn check_row(&self, row: &[f64]) -> Result<(), ModelError> {
        if row.len() != self.features.len() {
            return Err(ModelError::DimensionMismatch {
                expected: self.features.len(),
                got: row.len(),
            });
        }
        Ok(())
    }

    /// Checks that a matrix carries exactly this model's feature columns and classes.
    pub fn check_schema(&self, data: &DataMatrix) -> Result<(), ModelError> {
        if data.feature_names() != self.features {
            return Err(ModelError::SchemaMismatch(format!(
                "model expects features {:?}, data has {:?}",
                self.features,
                data.feature_names()
            )));
        }
        if data.classes != self.classes {
            return Err(ModelError::SchemaMismatch(format!(
                "model classes {:?} differ from data classes {:?}",
                self.classes, data.classes
            )));
        }
        Ok(())
    }

    /// Raw class scores: linear margins, ensemble margins, neighbour vote shares or SVM decisions.
    pub fn margin(&self, row: &[f64]) -> Result<Vec<f64>, ModelError> {
        self.check_row(row)?;
        let z = self.preprocessor.transform(row);
        Ok(match &self.params {
            ModelParams::Linear(m) => m.margin(&z),
            ModelParams::Knn(m) => m.vote_shares(&z),
            ModelParams::Trees(m) => m.margin(&z),
            ModelParams::Svm(m) => m.decision(&z),
        })
    }

    pub fn predict_proba(&self, row: &[f64]) -> Result<Vec<f64>, ModelError> {
        let s = self.margin(row)?;
        match &self.params {
            ModelParams::Linear(_) => Ok(softmax(&s)),
            ModelParams::Knn(_) => Ok(s),
            ModelParams::Trees(m) => Ok(m.proba_from_margin(&s)),
            ModelParams::Svm(_) => Err(ModelError::ScoresOnly("svm")),
        }
    }

    /// Probabilities where available, otherwise decision scores. Used for AUC.
    pub fn predict_scores(&self, row: &[f64]) -> Result<Vec<f64>, ModelError> {
        match &self.params {
            ModelParams::Svm(_) => self.margin(row),
            _ => self.predict_proba(row),
        }
    }

    pub fn predict_class(&self, row: &[f64]) -> Result<usize, ModelError> {
        Ok(match &self.params {
            ModelParams::Knn(m) => {
                self.check_row(row)?;
                m.predict(&self.preprocessor.transform(row))
            }
            _ => argmax(&self.margin(row)?),
        })
    }

    /// Predicted classes and scores for every row, in row order.
    pub fn predict_matrix(&self, data: &DataMatrix) -> Result<(Vec<usize>, Vec<Vec<f64>>), ModelError> {
        let out: Result<Vec<(usize, Vec<f64>)>, ModelError> = data
            .rows
            .par_iter()
            .map(|r| Ok((self.predict_class(r)?, self.predict_scores(r)?)))
            .collect();
        Ok(out?.into_iter().unzip())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model parameters are finite")
    }

    pub fn from_json(s: &str) -> Result<Self, ModelError> {
        serde_json::from_str(s).map_err(|e| ModelError::InvalidConfig(format!("model JSON: {e}")))
    }
}
