//! Subject-separated splits, classification metrics and the fold runner.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::{self, DataMatrix, ModelConfig, ModelError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("need at least two subjects, found {0}")]
    TooFewSubjects(usize),
    #[error("k = {k} folds exceed the {n} subjects")]
    KExceedsSubjects { k: usize, n: usize },
    #[error("invalid split: {0}")]
    InvalidSplit(String),
    #[error("label {0} outside the class order")]
    UnknownLabel(usize),
    #[error("length mismatch ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error("AUC needs both positive and negative examples")]
    SingleClassPresent,
    #[error("fold {fold}: {source}")]
    Model { fold: String, source: ModelError },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fold {
    pub name: String,
    pub train: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub method: String,
    pub seed: Option<u64>,
    pub folds: Vec<Fold>,
}

impl SplitPlan {
    /// True when no fold shares a subject between train and test.
    pub fn is_subject_separated(&self) -> bool {
        self.folds.iter().all(|f| {
            let train: BTreeSet<&String> = f.train.iter().collect();
            f.test.iter().all(|s| !train.contains(s))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case", deny_unknown_fields)]
pub enum SplitSpec {
    Holdout { test_fraction: f64 },
    Kfold { k: usize },
    Loso,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec::Holdout { test_fraction: 0.2 }
    }
}

fn unique_sorted(subjects: &[String]) -> Vec<String> {
    subjects.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect()
}

fn shuffled(subjects: &[String], seed: u64) -> Vec<String> {
    let mut s = unique_sorted(subjects);
    s.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    s
}

fn fold_from_test(name: String, all: &[String], test: BTreeSet<String>) -> Fold {
    Fold {
        name,
        train: all.iter().filter(|s| !test.contains(*s)).cloned().collect(),
        test: test.into_iter().collect(),
    }
}

pub fn subject_holdout_split(subjects: &[String], test_fraction: f64, seed: u64) -> Result<SplitPlan, EvalError> {
    let all = unique_sorted(subjects);
    if all.len() < 2 {
        return Err(EvalError::TooFewSubjects(all.len()));
    }
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(EvalError::InvalidSplit(format!("test_fraction {test_fraction} not in (0, 1)")));
    }
    let n_test = ((test_fraction * all.len() as f64).round() as usize).clamp(1, all.len() - 1);
    let test = shuffled(&all, seed).into_iter().take(n_test).collect();
    Ok(SplitPlan {
        method: "holdout".into(),
        seed: Some(seed),
        folds: vec![fold_from_test("holdout".into(), &all, test)],
    })
}

pub fn grouped_kfold(subjects: &[String], k: usize, seed: u64) -> Result<SplitPlan, EvalError> {
    let all = unique_sorted(subjects);
    if all.len() < 2 {
        return Err(EvalError::TooFewSubjects(all.len()));
    }
    if k < 2 {
        return Err(EvalError::InvalidSplit(format!("k = {k}; need at least 2 folds")));
    }
    if k > all.len() {
        return Err(EvalError::KExceedsSubjects { k, n: all.len() });
    }
    let order = shuffled(&all, seed);
    let folds = (0..k)
        .map(|f| {
            let test = order.iter().skip(f).step_by(k).cloned().collect();
            fold_from_test(format!("fold{f}"), &all, test)
        })
        .collect();
    Ok(SplitPlan {
        method: "grouped_kfold".into(),
        seed: Some(seed),
        folds,
    })
}

pub fn loso_folds(subjects: &[String]) -> Result<SplitPlan, EvalError> {
    let all = unique_sorted(subjects);
    if all.len() < 2 {
        return Err(EvalError::TooFewSubjects(all.len()));
    }
    let folds = all
        .iter()
        .map(|s| fold_from_test(s.clone(), &all, BTreeSet::from([s.clone()])))
        .collect();
    Ok(SplitPlan {
        method: "loso".into(),
        seed: None,
        folds,
    })
}

pub fn make_plan(spec: &SplitSpec, subjects: &[String], seed: u64) -> Result<SplitPlan, EvalError> {
    match spec {
        SplitSpec::Holdout { test_fraction } => subject_holdout_split(subjects, *test_fraction, seed),
        SplitSpec::Kfold { k } => grouped_kfold(subjects, *k, seed),
        SplitSpec::Loso => loso_folds(subjects),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: Vec<String>,
    /// Rows are true classes, columns predictions.
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }
}

pub fn confusion_matrix(y_true: &[usize], y_pred: &[usize], classes: &[String]) -> Result<ConfusionMatrix, EvalError> {
    if y_true.len() != y_pred.len() {
        return Err(EvalError::LengthMismatch(y_true.len(), y_pred.len()));
    }
    let k = classes.len();
    let mut counts = vec![vec![0u64; k]; k];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        if t >= k {
            return Err(EvalError::UnknownLabel(t));
        }
        if p >= k {
            return Err(EvalError::UnknownLabel(p));
        }
        counts[t][p] += 1;
    }
    Ok(ConfusionMatrix {
        classes: classes.to_vec(),
        counts,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
    /// A 0/0 ratio was replaced by 0.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub per_class: Vec<ClassMetrics>,
    pub macro_f1: f64,
    pub weighted_f1: f64,
    pub auc: Option<f64>,
}

fn ratio(a: f64, b: f64) -> (f64, bool) {
    if b == 0.0 {
        (0.0, true)
    } else {
        (a / b, false)
    }
}

pub fn classification_metrics(cm: &ConfusionMatrix) -> Result<MetricsReport, EvalError> {
    let total = cm.total() as f64;
    if total == 0.0 {
        return Err(EvalError::EmptyMatrix);
    }
    let k = cm.classes.len();
    let trace: u64 = (0..k).map(|i| cm.counts[i][i]).sum();
    let mut per_class = Vec::with_capacity(k);
    for i in 0..k {
        let tp = cm.counts[i][i] as f64;
        let support: u64 = cm.counts[i].iter().sum();
        let predicted: u64 = (0..k).map(|r| cm.counts[r][i]).sum();
        let (precision, dp) = ratio(tp, predicted as f64);
        let (recall, dr) = ratio(tp, support as f64);
        let (f1, df) = ratio(2.0 * precision * recall, precision + recall);
        if dp || dr {
            log::debug!("class {}: precision or recall undefined, using 0", cm.classes[i]);
        }
        per_class.push(ClassMetrics {
            class: cm.classes[i].clone(),
            precision,
            recall,
            f1,
            support,
            degenerate: dp || dr || df,
        });
    }
    let macro_f1 = per_class.iter().map(|c| c.f1).sum::<f64>() / k as f64;
    let weighted_f1 = per_class.iter().map(|c| c.f1 * c.support as f64).sum::<f64>() / total;
    Ok(MetricsReport {
        accuracy: trace as f64 / total,
        per_class,
        macro_f1,
        weighted_f1,
        auc: None,
    })
}

/// Probability that a random positive outscores a random negative, ties counting one half.
pub fn roc_auc(scores: &[f64], positive: &[bool]) -> Result<f64, EvalError> {
    if scores.len() != positive.len() {
        return Err(EvalError::LengthMismatch(scores.len(), positive.len()));
    }
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(EvalError::SingleClassPresent);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + 1 + j) as f64 / 2.0;
        rank_sum += mid * order[i..j].iter().filter(|&&o| positive[o]).count() as f64;
        i = j;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Binary AUC on the class-1 score for two classes, else the unweighted mean of one-vs-rest AUCs.
pub fn roc_auc_macro_ovr(scores: &[Vec<f64>], labels: &[usize], n_classes: usize) -> Result<f64, EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch(scores.len(), labels.len()));
    }
    let one = |k: usize| {
        let s: Vec<f64> = scores.iter().map(|r| r[k]).collect();
        let pos: Vec<bool> = labels.iter().map(|&l| l == k).collect();
        roc_auc(&s, &pos)
    };
    if n_classes == 2 {
        return one(1);
    }
    let mut total = 0.0;
    for k in 0..n_classes {
        total += one(k)?;
    }
    Ok(total / n_classes as f64)
}

fn metrics_with_auc(
    y: &[usize],
    pred: &[usize],
    scores: &[Vec<f64>],
    classes: &[String],
) -> Result<(MetricsReport, ConfusionMatrix), EvalError> {
    let cm = confusion_matrix(y, pred, classes)?;
    let mut m = classification_metrics(&cm)?;
    m.auc = roc_auc_macro_ovr(scores, y, classes.len()).ok();
    Ok((m, cm))
}

/// Mean and Bessel-corrected standard deviation; the std of fewer than two values is 0.
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, 0.0);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(v: &[f64]) -> Self {
        let (mean, std) = mean_std(v);
        Self { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: String,
    pub test_subjects: Vec<String>,
    pub n_train: usize,
    pub n_test: usize,
    pub model: ModelConfig,
    pub metrics: MetricsReport,
    pub confusion: ConfusionMatrix,
}

/// Held-out prediction for one window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub row: usize,
    pub fold: usize,
    pub subject_id: String,
    pub label: usize,
    pub predicted: usize,
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldAggregate {
    pub accuracy: MeanStd,
    pub macro_f1: MeanStd,
    pub weighted_f1: MeanStd,
    /// Over folds whose test set admits an AUC.
    pub auc: Option<MeanStd>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    /// Mean and std of per-fold metrics.
    pub across_folds: FoldAggregate,
    /// Metrics over all held-out predictions pooled together.
    pub pooled: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_fold: Vec<FoldResult>,
    pub aggregate: Aggregate,
    pub confusion: ConfusionMatrix,
    #[serde(skip)]
    pub predictions: Vec<Prediction>,
}

/// Seed for the model trained in fold `fold`, independent of scheduling.
pub fn fold_seed(seed: u64, fold: usize) -> u64 {
    seed ^ (fold as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Mean macro F1 of each candidate under grouped k-fold on `data`; returns the best index
/// (first on ties) and all scores.
pub fn tune_grid(data: &DataMatrix, candidates: &[ModelConfig], k: usize, seed: u64) -> Result<(usize, Vec<f64>), EvalError> {
    let subjects = data.subjects();
    let plan = grouped_kfold(&subjects, k.min(subjects.len()), seed)?;
    let scores = candidates
        .par_iter()
        .map(|cfg| {
            let r = run_plan(data, &plan, std::slice::from_ref(cfg), seed)?;
            Ok(r.aggregate.across_folds.macro_f1.mean)
        })
        .collect::<Result<Vec<f64>, EvalError>>()?;
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    Ok((best, scores))
}

/// Trains and scores one model per fold. With more than one candidate, each
/// fold picks its configuration by inner grouped 5-fold CV on its own training subjects.
pub fn run_plan(data: &DataMatrix, plan: &SplitPlan, candidates: &[ModelConfig], seed: u64) -> Result<EvalReport, EvalError> {
    if candidates.is_empty() {
        return Err(EvalError::InvalidSplit("no model configuration".into()));
    }
    let folds: Vec<(FoldResult, Vec<Prediction>)> = plan
        .folds
        .par_iter()
        .enumerate()
        .map(|(fi, fold)| {
            let wrap = |source| EvalError::Model {
                fold: fold.name.clone(),
                source,
            };
            let train_idx = data.rows_for_subjects(&fold.train.iter().cloned().collect());
            let test_idx = data.rows_for_subjects(&fold.test.iter().cloned().collect());
            if test_idx.is_empty() {
                return Err(EvalError::InvalidSplit(format!("fold {} has no test windows", fold.name)));
            }
            let train = data.select_rows(&train_idx);
            let test = data.select_rows(&test_idx);
            let fseed = fold_seed(seed, fi);
            let cfg = if candidates.len() == 1 {
                candidates[0].clone()
            } else {
                let (best, _) = tune_grid(&train, candidates, 5, fseed)?;
                candidates[best].clone()
            };
            let model = models::train(&train, &cfg, fseed).map_err(wrap)?;
            let (pred, scores) = model.predict_matrix(&test).map_err(wrap)?;
            let (metrics, confusion) = metrics_with_auc(&test.labels, &pred, &scores, &data.classes)?;
            let preds = test_idx
                .iter()
                .zip(pred.iter().zip(scores))
                .map(|(&row, (&p, s))| Prediction {
                    row,
                    fold: fi,
                    subject_id: data.groups[row].clone(),
                    label: data.labels[row],
                    predicted: p,
                    scores: s,
                })
                .collect();
            Ok((
                FoldResult {
                    fold: fold.name.clone(),
                    test_subjects: fold.test.clone(),
                    n_train: train_idx.len(),
                    n_test: test_idx.len(),
                    model: cfg,
                    metrics,
                    confusion,
                },
                preds,
            ))
        })
        .collect::<Result<_, EvalError>>()?;

    let (per_fold, preds): (Vec<FoldResult>, Vec<Vec<Prediction>>) = folds.into_iter().unzip();
    let mut predictions: Vec<Prediction> = preds.into_iter().flatten().collect();
    predictions.sort_by_key(|p| p.row);
    let y: Vec<usize> = predictions.iter().map(|p| p.label).collect();
    let yp: Vec<usize> = predictions.iter().map(|p| p.predicted).collect();
    let sc: Vec<Vec<f64>> = predictions.iter().map(|p| p.scores.clone()).collect();
    let (pooled, confusion) = metrics_with_auc(&y, &yp, &sc, &data.classes)?;
    let col = |f: fn(&MetricsReport) -> f64| per_fold.iter().map(|r| f(&r.metrics)).collect::<Vec<_>>();
    let aucs: Vec<f64> = per_fold.iter().filter_map(|r| r.metrics.auc).collect();
    let across_folds = FoldAggregate {
        accuracy: MeanStd::of(&col(|m| m.accuracy)),
        macro_f1: MeanStd::of(&col(|m| m.macro_f1)),
        weighted_f1: MeanStd::of(&col(|m| m.weighted_f1)),
        auc: (!aucs.is_empty()).then(|| MeanStd::of(&aucs)),
    };
    Ok(EvalReport {
        per_fold,
        aggregate: Aggregate { across_folds, pooled },
        confusion,
        predictions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn subjects(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("S{i:02}")).collect()
    }

    #[test]
    fn holdout_examples() {
        let s = subjects(10);
        let a = subject_holdout_split(&s, 0.2, 7).unwrap();
        assert_eq!(a.folds[0].test.len(), 2);
        assert_eq!(a, subject_holdout_split(&s, 0.2, 7).unwrap());
        assert_eq!(subject_holdout_split(&subjects(2), 0.2, 1).unwrap().folds[0].test.len(), 1);
        assert_eq!(subject_holdout_split(&subjects(36), 0.2, 1).unwrap().folds[0].test.len(), 7);
        assert_eq!(subject_holdout_split(&subjects(1), 0.2, 1), Err(EvalError::TooFewSubjects(1)));
    }

    #[test]
    fn kfold_and_loso_examples() {
        let p = grouped_kfold(&subjects(10), 5, 3).unwrap();
        assert!(p.folds.iter().all(|f| f.test.len() == 2 && f.train.len() == 8));
        let k = grouped_kfold(&subjects(4), 4, 3).unwrap();
        let mut tests: Vec<_> = k.folds.iter().map(|f| f.test.clone()).collect();
        tests.sort();
        let l = loso_folds(&subjects(4)).unwrap();
        assert_eq!(tests, l.folds.iter().map(|f| f.test.clone()).collect::<Vec<_>>());
        assert_eq!(grouped_kfold(&subjects(3), 4, 0), Err(EvalError::KExceedsSubjects { k: 4, n: 3 }));

        let abc: Vec<String> = ["C", "A", "B"].iter().map(|s| s.to_string()).collect();
        let l = loso_folds(&abc).unwrap();
        assert_eq!(l.folds.iter().map(|f| f.test[0].as_str()).collect::<Vec<_>>(), vec!["A", "B", "C"]);
        assert_eq!(loso_folds(&subjects(36)).unwrap().folds.len(), 36);
        assert_eq!(loso_folds(&subjects(1)), Err(EvalError::TooFewSubjects(1)));
    }

    #[test]
    fn confusion_and_metrics_examples() {
        let c = vec!["0".to_string(), "1".to_string()];
        let cm = confusion_matrix(&[0, 1, 0, 1], &[0, 1, 0, 1], &c).unwrap();
        assert_eq!(cm.counts, vec![vec![2, 0], vec![0, 2]]);
        let m = classification_metrics(&cm).unwrap();
        assert_eq!((m.accuracy, m.macro_f1, m.weighted_f1), (1.0, 1.0, 1.0));

        let cm = confusion_matrix(&[0, 0, 1, 1], &[0, 1, 1, 1], &c).unwrap();
        assert_eq!(cm.counts, vec![vec![1, 1], vec![0, 2]]);
        let m = classification_metrics(&cm).unwrap();
        assert_eq!(m.accuracy, 0.75);
        let (c0, c1) = (&m.per_class[0], &m.per_class[1]);
        assert_eq!((c0.precision, c0.recall), (1.0, 0.5));
        assert!((c0.f1 - 2.0 / 3.0).abs() < 1e-15);
        assert!((c1.precision - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(c1.recall, 1.0);
        assert!((c1.f1 - 0.8).abs() < 1e-15);
        assert!((m.macro_f1 - 0.7333333333333334).abs() < 1e-12);

        let empty = confusion_matrix(&[], &[], &c).unwrap();
        assert_eq!(empty.total(), 0);
        assert_eq!(classification_metrics(&empty), Err(EvalError::EmptyMatrix));
        assert_eq!(confusion_matrix(&[2], &[0], &c), Err(EvalError::UnknownLabel(2)));

        let c3 = vec!["a".to_string(), "b".to_string(), "c".to_string()];
        let m = classification_metrics(&confusion_matrix(&[0, 1], &[0, 1], &c3).unwrap()).unwrap();
        assert!(m.per_class[2].degenerate);
        assert_eq!(m.per_class[2].f1, 0.0);
    }

    #[test]
    fn auc_examples() {
        assert_eq!(roc_auc(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]).unwrap(), 0.75);
        assert_eq!(roc_auc(&[0.5; 4], &[false, true, false, true]).unwrap(), 0.5);
        assert_eq!(roc_auc(&[0.5; 2], &[true, true]), Err(EvalError::SingleClassPresent));
    }

    proptest! {
        #[test]
        fn plans_separate_subjects(n in 2usize..40, k in 2usize..12, frac in 0.05f64..0.95, seed in any::<u64>()) {
            let s = subjects(n);
            let h = subject_holdout_split(&s, frac, seed).unwrap();
            prop_assert!(h.is_subject_separated());
            prop_assert_eq!(h.folds[0].train.len() + h.folds[0].test.len(), n);
            if k <= n {
                let p = grouped_kfold(&s, k, seed).unwrap();
                prop_assert!(p.is_subject_separated());
                let mut all: Vec<String> = p.folds.iter().flat_map(|f| f.test.clone()).collect();
                all.sort();
                prop_assert_eq!(all, s.clone());
            }
            let l = loso_folds(&s).unwrap();
            prop_assert_eq!(l.folds.len(), n);
            prop_assert!(l.is_subject_separated());
        }

        #[test]
        fn auc_invariant_to_monotone_transform(v in prop::collection::vec((-5.0f64..5.0, any::<bool>()), 2..60)) {
            let (s, y): (Vec<f64>, Vec<bool>) = v.into_iter().unzip();
            prop_assume!(y.iter().any(|&b| b) && y.iter().any(|&b| !b));
            let a = roc_auc(&s, &y).unwrap();
            let t: Vec<f64> = s.iter().map(|x| x.exp() * 3.0 + 1.0).collect();
            prop_assert_eq!(a, roc_auc(&t, &y).unwrap());
            // pairwise definition
            let mut num = 0.0;
            let mut den = 0.0;
            for i in 0..s.len() {
                for j in 0..s.len() {
                    if y[i] && !y[j] {
                        den += 1.0;
                        num += if s[i] > s[j] { 1.0 } else if s[i] == s[j] { 0.5 } else { 0.0 };
                    }
                }
            }
            prop_assert!((a - num / den).abs() < 1e-12);
        }

        #[test]
        fn weighted_f1_bounds(t in prop::collection::vec(0usize..3, 1..50), p in prop::collection::vec(0usize..3, 50)) {
            let c: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
            let cm = confusion_matrix(&t, &p[..t.len()], &c).unwrap();
            let m = classification_metrics(&cm).unwrap();
            let present: Vec<f64> = m.per_class.iter().filter(|c| c.support > 0).map(|c| c.f1).collect();
            let lo = present.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = present.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(m.weighted_f1 >= lo - 1e-12 && m.weighted_f1 <= hi + 1e-12);
            let wr: f64 = m.per_class.iter().map(|c| c.recall * c.support as f64).sum::<f64>() / t.len() as f64;
            prop_assert!((wr - m.accuracy).abs() < 1e-12);
        }
    }

    #[test]
    fn loso_predictions_cover_every_window_once() {
        let mut d = crate::models::testdata::blobs(60, 2, 3);
        for (i, g) in d.groups.iter_mut().enumerate() {
            *g = format!("S{}", i % 6);
        }
        let plan = loso_folds(&d.subjects()).unwrap();
        let r = run_plan(&d, &plan, &[ModelConfig::preset("logistic").unwrap()], 1).unwrap();
        assert_eq!(r.per_fold.len(), 6);
        assert_eq!(r.predictions.iter().map(|p| p.row).collect::<Vec<_>>(), (0..60).collect::<Vec<_>>());
        assert_eq!(r.confusion.total(), 60);
        assert_eq!(r.aggregate.pooled.accuracy, 1.0);
    }

    #[test]
    fn tuning_picks_a_candidate() {
        let mut d = crate::models::testdata::rings(90, 2);
        for (i, g) in d.groups.iter_mut().enumerate() {
            *g = format!("S{}", i % 9);
        }
        let grid = [
            ModelConfig::preset("logistic").unwrap(),
            ModelConfig::Boosting(crate::models::BoostingParams { n_rounds: 30, ..Default::default() }),
        ];
        let (best, scores) = tune_grid(&d, &grid, 3, 0).unwrap();
        assert_eq!(best, 1, "{scores:?}");
        let plan = grouped_kfold(&d.subjects(), 3, 0).unwrap();
        let r = run_plan(&d, &plan, &grid, 0).unwrap();
        assert!(r.per_fold.iter().all(|f| f.model.kind_name() == "boosting"));
    }
}
