//! Modality ablation: All, No_X and Only_X configurations compared against All.

use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::{self, EvalError, Fold, MeanStd, SplitPlan};
use crate::fmt::fmt_sig9;
use crate::models::{DataMatrix, ModelConfig};
use crate::stats::{self, Correction, StatsError, TestResult};

pub const DEFAULT_FOLDS: usize = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AblationError {
    #[error("ablation needs at least two modalities, found {0}")]
    TooFewModalities(usize),
    #[error("configuration {0} keeps no feature columns")]
    EmptyMask(String),
    #[error("ablation runs the boosting classifier, got {0}")]
    NotBoosting(String),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{config}: {source}")]
    Stats { config: String, source: StatsError },
    #[error("io: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationConfig {
    pub name: String,
    pub retained: Vec<String>,
}

/// Modality groups of the matrix columns in first-appearance order.
pub fn modalities(data: &DataMatrix) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for c in &data.columns {
        if !out.contains(&c.group) {
            out.push(c.group.clone());
        }
    }
    out
}

pub fn enumerate_configs(modalities: &[String]) -> Result<Vec<AblationConfig>, AblationError> {
    if modalities.len() < 2 {
        return Err(AblationError::TooFewModalities(modalities.len()));
    }
    let mut out = vec![AblationConfig {
        name: "All".into(),
        retained: modalities.to_vec(),
    }];
    for m in modalities {
        out.push(AblationConfig {
            name: format!("No_{m}"),
            retained: modalities.iter().filter(|x| *x != m).cloned().collect(),
        });
    }
    for m in modalities {
        out.push(AblationConfig {
            name: format!("Only_{m}"),
            retained: vec![m.clone()],
        });
    }
    Ok(out)
}

pub fn mask_features(data: &DataMatrix, config: &AblationConfig) -> Result<DataMatrix, AblationError> {
    let cols: Vec<usize> = (0..data.n_cols())
        .filter(|&j| config.retained.contains(&data.columns[j].group))
        .collect();
    if cols.is_empty() {
        return Err(AblationError::EmptyMask(config.name.clone()));
    }
    Ok(data.select_columns(&cols))
}

/// Grouped k-fold balanced by label at subject granularity. Each subject is
/// keyed by its majority label (ties to the lower class index); subjects are
/// shuffled within each label and dealt to folds round-robin with one counter
/// running across labels.
pub fn stratified_grouped_kfold(data: &DataMatrix, k: usize, seed: u64) -> Result<SplitPlan, AblationError> {
    let subjects = data.subjects();
    if subjects.len() < 2 {
        return Err(EvalError::TooFewSubjects(subjects.len()).into());
    }
    if k < 2 {
        return Err(EvalError::InvalidSplit(format!("k = {k}; need at least 2 folds")).into());
    }
    if k > subjects.len() {
        return Err(EvalError::KExceedsSubjects { k, n: subjects.len() }.into());
    }
    let mut counts: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (g, &y) in data.groups.iter().zip(&data.labels) {
        counts.entry(g.as_str()).or_insert_with(|| vec![0; data.n_classes()])[y] += 1;
    }
    let mut by_label: Vec<Vec<String>> = vec![Vec::new(); data.n_classes()];
    for (s, c) in &counts {
        by_label[crate::models::argmax(&c.iter().map(|&v| v as f64).collect::<Vec<_>>())].push(s.to_string());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tests: Vec<Vec<String>> = vec![Vec::new(); k];
    let mut next = 0;
    for group in &mut by_label {
        group.shuffle(&mut rng);
        for s in group.iter() {
            tests[next % k].push(s.clone());
            next += 1;
        }
    }
    let folds = tests
        .into_iter()
        .enumerate()
        .map(|(f, mut test)| {
            test.sort();
            Fold {
                name: format!("fold{f}"),
                train: subjects.iter().filter(|s| !test.contains(s)).cloned().collect(),
                test,
            }
        })
        .collect();
    Ok(SplitPlan {
        method: "stratified_grouped_kfold".into(),
        seed: Some(seed),
        folds,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub config: String,
    pub retained: Vec<String>,
    pub n_features: usize,
    pub f1: MeanStd,
    pub accuracy: MeanStd,
    pub fold_f1: Vec<f64>,
    pub fold_accuracy: Vec<f64>,
    /// Macro-F1 comparison against All over the shared folds.
    pub test: TestResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub model: ModelConfig,
    pub k: usize,
    pub seed: u64,
    pub alpha: f64,
    pub correction: Correction,
    pub plan: SplitPlan,
    pub rows: Vec<AblationRow>,
}

pub fn run_ablation(
    data: &DataMatrix,
    model: &ModelConfig,
    k: usize,
    seed: u64,
    alpha: f64,
    correction: Correction,
) -> Result<AblationReport, AblationError> {
    if !matches!(model, ModelConfig::Boosting(_)) {
        return Err(AblationError::NotBoosting(model.kind_name().into()));
    }
    let configs = enumerate_configs(&modalities(data))?;
    let plan = stratified_grouped_kfold(data, k, seed)?;
    let masked = configs
        .iter()
        .map(|c| mask_features(data, c))
        .collect::<Result<Vec<_>, _>>()?;
    let scores = masked
        .par_iter()
        .map(|m| {
            let r = eval::run_plan(m, &plan, std::slice::from_ref(model), seed)?;
            let f1: Vec<f64> = r.per_fold.iter().map(|f| f.metrics.macro_f1).collect();
            let acc: Vec<f64> = r.per_fold.iter().map(|f| f.metrics.accuracy).collect();
            Ok((f1, acc))
        })
        .collect::<Result<Vec<_>, EvalError>>()?;

    let baseline = scores[0].0.clone();
    let mut rows = Vec::with_capacity(configs.len());
    for ((c, m), (f1, acc)) in configs.iter().zip(&masked).zip(scores) {
        let test = stats::compare_to_baseline(&baseline, &f1).map_err(|source| AblationError::Stats {
            config: c.name.clone(),
            source,
        })?;
        rows.push(AblationRow {
            config: c.name.clone(),
            retained: c.retained.clone(),
            n_features: m.n_cols(),
            f1: MeanStd::of(&f1),
            accuracy: MeanStd::of(&acc),
            fold_f1: f1,
            fold_accuracy: acc,
            test,
        });
    }
    let mut batch: Vec<TestResult> = rows[1..].iter().map(|r| r.test.clone()).collect();
    stats::apply_correction(&mut batch, alpha, correction);
    for (r, t) in rows[1..].iter_mut().zip(batch) {
        r.test = t;
    }
    log::info!("ablation: {} configs x {} folds", rows.len(), plan.folds.len());
    Ok(AblationReport {
        model: model.clone(),
        k,
        seed,
        alpha,
        correction,
        plan,
        rows,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_sig9).unwrap_or_default()
}

/// One line per configuration in table order.
pub fn write_ablation_csv<W: Write>(out: W, report: &AblationReport) -> Result<(), AblationError> {
    let io = |e: csv::Error| AblationError::Io(e.to_string());
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "Config", "F1_mean", "F1_std", "Acc_mean", "Acc_std", "Shapiro_p", "Test", "Stat", "p_raw", "p_corrected", "d",
        "Sig",
    ])
    .map_err(io)?;
    for r in &report.rows {
        let t = &r.test;
        w.write_record([
            r.config.clone(),
            fmt_sig9(r.f1.mean),
            fmt_sig9(r.f1.std),
            fmt_sig9(r.accuracy.mean),
            fmt_sig9(r.accuracy.std),
            opt(t.normality_p),
            t.test_name.clone(),
            fmt_sig9(t.statistic),
            fmt_sig9(t.p_value),
            fmt_sig9(t.p_corrected),
            opt(t.effect_size_d),
            if t.significant { "Yes" } else { "No" }.into(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| AblationError::Io(e.to_string()))
}
