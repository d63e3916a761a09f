//! Command-line front end: run configuration, subcommands and report files.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::ablation::{self, AblationError};
use crate::eval::{self, EvalError, SplitSpec};
use crate::explain::{self, ExplainError, LOCAL_ACCURACY_TOL};
use crate::features::{read_feature_csv, write_feature_csv, FeatureConfig, FeatureError, FeatureSchema};
use crate::ingest::{load_manifest, IngestError, Manifest};
use crate::models::{self, DataMatrix, ModelConfig, ModelError, ModelParams, TrainedModel};
use crate::pipeline::{self, PipelineError};
use crate::stats::Correction;
use crate::synth::{self, SynthConfig, SynthError};
use crate::windowing::WindowPolicy;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;

/// Failure classes mapped to the process exit code.
#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    Config(String),
    Data(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Data(_) => EXIT_DATA,
        }
    }

    fn to_json(&self) -> Value {
        let (kind, message) = match self {
            CliError::Config(m) => ("config", m),
            CliError::Data(m) => ("data", m),
        };
        json!({"error": {"code": self.code(), "kind": kind, "message": message}})
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::InvalidConfig(_) | ModelError::NonPositiveSigma => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::InvalidSplit(_) => CliError::Config(e.to_string()),
            EvalError::Model { ref source, .. } if matches!(source, ModelError::InvalidConfig(_)) => {
                CliError::Config(e.to_string())
            }
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<AblationError> for CliError {
    fn from(e: AblationError) -> Self {
        match e {
            AblationError::NotBoosting(_) => CliError::Config(e.to_string()),
            AblationError::Eval(inner) => inner.into(),
            AblationError::Io(m) => CliError::Data(m),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<ExplainError> for CliError {
    fn from(e: ExplainError) -> Self {
        match e {
            ExplainError::Unsupported(_) => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<FeatureError> for CliError {
    fn from(e: FeatureError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::Io(_) | SynthError::BlowUp { .. } => CliError::Data(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

fn io_error(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

fn default_window() -> WindowPolicy {
    WindowPolicy::new(30.0, 15.0)
}

fn default_schema() -> String {
    "d1".into()
}

fn default_model() -> ModelConfig {
    ModelConfig::preset("xgboost").expect("preset exists")
}

fn default_alpha() -> f64 {
    0.05
}

fn default_ablation_folds() -> usize {
    ablation::DEFAULT_FOLDS
}

fn default_synth_preset() -> String {
    "interaction".into()
}

/// Everything a run depends on. `out` and `jobs` only steer where and how fast
/// a run happens, so they are left out of the provenance copy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub dataset: Option<String>,
    #[serde(default)]
    pub manifest: Option<PathBuf>,
    /// Feature CSV to use instead of extracting from the manifest.
    #[serde(default)]
    pub features: Option<PathBuf>,
    #[serde(default = "default_window")]
    pub window: WindowPolicy,
    #[serde(default = "default_schema")]
    pub schema: String,
    #[serde(default)]
    pub feature_config: FeatureConfig,
    #[serde(default = "default_model")]
    pub model: ModelConfig,
    /// Candidate models; when non-empty each training set picks one by grouped 5-fold CV.
    #[serde(default)]
    pub tune_grid: Vec<ModelConfig>,
    #[serde(default)]
    pub split: SplitSpec,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub correction: Correction,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_ablation_folds")]
    pub ablation_folds: usize,
    #[serde(default)]
    pub model_path: Option<PathBuf>,
    #[serde(default = "default_synth_preset")]
    pub synth_preset: String,
    #[serde(default)]
    pub synth: Option<SynthConfig>,
    #[serde(default, skip_serializing)]
    pub out: Option<PathBuf>,
    #[serde(default, skip_serializing)]
    pub jobs: Option<usize>,
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        let cfg = |m: String| Err(CliError::Config(m));
        if let Err(e) = self.window.validate() {
            return cfg(e.to_string());
        }
        if let Err(e) = FeatureSchema::preset(&self.schema) {
            return cfg(e.to_string());
        }
        for m in std::iter::once(&self.model).chain(&self.tune_grid) {
            m.validate()?;
        }
        match self.split {
            SplitSpec::Holdout { test_fraction } if !(test_fraction > 0.0 && test_fraction < 1.0) => {
                return cfg(format!("split.test_fraction {test_fraction} not in (0, 1)"));
            }
            SplitSpec::Kfold { k } if k < 2 => return cfg(format!("split.k = {k}; need at least 2")),
            _ => {}
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return cfg(format!("alpha {} not in (0, 1)", self.alpha));
        }
        if self.ablation_folds < 2 {
            return cfg("ablation_folds must be at least 2".into());
        }
        if self.jobs == Some(0) {
            return cfg("jobs must be positive".into());
        }
        if let Some(s) = &self.synth {
            s.validate()?;
        }
        Ok(())
    }

    pub fn synth_config(&self) -> Result<SynthConfig, CliError> {
        match &self.synth {
            Some(s) => Ok(s.clone()),
            None => Ok(SynthConfig::preset(&self.synth_preset)?),
        }
    }

    fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("out"))
    }
}

#[derive(Debug, Parser)]
#[command(name = "physio-bench", version, about = "Wearable physiology benchmarking pipeline")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub flags: Flags,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Window the manifest sessions and write the feature matrix CSV.
    Extract,
    /// Fit the configured model on all windows and save it.
    Train,
    /// Subject-separated evaluation with the configured split.
    Evaluate,
    /// Leave-one-subject-out evaluation with per-subject accuracy.
    Loso,
    /// Modality ablation against the full feature set.
    Ablate,
    /// SHAP attributions for a linear or tree-ensemble model.
    Explain,
    /// Generate a synthetic cohort in E4 format with a manifest.
    Synth,
    /// Per-subject and cross-subject channel mean and std.
    Summary,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Extract => "extract",
            Command::Train => "train",
            Command::Evaluate => "evaluate",
            Command::Loso => "loso",
            Command::Ablate => "ablate",
            Command::Explain => "explain",
            Command::Synth => "synth",
            Command::Summary => "summary",
        }
    }
}

/// Flags override the same-named config fields.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct Flags {
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Output directory (default `out`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub dataset: Option<String>,
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    #[arg(long, global = true)]
    pub features: Option<PathBuf>,
    #[arg(long, global = true)]
    pub window_s: Option<f64>,
    #[arg(long, global = true)]
    pub stride_s: Option<f64>,
    #[arg(long, global = true)]
    pub min_fill: Option<f64>,
    /// strict or majority.
    #[arg(long, global = true)]
    pub label_rule: Option<String>,
    /// d1, d1-14, d2 or d3.
    #[arg(long, global = true)]
    pub schema: Option<String>,
    /// Model preset: logistic, knn, random_forest, gbm, xgboost, lightgbm, svm.
    #[arg(long, global = true)]
    pub model: Option<String>,
    /// holdout, kfold or loso.
    #[arg(long, global = true)]
    pub split: Option<String>,
    #[arg(long, global = true)]
    pub test_fraction: Option<f64>,
    #[arg(long, global = true)]
    pub k: Option<usize>,
    /// fdr or bonferroni.
    #[arg(long, global = true)]
    pub correction: Option<String>,
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    #[arg(long, global = true)]
    pub ablation_folds: Option<usize>,
    #[arg(long, global = true)]
    pub model_path: Option<PathBuf>,
    /// interaction, linear or activity.
    #[arg(long, global = true)]
    pub synth_preset: Option<String>,
    #[arg(long, global = true)]
    pub n_subjects: Option<usize>,
    #[arg(long, global = true)]
    pub segments_per_subject: Option<usize>,
    #[arg(long, global = true)]
    pub segment_s: Option<f64>,
    /// Any config field by dotted path, e.g. `--set model.n_rounds=50`. Values parse as JSON, else as strings.
    #[arg(long = "set", global = true, value_name = "PATH=VALUE")]
    pub set: Vec<String>,
}

fn set_path(root: &mut Value, path: &str, value: Value) -> Result<(), CliError> {
    let mut cur = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, p) in parts.iter().enumerate() {
        if p.is_empty() {
            return Err(CliError::Config(format!("bad config path {path:?}")));
        }
        if !cur.is_object() {
            *cur = json!({});
        }
        let obj = cur.as_object_mut().expect("object");
        if i + 1 == parts.len() {
            obj.insert(p.to_string(), value);
            return Ok(());
        }
        cur = obj.entry(p.to_string()).or_insert_with(|| json!({}));
    }
    Ok(())
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("config values serialize")
}

/// Merges the config file and flags, then parses and validates the result.
pub fn resolve_config(flags: &Flags, command: Command) -> Result<RunConfig, CliError> {
    let mut v = match &flags.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
        }
        None => json!({}),
    };
    if !v.is_object() {
        return Err(CliError::Config("run configuration must be a JSON object".into()));
    }
    let mut set = |path: &str, val: Value| set_path(&mut v, path, val);
    if let Some(x) = flags.seed {
        set("seed", json!(x))?;
    }
    if let Some(x) = flags.jobs {
        set("jobs", json!(x))?;
    }
    if let Some(x) = &flags.out {
        set("out", to_value(x))?;
    }
    if let Some(x) = &flags.dataset {
        set("dataset", json!(x))?;
    }
    if let Some(x) = &flags.manifest {
        set("manifest", to_value(x))?;
    }
    if let Some(x) = &flags.features {
        set("features", to_value(x))?;
    }
    if let Some(x) = flags.window_s {
        set("window.window_s", json!(x))?;
    }
    if let Some(x) = flags.stride_s {
        set("window.stride_s", json!(x))?;
    }
    if let Some(x) = flags.min_fill {
        set("window.min_fill", json!(x))?;
    }
    if let Some(x) = &flags.label_rule {
        set("window.label_rule", json!(x))?;
    }
    if let Some(x) = &flags.schema {
        set("schema", json!(x))?;
    }
    if let Some(x) = &flags.model {
        set("model", to_value(&ModelConfig::preset(x)?))?;
    }
    if let Some(x) = &flags.split {
        let method = match x.as_str() {
            "holdout" | "kfold" | "loso" => x.clone(),
            other => return Err(CliError::Config(format!("unknown split {other:?}"))),
        };
        set("split", json!({ "method": method }))?;
        if method == "holdout" && flags.test_fraction.is_none() {
            set("split.test_fraction", json!(0.2))?;
        }
        if method == "kfold" && flags.k.is_none() {
            set("split.k", json!(5))?;
        }
    }
    if let Some(x) = flags.test_fraction {
        set("split.test_fraction", json!(x))?;
    }
    if let Some(x) = flags.k {
        set("split.k", json!(x))?;
    }
    if let Some(x) = &flags.correction {
        let c: Correction = x.parse().map_err(|e: String| CliError::Config(e))?;
        set("correction", to_value(&c))?;
    }
    if let Some(x) = flags.alpha {
        set("alpha", json!(x))?;
    }
    if let Some(x) = flags.ablation_folds {
        set("ablation_folds", json!(x))?;
    }
    if let Some(x) = &flags.model_path {
        set("model_path", to_value(x))?;
    }
    if let Some(x) = &flags.synth_preset {
        set("synth_preset", json!(x))?;
    }
    let synth_flags = flags.n_subjects.is_some() || flags.segments_per_subject.is_some() || flags.segment_s.is_some();
    if command == Command::Synth || synth_flags {
        if v.get("synth").is_none_or(Value::is_null) {
            let preset = v.get("synth_preset").and_then(Value::as_str).unwrap_or("interaction").to_string();
            let base = SynthConfig::preset(&preset)?;
            set_path(&mut v, "synth", to_value(&base))?;
        }
        if let Some(x) = flags.n_subjects {
            set_path(&mut v, "synth.n_subjects", json!(x))?;
        }
        if let Some(x) = flags.segments_per_subject {
            set_path(&mut v, "synth.segments_per_subject", json!(x))?;
        }
        if let Some(x) = flags.segment_s {
            set_path(&mut v, "synth.segment_s", json!(x))?;
        }
    }
    for kv in &flags.set {
        let (path, raw) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("--set expects PATH=VALUE, got {kv:?}")))?;
        let val = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        if let Some((head, _)) = path.split_once('.') {
            if v.get(head).is_none_or(Value::is_null) {
                let defaults: Value = to_value(&serde_json::from_value::<RunConfig>(json!({})).expect("defaults parse"));
                if let Some(d) = defaults.get(head).filter(|d| d.is_object()) {
                    set_path(&mut v, head, d.clone())?;
                }
            }
        }
        set_path(&mut v, path, val)?;
    }
    let cfg: RunConfig = serde_json::from_value(v).map_err(|e| CliError::Config(format!("run configuration: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}

fn provenance(cfg: &RunConfig, command: Command) -> Value {
    json!({
        "tool": "physio-bench",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command.name(),
        "seed": cfg.seed,
        "config": to_value(cfg),
    })
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| io_error(path, e))?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn write_json(path: &Path, v: &Value) -> Result<(), CliError> {
    let mut s = serde_json::to_string_pretty(v).expect("values serialize");
    s.push('\n');
    write_bytes(path, s.as_bytes())
}

fn load_manifest_cfg(cfg: &RunConfig) -> Result<Manifest, CliError> {
    let path = cfg
        .manifest
        .as_ref()
        .ok_or_else(|| CliError::Config("no manifest given (--manifest)".into()))?;
    if !path.is_file() {
        return Err(CliError::Config(format!("manifest {} not found", path.display())));
    }
    load_manifest(path).map_err(|e| match e {
        IngestError::InvalidManifest(_) => CliError::Config(e.to_string()),
        _ => CliError::Data(e.to_string()),
    })
}

fn dataset_name(cfg: &RunConfig, fallback: &str) -> String {
    cfg.dataset.clone().unwrap_or_else(|| fallback.to_string())
}

/// The feature matrix from `features` if set, else extracted from `manifest`.
fn load_data(cfg: &RunConfig) -> Result<(DataMatrix, String), CliError> {
    let (columns, rows, name) = if let Some(path) = &cfg.features {
        let file = fs::File::open(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let (columns, rows) = read_feature_csv(std::io::BufReader::new(file))?;
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        (columns, rows, stem)
    } else {
        let manifest = load_manifest_cfg(cfg)?;
        let schema = FeatureSchema::preset(&cfg.schema).map_err(|e| CliError::Config(e.to_string()))?;
        let ex = pipeline::extract_manifest(&manifest, &cfg.window, &schema, &cfg.feature_config)?;
        (ex.columns, ex.rows, manifest.dataset.clone())
    };
    let data = DataMatrix::from_features(columns, &rows)?;
    if data.n_classes() < 2 {
        return Err(ModelError::SingleClass.into());
    }
    Ok((data, dataset_name(cfg, &name)))
}

fn fit(cfg: &RunConfig, data: &DataMatrix) -> Result<TrainedModel, CliError> {
    let chosen = if cfg.tune_grid.is_empty() {
        cfg.model.clone()
    } else {
        let (best, scores) = eval::tune_grid(data, &cfg.tune_grid, 5, cfg.seed)?;
        log::info!("tuning picked candidate {best} (mean macro F1 {:?})", scores);
        cfg.tune_grid[best].clone()
    };
    Ok(models::train(data, &chosen, cfg.seed)?)
}

fn cmd_extract(cfg: &RunConfig) -> Result<(), CliError> {
    let manifest = load_manifest_cfg(cfg)?;
    let schema = FeatureSchema::preset(&cfg.schema).map_err(|e| CliError::Config(e.to_string()))?;
    let ex = pipeline::extract_manifest(&manifest, &cfg.window, &schema, &cfg.feature_config)?;
    let out = cfg.out_dir();
    let mut csv = Vec::new();
    write_feature_csv(&mut csv, &ex.columns, &ex.rows)?;
    write_bytes(&out.join("features.csv"), &csv)?;
    let mut doc = provenance(cfg, Command::Extract);
    doc["dataset"] = json!(dataset_name(cfg, &manifest.dataset));
    doc["n_windows"] = json!(ex.rows.len());
    doc["columns"] = to_value(&ex.columns);
    doc["sessions"] = to_value(&ex.sessions);
    write_json(&out.join("extract.json"), &doc)
}

fn cmd_train(cfg: &RunConfig) -> Result<(), CliError> {
    let (data, dataset) = load_data(cfg)?;
    let model = fit(cfg, &data)?;
    let mut doc = provenance(cfg, Command::Train);
    doc["dataset"] = json!(dataset);
    doc["n_windows"] = json!(data.n_rows());
    doc["model"] = to_value(&model);
    write_json(&cfg.out_dir().join("model.json"), &doc)
}

fn evaluation(cfg: &RunConfig, split: &SplitSpec, command: Command) -> Result<(Value, eval::EvalReport, DataMatrix), CliError> {
    let (data, dataset) = load_data(cfg)?;
    let plan = eval::make_plan(split, &data.subjects(), cfg.seed)?;
    let candidates = if cfg.tune_grid.is_empty() {
        vec![cfg.model.clone()]
    } else {
        cfg.tune_grid.clone()
    };
    let report = eval::run_plan(&data, &plan, &candidates, cfg.seed)?;
    let mut doc = provenance(cfg, command);
    doc["dataset"] = json!(dataset);
    doc["model"] = to_value(&cfg.model);
    doc["split"] = json!({"spec": to_value(split), "plan": to_value(&plan)});
    doc["per_fold"] = to_value(&report.per_fold);
    doc["aggregate"] = to_value(&report.aggregate);
    doc["confusion"] = to_value(&report.confusion);
    Ok((doc, report, data))
}

fn cmd_evaluate(cfg: &RunConfig) -> Result<(), CliError> {
    let (doc, report, _) = evaluation(cfg, &cfg.split, Command::Evaluate)?;
    log::info!(
        "macro F1 {:.4} +/- {:.4} across {} folds",
        report.aggregate.across_folds.macro_f1.mean,
        report.aggregate.across_folds.macro_f1.std,
        report.per_fold.len()
    );
    write_json(&cfg.out_dir().join("results.json"), &doc)
}

fn cmd_loso(cfg: &RunConfig) -> Result<(), CliError> {
    let (doc, report, _) = evaluation(cfg, &SplitSpec::Loso, Command::Loso)?;
    let out = cfg.out_dir();
    write_json(&out.join("results.json"), &doc)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| CliError::Data(e.to_string());
    w.write_record(["subject_id", "n_windows", "accuracy", "macro_f1"]).map_err(csv_err)?;
    for f in &report.per_fold {
        w.write_record([
            f.fold.clone(),
            f.n_test.to_string(),
            crate::fmt::fmt_sig9(f.metrics.accuracy),
            crate::fmt::fmt_sig9(f.metrics.macro_f1),
        ])
        .map_err(csv_err)?;
    }
    let agg = &report.aggregate.across_folds;
    w.write_record([
        "mean".to_string(),
        report.per_fold.iter().map(|f| f.n_test).sum::<usize>().to_string(),
        crate::fmt::fmt_sig9(agg.accuracy.mean),
        crate::fmt::fmt_sig9(agg.macro_f1.mean),
    ])
    .map_err(csv_err)?;
    let bytes = w.into_inner().map_err(|e| CliError::Data(e.to_string()))?;
    write_bytes(&out.join("loso_subjects.csv"), &bytes)
}

fn cmd_ablate(cfg: &RunConfig) -> Result<(), CliError> {
    let (data, dataset) = load_data(cfg)?;
    let report = ablation::run_ablation(&data, &cfg.model, cfg.ablation_folds, cfg.seed, cfg.alpha, cfg.correction)?;
    let out = cfg.out_dir();
    let mut csv = Vec::new();
    ablation::write_ablation_csv(&mut csv, &report)?;
    write_bytes(&out.join("ablation.csv"), &csv)?;
    let mut doc = provenance(cfg, Command::Ablate);
    doc["dataset"] = json!(dataset);
    doc["report"] = to_value(&report);
    write_json(&out.join("ablation.json"), &doc)
}

fn cmd_explain(cfg: &RunConfig) -> Result<(), CliError> {
    let model = match &cfg.model_path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            let v: Value = serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            let m = v.get("model").cloned().unwrap_or(v);
            TrainedModel::from_json(&m.to_string())?
        }
        None => {
            if !matches!(cfg.model, ModelConfig::Logistic(_) | ModelConfig::Bagging(_) | ModelConfig::Boosting(_)) {
                return Err(ExplainError::Unsupported(cfg.model.kind_name().into()).into());
            }
            let (data, _) = load_data(cfg)?;
            fit(cfg, &data)?
        }
    };
    if !matches!(model.params, ModelParams::Linear(_) | ModelParams::Trees(_)) {
        return Err(ExplainError::Unsupported(model.kind_name().into()).into());
    }
    let (data, dataset) = load_data(cfg)?;
    let data = DataMatrix::with_classes(data.columns.clone(), model.classes.clone(), &to_vectors(&data))
        .map_err(|e| CliError::Data(format!("data does not match the model: {e}")))?;
    model.check_schema(&data)?;
    let attrs = explain::explain_model(&model, &data)?;
    let features = data.feature_names();
    let importance = explain::global_importance(&attrs, &features)?;
    let summary = explain::class_summary(&attrs, &data.labels, &data.rows, &features, &data.classes)?;
    let errors: Vec<f64> = attrs.iter().map(|a| a.local_accuracy_error()).collect();
    let max_err = errors.iter().copied().fold(0.0, f64::max);
    let passed = errors.iter().filter(|&&e| e <= LOCAL_ACCURACY_TOL).count();

    let out = cfg.out_dir();
    let mut csv = Vec::new();
    explain::write_attributions_csv(&mut csv, &attrs, &data.rows, &features, &data.classes)?;
    write_bytes(&out.join("attributions.csv"), &csv)?;
    let mut csv = Vec::new();
    explain::write_class_summary_csv(&mut csv, &summary)?;
    write_bytes(&out.join("class_summary.csv"), &csv)?;
    let mut doc = provenance(cfg, Command::Explain);
    doc["dataset"] = json!(dataset);
    doc["model_kind"] = json!(model.kind_name());
    doc["n_windows"] = json!(attrs.len());
    doc["local_accuracy"] = json!({
        "tolerance": LOCAL_ACCURACY_TOL,
        "max_error": max_err,
        "passed": passed,
        "passed_fraction": passed as f64 / attrs.len() as f64,
    });
    doc["global_importance"] = to_value(&importance);
    doc["class_summary"] = to_value(&summary);
    write_json(&out.join("explanation.json"), &doc)
}

fn to_vectors(data: &DataMatrix) -> Vec<crate::features::FeatureVector> {
    (0..data.n_rows())
        .map(|i| crate::features::FeatureVector {
            subject_id: data.groups[i].clone(),
            window_start: data.window_starts[i],
            label: data.classes[data.labels[i]].clone(),
            values: data.rows[i].iter().map(|&v| (!v.is_nan()).then_some(v)).collect(),
        })
        .collect()
}

fn cmd_synth(cfg: &RunConfig) -> Result<(), CliError> {
    let scfg = cfg.synth_config()?;
    let cohort = synth::generate_cohort(&scfg, cfg.seed)?;
    let out = cfg.out_dir();
    let manifest = synth::write_cohort(&out, &scfg, &cohort)?;
    log::info!("{} sessions, manifest {}", cohort.len(), manifest.display());
    let mut doc = provenance(cfg, Command::Synth);
    doc["synth"] = to_value(&scfg);
    doc["truth"] = cohort
        .iter()
        .map(|s| json!({"subject_id": s.recording.subject_id, "segments": to_value(&s.truth)}))
        .collect();
    write_json(&out.join("synth.json"), &doc)
}

fn cmd_summary(cfg: &RunConfig) -> Result<(), CliError> {
    let manifest = load_manifest_cfg(cfg)?;
    let (recs, failed) = pipeline::load_recordings(&manifest);
    if recs.is_empty() {
        return Err(CliError::Data("no session could be loaded".into()));
    }
    let summary = pipeline::summarize(&recs);
    let mut doc = provenance(cfg, Command::Summary);
    doc["dataset"] = json!(dataset_name(cfg, &manifest.dataset));
    doc["summary"] = to_value(&summary);
    doc["skipped"] = to_value(&failed);
    write_json(&cfg.out_dir().join("summary.json"), &doc)
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = resolve_config(&cli.flags, cli.command)?;
    let work = || match cli.command {
        Command::Extract => cmd_extract(&cfg),
        Command::Train => cmd_train(&cfg),
        Command::Evaluate => cmd_evaluate(&cfg),
        Command::Loso => cmd_loso(&cfg),
        Command::Ablate => cmd_ablate(&cfg),
        Command::Explain => cmd_explain(&cfg),
        Command::Synth => cmd_synth(&cfg),
        Command::Summary => cmd_summary(&cfg),
    };
    match cfg.jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Config(e.to_string()))?
            .install(work),
        None => work(),
    }
}

fn init_logging() {
    let filter = std::env::var("PHYSIO_BENCH_LOG").unwrap_or_else(|_| "info".into());
    let _ = env_logger::Builder::new()
        .parse_filters(&filter)
        .target(env_logger::Target::Stderr)
        .format(|buf, r| {
            let stage = r.target().rsplit("::").next().unwrap_or("main");
            writeln!(buf, "level={} stage={} msg={}", r.level(), stage, r.args())
        })
        .try_init();
}

/// Parses arguments, runs the command and returns the exit code.
pub fn main() -> i32 {
    init_logging();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return 0;
        }
        Err(e) => {
            let err = CliError::Config(e.to_string().trim().to_string());
            eprintln!("{}", err.to_json());
            return err.code();
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            log::error!("{}", e.to_json()["error"]["message"]);
            eprintln!("{}", e.to_json());
            e.code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("physio-bench").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn flags_override_config() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.json");
        fs::write(&p, r#"{"seed": 3, "schema": "d2", "split": {"method": "kfold", "k": 4}}"#).unwrap();
        let cli = parse(&["evaluate", "--config", p.to_str().unwrap(), "--seed", "9", "--model", "logistic"]);
        let cfg = resolve_config(&cli.flags, cli.command).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.schema, "d2");
        assert_eq!(cfg.split, SplitSpec::Kfold { k: 4 });
        assert_eq!(cfg.model.kind_name(), "logistic");

        let cli = parse(&["evaluate", "--split", "loso", "--set", "model.n_rounds=7"]);
        let cfg = resolve_config(&cli.flags, cli.command).unwrap();
        assert_eq!(cfg.split, SplitSpec::Loso);
        match cfg.model {
            ModelConfig::Boosting(b) => assert_eq!(b.n_rounds, 7),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_configs_are_config_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.json");
        fs::write(&p, r#"{"sed": 3}"#).unwrap();
        let cli = parse(&["evaluate", "--config", p.to_str().unwrap()]);
        assert_eq!(resolve_config(&cli.flags, cli.command).unwrap_err().code(), EXIT_CONFIG);
        let cli = parse(&["evaluate", "--set", "model.depth=3"]);
        assert_eq!(resolve_config(&cli.flags, cli.command).unwrap_err().code(), EXIT_CONFIG);
        let cli = parse(&["evaluate", "--test-fraction", "1.5"]);
        assert_eq!(resolve_config(&cli.flags, cli.command).unwrap_err().code(), EXIT_CONFIG);
        let cli = parse(&["extract", "--manifest", "/nonexistent/manifest.json"]);
        assert_eq!(run(&cli).unwrap_err().code(), EXIT_CONFIG);
    }

    #[test]
    fn provenance_omits_run_location() {
        let cli = parse(&["synth", "--out", "x", "--jobs", "2", "--n-subjects", "4"]);
        let cfg = resolve_config(&cli.flags, cli.command).unwrap();
        assert_eq!(cfg.synth.as_ref().unwrap().n_subjects, 4);
        let v = provenance(&cfg, Command::Synth);
        assert!(v["config"].get("out").is_none() && v["config"].get("jobs").is_none());
        let back: RunConfig = serde_json::from_value(v["config"].clone()).unwrap();
        assert_eq!(back.synth, cfg.synth);
    }
}
