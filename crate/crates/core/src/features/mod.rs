//! Window features and the assembled multimodal feature vector.

mod extract;
pub mod peaks;

pub use extract::*;

use std::collections::BTreeSet;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fmt::{fmt_full, fmt_sig9};
use crate::ingest::Modality;
use crate::windowing::Window;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("need at least {needed} beats, got {got}")]
    InsufficientBeats { needed: usize, got: usize },
    #[error("window lacks required modality {0}")]
    MissingRequiredModality(Modality),
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("feature csv: {0}")]
    Csv(String),
}

/// A family of features computed together from one source stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureBlock {
    Eda,
    Temp,
    /// Mean and std of the 1 Hz HR channel.
    HrStats,
    /// SDNN and RMSSD from the IBI stream.
    IbiHrv,
    /// SDNN and RMSSD from BVP systolic peaks.
    BvpHrv,
    /// BVP mean amplitude and energy.
    BvpMorph,
    Acc,
}

/// One column of the feature matrix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureColumn {
    pub name: String,
    /// Ablation group (EDA, TEMP, HR, HRV, BVP, ACC).
    pub group: String,
    pub unit: String,
}

const COLUMNS: &[(FeatureBlock, &str, &str, &str)] = &[
    (FeatureBlock::Eda, "eda_mean", "EDA", "uS"),
    (FeatureBlock::Eda, "eda_std", "EDA", "uS"),
    (FeatureBlock::Eda, "eda_slope", "EDA", "uS/s"),
    (FeatureBlock::Eda, "eda_scr_peaks", "EDA", "count"),
    (FeatureBlock::Temp, "temp_mean", "TEMP", "degC"),
    (FeatureBlock::Temp, "temp_std", "TEMP", "degC"),
    (FeatureBlock::HrStats, "hr_mean", "HR", "bpm"),
    (FeatureBlock::HrStats, "hr_std", "HR", "bpm"),
    (FeatureBlock::IbiHrv, "hrv_sdnn", "HR", "s"),
    (FeatureBlock::IbiHrv, "hrv_rmssd", "HR", "s"),
    (FeatureBlock::BvpHrv, "bvp_sdnn", "HRV", "s"),
    (FeatureBlock::BvpHrv, "bvp_rmssd", "HRV", "s"),
    (FeatureBlock::BvpMorph, "bvp_amplitude", "BVP", "a.u."),
    (FeatureBlock::BvpMorph, "bvp_energy", "BVP", "a.u.^2"),
    (FeatureBlock::Acc, "acc_x_mean", "ACC", "g"),
    (FeatureBlock::Acc, "acc_x_std", "ACC", "g"),
    (FeatureBlock::Acc, "acc_y_mean", "ACC", "g"),
    (FeatureBlock::Acc, "acc_y_std", "ACC", "g"),
    (FeatureBlock::Acc, "acc_z_mean", "ACC", "g"),
    (FeatureBlock::Acc, "acc_z_std", "ACC", "g"),
];

impl FeatureBlock {
    pub fn columns(self) -> Vec<FeatureColumn> {
        COLUMNS
            .iter()
            .filter(|c| c.0 == self)
            .map(|&(_, name, group, unit)| FeatureColumn {
                name: name.into(),
                group: group.into(),
                unit: unit.into(),
            })
            .collect()
    }

    /// Streams the block cannot be computed without.
    pub fn required_modalities(self) -> &'static [Modality] {
        match self {
            FeatureBlock::Eda => &[Modality::Eda],
            FeatureBlock::Temp => &[Modality::Temp],
            FeatureBlock::HrStats => &[Modality::Hr],
            FeatureBlock::IbiHrv => &[],
            FeatureBlock::BvpHrv | FeatureBlock::BvpMorph => &[Modality::Bvp],
            FeatureBlock::Acc => &[Modality::AccX, Modality::AccY, Modality::AccZ],
        }
    }

    /// Whether values may be absent (too few beats in the window).
    pub fn optional(self) -> bool {
        matches!(self, FeatureBlock::IbiHrv | FeatureBlock::BvpHrv)
    }
}

/// Looks up a column by feature name.
pub fn column_by_name(name: &str) -> Option<FeatureColumn> {
    COLUMNS
        .iter()
        .find(|c| c.1 == name)
        .map(|&(_, name, group, unit)| FeatureColumn {
            name: name.into(),
            group: group.into(),
            unit: unit.into(),
        })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub blocks: Vec<FeatureBlock>,
    pub columns: Vec<FeatureColumn>,
}

pub const MIN_FEATURES: usize = 10;
pub const MAX_FEATURES: usize = 18;

impl FeatureSchema {
    pub fn new(blocks: Vec<FeatureBlock>) -> Result<Self, FeatureError> {
        let unique: BTreeSet<_> = blocks.iter().collect();
        if unique.len() != blocks.len() {
            return Err(FeatureError::SchemaMismatch("duplicate feature block".into()));
        }
        let columns: Vec<FeatureColumn> = blocks.iter().flat_map(|b| b.columns()).collect();
        if !(MIN_FEATURES..=MAX_FEATURES).contains(&columns.len()) {
            return Err(FeatureError::SchemaMismatch(format!(
                "{} features; schemas must have {MIN_FEATURES}-{MAX_FEATURES}",
                columns.len()
            )));
        }
        Ok(Self { blocks, columns })
    }

    /// Named presets: `d1` (16), `d1-14`, `d2` (18), `d3` (16).
    pub fn preset(name: &str) -> Result<Self, FeatureError> {
        use FeatureBlock::*;
        let blocks = match name {
            "d1" => vec![Eda, Temp, HrStats, IbiHrv, Acc],
            "d1-14" => vec![Eda, Temp, HrStats, Acc],
            "d2" => vec![Eda, Temp, HrStats, IbiHrv, Acc, BvpMorph],
            "d3" => vec![Eda, Temp, BvpHrv, Acc, BvpMorph],
            other => {
                return Err(FeatureError::SchemaMismatch(format!("unknown schema preset {other:?}")))
            }
        };
        Self::new(blocks)
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.name.clone()).collect()
    }

    pub fn required_modalities(&self) -> BTreeSet<Modality> {
        self.blocks
            .iter()
            .flat_map(|b| b.required_modalities().iter().copied())
            .collect()
    }

    /// Ablation groups in first-appearance order.
    pub fn groups(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for c in &self.columns {
            if !out.contains(&c.group) {
                out.push(c.group.clone());
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureConfig {
    #[serde(default)]
    pub scr: ScrConfig,
    #[serde(default)]
    pub bvp: BvpPeakConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub subject_id: String,
    pub window_start: f64,
    pub label: String,
    /// `None` marks an absent optional feature.
    pub values: Vec<Option<f64>>,
}

fn channel<'a>(w: &'a Window, m: Modality) -> Result<&'a [f64], FeatureError> {
    w.channel(m)
        .map(|s| s.values.as_slice())
        .filter(|v| !v.is_empty())
        .ok_or(FeatureError::MissingRequiredModality(m))
}

/// Computes every block of `schema` on one window, in schema order.
pub fn assemble(w: &Window, schema: &FeatureSchema, cfg: &FeatureConfig) -> Result<FeatureVector, FeatureError> {
    let mut values: Vec<Option<f64>> = Vec::with_capacity(schema.len());
    for block in &schema.blocks {
        match block {
            FeatureBlock::Eda => {
                let rate = w.channel(Modality::Eda).map(|s| s.rate_hz).unwrap_or(4.0);
                let f = eda_features(channel(w, Modality::Eda)?, rate, &cfg.scr)?;
                values.extend(f.map(Some));
            }
            FeatureBlock::Temp => values.extend(temp_features(channel(w, Modality::Temp)?)?.map(Some)),
            FeatureBlock::HrStats => {
                let hr = channel(w, Modality::Hr)?;
                values.extend([Some(mean(hr)), Some(pop_std(hr))]);
            }
            FeatureBlock::IbiHrv => {
                let durations: Vec<f64> = w.ibi.iter().map(|e| e.duration_s).collect();
                match hrv_stats(&durations) {
                    Ok(h) => values.extend([Some(h.sdnn), Some(h.rmssd)]),
                    Err(_) => values.extend([None, None]),
                }
            }
            FeatureBlock::BvpHrv => {
                let bvp = channel(w, Modality::Bvp)?;
                let slice = w.channel(Modality::Bvp).expect("checked above");
                let peaks = detect_bvp_peaks(bvp, slice.start_epoch, slice.rate_hz, &cfg.bvp);
                match hrv_from_peaks(&peaks) {
                    Ok(h) => values.extend([Some(h.sdnn), Some(h.rmssd)]),
                    Err(_) => values.extend([None, None]),
                }
            }
            FeatureBlock::BvpMorph => values.extend(bvp_features(channel(w, Modality::Bvp)?)?.map(Some)),
            FeatureBlock::Acc => {
                let f = acc_features(
                    channel(w, Modality::AccX)?,
                    channel(w, Modality::AccY)?,
                    channel(w, Modality::AccZ)?,
                )?;
                values.extend(f.map(Some));
            }
        }
    }
    if values.len() != schema.len() {
        return Err(FeatureError::SchemaMismatch(format!(
            "assembled {} values for a {}-column schema",
            values.len(),
            schema.len()
        )));
    }
    if values.iter().flatten().any(|v| !v.is_finite()) {
        return Err(FeatureError::SchemaMismatch("non-finite feature value".into()));
    }
    Ok(FeatureVector {
        subject_id: w.subject_id.clone(),
        window_start: w.t_start,
        label: w.label.clone(),
        values,
    })
}

/// Writes the feature matrix CSV. Absent values are empty fields.
pub fn write_feature_csv<W: Write>(out: W, columns: &[FeatureColumn], rows: &[FeatureVector]) -> Result<(), FeatureError> {
    let err = |e: csv::Error| FeatureError::Csv(e.to_string());
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["subject_id".to_string(), "window_start".into(), "label".into()];
    header.extend(columns.iter().map(|c| c.name.clone()));
    w.write_record(&header).map_err(err)?;
    for r in rows {
        let mut rec = vec![r.subject_id.clone(), fmt_full(r.window_start), r.label.clone()];
        rec.extend(r.values.iter().map(|v| v.map(fmt_sig9).unwrap_or_default()));
        w.write_record(&rec).map_err(err)?;
    }
    w.flush().map_err(|e| FeatureError::Csv(e.to_string()))
}

pub fn read_feature_csv<R: Read>(input: R) -> Result<(Vec<FeatureColumn>, Vec<FeatureVector>), FeatureError> {
    let err = |e: csv::Error| FeatureError::Csv(e.to_string());
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers().map_err(err)?.clone();
    let fixed = ["subject_id", "window_start", "label"];
    if header.len() < 4 || header.iter().take(3).ne(fixed) {
        return Err(FeatureError::Csv(
            "header must start with subject_id,window_start,label".into(),
        ));
    }
    let columns = header
        .iter()
        .skip(3)
        .map(|name| {
            column_by_name(name).ok_or_else(|| FeatureError::SchemaMismatch(format!("unknown feature {name:?}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(err)?;
        let bad = |what: &str| FeatureError::Csv(format!("row {}: bad {what}", i + 2));
        let window_start: f64 = rec[1].parse().map_err(|_| bad("window_start"))?;
        let values = rec
            .iter()
            .skip(3)
            .map(|f| {
                if f.is_empty() {
                    Ok(None)
                } else {
                    f.parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .map(Some)
                        .ok_or_else(|| bad("value"))
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(FeatureVector {
            subject_id: rec[0].to_string(),
            window_start,
            label: rec[2].to_string(),
            values,
        });
    }
    Ok((columns, rows))
}
