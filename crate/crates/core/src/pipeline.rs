//! Recording to feature-matrix composition and channel summaries.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::MeanStd;
use crate::features::{assemble, mean, pop_std, FeatureColumn, FeatureConfig, FeatureSchema, FeatureVector};
use crate::ingest::{load_session, IngestError, Manifest, Modality, Recording};
use crate::windowing::{normalize_recording, segment, WindowPolicy};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error("no session produced any window")]
    NoWindows,
    #[error(transparent)]
    Ingest(#[from] IngestError),
}

/// What happened to one session during extraction.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SessionLog {
    pub subject_id: String,
    pub skipped: Option<String>,
    pub candidates: usize,
    pub dropped_fill: usize,
    pub dropped_label: usize,
    pub dropped_features: usize,
    pub retained: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Extraction {
    pub columns: Vec<FeatureColumn>,
    pub rows: Vec<FeatureVector>,
    pub sessions: Vec<SessionLog>,
}

fn extract_one(rec: &Recording, policy: &WindowPolicy, schema: &FeatureSchema, cfg: &FeatureConfig) -> (Vec<FeatureVector>, SessionLog) {
    let mut log = SessionLog {
        subject_id: rec.subject_id.clone(),
        ..Default::default()
    };
    let normalized = normalize_recording(rec);
    let (windows, report) = match segment(&normalized, policy) {
        Ok(r) => r,
        Err(e) => {
            log.skipped = Some(e.to_string());
            return (Vec::new(), log);
        }
    };
    log.candidates = report.candidates;
    log.dropped_fill = report.dropped_fill;
    log.dropped_label = report.dropped_label;
    let mut rows = Vec::with_capacity(windows.len());
    for w in &windows {
        match assemble(w, schema, cfg) {
            Ok(v) => rows.push(v),
            Err(e) => {
                log::debug!("{} window at {}: {e}", rec.subject_id, w.t_start);
                log.dropped_features += 1;
            }
        }
    }
    log.retained = rows.len();
    (rows, log)
}

/// Z-scores each recording with its own moments, windows it and assembles
/// features. The schema's required streams are added to the policy.
pub fn extract_recordings(
    recordings: &[Recording],
    policy: &WindowPolicy,
    schema: &FeatureSchema,
    cfg: &FeatureConfig,
) -> Result<Extraction, PipelineError> {
    let mut policy = policy.clone();
    policy.required_modalities.extend(schema.required_modalities());
    let parts: Vec<_> = recordings
        .par_iter()
        .map(|r| extract_one(r, &policy, schema, cfg))
        .collect();
    let mut rows = Vec::new();
    let mut sessions = Vec::new();
    for (r, log) in parts {
        match &log.skipped {
            Some(reason) => log::warn!("session {} skipped: {reason}", log.subject_id),
            None => log::info!(
                "session {}: {} windows retained of {} (fill {}, label {}, features {})",
                log.subject_id,
                log.retained,
                log.candidates,
                log.dropped_fill,
                log.dropped_label,
                log.dropped_features
            ),
        }
        rows.extend(r);
        sessions.push(log);
    }
    if rows.is_empty() {
        return Err(PipelineError::NoWindows);
    }
    Ok(Extraction {
        columns: schema.columns.clone(),
        rows,
        sessions,
    })
}

/// Loads every manifest session. Sessions that fail to load are logged and skipped.
pub fn load_recordings(manifest: &Manifest) -> (Vec<Recording>, Vec<SessionLog>) {
    let loaded: Vec<_> = manifest
        .sessions
        .par_iter()
        .map(|e| (e.subject_id.clone(), load_session(&manifest.session_dir(e), e)))
        .collect();
    let mut recs = Vec::new();
    let mut failed = Vec::new();
    for (id, r) in loaded {
        match r {
            Ok(rec) => recs.push(rec),
            Err(e) => {
                log::warn!("session {id} skipped: {e}");
                failed.push(SessionLog {
                    subject_id: id,
                    skipped: Some(e.to_string()),
                    ..Default::default()
                });
            }
        }
    }
    (recs, failed)
}

pub fn extract_manifest(
    manifest: &Manifest,
    policy: &WindowPolicy,
    schema: &FeatureSchema,
    cfg: &FeatureConfig,
) -> Result<Extraction, PipelineError> {
    let (recs, failed) = load_recordings(manifest);
    let mut ex = extract_recordings(&recs, policy, schema, cfg)?;
    ex.sessions.extend(failed);
    ex.sessions.sort_by(|a, b| a.subject_id.cmp(&b.subject_id));
    Ok(ex)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectSummary {
    pub subject_id: String,
    /// Mean and population std of each loaded channel.
    pub channels: BTreeMap<Modality, MeanStd>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSummary {
    pub per_subject: Vec<SubjectSummary>,
    /// Mean and std across subjects of the per-subject channel means.
    pub across_subjects: BTreeMap<Modality, MeanStd>,
}

pub fn summarize(recordings: &[Recording]) -> ChannelSummary {
    let per_subject: Vec<SubjectSummary> = recordings
        .iter()
        .map(|r| SubjectSummary {
            subject_id: r.subject_id.clone(),
            channels: r
                .channels
                .iter()
                .filter(|(_, s)| !s.is_empty())
                .map(|(m, s)| {
                    (
                        *m,
                        MeanStd {
                            mean: mean(&s.values),
                            std: pop_std(&s.values),
                        },
                    )
                })
                .collect(),
        })
        .collect();
    let mut means: BTreeMap<Modality, Vec<f64>> = BTreeMap::new();
    for s in &per_subject {
        for (m, v) in &s.channels {
            means.entry(*m).or_default().push(v.mean);
        }
    }
    ChannelSummary {
        per_subject,
        across_subjects: means.into_iter().map(|(m, v)| (m, MeanStd::of(&v))).collect(),
    }
}
