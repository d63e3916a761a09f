//! Subject-level normalization and time-based segmentation.
//!
//! Channels run at different rates, so windows are cut on the clock rather
//! than on sample indices: every modality contributes the samples whose
//! timestamps fall in `[t_start, t_end)`.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{IbiEvent, LabelSegment, Modality, Recording, SampledSeries};

pub const NORMALIZATION_EPSILON: f64 = 1e-8;

/// Slack, in sample periods, when mapping window bounds onto sample indices.
const INDEX_SLACK: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WindowError {
    #[error("required modalities never co-exist for a full window ({span_s:.3} s usable, {window_s} s needed)")]
    NoUsableSpan { span_s: f64, window_s: f64 },
    #[error("required modality {0} missing from recording")]
    MissingModality(Modality),
    #[error("invalid window policy: {0}")]
    InvalidPolicy(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub mean: f64,
    pub std: f64,
    pub epsilon: f64,
}

impl NormalizationStats {
    /// Population moments of `values`.
    pub fn from_values(values: &[f64]) -> Self {
        let n = values.len().max(1) as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self {
            mean,
            std: var.sqrt(),
            epsilon: NORMALIZATION_EPSILON,
        }
    }

    pub fn apply(&self, v: f64) -> f64 {
        (v - self.mean) / (self.std + self.epsilon)
    }

    pub fn invert(&self, z: f64) -> f64 {
        z * (self.std + self.epsilon) + self.mean
    }
}

pub fn znormalize(series: &SampledSeries, stats: &NormalizationStats) -> SampledSeries {
    SampledSeries {
        start_epoch: series.start_epoch,
        rate_hz: series.rate_hz,
        values: series.values.iter().map(|&v| stats.apply(v)).collect(),
    }
}

/// Standardizes every sampled channel with the subject's own full-recording moments.
pub fn normalize_recording(rec: &Recording) -> Recording {
    let mut out = rec.clone();
    for series in out.channels.values_mut() {
        let stats = NormalizationStats::from_values(&series.values);
        *series = znormalize(series, &stats);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelRule {
    /// One segment must cover the whole window.
    #[default]
    Strict,
    /// A segment must cover more than half of the window.
    Majority,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowPolicy {
    pub window_s: f64,
    pub stride_s: f64,
    #[serde(default = "default_min_fill")]
    pub min_fill: f64,
    #[serde(default)]
    pub required_modalities: BTreeSet<Modality>,
    #[serde(default)]
    pub label_rule: LabelRule,
}

fn default_min_fill() -> f64 {
    0.8
}

impl WindowPolicy {
    pub fn new(window_s: f64, stride_s: f64) -> Self {
        Self {
            window_s,
            stride_s,
            min_fill: default_min_fill(),
            required_modalities: BTreeSet::new(),
            label_rule: LabelRule::Strict,
        }
    }

    pub fn validate(&self) -> Result<(), WindowError> {
        let bad = |m: &str| Err(WindowError::InvalidPolicy(m.into()));
        if !(self.window_s > 0.0 && self.window_s.is_finite()) {
            return bad("window_s must be positive");
        }
        if !(self.stride_s > 0.0 && self.stride_s <= self.window_s) {
            return bad("stride_s must satisfy 0 < stride_s <= window_s");
        }
        if !(self.min_fill > 0.0 && self.min_fill <= 1.0) {
            return bad("min_fill must be in (0, 1]");
        }
        Ok(())
    }
}

/// Samples of one modality inside a window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSlice {
    /// Timestamp of `values[0]`.
    pub start_epoch: f64,
    pub rate_hz: f64,
    pub values: Vec<f64>,
}

impl ChannelSlice {
    pub fn timestamp(&self, i: usize) -> f64 {
        self.start_epoch + i as f64 / self.rate_hz
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub subject_id: String,
    pub t_start: f64,
    pub t_end: f64,
    pub channels: BTreeMap<Modality, ChannelSlice>,
    /// Beat intervals whose beat time falls in the window.
    pub ibi: Vec<IbiEvent>,
    pub label: String,
}

impl Window {
    pub fn channel(&self, m: Modality) -> Option<&ChannelSlice> {
        self.channels.get(&m)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SegmentReport {
    pub candidates: usize,
    pub dropped_fill: usize,
    pub dropped_label: usize,
    pub retained: usize,
}

/// Number of window starts `k * stride` with `k * stride + window <= span`.
pub fn candidate_count(span_s: f64, window_s: f64, stride_s: f64) -> usize {
    if span_s + INDEX_SLACK * 1e-3 < window_s {
        return 0;
    }
    ((span_s - window_s) / stride_s + 1e-9).floor() as usize + 1
}

/// Index range `[lo, hi)` of samples whose timestamps fall in `[t0, t1)`.
fn index_range(series: &SampledSeries, t0: f64, t1: f64) -> (usize, usize) {
    let to_index = |t: f64| {
        let x = ((t - series.start_epoch) * series.rate_hz - INDEX_SLACK).ceil();
        x.clamp(0.0, series.len() as f64) as usize
    };
    (to_index(t0), to_index(t1))
}

pub fn assign_label(t_start: f64, t_end: f64, segments: &[LabelSegment], rule: LabelRule) -> Option<String> {
    let width = t_end - t_start;
    match rule {
        LabelRule::Strict => segments
            .iter()
            .find(|s| s.t_start <= t_start && s.t_end >= t_end)
            .map(|s| s.label.clone()),
        LabelRule::Majority => segments
            .iter()
            .find(|s| {
                let overlap = s.t_end.min(t_end) - s.t_start.max(t_start);
                overlap > 0.5 * width
            })
            .map(|s| s.label.clone()),
    }
}

/// Usable span: the interval where every required modality has data.
fn usable_span(rec: &Recording, required: &BTreeSet<Modality>) -> Result<(f64, f64), WindowError> {
    let mut lo = f64::NEG_INFINITY;
    let mut hi = f64::INFINITY;
    for m in required {
        let s = rec
            .channels
            .get(m)
            .filter(|s| !s.is_empty())
            .ok_or(WindowError::MissingModality(*m))?;
        lo = lo.max(s.start_epoch);
        hi = hi.min(s.end_epoch());
    }
    if required.is_empty() {
        let (a, b) = rec.span().ok_or(WindowError::NoUsableSpan {
            span_s: 0.0,
            window_s: 0.0,
        })?;
        lo = a;
        hi = b;
    }
    Ok((lo, hi))
}

/// Cuts a recording into labelled windows.
pub fn segment(rec: &Recording, policy: &WindowPolicy) -> Result<(Vec<Window>, SegmentReport), WindowError> {
    policy.validate()?;
    let (lo, hi) = usable_span(rec, &policy.required_modalities)?;
    let span = hi - lo;
    let count = candidate_count(span, policy.window_s, policy.stride_s);
    if count == 0 {
        return Err(WindowError::NoUsableSpan {
            span_s: span.max(0.0),
            window_s: policy.window_s,
        });
    }

    let mut report = SegmentReport {
        candidates: count,
        ..Default::default()
    };
    let mut windows = Vec::with_capacity(count);
    for k in 0..count {
        let t_start = lo + k as f64 * policy.stride_s;
        let t_end = t_start + policy.window_s;

        let mut channels = BTreeMap::new();
        let mut valid = true;
        for (m, series) in &rec.channels {
            let (a, b) = index_range(series, t_start, t_end);
            let nominal = policy.window_s * series.rate_hz;
            let filled = (b - a) as f64 >= policy.min_fill * nominal.floor().max(1.0);
            if policy.required_modalities.contains(m) && !filled {
                valid = false;
                break;
            }
            if b > a && filled {
                channels.insert(
                    *m,
                    ChannelSlice {
                        start_epoch: series.timestamp(a),
                        rate_hz: series.rate_hz,
                        values: series.values[a..b].to_vec(),
                    },
                );
            }
        }
        if !valid {
            report.dropped_fill += 1;
            continue;
        }
        let Some(label) = assign_label(t_start, t_end, &rec.segments, policy.label_rule) else {
            report.dropped_label += 1;
            continue;
        };
        let ibi = rec
            .ibi
            .as_ref()
            .map(|ev| {
                ev.events
                    .iter()
                    .filter(|e| {
                        let t = ev.start_epoch + e.offset_s;
                        t >= t_start && t < t_end
                    })
                    .copied()
                    .collect()
            })
            .unwrap_or_default();
        windows.push(Window {
            subject_id: rec.subject_id.clone(),
            t_start,
            t_end,
            channels,
            ibi,
            label,
        });
    }
    report.retained = windows.len();
    Ok((windows, report))
}
