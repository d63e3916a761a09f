//! Empatica E4 session ingestion.
//!
//! An E4 session directory holds one CSV per sensor stream. Single-channel
//! files (EDA, TEMP, HR, BVP) carry the start epoch on line 1, the sampling
//! rate on line 2 and one sample per line after that. ACC packs three axes
//! per row, and IBI lists `(offset, duration)` beat events.

mod e4;
mod manifest;

pub use e4::{parse_acc, parse_channel, parse_ibi, write_acc, write_channel, write_ibi, IbiParse};
pub use manifest::{
    load_manifest, load_session, write_session, ChannelStatus, Manifest, ManifestSegment,
    ScreeningReport, SessionEntry, TimeBase, DEFAULT_PERFORMANCE_THRESHOLD,
};

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Uniformly sampled sensor streams of the E4 wristband.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Modality {
    #[serde(rename = "EDA")]
    Eda,
    #[serde(rename = "TEMP")]
    Temp,
    #[serde(rename = "HR")]
    Hr,
    #[serde(rename = "BVP")]
    Bvp,
    #[serde(rename = "ACC_X")]
    AccX,
    #[serde(rename = "ACC_Y")]
    AccY,
    #[serde(rename = "ACC_Z")]
    AccZ,
}

impl Modality {
    pub const ALL: [Modality; 7] = [
        Modality::Eda,
        Modality::Temp,
        Modality::Hr,
        Modality::Bvp,
        Modality::AccX,
        Modality::AccY,
        Modality::AccZ,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Modality::Eda => "EDA",
            Modality::Temp => "TEMP",
            Modality::Hr => "HR",
            Modality::Bvp => "BVP",
            Modality::AccX => "ACC_X",
            Modality::AccY => "ACC_Y",
            Modality::AccZ => "ACC_Z",
        }
    }

    /// Checks dropout runs on this stream (flat-lined sensor).
    pub fn dropout_screened(self) -> bool {
        matches!(self, Modality::Eda | Modality::Temp | Modality::Bvp)
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IngestError {
    #[error("malformed header on line {line}: {reason}")]
    MalformedHeader { line: usize, reason: String },
    #[error("non-finite sample on line {line}")]
    NonFiniteSample { line: usize },
    #[error("unparseable sample on line {line}")]
    MalformedSample { line: usize },
    #[error("stream has no samples")]
    EmptyStream,
    #[error("row on line {line} does not have 3 fields")]
    RaggedRow { line: usize },
    #[error("session {subject} has no usable channels")]
    NoChannels { subject: String },
    #[error("session {subject}: {reason}")]
    ManifestMismatch { subject: String, reason: String },
    #[error("invalid manifest: {0}")]
    InvalidManifest(String),
    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },
}

/// Single-channel uniformly sampled signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledSeries {
    pub start_epoch: f64,
    pub rate_hz: f64,
    pub values: Vec<f64>,
}

impl SampledSeries {
    pub fn new(start_epoch: f64, rate_hz: f64, values: Vec<f64>) -> Self {
        debug_assert!(rate_hz > 0.0);
        Self {
            start_epoch,
            rate_hz,
            values,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn timestamp(&self, i: usize) -> f64 {
        self.start_epoch + i as f64 / self.rate_hz
    }

    /// End of the covered span: one sample period past the last sample.
    pub fn end_epoch(&self) -> f64 {
        self.start_epoch + self.values.len() as f64 / self.rate_hz
    }

    pub fn duration_s(&self) -> f64 {
        self.values.len() as f64 / self.rate_hz
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IbiEvent {
    /// Seconds after the series start at which the beat closing this interval occurred.
    pub offset_s: f64,
    pub duration_s: f64,
}

/// Beat-to-beat interval events.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventSeries {
    pub start_epoch: f64,
    pub events: Vec<IbiEvent>,
}

impl EventSeries {
    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

/// A labelled time span in epoch seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSegment {
    pub label: String,
    pub t_start: f64,
    pub t_end: f64,
}

/// One subject session with every stream that could be loaded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recording {
    pub subject_id: String,
    pub channels: BTreeMap<Modality, SampledSeries>,
    pub ibi: Option<EventSeries>,
    pub segments: Vec<LabelSegment>,
    pub screening: ScreeningReport,
}

impl Recording {
    /// Earliest start and latest end over all loaded channels.
    pub fn span(&self) -> Option<(f64, f64)> {
        let mut it = self.channels.values().filter(|s| !s.is_empty());
        let first = it.next()?;
        let mut lo = first.start_epoch;
        let mut hi = first.end_epoch();
        for s in it {
            lo = lo.min(s.start_epoch);
            hi = hi.max(s.end_epoch());
        }
        Some((lo, hi))
    }
}
