use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::e4::{parse_acc, parse_channel, parse_ibi, write_acc, write_channel, write_ibi};
use super::{IngestError, LabelSegment, Modality, Recording, SampledSeries};

/// Exam score at or above which a session is labelled `High`.
pub const DEFAULT_PERFORMANCE_THRESHOLD: f64 = 160.0;

/// Flat-line runs longer than this many seconds count as sensor dropouts.
const DROPOUT_RUN_S: f64 = 5.0;

const SPAN_TOLERANCE_S: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeBase {
    /// Segment bounds are epoch seconds.
    #[default]
    Absolute,
    /// Segment bounds are seconds after the EDA start.
    Relative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestSegment {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub t_start: f64,
    pub t_end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionEntry {
    pub subject_id: String,
    /// Session directory, relative to the manifest file.
    pub path: PathBuf,
    #[serde(default)]
    pub segments: Vec<ManifestSegment>,
    #[serde(default)]
    pub time_base: TimeBase,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub performance_score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub performance_threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    #[serde(default)]
    pub dataset: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub performance_threshold: Option<f64>,
    pub sessions: Vec<SessionEntry>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Manifest {
    pub fn session_dir(&self, entry: &SessionEntry) -> PathBuf {
        self.base_dir.join(&entry.path)
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> IngestError {
    IngestError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// Reads a manifest; session paths resolve against its parent directory.
pub fn load_manifest(path: &Path) -> Result<Manifest, IngestError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| IngestError::InvalidManifest(e.to_string()))?;
    manifest.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    if let Some(t) = manifest.performance_threshold {
        for s in &mut manifest.sessions {
            s.performance_threshold.get_or_insert(t);
        }
    }
    let mut seen = std::collections::BTreeSet::new();
    for s in &manifest.sessions {
        if !seen.insert((&s.subject_id, &s.path)) {
            return Err(IngestError::InvalidManifest(format!(
                "duplicate session {} at {}",
                s.subject_id,
                s.path.display()
            )));
        }
    }
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status")]
pub enum ChannelStatus {
    Loaded { samples: usize, dropouts: usize },
    Missing,
    Empty,
    Invalid { reason: String },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ScreeningReport {
    pub channels: BTreeMap<Modality, ChannelStatus>,
    /// `None` when IBI.csv is absent.
    pub ibi_events: Option<usize>,
    pub ibi_rows_dropped: usize,
    pub has_tags: bool,
}

impl ScreeningReport {
    pub fn empty_ibi(&self) -> bool {
        matches!(self.ibi_events, Some(0))
    }
}

/// Number of flat-lined runs longer than [`DROPOUT_RUN_S`].
fn count_dropouts(series: &SampledSeries) -> usize {
    let min_run = (DROPOUT_RUN_S * series.rate_hz).floor() as usize + 1;
    let min_run = min_run.max(series.rate_hz.ceil() as usize);
    let mut count = 0;
    let mut run = 1;
    for w in series.values.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            if run >= min_run {
                count += 1;
            }
            run = 1;
        }
    }
    if run >= min_run && !series.values.is_empty() {
        count += 1;
    }
    count
}

fn read_optional(path: &Path) -> Result<Option<Vec<u8>>, IngestError> {
    match fs::read(path) {
        Ok(b) => Ok(Some(b)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(io_err(path, e)),
    }
}

/// Loads one session directory and resolves its label segments.
pub fn load_session(dir: &Path, entry: &SessionEntry) -> Result<Recording, IngestError> {
    let mut channels = BTreeMap::new();
    let mut report = ScreeningReport::default();

    let single = [
        (Modality::Eda, "EDA.csv"),
        (Modality::Temp, "TEMP.csv"),
        (Modality::Hr, "HR.csv"),
        (Modality::Bvp, "BVP.csv"),
    ];
    for (modality, file) in single {
        let status = match read_optional(&dir.join(file))? {
            None => ChannelStatus::Missing,
            Some(bytes) => match parse_channel(&bytes) {
                Ok(series) => {
                    let dropouts = if modality.dropout_screened() {
                        count_dropouts(&series)
                    } else {
                        0
                    };
                    let status = ChannelStatus::Loaded {
                        samples: series.len(),
                        dropouts,
                    };
                    channels.insert(modality, series);
                    status
                }
                Err(IngestError::EmptyStream) => ChannelStatus::Empty,
                Err(e) => ChannelStatus::Invalid {
                    reason: e.to_string(),
                },
            },
        };
        report.channels.insert(modality, status);
    }

    let acc_modalities = [Modality::AccX, Modality::AccY, Modality::AccZ];
    let acc_status = match read_optional(&dir.join("ACC.csv"))? {
        None => [ChannelStatus::Missing, ChannelStatus::Missing, ChannelStatus::Missing],
        Some(bytes) => match parse_acc(&bytes) {
            Ok(axes) => {
                let mut st: [ChannelStatus; 3] = Default::default();
                for ((m, series), slot) in acc_modalities.iter().zip(axes).zip(st.iter_mut()) {
                    *slot = ChannelStatus::Loaded {
                        samples: series.len(),
                        dropouts: 0,
                    };
                    channels.insert(*m, series);
                }
                st
            }
            Err(IngestError::EmptyStream) => {
                [ChannelStatus::Empty, ChannelStatus::Empty, ChannelStatus::Empty]
            }
            Err(e) => {
                let s = ChannelStatus::Invalid {
                    reason: e.to_string(),
                };
                [s.clone(), s.clone(), s]
            }
        },
    };
    for (m, s) in acc_modalities.iter().zip(acc_status) {
        report.channels.insert(*m, s);
    }

    let ibi = match read_optional(&dir.join("IBI.csv"))? {
        None => None,
        Some(bytes) => match parse_ibi(&bytes) {
            Ok(parsed) => {
                report.ibi_events = Some(parsed.series.events.len());
                report.ibi_rows_dropped = parsed.dropped;
                Some(parsed.series)
            }
            Err(_) => {
                report.ibi_events = Some(0);
                None
            }
        },
    };
    report.has_tags = dir.join("tags.csv").exists();

    if channels.is_empty() {
        return Err(IngestError::NoChannels {
            subject: entry.subject_id.clone(),
        });
    }

    let mut recording = Recording {
        subject_id: entry.subject_id.clone(),
        channels,
        ibi,
        segments: Vec::new(),
        screening: report,
    };
    recording.segments = resolve_segments(&recording, entry)?;
    Ok(recording)
}

impl Default for ChannelStatus {
    fn default() -> Self {
        ChannelStatus::Missing
    }
}

fn performance_label(entry: &SessionEntry) -> Option<String> {
    let threshold = entry
        .performance_threshold
        .unwrap_or(DEFAULT_PERFORMANCE_THRESHOLD);
    entry.performance_score.map(|score| {
        if score >= threshold {
            "High".to_string()
        } else {
            "Low".to_string()
        }
    })
}

fn resolve_segments(rec: &Recording, entry: &SessionEntry) -> Result<Vec<LabelSegment>, IngestError> {
    let mismatch = |reason: String| IngestError::ManifestMismatch {
        subject: entry.subject_id.clone(),
        reason,
    };
    let (lo, hi) = rec.span().expect("recording has channels");
    let derived = performance_label(entry);

    if entry.segments.is_empty() {
        return Ok(match derived {
            Some(label) => vec![LabelSegment {
                label,
                t_start: lo,
                t_end: hi,
            }],
            None => Vec::new(),
        });
    }

    let origin = match entry.time_base {
        TimeBase::Absolute => 0.0,
        TimeBase::Relative => rec
            .channels
            .get(&Modality::Eda)
            .map(|s| s.start_epoch)
            .unwrap_or(lo),
    };
    let mut out = Vec::with_capacity(entry.segments.len());
    for seg in &entry.segments {
        let label = seg
            .label
            .clone()
            .or_else(|| derived.clone())
            .ok_or_else(|| mismatch("segment without label and no performance_score".into()))?;
        let (t_start, t_end) = (origin + seg.t_start, origin + seg.t_end);
        if !(t_start < t_end) {
            return Err(mismatch(format!("segment {label} has t_start >= t_end")));
        }
        if t_start < lo - SPAN_TOLERANCE_S || t_end > hi + SPAN_TOLERANCE_S {
            return Err(mismatch(format!(
                "segment {label} [{t_start}, {t_end}] outside recorded span [{lo}, {hi}]"
            )));
        }
        out.push(LabelSegment {
            label,
            t_start,
            t_end,
        });
    }
    out.sort_by(|a, b| a.t_start.total_cmp(&b.t_start));
    if out.windows(2).any(|w| w[1].t_start < w[0].t_end) {
        return Err(mismatch("overlapping segments".into()));
    }
    Ok(out)
}

/// Writes a recording as an E4 session directory.
pub fn write_session(dir: &Path, rec: &Recording) -> Result<(), IngestError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let write = |name: &str, body: String| {
        let p = dir.join(name);
        fs::write(&p, body).map_err(|e| io_err(&p, e))
    };
    for (m, file) in [
        (Modality::Eda, "EDA.csv"),
        (Modality::Temp, "TEMP.csv"),
        (Modality::Hr, "HR.csv"),
        (Modality::Bvp, "BVP.csv"),
    ] {
        if let Some(s) = rec.channels.get(&m) {
            write(file, write_channel(s))?;
        }
    }
    if let (Some(x), Some(y), Some(z)) = (
        rec.channels.get(&Modality::AccX),
        rec.channels.get(&Modality::AccY),
        rec.channels.get(&Modality::AccZ),
    ) {
        write("ACC.csv", write_acc([x, y, z]))?;
    }
    if let Some(ibi) = &rec.ibi {
        write("IBI.csv", write_ibi(ibi))?;
    }
    Ok(())
}
