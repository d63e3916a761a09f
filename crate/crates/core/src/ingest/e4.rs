use std::fmt::Write as _;

use super::{EventSeries, IbiEvent, IngestError, SampledSeries};

/// Raw E4 accelerometer counts per g.
pub const ACC_COUNTS_PER_G: f64 = 64.0;

fn parse_field(s: &str) -> Option<f64> {
    s.trim().parse::<f64>().ok()
}

fn header_values(line: Option<&str>, line_no: usize, expect: usize) -> Result<Vec<f64>, IngestError> {
    let line = line.ok_or_else(|| IngestError::MalformedHeader {
        line: line_no,
        reason: "missing".into(),
    })?;
    let fields: Vec<&str> = line.split(',').map(str::trim).filter(|f| !f.is_empty()).collect();
    if fields.len() < expect {
        return Err(IngestError::MalformedHeader {
            line: line_no,
            reason: format!("expected {expect} field(s), found {}", fields.len()),
        });
    }
    fields[..expect]
        .iter()
        .map(|f| match parse_field(f) {
            Some(v) if v.is_finite() => Ok(v),
            _ => Err(IngestError::MalformedHeader {
                line: line_no,
                reason: format!("not a finite number: {f:?}"),
            }),
        })
        .collect()
}

fn check_rates(rates: &[f64]) -> Result<(), IngestError> {
    if rates.iter().any(|&r| r <= 0.0) {
        return Err(IngestError::MalformedHeader {
            line: 2,
            reason: "sampling rate must be positive".into(),
        });
    }
    Ok(())
}

fn body_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .skip(2)
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
}

fn sample(field: &str, line: usize) -> Result<f64, IngestError> {
    match parse_field(field) {
        Some(v) if v.is_finite() => Ok(v),
        Some(_) => Err(IngestError::NonFiniteSample { line }),
        None => Err(IngestError::MalformedSample { line }),
    }
}

/// Parses a single-channel E4 file (EDA, TEMP, HR, BVP).
pub fn parse_channel(bytes: &[u8]) -> Result<SampledSeries, IngestError> {
    let text = String::from_utf8_lossy(bytes);
    let mut lines = text.lines();
    let start = header_values(lines.next(), 1, 1)?[0];
    let rate = header_values(lines.next(), 2, 1)?[0];
    check_rates(&[rate])?;

    let mut values = Vec::new();
    for (line_no, line) in body_lines(&text) {
        let field = line.split(',').next().unwrap_or(line);
        values.push(sample(field, line_no)?);
    }
    if values.is_empty() {
        return Err(IngestError::EmptyStream);
    }
    Ok(SampledSeries::new(start, rate, values))
}

/// Parses `ACC.csv` into x, y, z series in g.
pub fn parse_acc(bytes: &[u8]) -> Result<[SampledSeries; 3], IngestError> {
    let text = String::from_utf8_lossy(bytes);
    let mut lines = text.lines();
    let starts = header_values(lines.next(), 1, 3)?;
    let rates = header_values(lines.next(), 2, 3)?;
    check_rates(&rates)?;

    let mut axes: [Vec<f64>; 3] = Default::default();
    for (line_no, line) in body_lines(&text) {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(IngestError::RaggedRow { line: line_no });
        }
        for (axis, field) in axes.iter_mut().zip(fields) {
            axis.push(sample(field, line_no)? / ACC_COUNTS_PER_G);
        }
    }
    if axes[0].is_empty() {
        return Err(IngestError::EmptyStream);
    }
    let [x, y, z] = axes;
    Ok([
        SampledSeries::new(starts[0], rates[0], x),
        SampledSeries::new(starts[1], rates[1], y),
        SampledSeries::new(starts[2], rates[2], z),
    ])
}

#[derive(Debug, Clone, PartialEq)]
pub struct IbiParse {
    pub series: EventSeries,
    /// Rows dropped for non-increasing offsets or non-positive durations.
    pub dropped: usize,
}

/// Parses `IBI.csv`. Only the epoch on line 1 is read; the `IBI` literal is ignored.
pub fn parse_ibi(bytes: &[u8]) -> Result<IbiParse, IngestError> {
    let text = String::from_utf8_lossy(bytes);
    let start = header_values(text.lines().next(), 1, 1)?[0];

    let mut events: Vec<IbiEvent> = Vec::new();
    let mut dropped = 0;
    for (i, line) in text.lines().enumerate().skip(1) {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let line_no = i + 1;
        let mut fields = line.split(',');
        let (Some(o), Some(d), None) = (fields.next(), fields.next(), fields.next()) else {
            return Err(IngestError::MalformedSample { line: line_no });
        };
        let offset = sample(o, line_no)?;
        let duration = sample(d, line_no)?;
        let monotone = events.last().is_none_or(|last| offset > last.offset_s);
        if !monotone || duration <= 0.0 || offset < 0.0 {
            dropped += 1;
            continue;
        }
        events.push(IbiEvent {
            offset_s: offset,
            duration_s: duration,
        });
    }
    Ok(IbiParse {
        series: EventSeries {
            start_epoch: start,
            events,
        },
        dropped,
    })
}

/// Serializes a series in the single-channel E4 format. Values use the
/// shortest representation that parses back to the identical `f64`.
pub fn write_channel(series: &SampledSeries) -> String {
    let mut out = String::with_capacity(series.values.len() * 12 + 32);
    writeln!(out, "{}", series.start_epoch).unwrap();
    writeln!(out, "{}", series.rate_hz).unwrap();
    for v in &series.values {
        writeln!(out, "{v}").unwrap();
    }
    out
}

/// Serializes three g-unit axes back to raw E4 counts.
pub fn write_acc(axes: [&SampledSeries; 3]) -> String {
    let n = axes.iter().map(|a| a.values.len()).min().unwrap_or(0);
    let mut out = String::with_capacity(n * 40 + 64);
    writeln!(
        out,
        "{}, {}, {}",
        axes[0].start_epoch, axes[1].start_epoch, axes[2].start_epoch
    )
    .unwrap();
    writeln!(out, "{}, {}, {}", axes[0].rate_hz, axes[1].rate_hz, axes[2].rate_hz).unwrap();
    for i in 0..n {
        writeln!(
            out,
            "{},{},{}",
            axes[0].values[i] * ACC_COUNTS_PER_G,
            axes[1].values[i] * ACC_COUNTS_PER_G,
            axes[2].values[i] * ACC_COUNTS_PER_G
        )
        .unwrap();
    }
    out
}

pub fn write_ibi(series: &EventSeries) -> String {
    let mut out = String::with_capacity(series.events.len() * 24 + 32);
    writeln!(out, "{}, IBI", series.start_epoch).unwrap();
    for e in &series.events {
        writeln!(out, "{},{}", e.offset_s, e.duration_s).unwrap();
    }
    out
}
