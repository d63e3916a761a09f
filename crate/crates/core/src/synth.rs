//! Synthetic multimodal sessions from nonlinear autonomic models.
//!
//! HR follows a driven oscillator `x'' + (a0 + a1 x^2) x' + (b0 x + b1 x^3) = gamma x_bp(t)`,
//! EDA is a tonic drift plus exponential bursts fired when a latent input
//! crosses a threshold, TEMP relaxes toward a slowly moving target and ACC
//! depends on the activity type. Each session is cut into labelled segments;
//! a per-segment latent vector `z = (z_eda, z_hr, z_temp, z_acc)` shifts the
//! channels and, in threshold mode, sets the label through a Volterra map.

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{
    write_session, EventSeries, IbiEvent, LabelSegment, Manifest, ManifestSegment, Modality, Recording,
    SampledSeries, ScreeningReport, SessionEntry, TimeBase,
};

pub const EDA_RATE_HZ: f64 = 4.0;
pub const TEMP_RATE_HZ: f64 = 4.0;
pub const HR_RATE_HZ: f64 = 1.0;
pub const BVP_RATE_HZ: f64 = 64.0;
pub const ACC_RATE_HZ: f64 = 32.0;

/// State norm above which the HR integrator gives up.
pub const BLOW_UP_NORM: f64 = 1e6;

/// Latent dimensions in order.
pub const LATENT_DIM: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("HR oscillator diverged at t = {t} s")]
    BlowUp { t: f64 },
    #[error("unknown class {0}")]
    UnknownClass(String),
    #[error("expected {expected} latent values, got {got}")]
    ArityMismatch { expected: usize, got: usize },
    #[error("invalid synthetic parameters: {0}")]
    InvalidParams(String),
    #[error("io: {0}")]
    Io(String),
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HrParams {
    pub a0: f64,
    pub a1: f64,
    pub b0: f64,
    pub b1: f64,
    pub gamma: f64,
    pub drive_amplitude: f64,
    pub drive_freq_hz: f64,
    /// Amplitude of each of the four random sinusoids added to the drive.
    pub drive_noise: f64,
    pub dt: f64,
    pub x0: f64,
    pub v0: f64,
    pub base_bpm: f64,
    pub scale_bpm: f64,
    /// bpm shift per unit of `z_hr`.
    pub latent_gain_bpm: f64,
}

impl Default for HrParams {
    fn default() -> Self {
        Self {
            a0: 0.3,
            a1: 0.1,
            b0: 0.4,
            b1: 0.05,
            gamma: 0.4,
            drive_amplitude: 1.0,
            drive_freq_hz: 0.1,
            drive_noise: 0.3,
            dt: 0.01,
            x0: 0.0,
            v0: 0.0,
            base_bpm: 72.0,
            scale_bpm: 2.0,
            latent_gain_bpm: 10.0,
        }
    }
}

impl HrParams {
    /// Self-sustained limit cycle (negative linear damping).
    pub fn oscillating() -> Self {
        Self {
            a0: -0.5,
            a1: 0.5,
            b0: 0.4,
            b1: 0.0,
            gamma: 0.1,
            ..Self::default()
        }
    }
}

/// Latent autonomic input `u(t)` whose upward threshold crossings fire EDA bursts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LatentInput {
    /// Mean-reverting noise, exactly discretized at the EDA rate.
    Ou { mean: f64, tau_s: f64, sigma: f64 },
    /// `height` on `[onset, onset + width_s)`, 0 elsewhere.
    Pulses { onsets: Vec<f64>, width_s: f64, height: f64 },
    Constant { value: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EdaParams {
    pub base_us: f64,
    pub drift_per_s: f64,
    /// Tonic shift per unit of `z_eda`.
    pub tonic_gain_us: f64,
    pub input: LatentInput,
    /// Shift of the input level per unit of `z_eda`.
    pub input_gain: f64,
    pub threshold: f64,
    pub burst_amplitude: f64,
    pub decay: f64,
    pub noise: f64,
}

impl Default for EdaParams {
    fn default() -> Self {
        Self {
            base_us: 2.0,
            drift_per_s: 5e-4,
            tonic_gain_us: 0.8,
            input: LatentInput::Ou {
                mean: 0.0,
                tau_s: 2.0,
                sigma: 0.6,
            },
            input_gain: 0.5,
            threshold: 1.0,
            burst_amplitude: 0.3,
            decay: 0.5,
            noise: 0.005,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TempParams {
    pub base_c: f64,
    pub tau_s: f64,
    pub drift_per_s: f64,
    pub latent_gain_c: f64,
    pub noise: f64,
}

impl Default for TempParams {
    fn default() -> Self {
        Self {
            base_c: 33.0,
            tau_s: 20.0,
            drift_per_s: 1e-4,
            latent_gain_c: 0.3,
            noise: 0.01,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activity {
    Sedentary,
    Aerobic,
    Anaerobic,
}

impl std::str::FromStr for Activity {
    type Err = SynthError;
    fn from_str(s: &str) -> Result<Self, SynthError> {
        match s {
            "sedentary" => Ok(Activity::Sedentary),
            "aerobic" => Ok(Activity::Aerobic),
            "anaerobic" => Ok(Activity::Anaerobic),
            other => Err(SynthError::UnknownClass(other.into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AccParams {
    pub sedentary_sigma: f64,
    pub aerobic_amplitude: f64,
    pub cadence_hz: f64,
    pub aerobic_sigma: f64,
    pub anaerobic_rate_hz: f64,
    pub anaerobic_amplitude: f64,
    pub anaerobic_decay: f64,
    pub anaerobic_sigma: f64,
    /// Log-scale change of motion intensity per unit of `z_acc`.
    pub latent_gain: f64,
}

impl Default for AccParams {
    fn default() -> Self {
        Self {
            sedentary_sigma: 0.02,
            aerobic_amplitude: 0.6,
            cadence_hz: 2.0,
            aerobic_sigma: 0.05,
            anaerobic_rate_hz: 0.5,
            anaerobic_amplitude: 1.5,
            anaerobic_decay: 4.0,
            anaerobic_sigma: 0.05,
            latent_gain: 0.4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BvpParams {
    pub amplitude: f64,
    /// Standard deviation of the Gaussian systolic pulse.
    pub width_s: f64,
    pub noise: f64,
}

impl Default for BvpParams {
    fn default() -> Self {
        Self {
            amplitude: 1.0,
            width_s: 0.08,
            noise: 0.02,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthParams {
    pub hr: HrParams,
    pub eda: EdaParams,
    pub temp: TempParams,
    pub acc: AccParams,
    pub bvp: BvpParams,
}

impl SynthParams {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidParams(m.into()));
        let e = &self.eda;
        if !(self.hr.dt > 0.0 && self.hr.dt <= 1.0) {
            return bad("hr.dt must be in (0, 1]");
        }
        if !(e.decay > 0.0) {
            return bad("eda.decay must be positive");
        }
        if !(e.burst_amplitude > 0.0) {
            return bad("eda.burst_amplitude must be positive");
        }
        if let LatentInput::Ou { tau_s, sigma, .. } = e.input {
            if !(tau_s > 0.0 && sigma >= 0.0) {
                return bad("eda.input needs tau_s > 0 and sigma >= 0");
            }
        }
        if !(self.temp.tau_s > 0.0) {
            return bad("temp.tau_s must be positive");
        }
        if !(self.bvp.width_s > 0.0) {
            return bad("bvp.width_s must be positive");
        }
        let json = serde_json::to_value(self).expect("params serialize");
        if !all_finite(&json) {
            return bad("parameters must be finite");
        }
        Ok(())
    }
}

fn all_finite(v: &serde_json::Value) -> bool {
    match v {
        serde_json::Value::Null => false,
        serde_json::Value::Array(a) => a.iter().all(all_finite),
        serde_json::Value::Object(o) => o.values().all(all_finite),
        _ => true,
    }
}

/// Coefficients of `g(z) = w1 z_eda + w2 z_hr + w3 z_temp + w4 z_acc + w5 z_eda z_hr + w6 z_acc^2 + w7 z_eda^3`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VolterraCoeffs {
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
    pub w4: f64,
    pub w5: f64,
    pub w6: f64,
    pub w7: f64,
    /// Ascending cut points; class k holds `thresholds[k-1] < g <= thresholds[k]`.
    pub thresholds: Vec<f64>,
}

impl Default for VolterraCoeffs {
    fn default() -> Self {
        Self {
            w1: 0.0,
            w2: 0.0,
            w3: 0.0,
            w4: 0.0,
            w5: 1.0,
            w6: 0.0,
            w7: 0.0,
            thresholds: vec![0.0],
        }
    }
}

impl VolterraCoeffs {
    fn terms(&self) -> [f64; 7] {
        [self.w1, self.w2, self.w3, self.w4, self.w5, self.w6, self.w7]
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let t = self.terms();
        if t.iter().chain(&self.thresholds).any(|v| !v.is_finite()) {
            return Err(SynthError::InvalidParams("Volterra coefficients must be finite".into()));
        }
        if t.iter().all(|&w| w == 0.0) {
            return Err(SynthError::InvalidParams("Volterra map needs a nonzero term".into()));
        }
        if self.thresholds.is_empty() || self.thresholds.windows(2).any(|w| w[0] >= w[1]) {
            return Err(SynthError::InvalidParams("thresholds must be non-empty and ascending".into()));
        }
        Ok(())
    }

    pub fn n_classes(&self) -> usize {
        self.thresholds.len() + 1
    }

    pub fn classify(&self, g: f64) -> usize {
        self.thresholds.iter().filter(|&&t| g > t).count()
    }
}

pub fn volterra_response(z: &[f64], c: &VolterraCoeffs) -> Result<f64, SynthError> {
    if z.len() != LATENT_DIM {
        return Err(SynthError::ArityMismatch {
            expected: LATENT_DIM,
            got: z.len(),
        });
    }
    let (eda, hr, temp, acc) = (z[0], z[1], z[2], z[3]);
    Ok(c.w1 * eda + c.w2 * hr + c.w3 * temp + c.w4 * acc + c.w5 * eda * hr + c.w6 * acc * acc + c.w7 * eda.powi(3))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassProfile {
    pub name: String,
    pub latent: [f64; LATENT_DIM],
    pub activity: Activity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClassSpec {
    /// Labels from thresholding the Volterra response of each segment's latent vector.
    Threshold {
        coeffs: VolterraCoeffs,
        /// Probability that a segment's label is replaced by another class.
        flip_prob: f64,
        latent_min: f64,
        latent_max: f64,
        /// Magnitudes are redrawn (up to 1000 times) until `g` lies at least this far from every threshold.
        #[serde(default)]
        margin: f64,
    },
    /// Each class has a fixed latent profile and activity; segments cycle through classes.
    Direct {
        classes: Vec<ClassProfile>,
        latent_jitter: f64,
    },
}

impl ClassSpec {
    pub fn class_names(&self) -> Vec<String> {
        match self {
            ClassSpec::Threshold { coeffs, .. } => (0..coeffs.n_classes()).map(|k| format!("C{k}")).collect(),
            ClassSpec::Direct { classes, .. } => classes.iter().map(|c| c.name.clone()).collect(),
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        match self {
            ClassSpec::Threshold {
                coeffs,
                flip_prob,
                latent_min,
                latent_max,
                margin,
            } => {
                coeffs.validate()?;
                if !(*margin >= 0.0 && margin.is_finite()) {
                    return Err(SynthError::InvalidParams("margin must be finite and non-negative".into()));
                }
                if !(0.0..=1.0).contains(flip_prob) {
                    return Err(SynthError::InvalidParams("flip_prob must be in [0, 1]".into()));
                }
                if !(*latent_min >= 0.0 && latent_min <= latent_max && latent_max.is_finite()) {
                    return Err(SynthError::InvalidParams("need 0 <= latent_min <= latent_max".into()));
                }
            }
            ClassSpec::Direct { classes, latent_jitter } => {
                if classes.len() < 2 {
                    return Err(SynthError::InvalidParams("direct mode needs at least two classes".into()));
                }
                if !(*latent_jitter >= 0.0) || classes.iter().flat_map(|c| c.latent).any(|v| !v.is_finite()) {
                    return Err(SynthError::InvalidParams("latent values must be finite".into()));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub n_subjects: usize,
    pub segments_per_subject: usize,
    pub segment_s: f64,
    #[serde(default = "default_start_epoch")]
    pub start_epoch: f64,
    /// Scale of per-subject baseline offsets.
    #[serde(default = "default_spread")]
    pub subject_spread: f64,
    #[serde(default)]
    pub params: SynthParams,
    pub classes: ClassSpec,
}

fn default_start_epoch() -> f64 {
    1_600_000_000.0
}

fn default_spread() -> f64 {
    1.0
}

impl SynthConfig {
    /// `interaction` (label driven by `z_eda * z_hr`), `linear` (by `z_eda + z_hr`)
    /// or `activity` (three directly generated activity classes).
    pub fn preset(name: &str) -> Result<Self, SynthError> {
        let threshold = |coeffs, margin| ClassSpec::Threshold {
            coeffs,
            flip_prob: 0.02,
            latent_min: 0.3,
            latent_max: 1.5,
            margin,
        };
        let classes = match name {
            "interaction" => threshold(VolterraCoeffs {
                w1: 0.05,
                w2: 0.05,
                w5: 1.0,
                ..VolterraCoeffs::default()
            }, 0.0),
            "linear" => threshold(VolterraCoeffs {
                w1: 1.0,
                w2: 1.0,
                w5: 0.0,
                ..VolterraCoeffs::default()
            }, 0.3),
            "activity" => ClassSpec::Direct {
                classes: vec![
                    ClassProfile {
                        name: "sedentary".into(),
                        latent: [-0.5, -1.0, 0.0, 0.0],
                        activity: Activity::Sedentary,
                    },
                    ClassProfile {
                        name: "aerobic".into(),
                        latent: [0.0, 0.5, 0.5, 0.0],
                        activity: Activity::Aerobic,
                    },
                    ClassProfile {
                        name: "anaerobic".into(),
                        latent: [0.5, 1.0, 0.0, 0.0],
                        activity: Activity::Anaerobic,
                    },
                ],
                latent_jitter: 0.3,
            },
            other => return Err(SynthError::InvalidParams(format!("unknown synth preset {other:?}"))),
        };
        Ok(Self {
            n_subjects: 10,
            segments_per_subject: 20,
            segment_s: 60.0,
            start_epoch: default_start_epoch(),
            subject_spread: 1.0,
            params: SynthParams::default(),
            classes,
        })
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.n_subjects == 0 || self.segments_per_subject == 0 {
            return Err(SynthError::InvalidParams("need at least one subject and one segment".into()));
        }
        if !(self.segment_s >= 1.0 && self.segment_s.is_finite()) {
            return Err(SynthError::InvalidParams("segment_s must be at least 1 s".into()));
        }
        if !(self.subject_spread >= 0.0 && self.start_epoch.is_finite()) {
            return Err(SynthError::InvalidParams("subject_spread and start_epoch must be finite".into()));
        }
        self.params.validate()?;
        self.classes.validate()
    }

    pub fn duration_s(&self) -> f64 {
        self.segments_per_subject as f64 * self.segment_s
    }
}

/// Piecewise-constant latent state over a session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentTruth {
    pub label: String,
    pub z: [f64; LATENT_DIM],
    pub activity: Activity,
    pub g: Option<f64>,
}

struct Schedule<'a> {
    segments: &'a [SegmentTruth],
    segment_s: f64,
}

impl Schedule<'_> {
    fn at(&self, t: f64) -> &SegmentTruth {
        let i = ((t / self.segment_s).floor().max(0.0) as usize).min(self.segments.len() - 1);
        &self.segments[i]
    }

    fn z(&self, t: f64, d: usize) -> f64 {
        self.at(t).z[d]
    }
}

fn flat(n: usize) -> Schedule<'static> {
    static ZERO: [SegmentTruth; 1] = [SegmentTruth {
        label: String::new(),
        z: [0.0; LATENT_DIM],
        activity: Activity::Sedentary,
        g: None,
    }];
    Schedule {
        segments: &ZERO,
        segment_s: n.max(1) as f64,
    }
}

fn n_samples(duration_s: f64, rate: f64) -> usize {
    (duration_s * rate).round() as usize
}

fn hr_drive(p: &HrParams, rng: &mut ChaCha8Rng) -> impl Fn(f64) -> f64 {
    let phase: f64 = rng.random_range(0.0..TAU);
    let noise: Vec<(f64, f64)> = (0..4).map(|_| (rng.random_range(0.02..0.4), rng.random_range(0.0..TAU))).collect();
    let (amp, f, na) = (p.drive_amplitude, p.drive_freq_hz, p.drive_noise);
    move |t: f64| {
        amp * (TAU * f * t + phase).sin() + noise.iter().map(|&(fk, pk)| na * (TAU * fk * t + pk).sin()).sum::<f64>()
    }
}

/// Oscillator displacement sampled at 1 Hz, integrated with classical RK4.
pub fn hr_state(p: &HrParams, duration_s: f64, seed: u64) -> Result<Vec<f64>, SynthError> {
    if !(p.dt > 0.0 && p.dt <= 1.0) {
        return Err(SynthError::InvalidParams("hr.dt must be in (0, 1]".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let drive = hr_drive(p, &mut rng);
    let steps = (1.0 / p.dt).round().max(1.0) as usize;
    let h = 1.0 / steps as f64;
    let accel = |t: f64, x: f64, v: f64| p.gamma * drive(t) - (p.a0 + p.a1 * x * x) * v - (p.b0 * x + p.b1 * x * x * x);
    let n = n_samples(duration_s, HR_RATE_HZ);
    let (mut x, mut v) = (p.x0, p.v0);
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        out.push(x);
        for s in 0..steps {
            let t = k as f64 + s as f64 * h;
            let (k1x, k1v) = (v, accel(t, x, v));
            let (k2x, k2v) = (v + 0.5 * h * k1v, accel(t + 0.5 * h, x + 0.5 * h * k1x, v + 0.5 * h * k1v));
            let (k3x, k3v) = (v + 0.5 * h * k2v, accel(t + 0.5 * h, x + 0.5 * h * k2x, v + 0.5 * h * k2v));
            let (k4x, k4v) = (v + h * k3v, accel(t + h, x + h * k3x, v + h * k3v));
            x += h / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x);
            v += h / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
            if !(x.abs() <= BLOW_UP_NORM && v.abs() <= BLOW_UP_NORM) {
                return Err(SynthError::BlowUp { t: t + h });
            }
        }
    }
    Ok(out)
}

fn hr_series(p: &HrParams, duration_s: f64, sched: &Schedule, offset_bpm: f64, seed: u64) -> Result<Vec<f64>, SynthError> {
    let x = hr_state(p, duration_s, seed)?;
    Ok(x.iter()
        .enumerate()
        .map(|(k, xv)| {
            let t = k as f64 / HR_RATE_HZ;
            p.base_bpm + offset_bpm + p.latent_gain_bpm * sched.z(t, 1) + p.scale_bpm * xv
        })
        .collect())
}

/// Heart rate in bpm at 1 Hz, starting at epoch 0.
pub fn simulate_hr(p: &HrParams, duration_s: f64, seed: u64) -> Result<SampledSeries, SynthError> {
    if duration_s < 1.0 {
        return Err(SynthError::InvalidParams("duration must be at least 1 s".into()));
    }
    let n = n_samples(duration_s, HR_RATE_HZ);
    Ok(SampledSeries::new(0.0, HR_RATE_HZ, hr_series(p, duration_s, &flat(n), 0.0, seed)?))
}

/// EDA samples with the tonic part and burst onsets kept separately.
#[derive(Debug, Clone, PartialEq)]
pub struct EdaTrace {
    pub series: SampledSeries,
    pub tonic: Vec<f64>,
    pub onsets: Vec<f64>,
}

fn eda_trace(p: &EdaParams, duration_s: f64, sched: &Schedule, scale: f64, rng: &mut ChaCha8Rng) -> EdaTrace {
    let n = n_samples(duration_s, EDA_RATE_HZ);
    let dt = 1.0 / EDA_RATE_HZ;
    let shift = |t: f64| p.input_gain * sched.z(t, 0);
    let mut u_prev = f64::NAN;
    let mut tonic = Vec::with_capacity(n);
    let mut values = Vec::with_capacity(n);
    let mut onsets = Vec::new();
    let mut phasic = 0.0;
    let keep = (-p.decay * dt).exp();
    for i in 0..n {
        let t = i as f64 * dt;
        let u = match &p.input {
            LatentInput::Ou { mean, tau_s, sigma } => {
                let m = mean + shift(t);
                if i == 0 {
                    m + sigma * normal(rng)
                } else {
                    let a = (-dt / tau_s).exp();
                    m + (u_prev - m) * a + sigma * (1.0 - a * a).sqrt() * normal(rng)
                }
            }
            LatentInput::Pulses { onsets, width_s, height } => {
                let on = onsets.iter().any(|&o| t >= o && t < o + width_s);
                shift(t) + if on { *height } else { 0.0 }
            }
            LatentInput::Constant { value } => value + shift(t),
        };
        phasic *= keep;
        if i > 0 && u_prev <= p.threshold && u > p.threshold {
            onsets.push(t);
            phasic += p.burst_amplitude;
        }
        u_prev = u;
        let tn = scale * (p.base_us + p.drift_per_s * t) + p.tonic_gain_us * sched.z(t, 0);
        tonic.push(tn);
        let noise = if p.noise > 0.0 { p.noise * normal(rng) } else { 0.0 };
        values.push(tn + phasic + noise);
    }
    EdaTrace {
        series: SampledSeries::new(0.0, EDA_RATE_HZ, values),
        tonic,
        onsets,
    }
}

pub fn simulate_eda_trace(p: &EdaParams, duration_s: f64, seed: u64) -> Result<EdaTrace, SynthError> {
    if duration_s < 1.0 {
        return Err(SynthError::InvalidParams("duration must be at least 1 s".into()));
    }
    let n = n_samples(duration_s, EDA_RATE_HZ);
    Ok(eda_trace(p, duration_s, &flat(n), 1.0, &mut ChaCha8Rng::seed_from_u64(seed)))
}

/// EDA in microsiemens at 4 Hz.
pub fn simulate_eda(p: &EdaParams, duration_s: f64, seed: u64) -> Result<SampledSeries, SynthError> {
    simulate_eda_trace(p, duration_s, seed).map(|t| t.series)
}

fn temp_series(p: &TempParams, duration_s: f64, sched: &Schedule, offset: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = n_samples(duration_s, TEMP_RATE_HZ);
    let dt = 1.0 / TEMP_RATE_HZ;
    let pull = 1.0 - (-dt / p.tau_s).exp();
    let target = |t: f64| p.base_c + offset + p.drift_per_s * t + p.latent_gain_c * sched.z(t, 2);
    let mut v = target(0.0);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 * dt;
        if i > 0 {
            v += (target(t) - v) * pull;
        }
        let noise = if p.noise > 0.0 { p.noise * normal(rng) } else { 0.0 };
        out.push(v + noise);
    }
    out
}

/// Skin temperature at 4 Hz.
pub fn simulate_temp(p: &TempParams, duration_s: f64, seed: u64) -> Result<SampledSeries, SynthError> {
    if duration_s < 1.0 {
        return Err(SynthError::InvalidParams("duration must be at least 1 s".into()));
    }
    let n = n_samples(duration_s, TEMP_RATE_HZ);
    Ok(SampledSeries::new(
        0.0,
        TEMP_RATE_HZ,
        temp_series(p, duration_s, &flat(n), 0.0, &mut ChaCha8Rng::seed_from_u64(seed)),
    ))
}

fn acc_axes(p: &AccParams, duration_s: f64, sched: &Schedule, rng: &mut ChaCha8Rng) -> [Vec<f64>; 3] {
    let n = n_samples(duration_s, ACC_RATE_HZ);
    let dt = 1.0 / ACC_RATE_HZ;
    let mut axes = [Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n)];
    let mut bursts = [0.0f64; 3];
    let keep = (-p.anaerobic_decay * dt).exp();
    let hit = 1.0 - (-p.anaerobic_rate_hz * dt).exp();
    let eps = |s: f64, rng: &mut ChaCha8Rng| if s > 0.0 { s * normal(rng) } else { 0.0 };
    for i in 0..n {
        let t = i as f64 * dt;
        let seg = sched.at(t);
        let k = (p.latent_gain * seg.z[3]).exp();
        let w = TAU * p.cadence_hz * t;
        let v = match seg.activity {
            Activity::Sedentary => {
                let s = p.sedentary_sigma * k;
                [eps(s, rng), eps(s, rng), 1.0 + eps(s, rng)]
            }
            Activity::Aerobic => {
                let (a, s) = (p.aerobic_amplitude * k, p.aerobic_sigma);
                [
                    a * w.sin() + eps(s, rng),
                    0.5 * a * w.cos() + eps(s, rng),
                    1.0 + a / 3.0 * (2.0 * w).sin() + eps(s, rng),
                ]
            }
            Activity::Anaerobic => {
                for b in bursts.iter_mut() {
                    *b *= keep;
                }
                if rng.random::<f64>() < hit {
                    for b in bursts.iter_mut() {
                        *b += p.anaerobic_amplitude * k * normal(rng);
                    }
                }
                let s = p.anaerobic_sigma;
                [bursts[0] + eps(s, rng), bursts[1] + eps(s, rng), 1.0 + bursts[2] + eps(s, rng)]
            }
        };
        for (ax, x) in axes.iter_mut().zip(v) {
            ax.push(x);
        }
    }
    axes
}

/// Three ACC axes in g at 32 Hz for one activity.
pub fn simulate_acc(p: &AccParams, activity: Activity, duration_s: f64, seed: u64) -> Result<[SampledSeries; 3], SynthError> {
    if duration_s < 1.0 {
        return Err(SynthError::InvalidParams("duration must be at least 1 s".into()));
    }
    let seg = [SegmentTruth {
        label: String::new(),
        z: [0.0; LATENT_DIM],
        activity,
        g: None,
    }];
    let sched = Schedule {
        segments: &seg,
        segment_s: duration_s,
    };
    let axes = acc_axes(p, duration_s, &sched, &mut ChaCha8Rng::seed_from_u64(seed));
    Ok(axes.map(|v| SampledSeries::new(0.0, ACC_RATE_HZ, v)))
}

/// Beat times (seconds from start) whose instantaneous rate follows `hr` (bpm at 1 Hz,
/// linearly interpolated), starting from `phase0` of a cycle.
pub fn beat_times(hr: &[f64], duration_s: f64, phase0: f64) -> Vec<f64> {
    let bpm = |t: f64| {
        let k = (t.floor() as usize).min(hr.len() - 1);
        let next = hr[(k + 1).min(hr.len() - 1)];
        let f = (t - k as f64).clamp(0.0, 1.0);
        hr[k] + f * (next - hr[k])
    };
    let dt = 1.0 / BVP_RATE_HZ;
    let n = n_samples(duration_s, BVP_RATE_HZ);
    let mut beats = Vec::new();
    let mut phase = phase0;
    for i in 0..n.saturating_sub(1) {
        let t = i as f64 * dt;
        let step = 0.5 * (bpm(t) + bpm(t + dt)) / 60.0 * dt;
        let next = phase + step;
        if next.floor() > phase.floor() {
            let frac = (next.floor() - phase) / step;
            beats.push(t + frac * dt);
        }
        phase = next;
    }
    beats
}

fn bvp_series(p: &BvpParams, duration_s: f64, beats: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = n_samples(duration_s, BVP_RATE_HZ);
    let mut v = vec![0.0; n];
    let reach = 6.0 * p.width_s;
    for &b in beats {
        let lo = ((b - reach) * BVP_RATE_HZ).floor().max(0.0) as usize;
        let hi = (((b + reach) * BVP_RATE_HZ).ceil() as usize).min(n);
        for (i, x) in v.iter_mut().enumerate().take(hi).skip(lo) {
            let d = i as f64 / BVP_RATE_HZ - b;
            *x += p.amplitude * (-d * d / (2.0 * p.width_s * p.width_s)).exp();
        }
    }
    if p.noise > 0.0 {
        for x in &mut v {
            *x += p.noise * normal(rng);
        }
    }
    v
}

/// BVP pulse train driven by `hr`, together with its ground-truth beat times.
pub fn simulate_bvp(p: &BvpParams, hr: &[f64], duration_s: f64, seed: u64) -> Result<(SampledSeries, Vec<f64>), SynthError> {
    if hr.is_empty() || duration_s < 1.0 {
        return Err(SynthError::InvalidParams("BVP needs an HR trace and at least 1 s".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let beats = beat_times(hr, duration_s, rng.random::<f64>());
    let v = bvp_series(p, duration_s, &beats, &mut rng);
    Ok((SampledSeries::new(0.0, BVP_RATE_HZ, v), beats))
}

/// A generated session with the latent truth behind each segment.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSession {
    pub recording: Recording,
    pub truth: Vec<SegmentTruth>,
    pub beats: Vec<f64>,
}

fn draw_segments(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<SegmentTruth> {
    let n = cfg.segments_per_subject;
    match &cfg.classes {
        ClassSpec::Threshold {
            coeffs,
            flip_prob,
            latent_min,
            latent_max,
            margin,
        } => {
            // balanced sign patterns over the four latent axes
            let mut patterns: Vec<usize> = (0..n).map(|j| j % 16).collect();
            patterns.shuffle(rng);
            let names = cfg.classes.class_names();
            patterns
                .into_iter()
                .map(|pat| {
                    let mut z = [0.0; LATENT_DIM];
                    let mut g = 0.0;
                    for _ in 0..1000 {
                        for (d, zd) in z.iter_mut().enumerate() {
                            let sign = if (pat >> d) & 1 == 1 { 1.0 } else { -1.0 };
                            let mag = if latent_max > latent_min {
                                rng.random_range(*latent_min..*latent_max)
                            } else {
                                *latent_min
                            };
                            *zd = sign * mag;
                        }
                        g = volterra_response(&z, coeffs).expect("latent arity");
                        if coeffs.thresholds.iter().all(|t| (g - t).abs() >= *margin) {
                            break;
                        }
                    }
                    let mut k = coeffs.classify(g);
                    if rng.random::<f64>() < *flip_prob {
                        let other = rng.random_range(0..names.len() - 1);
                        k = if other >= k { other + 1 } else { other };
                    }
                    SegmentTruth {
                        label: names[k].clone(),
                        z,
                        activity: Activity::Sedentary,
                        g: Some(g),
                    }
                })
                .collect()
        }
        ClassSpec::Direct { classes, latent_jitter } => {
            let mut order: Vec<usize> = (0..n).map(|j| j % classes.len()).collect();
            order.shuffle(rng);
            order
                .into_iter()
                .map(|c| {
                    let prof = &classes[c];
                    let mut z = prof.latent;
                    for zd in &mut z {
                        *zd += latent_jitter * normal(rng);
                    }
                    SegmentTruth {
                        label: prof.name.clone(),
                        z,
                        activity: prof.activity,
                        g: None,
                    }
                })
                .collect()
        }
    }
}

/// Subject ids `S01`, `S02`, ...
pub fn subject_id(index: usize, n_subjects: usize) -> String {
    let width = n_subjects.to_string().len().max(2);
    format!("S{:0width$}", index + 1)
}

/// One subject's session. Output is a pure function of `(cfg, index, seed)`.
pub fn generate_session(cfg: &SynthConfig, index: usize, seed: u64) -> Result<SynthSession, SynthError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    let p = &cfg.params;
    let spread = cfg.subject_spread;
    let hr_offset = spread * 6.0 * normal(&mut rng);
    let eda_scale = (spread * 0.4 * normal(&mut rng)).exp();
    let temp_offset = spread * 0.5 * normal(&mut rng);
    let truth = draw_segments(cfg, &mut rng);
    let seeds: Vec<u64> = (0..5).map(|_| rng.next_u64()).collect();

    let duration = cfg.duration_s();
    let sched = Schedule {
        segments: &truth,
        segment_s: cfg.segment_s,
    };
    let hr = hr_series(&p.hr, duration, &sched, hr_offset, seeds[0])?;
    let eda = eda_trace(&p.eda, duration, &sched, eda_scale, &mut ChaCha8Rng::seed_from_u64(seeds[1]));
    let temp = temp_series(&p.temp, duration, &sched, temp_offset, &mut ChaCha8Rng::seed_from_u64(seeds[2]));
    let acc = acc_axes(&p.acc, duration, &sched, &mut ChaCha8Rng::seed_from_u64(seeds[3]));
    let (bvp, beats) = simulate_bvp(&p.bvp, &hr, duration, seeds[4])?;

    let t0 = cfg.start_epoch + index as f64 * 86_400.0;
    let mut channels = BTreeMap::new();
    channels.insert(Modality::Eda, SampledSeries::new(t0, EDA_RATE_HZ, eda.series.values));
    channels.insert(Modality::Temp, SampledSeries::new(t0, TEMP_RATE_HZ, temp));
    channels.insert(Modality::Hr, SampledSeries::new(t0, HR_RATE_HZ, hr));
    channels.insert(Modality::Bvp, SampledSeries::new(t0, BVP_RATE_HZ, bvp.values));
    for (m, v) in [Modality::AccX, Modality::AccY, Modality::AccZ].into_iter().zip(acc) {
        channels.insert(m, SampledSeries::new(t0, ACC_RATE_HZ, v));
    }
    let ibi = EventSeries {
        start_epoch: t0,
        events: beats
            .windows(2)
            .map(|w| IbiEvent {
                offset_s: w[1],
                duration_s: w[1] - w[0],
            })
            .collect(),
    };
    let segments = truth
        .iter()
        .enumerate()
        .map(|(j, s)| LabelSegment {
            label: s.label.clone(),
            t_start: t0 + j as f64 * cfg.segment_s,
            t_end: t0 + (j + 1) as f64 * cfg.segment_s,
        })
        .collect();
    Ok(SynthSession {
        recording: Recording {
            subject_id: subject_id(index, cfg.n_subjects),
            channels,
            ibi: Some(ibi),
            segments,
            screening: ScreeningReport::default(),
        },
        truth,
        beats,
    })
}

pub fn generate_cohort(cfg: &SynthConfig, seed: u64) -> Result<Vec<SynthSession>, SynthError> {
    cfg.validate()?;
    (0..cfg.n_subjects)
        .into_par_iter()
        .map(|i| generate_session(cfg, i, seed))
        .collect()
}

/// Writes one E4 directory per session plus `manifest.json`; returns the manifest path.
pub fn write_cohort(dir: &Path, cfg: &SynthConfig, sessions: &[SynthSession]) -> Result<PathBuf, SynthError> {
    let io = |e: &dyn std::fmt::Display| SynthError::Io(e.to_string());
    fs::create_dir_all(dir).map_err(|e| io(&e))?;
    sessions
        .par_iter()
        .try_for_each(|s| write_session(&dir.join(&s.recording.subject_id), &s.recording).map_err(|e| io(&e)))?;
    let manifest = Manifest {
        dataset: "synthetic".into(),
        performance_threshold: None,
        sessions: sessions
            .iter()
            .map(|s| SessionEntry {
                subject_id: s.recording.subject_id.clone(),
                path: PathBuf::from(&s.recording.subject_id),
                segments: (0..s.truth.len())
                    .map(|j| ManifestSegment {
                        label: Some(s.truth[j].label.clone()),
                        t_start: j as f64 * cfg.segment_s,
                        t_end: (j + 1) as f64 * cfg.segment_s,
                    })
                    .collect(),
                time_base: TimeBase::Relative,
                performance_score: None,
                performance_threshold: None,
            })
            .collect(),
        base_dir: PathBuf::new(),
    };
    let path = dir.join("manifest.json");
    let body = serde_json::to_string_pretty(&manifest).map_err(|e| io(&e))? + "\n";
    fs::write(&path, body).map_err(|e| io(&e))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{scr_peak_count, ScrConfig};
    use proptest::prelude::*;

    #[test]
    fn damped_oscillator_settles() {
        let p = HrParams {
            a0: 1.0,
            a1: 0.0,
            b0: 1.0,
            b1: 0.0,
            gamma: 0.0,
            x0: 0.01,
            ..HrParams::default()
        };
        let x = hr_state(&p, 120.0, 1).unwrap();
        let late = &x[100..];
        let m = late.iter().sum::<f64>() / late.len() as f64;
        let sd = (late.iter().map(|v| (v - m).powi(2)).sum::<f64>() / late.len() as f64).sqrt();
        assert!(sd < 1e-3);
        let fine = hr_state(&HrParams { dt: p.dt / 100.0, ..p.clone() }, 120.0, 1).unwrap();
        let sup = x.iter().zip(&fine).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(sup < 1e-6, "{sup}");
    }

    #[test]
    fn integrator_self_convergence() {
        for p in [HrParams::default(), HrParams::oscillating()] {
            let a = hr_state(&p, 300.0, 7).unwrap();
            let b = hr_state(&HrParams { dt: p.dt / 2.0, ..p.clone() }, 300.0, 7).unwrap();
            let sup = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            assert!(sup < 1e-4, "{sup}");
            assert_eq!(a, hr_state(&p, 300.0, 7).unwrap());
        }
    }

    #[test]
    fn blow_up_reported() {
        let p = HrParams {
            a0: -5.0,
            a1: 0.0,
            b0: -5.0,
            x0: 1.0,
            ..HrParams::default()
        };
        assert!(matches!(hr_state(&p, 600.0, 0), Err(SynthError::BlowUp { .. })));
    }

    fn quiet_eda(input: LatentInput) -> EdaParams {
        EdaParams {
            input,
            noise: 0.0,
            input_gain: 0.0,
            ..EdaParams::default()
        }
    }

    #[test]
    fn eda_below_threshold_is_tonic() {
        let p = quiet_eda(LatentInput::Constant { value: 0.0 });
        let t = simulate_eda_trace(&p, 120.0, 3).unwrap();
        assert!(t.onsets.is_empty());
        assert_eq!(t.series.values, t.tonic);
        assert_eq!(scr_peak_count(&t.series.values, EDA_RATE_HZ, &ScrConfig::default()), 0);
    }

    #[test]
    fn eda_single_burst_exact() {
        let p = quiet_eda(LatentInput::Pulses {
            onsets: vec![10.0],
            width_s: 1.0,
            height: 5.0,
        });
        let t = simulate_eda_trace(&p, 60.0, 0).unwrap();
        assert_eq!(t.onsets, vec![10.0]);
        for (i, (v, tn)) in t.series.values.iter().zip(&t.tonic).enumerate() {
            let s = i as f64 / EDA_RATE_HZ;
            let want = if s >= 10.0 { tn + p.burst_amplitude * (-p.decay * (s - 10.0)).exp() } else { *tn };
            assert!((v - want).abs() < 1e-12, "{s}");
        }
    }

    #[test]
    fn isolated_bursts_counted() {
        for n in 1..=6 {
            let onsets: Vec<f64> = (0..n).map(|k| 10.0 + 20.0 * k as f64).collect();
            let p = quiet_eda(LatentInput::Pulses {
                onsets: onsets.clone(),
                width_s: 1.0,
                height: 5.0,
            });
            let t = simulate_eda_trace(&p, 20.0 * n as f64 + 20.0, 0).unwrap();
            assert_eq!(t.onsets, onsets);
            assert_eq!(scr_peak_count(&t.series.values, EDA_RATE_HZ, &ScrConfig::default()), n);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn bursts_superpose(seed in any::<u64>()) {
            let p = EdaParams { noise: 0.0, ..EdaParams::default() };
            let t = simulate_eda_trace(&p, 300.0, seed).unwrap();
            for (i, (v, tn)) in t.series.values.iter().zip(&t.tonic).enumerate() {
                let s = i as f64 / EDA_RATE_HZ;
                let analytic: f64 = t.onsets.iter().filter(|&&o| o <= s).map(|o| p.burst_amplitude * (-p.decay * (s - o)).exp()).sum();
                prop_assert!((v - tn - analytic).abs() < 1e-9);
            }
        }

        #[test]
        fn volterra_matches_terms(z in prop::array::uniform4(-3.0f64..3.0), w in prop::array::uniform7(-2.0f64..2.0)) {
            let c = VolterraCoeffs { w1: w[0], w2: w[1], w3: w[2], w4: w[3], w5: w[4], w6: w[5], w7: w[6], thresholds: vec![0.0] };
            let terms = [z[0], z[1], z[2], z[3], z[0] * z[1], z[3] * z[3], z[0] * z[0] * z[0]];
            let direct: f64 = terms.iter().zip(w).map(|(t, w)| t * w).sum();
            prop_assert!((volterra_response(&z, &c).unwrap() - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn volterra_examples() {
        let zero = VolterraCoeffs { w5: 0.0, ..VolterraCoeffs::default() };
        assert_eq!(volterra_response(&[1.0, 2.0, 3.0, 4.0], &zero).unwrap(), 0.0);
        assert!(zero.validate().is_err());
        let w5 = VolterraCoeffs::default();
        assert_eq!(volterra_response(&[2.0, 3.0, 0.0, 0.0], &w5).unwrap(), 6.0);
        assert_eq!(
            volterra_response(&[1.0], &w5),
            Err(SynthError::ArityMismatch { expected: 4, got: 1 })
        );
    }

    fn axis_std(v: &[f64]) -> f64 {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
    }

    #[test]
    fn sedentary_quieter_than_aerobic() {
        let p = AccParams::default();
        for seed in 0..100 {
            let s = simulate_acc(&p, Activity::Sedentary, 10.0, seed).unwrap();
            let a = simulate_acc(&p, Activity::Aerobic, 10.0, seed).unwrap();
            for k in 0..3 {
                assert!(axis_std(&s[k].values) < axis_std(&a[k].values));
            }
        }
        assert_eq!("jogging".parse::<Activity>(), Err(SynthError::UnknownClass("jogging".into())));
    }

    #[test]
    fn aerobic_cadence_dominates_spectrum() {
        let p = AccParams {
            cadence_hz: 2.5,
            ..AccParams::default()
        };
        let x = &simulate_acc(&p, Activity::Aerobic, 60.0, 11).unwrap()[0].values;
        let n = x.len();
        let m = x.iter().sum::<f64>() / n as f64;
        let power = |k: usize| {
            let (mut re, mut im) = (0.0, 0.0);
            for (i, v) in x.iter().enumerate() {
                let a = TAU * (k * i) as f64 / n as f64;
                re += (v - m) * a.cos();
                im -= (v - m) * a.sin();
            }
            re * re + im * im
        };
        let best = (1..n / 2).max_by(|&a, &b| power(a).total_cmp(&power(b))).unwrap();
        assert!((best as f64 * ACC_RATE_HZ / n as f64 - 2.5).abs() < 1e-9);
    }

    #[test]
    fn zero_noise_acc_ignores_seed() {
        let p = AccParams {
            sedentary_sigma: 0.0,
            aerobic_sigma: 0.0,
            ..AccParams::default()
        };
        for a in [Activity::Sedentary, Activity::Aerobic] {
            assert_eq!(simulate_acc(&p, a, 5.0, 1).unwrap(), simulate_acc(&p, a, 5.0, 2).unwrap());
        }
    }

    #[test]
    fn bvp_beats_follow_hr() {
        let hr = vec![60.0; 30];
        let (bvp, beats) = simulate_bvp(&BvpParams::default(), &hr, 30.0, 0).unwrap();
        assert_eq!(bvp.len(), 30 * 64);
        assert!(beats.len() >= 29 && beats.len() <= 30);
        for w in beats.windows(2) {
            assert!((w[1] - w[0] - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn sessions_are_deterministic_and_labelled() {
        let mut cfg = SynthConfig::preset("interaction").unwrap();
        cfg.n_subjects = 3;
        cfg.segments_per_subject = 8;
        let a = generate_cohort(&cfg, 5).unwrap();
        let b = generate_cohort(&cfg, 5).unwrap();
        assert_eq!(a, b);
        assert_ne!(a[0].recording, generate_cohort(&cfg, 6).unwrap()[0].recording);
        for s in &a {
            assert_eq!(s.recording.segments.len(), 8);
            assert_eq!(s.recording.channels[&Modality::Bvp].len(), 8 * 60 * 64);
            assert_eq!(s.recording.channels[&Modality::Hr].len(), 8 * 60);
        }
        assert_eq!(a.iter().map(|s| s.recording.subject_id.as_str()).collect::<Vec<_>>(), ["S01", "S02", "S03"]);
    }

    #[test]
    fn interaction_labels_hide_marginal_signal() {
        let cfg = SynthConfig::preset("interaction").unwrap();
        let cohort = generate_cohort(&cfg, 1).unwrap();
        let mut sums = [[0.0; 2]; 2];
        let mut counts = [0.0; 2];
        for t in cohort.iter().flat_map(|s| &s.truth) {
            let k = (t.label == "C1") as usize;
            counts[k] += 1.0;
            for d in 0..2 {
                sums[k][d] += t.z[d];
            }
        }
        for d in 0..2 {
            let gap = (sums[1][d] / counts[1] - sums[0][d] / counts[0]).abs();
            assert!(gap < 0.2, "axis {d}: {gap}");
        }
        assert!((counts[0] - counts[1]).abs() <= 0.2 * (counts[0] + counts[1]));
    }

    #[test]
    fn presets_never_blow_up() {
        for name in ["interaction", "linear", "activity"] {
            let cfg = SynthConfig::preset(name).unwrap();
            cfg.validate().unwrap();
            generate_session(&cfg, 0, 42).unwrap();
        }
        hr_state(&HrParams::oscillating(), 3600.0, 1).unwrap();
    }
}
