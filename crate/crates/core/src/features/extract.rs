//! Per-window feature formulas.

use serde::{Deserialize, Serialize};

use super::peaks::find_peaks;
use super::FeatureError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScrConfig {
    /// Trailing moving-average length used as the tonic level.
    pub tonic_window_s: f64,
    pub min_prominence: f64,
    pub min_distance_s: f64,
}

impl Default for ScrConfig {
    fn default() -> Self {
        Self {
            tonic_window_s: 4.0,
            min_prominence: 0.01,
            min_distance_s: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BvpPeakConfig {
    /// Refractory period between systolic peaks.
    pub min_rr_s: f64,
    /// Required prominence as a multiple of the window standard deviation.
    pub prominence_k: f64,
}

impl Default for BvpPeakConfig {
    fn default() -> Self {
        Self {
            min_rr_s: 0.33,
            prominence_k: 0.5,
        }
    }
}

pub fn mean(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().sum::<f64>() / x.len() as f64
}

/// Population standard deviation.
pub fn pop_std(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    let m = mean(x);
    (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / x.len() as f64).sqrt()
}

/// Bessel-corrected standard deviation; `None` below two values.
pub fn sample_std(x: &[f64]) -> Option<f64> {
    if x.len() < 2 {
        return None;
    }
    let m = mean(x);
    Some((x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64).sqrt())
}

/// Least-squares slope of value against time in seconds.
pub fn linear_slope(samples: &[f64], rate_hz: f64) -> Result<f64, FeatureError> {
    let n = samples.len();
    if n < 2 {
        return Err(FeatureError::TooFewSamples { needed: 2, got: n });
    }
    let t_mean = (n - 1) as f64 / 2.0 / rate_hz;
    let y_mean = mean(samples);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (i, &y) in samples.iter().enumerate() {
        let dt = i as f64 / rate_hz - t_mean;
        sxy += dt * (y - y_mean);
        sxx += dt * dt;
    }
    Ok(sxy / sxx)
}

/// Sample minus its trailing moving average.
pub fn phasic_component(eda: &[f64], rate_hz: f64, tonic_window_s: f64) -> Vec<f64> {
    let len = ((tonic_window_s * rate_hz).round() as usize).max(1);
    (0..eda.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(len);
            eda[i] - mean(&eda[lo..=i])
        })
        .collect()
}

/// Skin conductance responses: prominent maxima of the phasic component.
pub fn scr_peak_count(eda: &[f64], rate_hz: f64, cfg: &ScrConfig) -> usize {
    if eda.len() < 3 {
        return 0;
    }
    let phasic = phasic_component(eda, rate_hz, cfg.tonic_window_s);
    let distance = ((cfg.min_distance_s * rate_hz).round() as usize).max(1);
    find_peaks(&phasic, distance, cfg.min_prominence).len()
}

/// `[mean, std, slope, scr_peaks]`.
pub fn eda_features(eda: &[f64], rate_hz: f64, cfg: &ScrConfig) -> Result<[f64; 4], FeatureError> {
    Ok([
        mean(eda),
        pop_std(eda),
        linear_slope(eda, rate_hz)?,
        scr_peak_count(eda, rate_hz, cfg) as f64,
    ])
}

pub fn temp_features(temp: &[f64]) -> Result<[f64; 2], FeatureError> {
    if temp.is_empty() {
        return Err(FeatureError::TooFewSamples { needed: 1, got: 0 });
    }
    Ok([mean(temp), pop_std(temp)])
}

/// SDNN and RMSSD of an interval sequence (seconds).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HrvStats {
    pub sdnn: f64,
    pub rmssd: f64,
}

pub fn rmssd(intervals: &[f64]) -> Option<f64> {
    if intervals.len() < 2 {
        return None;
    }
    let sq: f64 = intervals.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum();
    Some((sq / (intervals.len() - 1) as f64).sqrt())
}

pub fn hrv_stats(intervals: &[f64]) -> Result<HrvStats, FeatureError> {
    match (sample_std(intervals), rmssd(intervals)) {
        (Some(sdnn), Some(rmssd)) => Ok(HrvStats { sdnn, rmssd }),
        _ => Err(FeatureError::InsufficientBeats {
            needed: 2,
            got: intervals.len(),
        }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HrBlock {
    pub hr_mean: f64,
    pub hr_std: f64,
    pub hrv: Option<HrvStats>,
}

/// Heart-rate statistics from the 1 Hz HR channel and HRV from beat intervals.
pub fn hrv_from_ibi(hr: &[f64], ibi_durations: &[f64]) -> Result<HrBlock, FeatureError> {
    if hr.is_empty() {
        return Err(FeatureError::TooFewSamples { needed: 1, got: 0 });
    }
    Ok(HrBlock {
        hr_mean: mean(hr),
        hr_std: pop_std(hr),
        hrv: hrv_stats(ibi_durations).ok(),
    })
}

/// Systolic peak timestamps (seconds) from a BVP slice.
pub fn detect_bvp_peaks(bvp: &[f64], start_epoch: f64, rate_hz: f64, cfg: &BvpPeakConfig) -> Vec<f64> {
    let distance = ((cfg.min_rr_s * rate_hz).ceil() as usize).max(1);
    let min_prom = cfg.prominence_k * pop_std(bvp);
    find_peaks(bvp, distance, min_prom)
        .into_iter()
        .map(|i| start_epoch + i as f64 / rate_hz)
        .collect()
}

pub fn intervals_from_peaks(peaks: &[f64]) -> Vec<f64> {
    peaks.windows(2).map(|w| w[1] - w[0]).collect()
}

pub fn hrv_from_peaks(peaks: &[f64]) -> Result<HrvStats, FeatureError> {
    if peaks.len() < 3 {
        return Err(FeatureError::InsufficientBeats {
            needed: 3,
            got: peaks.len(),
        });
    }
    hrv_stats(&intervals_from_peaks(peaks))
}

/// `[mean |x - mean|, mean (x - mean)^2]`.
pub fn bvp_features(bvp: &[f64]) -> Result<[f64; 2], FeatureError> {
    if bvp.is_empty() {
        return Err(FeatureError::TooFewSamples { needed: 1, got: 0 });
    }
    let m = mean(bvp);
    let n = bvp.len() as f64;
    let amp = bvp.iter().map(|v| (v - m).abs()).sum::<f64>() / n;
    let energy = bvp.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
    Ok([amp, energy])
}

/// `[mean_x, std_x, mean_y, std_y, mean_z, std_z]`.
pub fn acc_features(x: &[f64], y: &[f64], z: &[f64]) -> Result<[f64; 6], FeatureError> {
    if x.is_empty() || y.is_empty() || z.is_empty() {
        return Err(FeatureError::TooFewSamples { needed: 1, got: 0 });
    }
    Ok([mean(x), pop_std(x), mean(y), pop_std(y), mean(z), pop_std(z)])
}
