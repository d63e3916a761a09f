//! Paired-comparison statistics: normality screening, t and signed-rank
//! tests, multiple-comparison corrections and effect sizes.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};
use thiserror::Error;

/// Above this many non-zero differences the signed-rank test uses the normal approximation.
pub const WILCOXON_EXACT_MAX_N: usize = 25;

/// Shapiro p above this selects the t-test.
pub const NORMALITY_ALPHA: f64 = 0.05;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("sample size {0} outside [3, 5000]")]
    SampleSizeOutOfRange(usize),
    #[error("sample has zero range")]
    ZeroRange,
    #[error("paired samples differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least two pairs")]
    TooFewPairs,
    #[error("all paired differences are zero")]
    AllZeroDifferences,
    #[error("differences have zero variance")]
    ZeroVariance { positive: bool },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Correction {
    Bonferroni,
    #[default]
    #[serde(alias = "bh", alias = "bh_fdr")]
    Fdr,
}

impl std::str::FromStr for Correction {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "bonferroni" => Ok(Self::Bonferroni),
            "fdr" | "bh" | "bh_fdr" => Ok(Self::Fdr),
            other => Err(format!("unknown correction '{other}' (expected bonferroni or fdr)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub test_name: String,
    pub statistic: f64,
    pub p_value: f64,
    /// Filled in by [`apply_correction`]; equals `p_value` until then.
    pub p_corrected: f64,
    pub n: usize,
    pub normality_p: Option<f64>,
    pub effect_size_d: Option<f64>,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adjusted {
    pub p: Vec<f64>,
    pub reject: Vec<bool>,
}

fn poly(c: &[f64], x: f64) -> f64 {
    let mut acc = 0.0;
    for &ci in c.iter().rev() {
        acc = acc * x + ci;
    }
    acc
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

/// Shapiro–Wilk W and its p value (Royston's approximation).
pub fn shapiro_wilk(sample: &[f64]) -> Result<(f64, f64), StatsError> {
    const C1: [f64; 6] = [0.0, 0.221157, -0.147981, -2.07119, 4.434685, -2.706056];
    const C2: [f64; 6] = [0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633];
    const C3: [f64; 4] = [0.544, -0.39978, 0.025054, -6.714e-4];
    const C4: [f64; 4] = [1.3822, -0.77857, 0.062767, -0.0020322];
    const C5: [f64; 4] = [-1.5861, -0.31082, -0.083751, 0.0038915];
    const C6: [f64; 3] = [-0.4803, -0.082676, 0.0030302];
    const G: [f64; 2] = [-2.273, 0.459];

    let n = sample.len();
    if !(3..=5000).contains(&n) {
        return Err(StatsError::SampleSizeOutOfRange(n));
    }
    let mut x = sample.to_vec();
    x.sort_by(f64::total_cmp);
    let range = x[n - 1] - x[0];
    if range < 1e-19 {
        return Err(StatsError::ZeroRange);
    }

    let half = n / 2;
    let an = n as f64;
    let mut a = vec![0.0; half];
    if n == 3 {
        a[0] = std::f64::consts::FRAC_1_SQRT_2;
    } else {
        let norm = std_normal();
        let m: Vec<f64> = (1..=half)
            .map(|i| norm.inverse_cdf((i as f64 - 0.375) / (an + 0.25)))
            .collect();
        let summ2 = 2.0 * m.iter().map(|v| v * v).sum::<f64>();
        let ssumm2 = summ2.sqrt();
        let rsn = 1.0 / an.sqrt();
        let a1 = poly(&C1, rsn) - m[0] / ssumm2;
        let (first, fac) = if n > 5 {
            let a2 = -m[1] / ssumm2 + poly(&C2, rsn);
            let fac = ((summ2 - 2.0 * m[0] * m[0] - 2.0 * m[1] * m[1])
                / (1.0 - 2.0 * a1 * a1 - 2.0 * a2 * a2))
                .sqrt();
            a[1] = a2;
            (2, fac)
        } else {
            let fac = ((summ2 - 2.0 * m[0] * m[0]) / (1.0 - 2.0 * a1 * a1)).sqrt();
            (1, fac)
        };
        a[0] = a1;
        for i in first..half {
            a[i] = -m[i] / fac;
        }
    }

    // antisymmetric coefficient for each order statistic
    let coef = |i: usize| -> f64 {
        let j = n - 1 - i;
        match i.cmp(&j) {
            std::cmp::Ordering::Less => -a[i],
            std::cmp::Ordering::Greater => a[j],
            std::cmp::Ordering::Equal => 0.0,
        }
    };
    let sa = (0..n).map(coef).sum::<f64>() / an;
    let sx = x.iter().map(|v| v / range).sum::<f64>() / an;
    let (mut ssa, mut ssx, mut sax) = (0.0, 0.0, 0.0);
    for (i, &xi) in x.iter().enumerate() {
        let asa = coef(i) - sa;
        let xsx = xi / range - sx;
        ssa += asa * asa;
        ssx += xsx * xsx;
        sax += asa * xsx;
    }
    let ssassx = (ssa * ssx).sqrt();
    let w1 = (ssassx - sax) * (ssassx + sax) / (ssa * ssx);
    let w = 1.0 - w1;

    if n == 3 {
        let pi6 = 1.909_859_317_102_74;
        let stqr = std::f64::consts::FRAC_PI_3;
        let p = (pi6 * (w.sqrt().asin() - stqr)).clamp(0.0, 1.0);
        return Ok((w, p));
    }
    let mut y = w1.ln();
    let (mean, sd) = if n <= 11 {
        let gamma = poly(&G, an);
        if y >= gamma {
            return Ok((w, 1e-99));
        }
        y = -(gamma - y).ln();
        (poly(&C3, an), poly(&C4, an).exp())
    } else {
        let lx = an.ln();
        (poly(&C5, lx), poly(&C6, lx).exp())
    };
    let p = std_normal().sf((y - mean) / sd);
    Ok((w, p.clamp(0.0, 1.0)))
}

fn differences(a: &[f64], b: &[f64]) -> Result<Vec<f64>, StatsError> {
    if a.len() != b.len() {
        return Err(StatsError::LengthMismatch(a.len(), b.len()));
    }
    Ok(a.iter().zip(b).map(|(x, y)| x - y).collect())
}

fn mean_sd(d: &[f64]) -> (f64, f64) {
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Paired t statistic on `a - b` with a two-sided p value.
pub fn paired_t(a: &[f64], b: &[f64]) -> Result<(f64, f64), StatsError> {
    let d = differences(a, b)?;
    if d.len() < 2 {
        return Err(StatsError::TooFewPairs);
    }
    if d.iter().all(|&v| v == 0.0) {
        return Ok((0.0, 1.0));
    }
    let n = d.len() as f64;
    let (mean, sd) = mean_sd(&d);
    if sd == 0.0 {
        return Ok((mean.signum() * f64::INFINITY, 0.0));
    }
    let t = mean / (sd / n.sqrt());
    let dist = StudentsT::new(0.0, 1.0, n - 1.0).expect("positive degrees of freedom");
    let p = (2.0 * dist.sf(t.abs())).min(1.0);
    Ok((t, p))
}

/// Midranks of `|d|` (1-based), ties averaged.
fn abs_midranks(d: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..d.len()).collect();
    order.sort_by(|&i, &j| d[i].abs().total_cmp(&d[j].abs()));
    let mut ranks = vec![0.0; d.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && d[order[j]].abs() == d[order[i]].abs() {
            j += 1;
        }
        let r = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = r;
        }
        if j - i > 1 {
            ties.push(j - i);
        }
        i = j;
    }
    (ranks, ties)
}

/// Two-sided exact p for the signed-rank sum: `2 P(T+ <= w)` under random signs.
/// Ranks enter doubled so midranks stay integral.
fn wilcoxon_exact_p(ranks: &[f64], w: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let total: usize = doubled.iter().sum();
    let mut counts = vec![0.0f64; total + 1];
    counts[0] = 1.0;
    let mut reach = 0;
    for &r in &doubled {
        for s in (0..=reach).rev() {
            if counts[s] != 0.0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    let limit = (2.0 * w).round() as usize;
    let below: f64 = counts[..=limit.min(total)].iter().sum();
    let all = 2f64.powi(ranks.len() as i32);
    (2.0 * below / all).min(1.0)
}

/// Wilcoxon signed-rank test on `a - b`; zero differences are dropped.
/// Returns `W = min(T+, T-)` and the two-sided p value.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<(f64, f64), StatsError> {
    let d: Vec<f64> = differences(a, b)?.into_iter().filter(|&v| v != 0.0).collect();
    if d.is_empty() {
        return Err(StatsError::AllZeroDifferences);
    }
    let (ranks, ties) = abs_midranks(&d);
    let t_plus: f64 = d.iter().zip(&ranks).filter(|(v, _)| **v > 0.0).map(|(_, r)| r).sum();
    let t_minus: f64 = d.iter().zip(&ranks).filter(|(v, _)| **v < 0.0).map(|(_, r)| r).sum();
    let w = t_plus.min(t_minus);
    let n = d.len();
    if n <= WILCOXON_EXACT_MAX_N {
        return Ok((w, wilcoxon_exact_p(&ranks, w)));
    }
    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / 48.0;
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term;
    let z = (w - mean) / var.sqrt();
    let p = (2.0 * std_normal().sf(z.abs())).min(1.0);
    Ok((w, p))
}

pub fn bonferroni(p_values: &[f64], alpha: f64) -> Adjusted {
    let m = p_values.len() as f64;
    let p: Vec<f64> = p_values.iter().map(|&v| (v * m).min(1.0)).collect();
    let reject = p.iter().map(|&v| v <= alpha).collect();
    Adjusted { p, reject }
}

/// Benjamini–Hochberg step-up with monotone adjusted p values.
pub fn bh_fdr(p_values: &[f64], alpha: f64) -> Adjusted {
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| p_values[i].total_cmp(&p_values[j]).then(i.cmp(&j)));
    let mut p = vec![0.0; m];
    let mut running = 1.0f64;
    for (rank, &i) in order.iter().enumerate().rev() {
        let scaled = p_values[i] * (m as f64 / (rank + 1) as f64);
        running = running.min(scaled).min(1.0);
        p[i] = running;
    }
    let reject = p.iter().map(|&v| v <= alpha).collect();
    Adjusted { p, reject }
}

/// Mean paired difference over its Bessel-corrected standard deviation.
pub fn cohens_d_paired(a: &[f64], b: &[f64]) -> Result<f64, StatsError> {
    let d = differences(a, b)?;
    if d.len() < 2 {
        return Err(StatsError::TooFewPairs);
    }
    if d.iter().all(|&v| v == 0.0) {
        return Ok(0.0);
    }
    let (mean, sd) = mean_sd(&d);
    if sd == 0.0 {
        return Err(StatsError::ZeroVariance { positive: mean > 0.0 });
    }
    Ok(mean / sd)
}

/// Normality-gated comparison of per-fold scores; differences are `baseline - config`.
/// The result is uncorrected until [`apply_correction`] runs over the batch.
pub fn compare_to_baseline(baseline: &[f64], config: &[f64]) -> Result<TestResult, StatsError> {
    let d = differences(baseline, config)?;
    let n = d.len();
    if n < 2 {
        return Err(StatsError::TooFewPairs);
    }
    if d.iter().all(|&v| v == 0.0) {
        return Ok(TestResult {
            test_name: "none".into(),
            statistic: 0.0,
            p_value: 1.0,
            p_corrected: 1.0,
            n,
            normality_p: None,
            effect_size_d: Some(0.0),
            significant: false,
        });
    }
    let effect = match cohens_d_paired(baseline, config) {
        Ok(d) => Some(d),
        Err(StatsError::ZeroVariance { positive }) => {
            Some(if positive { f64::INFINITY } else { f64::NEG_INFINITY })
        }
        Err(e) => return Err(e),
    };
    let normality_p = shapiro_wilk(&d).ok().map(|(_, p)| p);
    let (test_name, (statistic, p_value)) = match normality_p {
        Some(p) if p > NORMALITY_ALPHA => ("t-test", paired_t(baseline, config)?),
        _ => ("Wilcoxon", wilcoxon_signed_rank(baseline, config)?),
    };
    Ok(TestResult {
        test_name: test_name.into(),
        statistic,
        p_value,
        p_corrected: p_value,
        n,
        normality_p,
        effect_size_d: effect,
        significant: false,
    })
}

/// Corrects the raw p values of a batch in place and sets the significance flags.
pub fn apply_correction(results: &mut [TestResult], alpha: f64, correction: Correction) {
    let raw: Vec<f64> = results.iter().map(|r| r.p_value).collect();
    let adj = match correction {
        Correction::Bonferroni => bonferroni(&raw, alpha),
        Correction::Fdr => bh_fdr(&raw, alpha),
    };
    for (r, (p, rej)) in results.iter_mut().zip(adj.p.into_iter().zip(adj.reject)) {
        r.p_corrected = p;
        r.significant = rej;
    }
}
