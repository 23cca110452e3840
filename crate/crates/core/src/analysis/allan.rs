//! Two-sample (Allan) deviation of fractional frequency.

use serde::Serialize;

use super::AnalysisError;
use crate::wavemeter::FrequencyLog;

/// Relative tolerance for uniform sampling and tau multiples.
const GRID_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AllanOptions {
    /// Use every start index instead of contiguous, non-overlapping bins.
    pub overlapping: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AllanPoint {
    pub tau: f64,
    pub sigma_y: f64,
    /// Number of averages ȳ_i entering the estimate.
    pub bins: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AllanResult {
    pub points: Vec<AllanPoint>,
    /// Samples in the input.
    pub n: usize,
    /// Record length, s.
    pub duration: f64,
}

impl AllanResult {
    pub fn taus(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.tau).collect()
    }

    pub fn sigmas(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.sigma_y).collect()
    }

    pub fn at(&self, tau: f64) -> Option<f64> {
        self.points
            .iter()
            .find(|p| (p.tau - tau).abs() <= GRID_TOL * tau)
            .map(|p| p.sigma_y)
    }

    /// `tau_s,sigma_y` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("tau_s,sigma_y\n");
        for p in &self.points {
            s.push_str(&format!("{},{}\n", p.tau, p.sigma_y));
        }
        s
    }

    /// Least-squares slope of log σ against log τ over `[lo, hi]`.
    pub fn slope(&self, lo: f64, hi: f64) -> Option<f64> {
        let pts: Vec<(f64, f64)> = self
            .points
            .iter()
            .filter(|p| p.tau >= lo * (1.0 - GRID_TOL) && p.tau <= hi * (1.0 + GRID_TOL))
            .filter(|p| p.sigma_y > 0.0)
            .map(|p| (p.tau.ln(), p.sigma_y.ln()))
            .collect();
        if pts.len() < 2 {
            return None;
        }
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        Some(sxy / sxx)
    }
}

/// Allan deviation of a uniformly sampled log. Readings are converted to
/// fractional frequency `(reading − nominal)/nominal`.
pub fn allan_deviation(
    log: &FrequencyLog,
    taus: &[f64],
    nominal_hz: f64,
    options: AllanOptions,
) -> Result<AllanResult, AnalysisError> {
    if !(nominal_hz.is_finite() && nominal_hz != 0.0) {
        return Err(AnalysisError::InvalidInput(format!("nominal {nominal_hz}")));
    }
    let n = log.len();
    if n < 2 {
        return Err(AnalysisError::TooShort(n));
    }
    let t0 = log.entries[0].0;
    let period = (log.entries[n - 1].0 - t0) / (n - 1) as f64;
    if !(period > 0.0) {
        return Err(AnalysisError::NotUniform {
            index: 1,
            step: log.entries[1].0 - t0,
            period,
        });
    }
    for (k, w) in log.entries.windows(2).enumerate() {
        let step = w[1].0 - w[0].0;
        if (step - period).abs() > GRID_TOL * period {
            return Err(AnalysisError::NotUniform {
                index: k + 1,
                step,
                period,
            });
        }
    }
    let shift = log.nominal_hz - nominal_hz;
    let y: Vec<f64> = log.offsets().map(|f| (f + shift) / nominal_hz).collect();
    allan_from_fractional(&y, period, taus, options)
}

/// Allan deviation of fractional-frequency samples spaced `period` seconds.
pub fn allan_from_fractional(
    y: &[f64],
    period: f64,
    taus: &[f64],
    options: AllanOptions,
) -> Result<AllanResult, AnalysisError> {
    let n = y.len();
    if n < 2 {
        return Err(AnalysisError::TooShort(n));
    }
    if !(period.is_finite() && period > 0.0) {
        return Err(AnalysisError::InvalidInput(format!(
            "sample period {period}"
        )));
    }
    if taus.windows(2).any(|w| w[1] <= w[0]) {
        return Err(AnalysisError::TausNotIncreasing);
    }
    let mut points = Vec::with_capacity(taus.len());
    for &tau in taus {
        let ratio = tau / period;
        let m = ratio.round();
        if !(m >= 1.0) || (ratio - m).abs() > GRID_TOL * m {
            return Err(AnalysisError::TauNotMultiple { tau, period });
        }
        let m = m as usize;
        let bins = n / m;
        if bins < 2 {
            return Err(AnalysisError::TooFewBins { tau, bins });
        }
        let (sigma_y, used) = if options.overlapping {
            (overlapping(y, m), n - m + 1)
        } else {
            (non_overlapping(y, m), bins)
        };
        points.push(AllanPoint {
            tau,
            sigma_y,
            bins: used,
        });
    }
    Ok(AllanResult {
        points,
        n,
        duration: n as f64 * period,
    })
}

fn non_overlapping(y: &[f64], m: usize) -> f64 {
    let means: Vec<f64> = y
        .chunks_exact(m)
        .map(|c| c.iter().sum::<f64>() / m as f64)
        .collect();
    let sum: f64 = means.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum();
    (sum / (2.0 * (means.len() - 1) as f64)).sqrt()
}

fn overlapping(y: &[f64], m: usize) -> f64 {
    let n = y.len();
    if n < 2 * m {
        return f64::NAN;
    }
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    let mut acc = 0.0;
    for v in y {
        acc += v;
        prefix.push(acc);
    }
    let count = n - 2 * m + 1;
    let sum: f64 = (0..count)
        .map(|j| {
            let a = prefix[j + m] - prefix[j];
            let b = prefix[j + 2 * m] - prefix[j + m];
            ((b - a) / m as f64).powi(2)
        })
        .sum();
    (sum / (2.0 * count as f64)).sqrt()
}

/// Taus that are multiples of `period`, roughly `per_decade` per decade from
/// `period` up to `max_tau`.
pub fn log_spaced_taus(period: f64, max_tau: f64, per_decade: usize) -> Vec<f64> {
    let mut out: Vec<u64> = Vec::new();
    let top = (max_tau / period).floor() as u64;
    let steps = per_decade.max(1) as f64;
    let mut k = 0.0;
    loop {
        let m = 10f64.powf(k / steps).round() as u64;
        if m > top {
            break;
        }
        if out.last() != Some(&m) {
            out.push(m);
        }
        k += 1.0;
    }
    out.into_iter().map(|m| m as f64 * period).collect()
}
