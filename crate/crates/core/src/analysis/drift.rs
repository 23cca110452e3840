//! Net drift of a frequency log and its correlation with temperature.

use std::fmt;

use serde::Serialize;

use super::AnalysisError;
use crate::wavemeter::{FrequencyLog, TemperatureTrace};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DriftReport {
    /// Smoothed last reading minus smoothed first reading, Hz.
    pub net_drift_hz: f64,
    /// Pearson correlation between reading and temperature.
    pub pearson_r: f64,
    /// Either series was constant; `pearson_r` is then reported as 0.
    pub zero_variance: bool,
    /// Temperature change over the same span (smoothed), °C.
    pub temperature_change_c: f64,
    /// Readings inside the temperature support.
    pub points: usize,
    /// Readings averaged at each end for the net drift.
    pub smoothing: usize,
}

impl fmt::Display for DriftReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "net_drift_hz = {}", self.net_drift_hz)?;
        writeln!(f, "temperature_change_c = {}", self.temperature_change_c)?;
        writeln!(f, "pearson_r = {}", self.pearson_r)?;
        writeln!(f, "zero_variance = {}", self.zero_variance)?;
        writeln!(f, "points = {}", self.points)?;
        write!(f, "smoothing = {}", self.smoothing)
    }
}

fn end_means(v: &[f64], w: usize) -> (f64, f64) {
    let first = v[..w].iter().sum::<f64>() / w as f64;
    let last = v[v.len() - w..].iter().sum::<f64>() / w as f64;
    (first, last)
}

/// Compares readings with the temperature interpolated at each reading time.
/// The net drift averages the first and last 1% of readings.
pub fn drift_correlation(
    log: &FrequencyLog,
    temps: &TemperatureTrace,
) -> Result<DriftReport, AnalysisError> {
    let (readings, temperatures): (Vec<f64>, Vec<f64>) = log
        .entries
        .iter()
        .filter_map(|&(t, f)| temps.at(t).map(|c| (f, c)))
        .unzip();
    let n = readings.len();
    if n < 2 {
        return Err(AnalysisError::NoOverlap);
    }
    let w = (n / 100).max(1);
    let (f0, f1) = end_means(&readings, w);
    let (c0, c1) = end_means(&temperatures, w);

    let mf = readings.iter().sum::<f64>() / n as f64;
    let mc = temperatures.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (f, c) in readings.iter().zip(&temperatures) {
        let (a, b) = (f - mf, c - mc);
        sxy += a * b;
        sxx += a * a;
        syy += b * b;
    }
    let zero_variance = sxx == 0.0 || syy == 0.0;
    let pearson_r = if zero_variance {
        0.0
    } else {
        (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0)
    };
    Ok(DriftReport {
        net_drift_hz: f1 - f0,
        pearson_r,
        zero_variance,
        temperature_change_c: c1 - c0,
        points: n,
        smoothing: w,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from_seed;
    use crate::wavemeter::{drift_trace, WavemeterModel, RB85_D1_CROSSOVER_HZ};

    fn wavy_trace() -> TemperatureTrace {
        TemperatureTrace::ramp_with_ripple(21.0, 0.86, 0.1, 24.0 * 3600.0, 36.0 * 3600.0, 600.0)
    }

    #[test]
    fn affine_anticorrelation_is_exact() {
        let temps = wavy_trace();
        let mut log = FrequencyLog::new(0, 377e12);
        for k in 0..=2160 {
            let t = k as f64 * 60.0;
            log.push(t, 5e5 - 2.33e6 * temps.at(t).unwrap());
        }
        let r = drift_correlation(&log, &temps).unwrap();
        assert!((r.pearson_r + 1.0).abs() < 1e-12, "{}", r.pearson_r);
        assert!(!r.zero_variance);
    }

    #[test]
    fn constant_reading_flags_zero_variance() {
        let temps = wavy_trace();
        let mut log = FrequencyLog::new(0, 377e12);
        for k in 0..100 {
            log.push(k as f64 * 60.0, 1.0);
        }
        let r = drift_correlation(&log, &temps).unwrap();
        assert_eq!(r.pearson_r, 0.0);
        assert!(r.zero_variance);
        assert_eq!(r.net_drift_hz, 0.0);
    }

    #[test]
    fn zero_coefficient_gives_zero_correlation() {
        let model = WavemeterModel {
            temp_coefficient_hz_per_c: 0.0,
            ..Default::default()
        };
        let temps = wavy_trace();
        let mut rng = rng_from_seed(1);
        let log = drift_trace(
            &model,
            &temps,
            RB85_D1_CROSSOVER_HZ,
            36.0 * 3600.0,
            60.0,
            &mut rng,
        )
        .unwrap();
        let r = drift_correlation(&log, &temps).unwrap();
        assert_eq!(r.pearson_r, 0.0);
    }

    #[test]
    fn default_drift_scenario() {
        let model = WavemeterModel::default();
        let temps = wavy_trace();
        let mut rng = rng_from_seed(1);
        let log = drift_trace(
            &model,
            &temps,
            RB85_D1_CROSSOVER_HZ,
            36.0 * 3600.0,
            60.0,
            &mut rng,
        )
        .unwrap();
        let r = drift_correlation(&log, &temps).unwrap();
        assert!(
            (r.net_drift_hz + 2.0e6).abs() <= 0.4e6,
            "{}",
            r.net_drift_hz
        );
        assert!(r.pearson_r < -0.8, "{}", r.pearson_r);
    }

    #[test]
    fn disjoint_supports_are_rejected() {
        let temps = TemperatureTrace::constant(22.0, 10.0);
        let mut log = FrequencyLog::new(0, 377e12);
        log.push(100.0, 0.0);
        log.push(200.0, 0.0);
        assert_eq!(
            drift_correlation(&log, &temps),
            Err(AnalysisError::NoOverlap)
        );
    }
}
