//! Heterodyne beat-note synthesis and its averaged spectrum.

use std::f64::consts::TAU;

use super::AnalysisError;
use crate::laser::{LaserError, LaserState};
use crate::noise::{WelchAccumulator, WelchOptions};

/// Margin above the expected beat that must stay below Nyquist, Hz.
pub const BEAT_GUARD_HZ: f64 = 10e6;

/// One-sided spectrum as power per bin.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub bins: Vec<(f64, f64)>,
    /// Bin spacing, Hz.
    pub resolution: f64,
    pub segments: usize,
}

impl Spectrum {
    pub fn total_power(&self) -> f64 {
        self.bins.iter().map(|b| b.1).sum()
    }

    pub fn peak(&self) -> (f64, f64) {
        self.bins
            .iter()
            .copied()
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap_or((0.0, 0.0))
    }

    /// Bins with `lo <= f <= hi`.
    pub fn band(&self, lo: f64, hi: f64) -> Vec<(f64, f64)> {
        self.bins
            .iter()
            .copied()
            .filter(|b| b.0 >= lo && b.0 <= hi)
            .collect()
    }

    /// `freq_hz,power` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::with_capacity(32 * self.bins.len());
        s.push_str("freq_hz,power\n");
        for (f, p) in &self.bins {
            s.push_str(&format!("{f},{p}\n"));
        }
        s
    }
}

/// Streaming synthesis of `s(t) = cos(φ_a − φ_b + 2π·Δν_nom·t)` from the
/// two lasers' offset phases.
#[derive(Debug)]
pub struct BeatAccumulator {
    welch: WelchAccumulator,
    sample_rate: f64,
    nominal_difference_hz: f64,
    index: u64,
}

impl BeatAccumulator {
    pub fn new(
        sample_rate: f64,
        segment_length: usize,
        nominal_difference_hz: f64,
    ) -> Result<Self, AnalysisError> {
        Ok(Self {
            welch: WelchAccumulator::new(segment_length, sample_rate, WelchOptions::default())?,
            sample_rate,
            nominal_difference_hz,
            index: 0,
        })
    }

    #[inline]
    pub fn push(&mut self, phase_a: f64, phase_b: f64) {
        let cycles = (self.nominal_difference_hz * self.index as f64 / self.sample_rate).fract();
        self.welch.push((phase_a - phase_b + TAU * cycles).cos());
        self.index += 1;
    }

    pub fn samples(&self) -> u64 {
        self.index
    }

    pub fn finish(&self) -> Spectrum {
        Spectrum {
            bins: self.welch.power(),
            resolution: self.welch.resolution(),
            segments: self.welch.segments(),
        }
    }
}

/// Lowest sample rate accepted for a beat at `beat_hz`.
pub fn required_sample_rate(beat_hz: f64) -> f64 {
    2.0 * (beat_hz.abs() + BEAT_GUARD_HZ)
}

/// Steps both lasers open-loop for `duration` (each holding its last actuator
/// command) and returns the Welch-averaged beat spectrum.
pub fn beat_spectrum(
    laser_a: &mut LaserState,
    laser_b: &mut LaserState,
    duration: f64,
    sample_rate: f64,
    segment_length: usize,
) -> Result<Spectrum, AnalysisError> {
    let nominal_difference = laser_a.nominal_frequency() - laser_b.nominal_frequency();
    let beat = nominal_difference + laser_a.frequency_offset() - laser_b.frequency_offset();
    let required = required_sample_rate(beat);
    if !(sample_rate > required) {
        return Err(AnalysisError::Aliasing {
            sample_rate,
            required,
        });
    }
    for laser in [&*laser_a, &*laser_b] {
        if let Some(stream) = laser.noise_sample_rate() {
            if ((stream - sample_rate) / stream).abs() > 1e-12 {
                return Err(LaserError::SampleRateMismatch {
                    requested: sample_rate,
                    stream,
                }
                .into());
            }
        }
    }
    let count = (duration * sample_rate).round();
    if !(count >= segment_length as f64) {
        return Err(AnalysisError::InvalidInput(format!(
            "{count} samples do not fill one {segment_length}-point segment"
        )));
    }
    let mut acc = BeatAccumulator::new(sample_rate, segment_length, nominal_difference)?;
    let dt = 1.0 / sample_rate;
    let (va, vb) = (laser_a.applied_voltage(), laser_b.applied_voltage());
    acc.push(laser_a.accumulated_phase(), laser_b.accumulated_phase());
    for _ in 1..count as u64 {
        laser_a.step_unchecked(dt, va);
        laser_b.step_unchecked(dt, vb);
        acc.push(laser_a.accumulated_phase(), laser_b.accumulated_phase());
    }
    Ok(acc.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::fit::{voigt_fit, FitOptions};
    use crate::laser::LaserConfig;
    use crate::noise::NoiseLevels;
    use std::f64::consts::PI;

    const NOMINAL: f64 = 384.2281e12;

    fn laser(nominal: f64, noise: NoiseLevels, fs: f64, seed: u64) -> LaserState {
        let mut cfg = LaserConfig::noiseless(nominal);
        cfg.noise = noise;
        LaserState::new(&cfg, fs, seed).unwrap()
    }

    #[test]
    fn noiseless_pair_gives_a_single_line() {
        let fs = 102.4e6;
        let mut a = laser(NOMINAL + 20e6, NoiseLevels::default(), fs, 1);
        let mut b = laser(NOMINAL, NoiseLevels::default(), fs, 2);
        let s = beat_spectrum(&mut a, &mut b, 0.01, fs, 1024).unwrap();
        assert_eq!(s.resolution, 100e3);
        let (f, p) = s.peak();
        assert!((f - 20e6).abs() < 1.0);
        let near: f64 = s
            .band(20e6 - 1.5 * s.resolution, 20e6 + 1.5 * s.resolution)
            .iter()
            .map(|b| b.1)
            .sum();
        assert!(1.0 - near / s.total_power() < 1e-9);
        assert!(p > 0.5 * near);
        // Parseval: cos² averages to 1/2.
        assert!((s.total_power() - 0.5).abs() < 0.05 * 0.5);
    }

    #[test]
    fn identical_lasers_beat_only_at_dc() {
        let fs = 25e6;
        let noise = NoiseLevels {
            h0: 1e5,
            ..Default::default()
        };
        let mut a = laser(NOMINAL, noise, fs, 9);
        let mut b = laser(NOMINAL, noise, fs, 9);
        let s = beat_spectrum(&mut a, &mut b, 0.01, fs, 4096).unwrap();
        assert!(s.bins.iter().all(|b| b.1 == 0.0));
    }

    #[test]
    fn aliasing_guard() {
        let fs = 200e6;
        let mut a = laser(NOMINAL + 100e6, NoiseLevels::default(), fs, 1);
        let mut b = laser(NOMINAL, NoiseLevels::default(), fs, 2);
        assert!(matches!(
            beat_spectrum(&mut a, &mut b, 0.01, fs, 1024),
            Err(AnalysisError::Aliasing { .. })
        ));
    }

    fn fitted_pair(
        noise_a: NoiseLevels,
        noise_b: NoiseLevels,
        seeds: (u64, u64),
    ) -> crate::analysis::VoigtFit {
        let fs = 32e6;
        let offset = 5e6;
        let mut a = laser(NOMINAL + offset, noise_a, fs, seeds.0);
        let mut b = laser(NOMINAL, noise_b, fs, seeds.1);
        let s = beat_spectrum(&mut a, &mut b, 0.25, fs, 1 << 14).unwrap();
        voigt_fit(&s.band(offset - 3e6, offset + 3e6), &FitOptions::default()).unwrap()
    }

    #[test]
    fn white_fm_widths_add_as_lorentzians() {
        let gamma = 100e3;
        let h0 = 2.0 * gamma / PI;
        let white = NoiseLevels {
            h0,
            ..Default::default()
        };
        let fit = fitted_pair(white, white, (3, 4));
        assert!(
            ((fit.gamma - 2.0 * gamma) / (2.0 * gamma)).abs() < 0.1,
            "gamma {}",
            fit.gamma
        );
        assert!(fit.sigma <= 0.1 * fit.gamma, "sigma {}", fit.sigma);
    }

    #[test]
    fn flicker_widths_add_in_quadrature() {
        let flicker = NoiseLevels {
            h_flicker: 4e9,
            ..Default::default()
        };
        let single = fitted_pair(flicker, NoiseLevels::default(), (5, 6));
        let pair = fitted_pair(flicker, flicker, (7, 8));
        let expected = 2f64.sqrt() * single.sigma;
        assert!(
            ((pair.sigma - expected) / expected).abs() < 0.1,
            "{} vs {}",
            pair.sigma,
            expected
        );
        assert!(
            pair.sigma > pair.gamma,
            "sigma {} gamma {}",
            pair.sigma,
            pair.gamma
        );
    }
}
