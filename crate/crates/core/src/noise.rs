//! Power-law frequency-noise synthesis and PSD estimation.
//!
//! A [`NoiseStream`] produces frequency deviations δν (Hz) whose one-sided
//! power spectral density approximates
//!
//! ```text
//! S_ν(f) = h0 + h_flicker / f + h_rw / f²
//! ```
//!
//! * white FM: independent Gaussian samples with variance `h0 · fs / 2`;
//! * flicker FM: a bank of first-order relaxation processes with corner
//!   frequencies spaced one per half decade, each weighted by `1/f_k` so the
//!   sum approximates `1/f` between the lowest corner and Nyquist;
//! * random-walk FM: cumulative sum of Gaussian increments.
//!
//! Slow relaxation processes are updated at a decimated rate and linearly
//! interpolated, which keeps the per-sample cost roughly constant no matter
//! how far below the sample rate the flicker band extends.
//!
//! The generator is [`crate::seed::SimRng`]; identical `(spec, sample_rate,
//! flicker floor)` produce bit-identical streams.

use std::f64::consts::{LN_10, PI};
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed::{rng_from_seed, SimRng};

/// Errors from noise construction and spectral estimation.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum NoiseError {
    #[error("noise level `{name}` must be finite and non-negative, got {value}")]
    InvalidLevel { name: &'static str, value: f64 },
    #[error("sample rate must be finite and positive, got {0}")]
    InvalidSampleRate(f64),
    #[error("flicker floor {floor} Hz must lie in (0, sample_rate / 2 = {nyquist}) Hz")]
    InvalidFlickerFloor { floor: f64, nyquist: f64 },
    #[error("cannot estimate a spectrum from an empty sample set")]
    EmptyInput,
    #[error("segment length {segment} exceeds the {available} available samples")]
    SegmentTooLong { segment: usize, available: usize },
    #[error("segment length {0} must be a power of two and at least 2")]
    SegmentNotPowerOfTwo(usize),
}

/// Levels of the three power-law components, without a seed.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseLevels {
    /// White FM level, Hz²/Hz.
    pub h0: f64,
    /// Flicker FM level: `S(f) = h_flicker / f`, Hz².
    pub h_flicker: f64,
    /// Random-walk FM level: `S(f) = h_rw / f²`, Hz³.
    pub h_rw: f64,
}

impl NoiseLevels {
    pub fn with_seed(self, seed: u64) -> NoiseSpec {
        NoiseSpec {
            h0: self.h0,
            h_flicker: self.h_flicker,
            h_rw: self.h_rw,
            seed,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.h0 == 0.0 && self.h_flicker == 0.0 && self.h_rw == 0.0
    }

    pub fn validate(&self) -> Result<(), NoiseError> {
        for (name, value) in [
            ("h0", self.h0),
            ("h_flicker", self.h_flicker),
            ("h_rw", self.h_rw),
        ] {
            if !(value.is_finite() && value >= 0.0) {
                return Err(NoiseError::InvalidLevel { name, value });
            }
        }
        Ok(())
    }

    /// One-sided PSD of the ideal process at `f`, Hz²/Hz.
    pub fn psd_at(&self, f: f64) -> f64 {
        self.h0 + self.h_flicker / f + self.h_rw / (f * f)
    }
}

/// Power-law frequency-noise process parameters plus the stream seed.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub h0: f64,
    pub h_flicker: f64,
    pub h_rw: f64,
    #[serde(default)]
    pub seed: u64,
}

impl NoiseSpec {
    pub fn levels(&self) -> NoiseLevels {
        NoiseLevels {
            h0: self.h0,
            h_flicker: self.h_flicker,
            h_rw: self.h_rw,
        }
    }
}

/// Default lower corner of the flicker bank, relative to the sample rate.
pub const DEFAULT_FLICKER_FLOOR_RATIO: f64 = 1e-5;

/// Minimum ratio between a relaxation process' update rate and its corner.
const OVERSAMPLE: f64 = 32.0;

#[derive(Debug, Clone)]
struct RelaxationProcess {
    /// AR(1) coefficient at the decimated update rate.
    decay: f64,
    /// Standard deviation of the innovation at the decimated rate.
    drive: f64,
    /// Samples between updates (a power of two).
    stride: u32,
    inv_stride: f64,
    /// Position inside the current interpolation interval.
    position: u32,
    prev: f64,
    next: f64,
}

impl RelaxationProcess {
    #[inline]
    fn value(&self) -> f64 {
        if self.stride == 1 {
            self.next
        } else {
            let frac = f64::from(self.position) * self.inv_stride;
            self.prev + (self.next - self.prev) * frac
        }
    }

    #[inline]
    fn advance(&mut self, rng: &mut SimRng) {
        self.position += 1;
        if self.position >= self.stride {
            self.position = 0;
            self.prev = self.next;
            let e: f64 = rng.sample(StandardNormal);
            self.next = self.decay * self.next + self.drive * e;
        }
    }
}

/// Streaming generator of power-law frequency deviations.
#[derive(Debug, Clone)]
pub struct NoiseStream {
    spec: NoiseSpec,
    sample_rate: f64,
    flicker_floor: f64,
    rng: SimRng,
    white_scale: f64,
    walk_scale: f64,
    walk: f64,
    flicker: Vec<RelaxationProcess>,
}

impl NoiseStream {
    /// Creates a stream with the flicker bank extending down to
    /// `DEFAULT_FLICKER_FLOOR_RATIO · sample_rate`.
    pub fn new(spec: NoiseSpec, sample_rate: f64) -> Result<Self, NoiseError> {
        Self::with_flicker_floor(spec, sample_rate, DEFAULT_FLICKER_FLOOR_RATIO * sample_rate)
    }

    /// Creates a stream whose flicker approximation holds down to `floor_hz`.
    pub fn with_flicker_floor(
        spec: NoiseSpec,
        sample_rate: f64,
        floor_hz: f64,
    ) -> Result<Self, NoiseError> {
        spec.levels().validate()?;
        if !(sample_rate.is_finite() && sample_rate > 0.0) {
            return Err(NoiseError::InvalidSampleRate(sample_rate));
        }
        let nyquist = 0.5 * sample_rate;
        if !(floor_hz.is_finite() && floor_hz > 0.0 && floor_hz < nyquist) {
            return Err(NoiseError::InvalidFlickerFloor {
                floor: floor_hz,
                nyquist,
            });
        }

        let mut rng = rng_from_seed(spec.seed);
        let white_scale = (spec.h0 * sample_rate / 2.0).sqrt();
        let walk_scale = (2.0 * PI * PI * spec.h_rw / sample_rate).sqrt();
        let flicker = if spec.h_flicker > 0.0 {
            build_flicker_bank(spec.h_flicker, sample_rate, floor_hz, &mut rng)
        } else {
            Vec::new()
        };

        Ok(Self {
            spec,
            sample_rate,
            flicker_floor: floor_hz,
            rng,
            white_scale,
            walk_scale,
            walk: 0.0,
            flicker,
        })
    }

    pub fn spec(&self) -> &NoiseSpec {
        &self.spec
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn flicker_floor(&self) -> f64 {
        self.flicker_floor
    }

    /// Number of relaxation processes in the flicker bank.
    pub fn flicker_poles(&self) -> usize {
        self.flicker.len()
    }

    /// Returns the next frequency deviation sample, Hz.
    #[inline]
    pub fn next_frequency_deviation(&mut self) -> f64 {
        let mut value = 0.0;
        if self.white_scale > 0.0 {
            let e: f64 = self.rng.sample(StandardNormal);
            value += self.white_scale * e;
        }
        if self.walk_scale > 0.0 {
            let e: f64 = self.rng.sample(StandardNormal);
            self.walk += self.walk_scale * e;
            value += self.walk;
        }
        for process in &mut self.flicker {
            process.advance(&mut self.rng);
            value += process.value();
        }
        value
    }

    /// Advances the stream by `count` samples, discarding them.
    pub fn skip(&mut self, count: usize) {
        for _ in 0..count {
            self.next_frequency_deviation();
        }
    }

    /// Fills `out` with consecutive samples.
    pub fn fill(&mut self, out: &mut [f64]) {
        for v in out {
            *v = self.next_frequency_deviation();
        }
    }

    /// Collects `count` consecutive samples.
    pub fn take_samples(&mut self, count: usize) -> Vec<f64> {
        let mut out = vec![0.0; count];
        self.fill(&mut out);
        out
    }
}

fn build_flicker_bank(
    level: f64,
    sample_rate: f64,
    floor_hz: f64,
    rng: &mut SimRng,
) -> Vec<RelaxationProcess> {
    // A 1/f spectrum is the log-uniform superposition of Lorentzians
    // (1/f_c)/(1 + (f/f_c)^2) with density 2/pi per unit ln f_c.
    let spacing = 0.5 * LN_10;
    let step = 10f64.powf(-0.5);
    let mut corner = 0.5 * sample_rate;
    let mut bank = Vec::new();
    loop {
        let mut stride = 1u32;
        while stride < (1 << 24) && sample_rate / f64::from(stride * 2) >= OVERSAMPLE * corner {
            stride *= 2;
        }
        let rate = sample_rate / f64::from(stride);
        let decay = (-2.0 * PI * corner / rate).exp();
        // Low-frequency level of an AR(1) at `rate`: 2 b^2 / (rate (1 - a)^2).
        let target = spacing * (2.0 / PI) * level / corner;
        let drive = (target * rate * (1.0 - decay).powi(2) / 2.0).sqrt();
        let stationary = drive / (1.0 - decay * decay).sqrt();
        let x0 = stationary * rng.sample::<f64, _>(StandardNormal);
        let x1 = decay * x0 + drive * rng.sample::<f64, _>(StandardNormal);
        bank.push(RelaxationProcess {
            decay,
            drive,
            stride,
            inv_stride: 1.0 / f64::from(stride),
            position: 0,
            prev: x0,
            next: x1,
        });
        if corner <= floor_hz {
            break;
        }
        corner *= step;
    }
    bank
}

/// Taper applied to each periodogram segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    #[default]
    Hann,
    Rectangular,
}

impl Window {
    fn coefficients(self, len: usize) -> Vec<f64> {
        match self {
            Window::Rectangular => vec![1.0; len],
            // Periodic Hann, so 50 % overlapped segments sum to a constant.
            Window::Hann => (0..len)
                .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / len as f64).cos())
                .collect(),
        }
    }
}

/// Options for Welch-averaged spectra.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WelchOptions {
    pub window: Window,
    /// Remove each segment's mean before the transform.
    pub detrend: bool,
    /// Fractional overlap between consecutive segments, in [0, 1).
    pub overlap: f64,
}

impl Default for WelchOptions {
    fn default() -> Self {
        Self {
            window: Window::Hann,
            detrend: true,
            overlap: 0.5,
        }
    }
}

/// Streaming Welch estimator: push samples, read out the averaged one-sided PSD.
pub struct WelchAccumulator {
    segment: usize,
    hop: usize,
    sample_rate: f64,
    options: WelchOptions,
    window: Vec<f64>,
    window_power: f64,
    fft: Arc<dyn Fft<f64>>,
    pending: Vec<f64>,
    scratch: Vec<Complex<f64>>,
    fft_scratch: Vec<Complex<f64>>,
    accumulated: Vec<f64>,
    segments: usize,
}

impl std::fmt::Debug for WelchAccumulator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("WelchAccumulator")
            .field("segment", &self.segment)
            .field("hop", &self.hop)
            .field("segments", &self.segments)
            .finish()
    }
}

impl WelchAccumulator {
    pub fn new(
        segment_length: usize,
        sample_rate: f64,
        options: WelchOptions,
    ) -> Result<Self, NoiseError> {
        if segment_length < 2 || !segment_length.is_power_of_two() {
            return Err(NoiseError::SegmentNotPowerOfTwo(segment_length));
        }
        if !(sample_rate.is_finite() && sample_rate > 0.0) {
            return Err(NoiseError::InvalidSampleRate(sample_rate));
        }
        let overlap = options.overlap.clamp(0.0, 0.999);
        let hop = ((segment_length as f64 * (1.0 - overlap)).round() as usize).max(1);
        let window = options.window.coefficients(segment_length);
        let window_power = window.iter().map(|w| w * w).sum();
        let fft = FftPlanner::new().plan_fft_forward(segment_length);
        let fft_scratch = vec![Complex::default(); fft.get_inplace_scratch_len()];
        Ok(Self {
            segment: segment_length,
            hop,
            sample_rate,
            options,
            window,
            window_power,
            fft,
            pending: Vec::with_capacity(segment_length),
            scratch: vec![Complex::default(); segment_length],
            fft_scratch,
            accumulated: vec![0.0; segment_length / 2 + 1],
            segments: 0,
        })
    }

    #[inline]
    pub fn push(&mut self, sample: f64) {
        self.pending.push(sample);
        if self.pending.len() == self.segment {
            self.process_segment();
            self.pending.drain(..self.hop);
        }
    }

    pub fn extend(&mut self, samples: &[f64]) {
        for &s in samples {
            self.push(s);
        }
    }

    pub fn segments(&self) -> usize {
        self.segments
    }

    /// Frequency spacing of the output bins, Hz.
    pub fn resolution(&self) -> f64 {
        self.sample_rate / self.segment as f64
    }

    fn process_segment(&mut self) {
        let mean = if self.options.detrend {
            self.pending.iter().sum::<f64>() / self.segment as f64
        } else {
            0.0
        };
        for ((dst, &x), &w) in self.scratch.iter_mut().zip(&self.pending).zip(&self.window) {
            *dst = Complex::new((x - mean) * w, 0.0);
        }
        self.fft
            .process_with_scratch(&mut self.scratch, &mut self.fft_scratch);
        for (acc, c) in self.accumulated.iter_mut().zip(&self.scratch) {
            *acc += c.norm_sqr();
        }
        self.segments += 1;
    }

    /// Averaged one-sided PSD as `(frequency Hz, density per Hz)` pairs.
    pub fn density(&self) -> Vec<(f64, f64)> {
        let n = self.segment;
        let df = self.resolution();
        let count = self.segments.max(1) as f64;
        let base = 1.0 / (self.sample_rate * self.window_power * count);
        self.accumulated
            .iter()
            .enumerate()
            .map(|(k, &p)| {
                let one_sided = if k == 0 || k == n / 2 { 1.0 } else { 2.0 };
                (k as f64 * df, p * base * one_sided)
            })
            .collect()
    }

    /// Averaged one-sided power per bin (density times bin width).
    pub fn power(&self) -> Vec<(f64, f64)> {
        let df = self.resolution();
        self.density()
            .into_iter()
            .map(|(f, d)| (f, d * df))
            .collect()
    }
}

/// One-sided Welch PSD estimate (Hann window, 50 % overlap, per-segment mean
/// removal) as `(frequency Hz, PSD Hz²/Hz)` pairs.
pub fn psd_estimate(
    samples: &[f64],
    sample_rate: f64,
    segment_length: usize,
) -> Result<Vec<(f64, f64)>, NoiseError> {
    psd_estimate_with(
        samples,
        sample_rate,
        segment_length,
        WelchOptions::default(),
    )
}

pub fn psd_estimate_with(
    samples: &[f64],
    sample_rate: f64,
    segment_length: usize,
    options: WelchOptions,
) -> Result<Vec<(f64, f64)>, NoiseError> {
    if samples.is_empty() {
        return Err(NoiseError::EmptyInput);
    }
    if segment_length > samples.len() {
        return Err(NoiseError::SegmentTooLong {
            segment: segment_length,
            available: samples.len(),
        });
    }
    let mut acc = WelchAccumulator::new(segment_length, sample_rate, options)?;
    acc.extend(samples);
    Ok(acc.density())
}

/// Least-squares slope of `log10(y)` against `log10(x)` over points with
/// `lo <= x <= hi` and positive `y`.
pub fn log_log_slope(points: &[(f64, f64)], lo: f64, hi: f64) -> Option<f64> {
    let selected: Vec<(f64, f64)> = points
        .iter()
        .filter(|(x, y)| *x >= lo && *x <= hi && *x > 0.0 && *y > 0.0)
        .map(|(x, y)| (x.log10(), y.log10()))
        .collect();
    if selected.len() < 2 {
        return None;
    }
    let n = selected.len() as f64;
    let mx = selected.iter().map(|p| p.0).sum::<f64>() / n;
    let my = selected.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = selected.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = selected.iter().map(|p| (p.0 - mx).powi(2)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(h0: f64, h_flicker: f64, h_rw: f64) -> NoiseSpec {
        NoiseSpec {
            h0,
            h_flicker,
            h_rw,
            seed: 11,
        }
    }

    /// Averages PSD points into log-spaced bands so a straight-line fit is
    /// not dominated by the densely populated upper decade.
    fn log_binned(psd: &[(f64, f64)], lo: f64, hi: f64, per_decade: usize) -> Vec<(f64, f64)> {
        let decades = (hi / lo).log10();
        let bins = (decades * per_decade as f64).round() as usize;
        (0..bins)
            .filter_map(|b| {
                let a = lo * 10f64.powf(b as f64 / per_decade as f64);
                let z = lo * 10f64.powf((b + 1) as f64 / per_decade as f64);
                let pts: Vec<f64> = psd
                    .iter()
                    .filter(|(f, _)| *f >= a && *f < z)
                    .map(|p| p.1)
                    .collect();
                (!pts.is_empty())
                    .then(|| ((a * z).sqrt(), pts.iter().sum::<f64>() / pts.len() as f64))
            })
            .collect()
    }

    #[test]
    fn zero_spec_yields_zero() {
        let mut s = NoiseStream::new(spec(0.0, 0.0, 0.0), 1.0).unwrap();
        assert!((0..1000).all(|_| s.next_frequency_deviation() == 0.0));
    }

    #[test]
    fn rejects_negative_levels_and_bad_rates() {
        assert!(matches!(
            NoiseStream::new(spec(-1.0, 0.0, 0.0), 1.0),
            Err(NoiseError::InvalidLevel { name: "h0", .. })
        ));
        assert!(matches!(
            NoiseStream::new(spec(1.0, 0.0, 0.0), 0.0),
            Err(NoiseError::InvalidSampleRate(_))
        ));
        assert!(NoiseStream::with_flicker_floor(spec(0.0, 1.0, 0.0), 10.0, 6.0).is_err());
    }

    #[test]
    fn white_stream_is_flat_at_configured_level() {
        let h0 = 3.0;
        let mut s = NoiseStream::new(spec(h0, 0.0, 0.0), 1.0).unwrap();
        let x = s.take_samples(1 << 20);
        let psd = psd_estimate(&x, 1.0, 1 << 12).unwrap();
        let inner: Vec<_> = psd[1..psd.len() - 1].to_vec();
        let mean = inner.iter().map(|p| p.1).sum::<f64>() / inner.len() as f64;
        assert!((mean / h0 - 1.0).abs() < 0.10, "mean PSD {mean}");
        let slope = log_log_slope(&log_binned(&psd, 1e-3, 1e-1, 10), 1e-3, 1e-1).unwrap();
        assert!(slope.abs() < 0.1, "white slope {slope}");
    }

    #[test]
    fn flicker_stream_has_minus_one_slope() {
        let mut s = NoiseStream::new(spec(0.0, 1.0, 0.0), 1.0).unwrap();
        let x = s.take_samples(1 << 20);
        let psd = psd_estimate(&x, 1.0, 1 << 14).unwrap();
        let binned = log_binned(&psd, 1e-3, 1e-1, 10);
        let slope = log_log_slope(&binned, 1e-3, 1e-1).unwrap();
        assert!((slope + 1.0).abs() < 0.15, "flicker slope {slope}");
        // level check: S(f) f should sit near h_flicker across the band
        let level = binned.iter().map(|(f, p)| f * p).sum::<f64>() / binned.len() as f64;
        assert!((level - 1.0).abs() < 0.25, "flicker level {level}");
    }

    #[test]
    fn random_walk_stream_has_minus_two_slope() {
        let mut s = NoiseStream::new(spec(0.0, 0.0, 1.0), 1.0).unwrap();
        let x = s.take_samples(1 << 20);
        let psd = psd_estimate(&x, 1.0, 1 << 14).unwrap();
        let binned = log_binned(&psd, 1e-3, 1e-1, 10);
        let slope = log_log_slope(&binned, 1e-3, 1e-1).unwrap();
        assert!((slope + 2.0).abs() < 0.15, "random-walk slope {slope}");
    }

    #[test]
    fn stream_composability() {
        let sp = spec(1.0, 2.0, 0.5);
        let mut whole = NoiseStream::new(sp, 1000.0).unwrap();
        let mut parts = whole.clone();
        let a = whole.take_samples(1700);
        let mut b = parts.take_samples(300);
        b.extend(parts.take_samples(1400));
        assert_eq!(a, b);
    }

    #[test]
    fn sinusoid_at_bin_center_lands_in_one_bin() {
        let n = 1024;
        let fs = 1024.0;
        let amp = 3.0;
        let x: Vec<f64> = (0..8 * n)
            .map(|i| amp * (2.0 * PI * 64.0 * i as f64 / fs).sin())
            .collect();
        let opts = WelchOptions {
            window: Window::Rectangular,
            ..WelchOptions::default()
        };
        let psd = psd_estimate_with(&x, fs, n, opts).unwrap();
        let df = fs / n as f64;
        let (peak_idx, peak) = psd
            .iter()
            .enumerate()
            .max_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
            .unwrap();
        assert_eq!(peak_idx, 64);
        assert!((peak.1 * df / (amp * amp / 2.0) - 1.0).abs() < 0.01);
        let rest: f64 = psd
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != 64)
            .map(|(_, p)| p.1 * df)
            .sum();
        assert!(rest < 1e-12);
    }

    #[test]
    fn parseval_holds_for_white_noise() {
        let mut s = NoiseStream::new(spec(2.0, 0.0, 0.0), 100.0).unwrap();
        let x = s.take_samples(1 << 16);
        let psd = psd_estimate(&x, 100.0, 1 << 10).unwrap();
        let df = 100.0 / 1024.0;
        let total: f64 = psd.iter().map(|p| p.1 * df).sum();
        let mean = x.iter().sum::<f64>() / x.len() as f64;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (x.len() - 1) as f64;
        assert!((total / var - 1.0).abs() < 0.05, "{total} vs {var}");
    }

    #[test]
    fn zero_samples_give_zero_psd() {
        let psd = psd_estimate(&[0.0; 256], 1.0, 64).unwrap();
        assert!(psd.iter().all(|p| p.1 == 0.0));
        assert_eq!(psd.len(), 33);
    }

    #[test]
    fn psd_errors() {
        assert_eq!(psd_estimate(&[], 1.0, 4), Err(NoiseError::EmptyInput));
        assert_eq!(
            psd_estimate(&[0.0; 8], 1.0, 16),
            Err(NoiseError::SegmentTooLong {
                segment: 16,
                available: 8
            })
        );
        assert_eq!(
            psd_estimate(&[0.0; 8], 1.0, 6),
            Err(NoiseError::SegmentNotPowerOfTwo(6))
        );
    }
}
