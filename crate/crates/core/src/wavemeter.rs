//! Black-box wavelength meter: quantized, temperature-drifting readout and
//! the single-channel / switch-mode measurement cadence.

use std::io::{BufRead, Write};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Speed of light, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
/// Shortest and longest operating wavelengths, m.
pub const BAND_MIN_WAVELENGTH: f64 = 330e-9;
pub const BAND_MAX_WAVELENGTH: f64 = 1180e-9;
/// Inputs on the mechanical fiber switch.
pub const MAX_CHANNELS: usize = 8;
/// Rb-85 D1 crossover used as the drift reference, Hz.
pub const RB85_D1_CROSSOVER_HZ: f64 = 377.106_090_7e12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WavemeterError {
    #[error("frequency {0} Hz is outside the 330-1180 nm operating band")]
    OutOfBand(f64),
    #[error("channel count {0} outside 1..=8")]
    ChannelCount(usize),
    #[error("invalid wavemeter parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },
    #[error("temperature trace: {0}")]
    Trace(String),
    #[error("temperature trace covers [{start}, {end}] s but [0, {needed}] s is required")]
    TraceCoverage { start: f64, end: f64, needed: f64 },
    #[error("log format: {0}")]
    Format(String),
    #[error(transparent)]
    Csv(#[from] CsvError),
}

/// Wrapper so the error type stays `Clone + PartialEq`.
#[derive(Debug, Error, Clone, PartialEq)]
#[error("{0}")]
pub struct CsvError(pub String);

impl From<csv::Error> for WavemeterError {
    fn from(e: csv::Error) -> Self {
        WavemeterError::Csv(CsvError(e.to_string()))
    }
}

impl From<std::io::Error> for WavemeterError {
    fn from(e: std::io::Error) -> Self {
        WavemeterError::Csv(CsvError(e.to_string()))
    }
}

/// Instrument parameters. Timing constants are in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WavemeterModel {
    /// Digitization step, Hz.
    pub resolution_hz: f64,
    /// Static absolute-accuracy offset, Hz (datasheet: up to ±10 MHz).
    pub accuracy_offset_hz: f64,
    /// Reading shift per degree of temperature change, Hz/°C.
    /// Default −2.33 MHz/°C (2.0 MHz over 0.86 °C; ±0.47 MHz/°C from the
    /// 0.4 MHz uncertainty on the drift).
    pub temp_coefficient_hz_per_c: f64,
    /// Temperature at which the thermal correction is exact, °C.
    pub reference_temperature_c: f64,
    /// Gaussian readout noise added before quantization, Hz rms.
    pub readout_noise_rms_hz: f64,
    /// Photodetection (exposure) time.
    pub tau_det_s: f64,
    /// Processing time in the control computer.
    pub tau_pro_s: f64,
    /// Computer/instrument communication time.
    pub tau_com_s: f64,
    /// Mechanical switch settling time.
    pub tau_swi_s: f64,
}

impl Default for WavemeterModel {
    fn default() -> Self {
        Self {
            resolution_hz: 400e3,
            accuracy_offset_hz: 0.0,
            temp_coefficient_hz_per_c: -2.33e6,
            reference_temperature_c: 22.0,
            readout_noise_rms_hz: 0.0,
            tau_det_s: 1e-3,
            tau_pro_s: 1e-3,
            tau_com_s: 1.2e-3,
            tau_swi_s: 12e-3,
        }
    }
}

fn to_nanos(seconds: f64) -> u64 {
    (seconds * 1e9).round() as u64
}

impl WavemeterModel {
    pub fn validate(&self) -> Result<(), WavemeterError> {
        let bad = |field: &'static str, reason: &str| WavemeterError::InvalidParameter {
            field,
            reason: reason.to_string(),
        };
        if !(self.resolution_hz.is_finite() && self.resolution_hz > 0.0) {
            return Err(bad("resolution_hz", "must be positive"));
        }
        if !self.accuracy_offset_hz.is_finite() || self.accuracy_offset_hz.abs() > 10e6 {
            return Err(bad("accuracy_offset_hz", "must lie within ±10 MHz"));
        }
        if !self.temp_coefficient_hz_per_c.is_finite() {
            return Err(bad("temp_coefficient_hz_per_c", "must be finite"));
        }
        if !self.reference_temperature_c.is_finite() {
            return Err(bad("reference_temperature_c", "must be finite"));
        }
        if !(self.readout_noise_rms_hz.is_finite() && self.readout_noise_rms_hz >= 0.0) {
            return Err(bad("readout_noise_rms_hz", "must be non-negative"));
        }
        for (field, v) in [
            ("tau_det_s", self.tau_det_s),
            ("tau_pro_s", self.tau_pro_s),
            ("tau_com_s", self.tau_com_s),
            ("tau_swi_s", self.tau_swi_s),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(bad(field, "must be non-negative"));
            }
        }
        if self.tau_det_s <= 0.0 {
            return Err(bad("tau_det_s", "must be positive"));
        }
        Ok(())
    }

    pub fn in_band(frequency_hz: f64) -> bool {
        let lo = SPEED_OF_LIGHT / BAND_MAX_WAVELENGTH;
        let hi = SPEED_OF_LIGHT / BAND_MIN_WAVELENGTH;
        (lo..=hi).contains(&frequency_hz)
    }

    /// Rounds to the nearest multiple of the resolution.
    #[inline]
    pub fn quantize(&self, frequency_hz: f64) -> f64 {
        (frequency_hz / self.resolution_hz).round() * self.resolution_hz
    }

    /// Systematic reading shift at `temperature_c`, Hz.
    #[inline]
    pub fn systematic_shift(&self, temperature_c: f64) -> f64 {
        self.accuracy_offset_hz
            + self.temp_coefficient_hz_per_c * (temperature_c - self.reference_temperature_c)
    }

    /// Digitized absolute reading for a (detection-averaged) true frequency.
    pub fn measure<R: Rng + ?Sized>(
        &self,
        true_frequency_hz: f64,
        temperature_c: f64,
        rng: &mut R,
    ) -> Result<f64, WavemeterError> {
        if !Self::in_band(true_frequency_hz) {
            return Err(WavemeterError::OutOfBand(true_frequency_hz));
        }
        let noise = self.readout_noise(rng);
        Ok(self.quantize(true_frequency_hz + (self.systematic_shift(temperature_c) + noise)))
    }

    /// Same as [`measure`](Self::measure) with the input and output carried
    /// as offsets from `nominal_hz`.
    pub fn measure_offset<R: Rng + ?Sized>(
        &self,
        nominal_hz: f64,
        offset_hz: f64,
        temperature_c: f64,
        rng: &mut R,
    ) -> Result<f64, WavemeterError> {
        let absolute = nominal_hz + offset_hz;
        if !Self::in_band(absolute) {
            return Err(WavemeterError::OutOfBand(absolute));
        }
        let noise = self.readout_noise(rng);
        let shifted = nominal_hz + (offset_hz + self.systematic_shift(temperature_c) + noise);
        Ok(self.quantize(shifted) - nominal_hz)
    }

    fn readout_noise<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.readout_noise_rms_hz > 0.0 {
            let e: f64 = rng.sample(StandardNormal);
            self.readout_noise_rms_hz * e
        } else {
            0.0
        }
    }
}

/// Measurement cadence for `n` channels sharing one interferometer.
///
/// Durations are integer nanoseconds so that periods are exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Schedule {
    pub n_channels: usize,
    /// Length of one measurement slot.
    pub slot_ns: u64,
    /// Exposure at the start of each slot.
    pub detection_ns: u64,
    /// From end of exposure to the feedback output (processing + communication).
    pub update_delay_ns: u64,
}

impl Schedule {
    /// Time between consecutive readings of the same channel.
    pub fn period_ns(&self) -> u64 {
        self.slot_ns * self.n_channels as u64
    }

    pub fn period_s(&self) -> f64 {
        self.period_ns() as f64 / 1e9
    }

    pub fn is_switch_mode(&self) -> bool {
        self.n_channels > 1
    }

    /// Channel measured in slot `slot` (round robin).
    pub fn channel_for_slot(&self, slot: u64) -> usize {
        (slot % self.n_channels as u64) as usize
    }

    /// Start of the `k`-th reading of `channel`, ns.
    pub fn slot_start_ns(&self, channel: usize, k: u64) -> u64 {
        (k * self.n_channels as u64 + channel as u64) * self.slot_ns
    }
}

/// Cadence for `n_channels`: 3.2 ms with one channel (τ_det + τ_pro + τ_com
/// with defaults), `n·(τ_det + τ_swi)` in switch mode where processing and
/// communication overlap the switching.
pub fn schedule(n_channels: usize, model: &WavemeterModel) -> Result<Schedule, WavemeterError> {
    if !(1..=MAX_CHANNELS).contains(&n_channels) {
        return Err(WavemeterError::ChannelCount(n_channels));
    }
    let det = to_nanos(model.tau_det_s);
    let delay = to_nanos(model.tau_pro_s) + to_nanos(model.tau_com_s);
    let slot = if n_channels == 1 {
        det + delay
    } else {
        det + to_nanos(model.tau_swi_s)
    };
    Ok(Schedule {
        n_channels,
        slot_ns: slot,
        detection_ns: det,
        update_delay_ns: delay,
    })
}

/// Piecewise-linear temperature record, `(time s, temperature °C)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(f64, f64)>", into = "Vec<(f64, f64)>")]
pub struct TemperatureTrace {
    points: Vec<(f64, f64)>,
}

impl TryFrom<Vec<(f64, f64)>> for TemperatureTrace {
    type Error = WavemeterError;

    fn try_from(points: Vec<(f64, f64)>) -> Result<Self, Self::Error> {
        Self::new(points)
    }
}

impl From<TemperatureTrace> for Vec<(f64, f64)> {
    fn from(t: TemperatureTrace) -> Self {
        t.points
    }
}

impl TemperatureTrace {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self, WavemeterError> {
        if points.is_empty() {
            return Err(WavemeterError::Trace("no points".into()));
        }
        if points.iter().any(|(t, c)| !t.is_finite() || !c.is_finite()) {
            return Err(WavemeterError::Trace("non-finite point".into()));
        }
        if points.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(WavemeterError::Trace(
                "times must be strictly increasing".into(),
            ));
        }
        Ok(Self { points })
    }

    pub fn constant(temperature_c: f64, duration_s: f64) -> Self {
        Self {
            points: vec![
                (0.0, temperature_c),
                (duration_s.max(f64::MIN_POSITIVE), temperature_c),
            ],
        }
    }

    /// `start + rise·t/duration + ripple·sin(2πt/period)`, sampled every `step_s`.
    pub fn ramp_with_ripple(
        start_c: f64,
        rise_c: f64,
        ripple_c: f64,
        ripple_period_s: f64,
        duration_s: f64,
        step_s: f64,
    ) -> Self {
        let n = (duration_s / step_s).ceil().max(1.0) as usize;
        let points = (0..=n)
            .map(|i| {
                let t = (i as f64 * step_s).min(duration_s);
                let phase = 2.0 * std::f64::consts::PI * t / ripple_period_s;
                (
                    t,
                    start_c + rise_c * t / duration_s + ripple_c * phase.sin(),
                )
            })
            .collect();
        Self { points }
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn start(&self) -> f64 {
        self.points[0].0
    }

    pub fn end(&self) -> f64 {
        self.points[self.points.len() - 1].0
    }

    pub fn covers(&self, from: f64, to: f64) -> bool {
        self.start() <= from && self.end() >= to
    }

    /// Linearly interpolated temperature; `None` outside the support.
    pub fn at(&self, t: f64) -> Option<f64> {
        if t < self.start() || t > self.end() {
            return None;
        }
        let idx = self.points.partition_point(|p| p.0 <= t);
        if idx == 0 {
            return Some(self.points[0].1);
        }
        if idx == self.points.len() {
            return Some(self.points[idx - 1].1);
        }
        let (t0, c0) = self.points[idx - 1];
        let (t1, c1) = self.points[idx];
        Some(c0 + (c1 - c0) * (t - t0) / (t1 - t0))
    }
}

/// Timestamped digitized readings of one channel, stored as offsets from a
/// declared nominal frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyLog {
    pub channel: usize,
    pub nominal_hz: f64,
    /// `(timestamp s, reading − nominal Hz)`
    pub entries: Vec<(f64, f64)>,
}

impl FrequencyLog {
    pub fn new(channel: usize, nominal_hz: f64) -> Self {
        Self {
            channel,
            nominal_hz,
            entries: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn push(&mut self, time_s: f64, offset_hz: f64) {
        self.entries.push((time_s, offset_hz));
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        self.entries.iter().map(|e| e.0)
    }

    pub fn offsets(&self) -> impl Iterator<Item = f64> + '_ {
        self.entries.iter().map(|e| e.1)
    }

    /// Writes `# nominal_hz=<v>` followed by `time_s,channel,frequency_hz_offset` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<(), WavemeterError> {
        writeln!(out, "# nominal_hz={}", self.nominal_hz)?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["time_s", "channel", "frequency_hz_offset"])?;
        for (t, f) in &self.entries {
            w.write_record([t.to_string(), self.channel.to_string(), f.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the format produced by [`write_csv`](Self::write_csv). Rows for
    /// other channels are rejected.
    pub fn read_csv<R: BufRead>(mut input: R) -> Result<Self, WavemeterError> {
        let mut first = String::new();
        input.read_line(&mut first)?;
        let nominal_hz = first
            .trim()
            .strip_prefix("# nominal_hz=")
            .and_then(|v| v.parse::<f64>().ok())
            .ok_or_else(|| WavemeterError::Format("missing `# nominal_hz=` header".into()))?;
        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_reader(input);
        let mut log: Option<FrequencyLog> = None;
        for record in reader.records() {
            let record = record?;
            let field = |i: usize| -> Result<&str, WavemeterError> {
                record
                    .get(i)
                    .ok_or_else(|| WavemeterError::Format("short row".into()))
            };
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| WavemeterError::Format(format!("{s}: {e}")))
            };
            let t = parse(field(0)?)?;
            let channel: usize = field(1)?
                .trim()
                .parse()
                .map_err(|e| WavemeterError::Format(format!("channel: {e}")))?;
            let f = parse(field(2)?)?;
            let log = log.get_or_insert_with(|| FrequencyLog::new(channel, nominal_hz));
            if log.channel != channel {
                return Err(WavemeterError::Format(format!(
                    "mixed channels {} and {channel}",
                    log.channel
                )));
            }
            log.push(t, f);
        }
        Ok(log.unwrap_or_else(|| FrequencyLog::new(0, nominal_hz)))
    }
}

/// Readings of a perfectly stable reference laser under a temperature
/// record, one every `interval_s` from 0 to `duration_s`.
pub fn drift_trace<R: Rng + ?Sized>(
    model: &WavemeterModel,
    temps: &TemperatureTrace,
    reference_frequency_hz: f64,
    duration_s: f64,
    interval_s: f64,
    rng: &mut R,
) -> Result<FrequencyLog, WavemeterError> {
    model.validate()?;
    if !temps.covers(0.0, duration_s) {
        return Err(WavemeterError::TraceCoverage {
            start: temps.start(),
            end: temps.end(),
            needed: duration_s,
        });
    }
    if !(interval_s.is_finite() && interval_s > 0.0) {
        return Err(WavemeterError::InvalidParameter {
            field: "interval_s",
            reason: "must be positive".into(),
        });
    }
    let count = (duration_s / interval_s).floor() as u64;
    let mut log = FrequencyLog::new(0, reference_frequency_hz);
    for k in 0..=count {
        let t = k as f64 * interval_s;
        let temperature = temps.at(t).expect("coverage checked above");
        let reading = model.measure_offset(reference_frequency_hz, 0.0, temperature, rng)?;
        log.push(t, reading);
    }
    Ok(log)
}
