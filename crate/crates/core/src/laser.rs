//! External-cavity diode laser as a tunable oscillator.
//!
//! Frequencies are carried as offsets from the laser's nominal frequency so
//! that Hz-level dynamics are not lost against a ~384 THz carrier. The
//! accumulated phase is likewise the phase of the offset, not of the carrier.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::noise::{NoiseError, NoiseLevels, NoiseStream};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LaserError {
    #[error("time step must be finite and positive, got {0}")]
    InvalidTimeStep(f64),
    #[error("trajectory needs at least two samples (duration {duration} s at {sample_rate} Hz)")]
    TooShort { duration: f64, sample_rate: f64 },
    #[error(
        "trajectory sample rate {requested} Hz differs from the noise stream rate {stream} Hz"
    )]
    SampleRateMismatch { requested: f64, stream: f64 },
    #[error("invalid actuator `{name}`: {reason}")]
    InvalidActuator { name: &'static str, reason: String },
    #[error("nominal frequency must be finite and positive, got {0}")]
    InvalidNominal(f64),
    #[error(transparent)]
    Noise(#[from] NoiseError),
}

/// One actuation path: frequency gain, single-pole bandwidth and voltage range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActuatorSpec {
    pub gain_hz_per_v: f64,
    pub bandwidth_hz: f64,
    pub range_v: f64,
}

impl ActuatorSpec {
    /// Synthetic piezo defaults: 100 MHz/V, 1 kHz, ±10 V.
    pub fn default_piezo() -> Self {
        Self {
            gain_hz_per_v: 100e6,
            bandwidth_hz: 1e3,
            range_v: 10.0,
        }
    }

    /// Synthetic injection-current defaults: 1 MHz/V, 100 kHz, ±10 V.
    pub fn default_current() -> Self {
        Self {
            gain_hz_per_v: 1e6,
            bandwidth_hz: 100e3,
            range_v: 10.0,
        }
    }

    fn validate(&self, name: &'static str) -> Result<(), LaserError> {
        let bad = |reason: &str| LaserError::InvalidActuator {
            name,
            reason: reason.to_string(),
        };
        if !self.gain_hz_per_v.is_finite() {
            return Err(bad("gain must be finite"));
        }
        if !(self.bandwidth_hz.is_finite() && self.bandwidth_hz > 0.0) {
            return Err(bad("bandwidth must be positive"));
        }
        if !(self.range_v.is_finite() && self.range_v > 0.0) {
            return Err(bad("range must be positive"));
        }
        Ok(())
    }
}

/// Rb D2 line near 780 nm, Hz.
pub const RB_D2_HZ: f64 = 384.228_1e12;

/// Synthetic free-running noise of a 780 nm ECDL. White FM gives a 365 kHz
/// Lorentzian HWHM; random walk gives σ_y ≈ 1e-8 at 10 s; flicker sets the
/// Gaussian part of a locked pair's beat note.
pub const DEFAULT_ECDL_NOISE: NoiseLevels = NoiseLevels {
    h0: 2.0 * 365e3 / PI,
    h_flicker: 3.9e10,
    h_rw: 2.2e11,
};

/// Static description of a laser, as it appears in scenario files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaserConfig {
    #[serde(default)]
    pub name: String,
    pub nominal_hz: f64,
    #[serde(default)]
    pub noise: NoiseLevels,
    #[serde(default)]
    pub linear_drift_hz_per_s: f64,
    #[serde(default = "ActuatorSpec::default_piezo")]
    pub piezo: ActuatorSpec,
    #[serde(default = "ActuatorSpec::default_current")]
    pub current: ActuatorSpec,
    /// Lowest corner of the flicker approximation; defaults to the noise
    /// stream's own floor when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flicker_floor_hz: Option<f64>,
}

impl LaserConfig {
    pub fn noiseless(nominal_hz: f64) -> Self {
        Self {
            name: String::new(),
            nominal_hz,
            noise: NoiseLevels::default(),
            linear_drift_hz_per_s: 0.0,
            piezo: ActuatorSpec::default_piezo(),
            current: ActuatorSpec::default_current(),
            flicker_floor_hz: None,
        }
    }

    /// Noisy ECDL with the default synthetic noise levels.
    pub fn default_ecdl(nominal_hz: f64) -> Self {
        Self {
            noise: DEFAULT_ECDL_NOISE,
            ..Self::noiseless(nominal_hz)
        }
    }

    /// Sum of actuator gains, Hz/V.
    pub fn total_gain(&self) -> f64 {
        self.piezo.gain_hz_per_v + self.current.gain_hz_per_v
    }

    /// Largest reachable offset from nominal with both actuators at their rails.
    pub fn tuning_range_hz(&self) -> f64 {
        self.piezo.gain_hz_per_v.abs() * self.piezo.range_v
            + self.current.gain_hz_per_v.abs() * self.current.range_v
    }

    pub fn validate(&self) -> Result<(), LaserError> {
        if !(self.nominal_hz.is_finite() && self.nominal_hz > 0.0) {
            return Err(LaserError::InvalidNominal(self.nominal_hz));
        }
        self.piezo.validate("piezo")?;
        self.current.validate("current")?;
        if self.piezo.gain_hz_per_v == 0.0 && self.current.gain_hz_per_v == 0.0 {
            return Err(LaserError::InvalidActuator {
                name: "piezo/current",
                reason: "at least one actuator needs a nonzero gain".into(),
            });
        }
        self.noise.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Actuator {
    spec: ActuatorSpec,
    voltage: f64,
    /// Step size and smoothing factor of the last call to `relax`.
    cached: (f64, f64),
}

impl Actuator {
    #[inline]
    fn relax(&mut self, command: f64, dt: f64) {
        let target = command.clamp(-self.spec.range_v, self.spec.range_v);
        if self.cached.0 != dt {
            self.cached = (dt, -(-2.0 * PI * self.spec.bandwidth_hz * dt).exp_m1());
        }
        let alpha = self.cached.1;
        self.voltage += (target - self.voltage) * alpha;
    }

    #[inline]
    fn shift(&self) -> f64 {
        self.spec.gain_hz_per_v * self.voltage
    }
}

/// Instantaneous state of one laser.
#[derive(Debug, Clone)]
pub struct LaserState {
    nominal: f64,
    offset: f64,
    phase: f64,
    command: f64,
    time: f64,
    time_carry: f64,
    drift: f64,
    piezo: Actuator,
    current: Actuator,
    noise: Option<NoiseStream>,
}

impl LaserState {
    /// Builds a laser whose noise stream runs at `sample_rate`; `step` should
    /// then be called with `dt = 1 / sample_rate`.
    pub fn new(config: &LaserConfig, sample_rate: f64, seed: u64) -> Result<Self, LaserError> {
        config.validate()?;
        let noise = if config.noise.is_zero() {
            None
        } else {
            let spec = config.noise.with_seed(seed);
            Some(match config.flicker_floor_hz {
                Some(floor) => NoiseStream::with_flicker_floor(spec, sample_rate, floor)?,
                None => NoiseStream::new(spec, sample_rate)?,
            })
        };
        let mut laser = Self {
            nominal: config.nominal_hz,
            offset: 0.0,
            phase: 0.0,
            command: 0.0,
            time: 0.0,
            time_carry: 0.0,
            drift: config.linear_drift_hz_per_s,
            piezo: Actuator {
                spec: config.piezo,
                voltage: 0.0,
                cached: (0.0, 0.0),
            },
            current: Actuator {
                spec: config.current,
                voltage: 0.0,
                cached: (0.0, 0.0),
            },
            noise,
        };
        if let Some(noise) = laser.noise.as_mut() {
            laser.offset = noise.next_frequency_deviation();
        }
        Ok(laser)
    }

    /// Sets both actuators as if `voltage` had been applied forever.
    pub fn settle_actuators(&mut self, voltage: f64) {
        let noise = self.offset - self.deterministic_offset();
        self.command = voltage;
        for a in [&mut self.piezo, &mut self.current] {
            a.voltage = voltage.clamp(-a.spec.range_v, a.spec.range_v);
        }
        self.offset = self.deterministic_offset() + noise;
    }

    fn deterministic_offset(&self) -> f64 {
        self.drift * (self.time + self.time_carry) + self.piezo.shift() + self.current.shift()
    }

    pub fn nominal_frequency(&self) -> f64 {
        self.nominal
    }

    /// Current frequency offset from nominal, Hz.
    pub fn frequency_offset(&self) -> f64 {
        self.offset
    }

    /// Absolute optical frequency, Hz (I/O boundary only).
    pub fn instantaneous_frequency(&self) -> f64 {
        self.nominal + self.offset
    }

    /// Accumulated phase of the offset from nominal, rad.
    pub fn accumulated_phase(&self) -> f64 {
        self.phase
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    /// Voltage most recently commanded on the actuators.
    pub fn applied_voltage(&self) -> f64 {
        self.command
    }

    pub fn actuator_voltages(&self) -> (f64, f64) {
        (self.piezo.voltage, self.current.voltage)
    }

    pub fn noise_sample_rate(&self) -> Option<f64> {
        self.noise.as_ref().map(NoiseStream::sample_rate)
    }

    /// Advances the laser by `dt` with `applied_voltage` commanded on both
    /// actuators. Returns the new frequency offset.
    #[inline]
    pub fn step(&mut self, dt: f64, applied_voltage: f64) -> Result<f64, LaserError> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(LaserError::InvalidTimeStep(dt));
        }
        Ok(self.step_unchecked(dt, applied_voltage))
    }

    #[inline]
    pub(crate) fn step_unchecked(&mut self, dt: f64, applied_voltage: f64) -> f64 {
        self.command = applied_voltage;
        self.piezo.relax(applied_voltage, dt);
        self.current.relax(applied_voltage, dt);
        // Neumaier-compensated clock so long runs do not accumulate dt error.
        let t = self.time + dt;
        if self.time.abs() >= dt.abs() {
            self.time_carry += (self.time - t) + dt;
        } else {
            self.time_carry += (dt - t) + self.time;
        }
        self.time = t;
        let now = t + self.time_carry;

        let noise = match self.noise.as_mut() {
            Some(n) => n.next_frequency_deviation(),
            None => 0.0,
        };
        let previous = self.offset;
        self.offset = self.drift * now + noise + self.piezo.shift() + self.current.shift();
        self.phase += PI * (previous + self.offset) * dt;
        self.offset
    }

    /// Records `duration · sample_rate` phase samples (starting with the
    /// current phase) while holding `applied_voltage`.
    pub fn phase_trajectory(
        &mut self,
        duration: f64,
        sample_rate: f64,
        applied_voltage: f64,
    ) -> Result<Vec<f64>, LaserError> {
        let count = (duration * sample_rate).round();
        if !(count.is_finite() && count >= 2.0) {
            return Err(LaserError::TooShort {
                duration,
                sample_rate,
            });
        }
        if let Some(stream) = self.noise_sample_rate() {
            if ((stream - sample_rate) / stream).abs() > 1e-12 {
                return Err(LaserError::SampleRateMismatch {
                    requested: sample_rate,
                    stream,
                });
            }
        }
        let dt = 1.0 / sample_rate;
        let count = count as usize;
        let mut out = Vec::with_capacity(count);
        out.push(self.phase);
        for _ in 1..count {
            self.step_unchecked(dt, applied_voltage);
            out.push(self.phase);
        }
        Ok(out)
    }
}
