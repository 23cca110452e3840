//! Simulation and analysis of multi-laser frequency stabilization referenced
//! to a wavelength meter.
//!
//! Lasers are modeled as tunable oscillators driven by power-law frequency
//! noise; a quantized, drifting wavemeter reads them on a single-channel or
//! switch-mode schedule; per-channel PI servos close the loop. The analysis
//! module provides Allan deviation, beat-note spectra, Voigt fits and drift
//! correlation, and the harness reproduces the standard experiments from a
//! JSON scenario.

pub mod analysis;
pub mod harness;
pub mod laser;
pub mod noise;
pub mod seed;
pub mod servo;
pub mod wavemeter;

pub use analysis::{
    allan_deviation, beat_spectrum, drift_correlation, voigt, voigt_eval, voigt_fit, AllanOptions,
    AllanResult, AnalysisError, DriftReport, Spectrum, VoigtFit, VoigtProfile,
};
pub use harness::{HarnessError, RunOutput, Scenario};
pub use laser::{ActuatorSpec, LaserConfig, LaserError, LaserState};
pub use noise::{psd_estimate, NoiseError, NoiseLevels, NoiseSpec, NoiseStream};
pub use seed::{derive_seed, rng_from_seed, SimRng};
pub use servo::{tune_gains, ServoConfig, ServoError, ServoState};
pub use wavemeter::{
    drift_trace, schedule, FrequencyLog, Schedule, TemperatureTrace, WavemeterError, WavemeterModel,
};
