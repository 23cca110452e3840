//! Frequency-stability and lineshape analytics.

pub mod allan;
pub mod beat;
pub mod drift;
pub mod faddeeva;
pub mod fit;
pub mod voigt;

use thiserror::Error;

use crate::laser::LaserError;
use crate::noise::NoiseError;

pub use allan::{allan_deviation, AllanOptions, AllanPoint, AllanResult};
pub use beat::{beat_spectrum, BeatAccumulator, Spectrum};
pub use drift::{drift_correlation, DriftReport};
pub use fit::{voigt_fit, FitOptions, VoigtFit};
pub use voigt::{voigt, voigt_eval, VoigtProfile};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("Voigt widths must not both be zero")]
    ZeroWidths,
    #[error("invalid width sigma={sigma}, gamma={gamma}")]
    InvalidWidth { sigma: f64, gamma: f64 },
    #[error("log has {0} entries, need at least 2")]
    TooShort(usize),
    #[error("log is not uniformly sampled (step {step} s at index {index}, expected {period} s)")]
    NotUniform {
        index: usize,
        step: f64,
        period: f64,
    },
    #[error("tau {tau} s is not an integer multiple of the sample period {period} s")]
    TauNotMultiple { tau: f64, period: f64 },
    #[error("tau {tau} s yields {bins} bins, need at least 2")]
    TooFewBins { tau: f64, bins: usize },
    #[error("taus must be strictly increasing")]
    TausNotIncreasing,
    #[error("sample rate {sample_rate} Hz aliases a beat needing more than {required} Hz")]
    Aliasing { sample_rate: f64, required: f64 },
    #[error("fit needs at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("degenerate spectrum: {0}")]
    Degenerate(String),
    #[error(
        "fit did not converge after {iterations} iterations (last relative step {last_step:e})"
    )]
    NonConvergence { iterations: usize, last_step: f64 },
    #[error("log and temperature trace do not overlap")]
    NoOverlap,
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Laser(#[from] LaserError),
    #[error(transparent)]
    Noise(#[from] NoiseError),
}
