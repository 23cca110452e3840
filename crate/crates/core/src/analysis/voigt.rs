//! Normalized Voigt profile (Gaussian σ ⊗ Lorentzian HWHM γ) with analytic
//! parameter derivatives.

use std::f64::consts::{LN_2, PI, SQRT_2};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::faddeeva::{faddeeva, faddeeva_derivative};
use super::AnalysisError;

const SQRT_2PI: f64 = 2.506_628_274_631_000_7;

fn check_widths(sigma: f64, gamma: f64) -> Result<(), AnalysisError> {
    if !(sigma.is_finite() && gamma.is_finite() && sigma >= 0.0 && gamma >= 0.0) {
        return Err(AnalysisError::InvalidWidth { sigma, gamma });
    }
    if sigma == 0.0 && gamma == 0.0 {
        return Err(AnalysisError::ZeroWidths);
    }
    Ok(())
}

pub fn gaussian(x: f64, sigma: f64) -> f64 {
    (-0.5 * (x / sigma).powi(2)).exp() / (sigma * SQRT_2PI)
}

pub fn lorentzian(x: f64, gamma: f64) -> f64 {
    gamma / PI / (x * x + gamma * gamma)
}

/// Unit-area Voigt profile at detuning `x`.
pub fn voigt(x: f64, sigma: f64, gamma: f64) -> Result<f64, AnalysisError> {
    check_widths(sigma, gamma)?;
    Ok(if sigma == 0.0 {
        lorentzian(x, gamma)
    } else if gamma == 0.0 {
        gaussian(x, sigma)
    } else {
        let z = Complex64::new(x, gamma) / (sigma * SQRT_2);
        faddeeva(z).re / (sigma * SQRT_2PI)
    })
}

/// Value and partial derivatives `(V, ∂V/∂x, ∂V/∂σ, ∂V/∂γ)`.
pub(crate) fn voigt_with_gradient(x: f64, sigma: f64, gamma: f64) -> (f64, f64, f64, f64) {
    if sigma == 0.0 {
        let d = x * x + gamma * gamma;
        let v = gamma / PI / d;
        return (
            v,
            -2.0 * x * gamma / PI / (d * d),
            0.0,
            (x * x - gamma * gamma) / PI / (d * d),
        );
    }
    let s2 = sigma * SQRT_2;
    let norm = sigma * SQRT_2PI;
    let z = Complex64::new(x, gamma) / s2;
    let w = faddeeva(z);
    let dw = faddeeva_derivative(z, w);
    let v = w.re / norm;
    let dx = dw.re / (s2 * norm);
    let dgamma = -dw.im / (s2 * norm);
    let dsigma = (dw * (-z / sigma)).re / norm - v / sigma;
    (v, dx, dsigma, dgamma)
}

/// `amplitude·V(ν − ν₀; σ, γ) + offset`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoigtProfile {
    pub nu0: f64,
    pub sigma: f64,
    pub gamma: f64,
    pub amplitude: f64,
    pub offset: f64,
}

impl VoigtProfile {
    pub fn eval(&self, nu: f64) -> Result<f64, AnalysisError> {
        Ok(self.amplitude * voigt(nu - self.nu0, self.sigma, self.gamma)? + self.offset)
    }

    /// Peak height above the offset.
    pub fn peak(&self) -> Result<f64, AnalysisError> {
        Ok(self.amplitude * voigt(0.0, self.sigma, self.gamma)?)
    }

    pub fn fwhm(&self) -> Result<f64, AnalysisError> {
        numerical_fwhm(self.sigma, self.gamma)
    }
}

/// Evaluates a fitted profile.
pub fn voigt_eval(nu: f64, fit: &super::VoigtFit) -> Result<f64, AnalysisError> {
    fit.profile().eval(nu)
}

/// Olivero–Longbothum FWHM approximation (accurate to about 0.02%).
pub fn olivero_fwhm(sigma: f64, gamma: f64) -> f64 {
    let fl = 2.0 * gamma;
    let fg = 2.0 * sigma * (2.0 * LN_2).sqrt();
    0.5346 * fl + (0.2166 * fl * fl + fg * fg).sqrt()
}

/// Full width at half maximum found by bisection on the profile.
pub fn numerical_fwhm(sigma: f64, gamma: f64) -> Result<f64, AnalysisError> {
    let half = 0.5 * voigt(0.0, sigma, gamma)?;
    let mut lo = 0.0;
    let mut hi = (sigma + gamma) * 4.0;
    while voigt(hi, sigma, gamma)? > half {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if voigt(mid, sigma, gamma)? > half {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    Ok(lo + hi)
}
