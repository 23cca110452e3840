//! Damped least-squares (Levenberg–Marquardt) Voigt fit.

use std::f64::consts::LN_2;
use std::fmt;

use nalgebra::{DMatrix, DVector, Matrix5, Vector5};
use serde::{Deserialize, Serialize};

use super::voigt::{voigt, voigt_with_gradient, VoigtProfile};
use super::AnalysisError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub max_iterations: usize,
    /// Converged once every parameter step is below this, relative to its scale.
    pub tolerance: f64,
    pub min_points: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            tolerance: 1e-8,
            min_points: 50,
        }
    }
}

/// One-sigma parameter uncertainties.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoigtErrors {
    pub nu0: f64,
    pub sigma: f64,
    pub gamma: f64,
    pub amplitude: f64,
    pub offset: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoigtFit {
    pub nu0: f64,
    pub sigma: f64,
    pub gamma: f64,
    pub amplitude: f64,
    pub offset: f64,
    pub errors: VoigtErrors,
    /// Euclidean norm of the residuals at the optimum.
    pub residual_norm: f64,
    pub iterations: usize,
    pub points: usize,
}

impl VoigtFit {
    pub fn profile(&self) -> VoigtProfile {
        VoigtProfile {
            nu0: self.nu0,
            sigma: self.sigma,
            gamma: self.gamma,
            amplitude: self.amplitude,
            offset: self.offset,
        }
    }
}

impl fmt::Display for VoigtFit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "nu0_hz = {} +/- {}", self.nu0, self.errors.nu0)?;
        writeln!(f, "sigma_hz = {} +/- {}", self.sigma, self.errors.sigma)?;
        writeln!(f, "gamma_hz = {} +/- {}", self.gamma, self.errors.gamma)?;
        writeln!(
            f,
            "amplitude = {} +/- {}",
            self.amplitude, self.errors.amplitude
        )?;
        writeln!(f, "offset = {} +/- {}", self.offset, self.errors.offset)?;
        writeln!(f, "residual_norm = {}", self.residual_norm)?;
        writeln!(f, "iterations = {}", self.iterations)?;
        write!(f, "points = {}", self.points)
    }
}

/// Model evaluation in normalized coordinates: returns residuals and Jacobian.
fn residuals(
    p: &Vector5<f64>,
    x: &[f64],
    y: &[f64],
    jac: Option<&mut DMatrix<f64>>,
) -> DVector<f64> {
    let (nu0, s, g, a, c) = (p[0], p[1], p[2], p[3], p[4]);
    let mut r = DVector::zeros(x.len());
    match jac {
        Some(j) => {
            for (k, (&xi, &yi)) in x.iter().zip(y).enumerate() {
                let (v, dx, ds, dg) = voigt_with_gradient(xi - nu0, s, g);
                r[k] = a * v + c - yi;
                j[(k, 0)] = -a * dx;
                j[(k, 1)] = a * ds;
                j[(k, 2)] = a * dg;
                j[(k, 3)] = v;
                j[(k, 4)] = 1.0;
            }
        }
        None => {
            for (k, (&xi, &yi)) in x.iter().zip(y).enumerate() {
                let (v, ..) = voigt_with_gradient(xi - nu0, s, g);
                r[k] = a * v + c - yi;
            }
        }
    }
    r
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Fits `amplitude·V(ν − ν₀; σ, γ) + offset` to `(frequency, power)` points.
pub fn voigt_fit(spectrum: &[(f64, f64)], options: &FitOptions) -> Result<VoigtFit, AnalysisError> {
    let n = spectrum.len();
    if n < options.min_points.max(6) {
        return Err(AnalysisError::TooFewPoints {
            needed: options.min_points.max(6),
            got: n,
        });
    }
    if spectrum
        .iter()
        .any(|(x, y)| !x.is_finite() || !y.is_finite())
    {
        return Err(AnalysisError::InvalidInput(
            "non-finite spectrum point".into(),
        ));
    }
    if spectrum.windows(2).any(|w| w[1].0 <= w[0].0) {
        return Err(AnalysisError::InvalidInput(
            "frequencies must be strictly increasing".into(),
        ));
    }
    let (peak_idx, ymax) = spectrum
        .iter()
        .enumerate()
        .map(|(k, p)| (k, p.1))
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .expect("non-empty");
    let ymin = spectrum.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    if ymax <= 0.0 {
        return Err(AnalysisError::Degenerate(format!(
            "no positive peak (maximum {ymax})"
        )));
    }
    if ymax - ymin <= 1e-12 * ymax.abs() {
        return Err(AnalysisError::Degenerate(format!(
            "flat spectrum (min {ymin}, max {ymax})"
        )));
    }

    let tail = (n / 10).max(1);
    let tails: Vec<f64> = spectrum[..tail]
        .iter()
        .chain(&spectrum[n - tail..])
        .map(|p| p.1)
        .collect();
    let offset0 = median(tails);
    let height = ymax - offset0;
    if height <= 0.0 {
        return Err(AnalysisError::Degenerate(format!(
            "peak {ymax} does not rise above tail level {offset0}"
        )));
    }
    let half = offset0 + 0.5 * height;
    let crossing = |a: (f64, f64), b: (f64, f64)| a.0 + (half - a.1) * (b.0 - a.0) / (b.1 - a.1);
    let left = (1..=peak_idx)
        .rev()
        .find(|&k| spectrum[k - 1].1 < half)
        .map_or(spectrum[0].0, |k| crossing(spectrum[k - 1], spectrum[k]));
    let right = (peak_idx..n - 1)
        .find(|&k| spectrum[k + 1].1 < half)
        .map_or(spectrum[n - 1].0, |k| {
            crossing(spectrum[k], spectrum[k + 1])
        });
    let spacing = (spectrum[n - 1].0 - spectrum[0].0) / (n - 1) as f64;
    let fwhm = (right - left).max(spacing);
    let span = spectrum[n - 1].0 - spectrum[0].0;
    if span < 2.5 * fwhm {
        return Err(AnalysisError::Degenerate(format!(
            "span {span} covers less than 5 half-widths (FWHM estimate {fwhm})"
        )));
    }

    // Work in units of the initial FWHM around the peak and of the peak height.
    let x_ref = spectrum[peak_idx].0;
    let x: Vec<f64> = spectrum.iter().map(|p| (p.0 - x_ref) / fwhm).collect();
    let y: Vec<f64> = spectrum.iter().map(|p| p.1 / ymax).collect();
    let sigma0 = 0.5 / (2.0 * (2.0 * LN_2).sqrt());
    let gamma0 = 0.25;
    let amp0 = (height / ymax) / voigt(0.0, sigma0, gamma0)?;
    let mut p = Vector5::new(0.0, sigma0, gamma0, amp0, offset0 / ymax);

    let mut jac = DMatrix::zeros(n, 5);
    let mut r = residuals(&p, &x, &y, Some(&mut jac));
    let mut cost = r.norm_squared();
    let mut lambda = 1e-3;
    let mut iterations = 0;
    let mut last_step = f64::INFINITY;
    loop {
        if iterations >= options.max_iterations {
            return Err(AnalysisError::NonConvergence {
                iterations,
                last_step,
            });
        }
        iterations += 1;
        let jtj: Matrix5<f64> = (jac.transpose() * &jac)
            .fixed_view::<5, 5>(0, 0)
            .into_owned();
        let jtr: Vector5<f64> = (jac.transpose() * &r).fixed_view::<5, 1>(0, 0).into_owned();
        let mut accepted = None;
        while lambda < 1e20 {
            let mut a = jtj;
            for d in 0..5 {
                a[(d, d)] += lambda * jtj[(d, d)].max(1e-30);
            }
            let Some(chol) = a.cholesky() else {
                lambda *= 10.0;
                continue;
            };
            let delta = chol.solve(&(-jtr));
            let mut trial = p + delta;
            trial[1] = trial[1].max(0.0);
            trial[2] = trial[2].max(0.0);
            if trial[1] == 0.0 && trial[2] == 0.0 {
                trial[1] = 1e-6 * (p[1] + p[2]);
            }
            let r_trial = residuals(&trial, &x, &y, None);
            let c_trial = r_trial.norm_squared();
            if c_trial <= cost {
                accepted = Some((trial, c_trial));
                lambda = (lambda / 10.0).max(1e-12);
                break;
            }
            lambda *= 10.0;
        }
        let Some((trial, c_trial)) = accepted else {
            // No descent direction left at any damping: at the optimum.
            break;
        };
        let width = (trial[1] + trial[2]).max(1e-300);
        let height = (trial[3] * voigt(0.0, trial[1], trial[2])?)
            .abs()
            .max(1e-300);
        let scales = [width, width, width, trial[3].abs().max(1e-300), height];
        last_step = (0..5)
            .map(|d| (trial[d] - p[d]).abs() / scales[d])
            .fold(0.0, f64::max);
        p = trial;
        cost = c_trial;
        r = residuals(&p, &x, &y, Some(&mut jac));
        if last_step < options.tolerance {
            break;
        }
    }

    let jtj = jac.transpose() * &jac;
    let dof = n.saturating_sub(5).max(1) as f64;
    let s2 = cost / dof;
    let cov = jtj
        .clone()
        .try_inverse()
        .or_else(|| jtj.pseudo_inverse(1e-14).ok())
        .unwrap_or_else(|| DMatrix::from_element(5, 5, f64::NAN));
    let se = |d: usize| (s2 * cov[(d, d)]).max(0.0).sqrt();

    Ok(VoigtFit {
        nu0: x_ref + fwhm * p[0],
        sigma: fwhm * p[1],
        gamma: fwhm * p[2],
        amplitude: ymax * fwhm * p[3],
        offset: ymax * p[4],
        errors: VoigtErrors {
            nu0: fwhm * se(0),
            sigma: fwhm * se(1),
            gamma: fwhm * se(2),
            amplitude: ymax * fwhm * se(3),
            offset: ymax * se(4),
        },
        residual_norm: ymax * cost.sqrt(),
        iterations,
        points: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from_seed;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn synth(profile: &VoigtProfile, lo: f64, hi: f64, n: usize) -> Vec<(f64, f64)> {
        (0..n)
            .map(|k| {
                let nu = lo + (hi - lo) * k as f64 / (n - 1) as f64;
                (nu, profile.eval(nu).unwrap())
            })
            .collect()
    }

    fn beat_like() -> VoigtProfile {
        VoigtProfile {
            nu0: 20e6,
            sigma: 830e3,
            gamma: 730e3,
            amplitude: 3.0e4,
            offset: 2e-4,
        }
    }

    #[test]
    fn recovers_noiseless_voigt() {
        let truth = beat_like();
        let data = synth(&truth, 10e6, 30e6, 801);
        let fit = voigt_fit(&data, &FitOptions::default()).unwrap();
        let rel = |a: f64, b: f64| ((a - b) / b).abs();
        assert!(rel(fit.gamma, truth.gamma) < 1e-3, "gamma {}", fit.gamma);
        assert!(rel(fit.sigma, truth.sigma) < 1e-3, "sigma {}", fit.sigma);
        assert!(rel(fit.nu0, truth.nu0) < 1e-6);
        assert!(rel(fit.amplitude, truth.amplitude) < 1e-3);
        assert!(fit.residual_norm < 1e-9 * truth.peak().unwrap());
    }

    #[test]
    fn pure_gaussian_has_negligible_lorentzian_part() {
        let truth = VoigtProfile {
            nu0: 0.0,
            sigma: 1.0,
            gamma: 0.0,
            amplitude: 1.0,
            offset: 0.0,
        };
        let data = synth(&truth, -8.0, 8.0, 401);
        let fit = voigt_fit(&data, &FitOptions::default()).unwrap();
        assert!(
            fit.gamma <= 0.01 * fit.sigma,
            "gamma {} sigma {}",
            fit.gamma,
            fit.sigma
        );
    }

    #[test]
    fn pure_lorentzian_has_negligible_gaussian_part() {
        let truth = VoigtProfile {
            nu0: 1.0,
            sigma: 0.0,
            gamma: 0.5,
            amplitude: 2.0,
            offset: 0.1,
        };
        let data = synth(&truth, -9.0, 11.0, 401);
        let fit = voigt_fit(&data, &FitOptions::default()).unwrap();
        assert!(fit.sigma <= 0.01 * fit.gamma, "sigma {}", fit.sigma);
        assert!((fit.gamma - 0.5).abs() < 1e-4);
    }

    #[test]
    fn monte_carlo_scatter_matches_reported_errors() {
        let truth = beat_like();
        let clean = synth(&truth, 10e6, 30e6, 401);
        let noise = 0.01 * truth.peak().unwrap();
        let mut rng = rng_from_seed(2024);
        let mut gammas = Vec::new();
        let mut sigmas = Vec::new();
        let mut reported = (0.0, 0.0);
        let draws = 20;
        for _ in 0..draws {
            let noisy: Vec<(f64, f64)> = clean
                .iter()
                .map(|&(x, y)| {
                    let e: f64 = rng.sample(StandardNormal);
                    (x, y + noise * e)
                })
                .collect();
            let fit = voigt_fit(&noisy, &FitOptions::default()).unwrap();
            gammas.push(fit.gamma);
            sigmas.push(fit.sigma);
            reported.0 += fit.errors.gamma / draws as f64;
            reported.1 += fit.errors.sigma / draws as f64;
        }
        let sd = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
        };
        let (sg, ss) = (sd(&gammas), sd(&sigmas));
        assert!(
            sg / reported.0 > 0.5 && sg / reported.0 < 2.0,
            "gamma scatter {sg} vs {}",
            reported.0
        );
        assert!(
            ss / reported.1 > 0.5 && ss / reported.1 < 2.0,
            "sigma scatter {ss} vs {}",
            reported.1
        );
    }

    #[test]
    fn rejects_degenerate_input() {
        let flat: Vec<(f64, f64)> = (0..100).map(|k| (k as f64, 1.0)).collect();
        assert!(matches!(
            voigt_fit(&flat, &FitOptions::default()),
            Err(AnalysisError::Degenerate(_))
        ));
        let negative: Vec<(f64, f64)> = (0..100).map(|k| (k as f64, -1.0 - k as f64)).collect();
        assert!(matches!(
            voigt_fit(&negative, &FitOptions::default()),
            Err(AnalysisError::Degenerate(_))
        ));
        let short: Vec<(f64, f64)> = (0..10).map(|k| (k as f64, k as f64)).collect();
        assert!(matches!(
            voigt_fit(&short, &FitOptions::default()),
            Err(AnalysisError::TooFewPoints { .. })
        ));
    }

    #[test]
    fn iteration_cap_reports_non_convergence() {
        let truth = beat_like();
        let data = synth(&truth, 10e6, 30e6, 201);
        let opts = FitOptions {
            max_iterations: 1,
            ..FitOptions::default()
        };
        assert!(matches!(
            voigt_fit(&data, &opts),
            Err(AnalysisError::NonConvergence { iterations: 1, .. })
        ));
    }

    #[test]
    fn report_lists_parameters() {
        let data = synth(&beat_like(), 10e6, 30e6, 201);
        let text = voigt_fit(&data, &FitOptions::default())
            .unwrap()
            .to_string();
        assert!(text.contains("gamma_hz = "));
        assert!(text.contains("residual_norm = "));
    }
}
