//! Fixtures shared by the kernel benchmarks.

use wlmlock::{NoiseSpec, NoiseStream, VoigtProfile};

/// Noiseless beat-note lineshape sampled on `n` points across ±8 MHz.
pub fn voigt_spectrum(n: usize) -> Vec<(f64, f64)> {
    let profile = VoigtProfile {
        nu0: 20e6,
        sigma: 830e3,
        gamma: 730e3,
        amplitude: 1.0,
        offset: 0.0,
    };
    (0..n)
        .map(|k| {
            let nu = 12e6 + 16e6 * k as f64 / (n - 1) as f64;
            (nu, profile.eval(nu).expect("valid profile"))
        })
        .collect()
}

/// `n` white-FM fractional-frequency samples.
pub fn white_fractional(n: usize, seed: u64) -> Vec<f64> {
    let spec = NoiseSpec {
        h0: 1.0,
        h_flicker: 0.0,
        h_rw: 0.0,
        seed,
    };
    NoiseStream::new(spec, 1.0)
        .expect("valid spec")
        .take_samples(n)
}

/// A mixed power-law spec at 1 MHz.
pub fn laser_spec(seed: u64) -> NoiseSpec {
    NoiseSpec {
        h0: 2.3e5,
        h_flicker: 3.9e10,
        h_rw: 2.2e11,
        seed,
    }
}
