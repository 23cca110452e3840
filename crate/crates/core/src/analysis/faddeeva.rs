//! Faddeeva function `w(z) = exp(−z²)·erfc(−iz)` by Weideman's rational
//! expansion.

use std::f64::consts::{FRAC_2_SQRT_PI, PI};
use std::sync::OnceLock;

use num_complex::Complex64;

const N: usize = 40;

struct Expansion {
    l: f64,
    /// Highest degree first.
    coeffs: [f64; N],
}

fn expansion() -> &'static Expansion {
    static CELL: OnceLock<Expansion> = OnceLock::new();
    CELL.get_or_init(|| {
        let m = 2 * N;
        let l = (N as f64 / 2f64.sqrt()).sqrt();
        let g: Vec<(f64, f64)> = (1..m as i64)
            .flat_map(|k| [k, -k])
            .chain(std::iter::once(0))
            .map(|k| {
                let theta = k as f64 * PI / m as f64;
                let t = l * (0.5 * theta).tan();
                (k as f64, (-t * t).exp() * (l * l + t * t))
            })
            .collect();
        let mut coeffs = [0.0; N];
        for (n, c) in coeffs.iter_mut().enumerate() {
            let order = (N - n) as f64;
            let s: f64 = g
                .iter()
                .map(|&(k, gk)| gk * (PI * order * k / m as f64).cos())
                .sum();
            *c = s / (2 * m) as f64;
        }
        Expansion { l, coeffs }
    })
}

fn upper_half(z: Complex64) -> Complex64 {
    let e = expansion();
    let i = Complex64::i();
    let denom = e.l - i * z;
    let zz = (e.l + i * z) / denom;
    let p = e
        .coeffs
        .iter()
        .fold(Complex64::new(0.0, 0.0), |acc, &c| acc * zz + c);
    2.0 * p / (denom * denom) + (0.5 * FRAC_2_SQRT_PI) / denom
}

/// `w(z)` for any complex `z`. For `Im z ≥ 0`, the half plane used by the
/// Voigt profile, the error is below 1e-9 relative or 1e-15 absolute.
pub fn faddeeva(z: Complex64) -> Complex64 {
    if z.im >= 0.0 {
        upper_half(z)
    } else {
        2.0 * (-z * z).exp() - upper_half(-z)
    }
}

/// `w′(z) = −2z·w(z) + 2i/√π`.
pub fn faddeeva_derivative(z: Complex64, w: Complex64) -> Complex64 {
    -2.0 * z * w + Complex64::new(0.0, FRAC_2_SQRT_PI)
}
