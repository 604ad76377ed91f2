//! Stabilisation filter functions.
//!
//! Frequency-domain multipliers equal to `1 + O(tau |k|^2)` that keep the
//! derivative-bearing scheme terms bounded: each filter satisfies
//! `|Psi(k) tau |k|^2| <= 1` (respectively `|Psi2(k,k1) tau |k||k1|| <= 1`)
//! uniformly in the mode, and evaluates to 1 at `k = 0`.

use num_complex::Complex64;
use serde::Serialize;

/// Normalised sinc.
pub fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize)]
pub enum FilterId {
    /// `Psi(i tau |k|^2) = sinc^2(sqrt(tau) |k|)`; `Psi * tau|k|^2 = sin^2`.
    Psi,
    /// `Psi1(k) = (1 - e^{-2 i tau k^2}) / (2 i tau k^2)`;
    /// `|Psi1 * tau k^2| = |sin(tau k^2)| <= 1`.
    Psi1,
    /// `Psi2(k, k1) = sinc(sqrt(tau)|k|) sinc(sqrt(tau)|k1|)`.
    Psi2,
    /// `Psi3(k) = sinc^2(sqrt(tau) |k|)`, the same multiplier as `Psi`.
    Psi3,
}

impl FilterId {
    /// Single-frequency filters. `Psi2` requires [`FilterId::eval2`].
    pub fn eval(&self, tau: f64, k: f64) -> Complex64 {
        match self {
            FilterId::Psi | FilterId::Psi3 => {
                let s = sinc(tau.sqrt() * k.abs());
                Complex64::new(s * s, 0.0)
            }
            FilterId::Psi1 => {
                let x = tau * k * k;
                if x.abs() < 1e-10 {
                    Complex64::new(1.0, -x)
                } else {
                    (Complex64::new(1.0, 0.0) - Complex64::new(0.0, -2.0 * x).exp())
                        / Complex64::new(0.0, 2.0 * x)
                }
            }
            FilterId::Psi2 => panic!("Psi2 takes a frequency pair"),
        }
    }

    pub fn eval2(&self, tau: f64, k: f64, k1: f64) -> Complex64 {
        match self {
            FilterId::Psi2 => {
                let rt = tau.sqrt();
                Complex64::new(sinc(rt * k.abs()) * sinc(rt * k1.abs()), 0.0)
            }
            _ => self.eval(tau, k),
        }
    }
}
