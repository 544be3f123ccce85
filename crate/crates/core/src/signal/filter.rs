//! Butterworth low-pass design as cascaded biquads, and zero-phase
//! forward-backward filtering.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// One second-order section, `(b0 + b1 z^-1 + b2 z^-2) / (1 + a1 z^-1 + a2 z^-2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad<T> {
    pub b: [T; 3],
    pub a: [T; 2],
}

impl<T: Scalar> Biquad<T> {
    pub fn dc_gain(&self) -> T {
        (self.b[0] + self.b[1] + self.b[2]) / (T::one() + self.a[0] + self.a[1])
    }

    /// Largest pole magnitude of the section.
    pub fn pole_radius(&self) -> f64 {
        let a1 = self.a[0].to_f64().unwrap();
        let a2 = self.a[1].to_f64().unwrap();
        let disc = a1 * a1 - 4.0 * a2;
        if disc < 0.0 {
            a2.sqrt()
        } else {
            let s = disc.sqrt();
            ((-a1 + s) / 2.0).abs().max(((-a1 - s) / 2.0).abs())
        }
    }

    /// Transposed direct form II state reached after a long run of ones.
    fn step_state(&self) -> [T; 2] {
        let g = self.dc_gain();
        let z2 = self.b[2] - self.a[1] * g;
        let z1 = self.b[1] - self.a[0] * g + z2;
        [z1, z2]
    }

    fn run(&self, x: &mut [T], mut state: [T; 2]) {
        let [b0, b1, b2] = self.b;
        let [a1, a2] = self.a;
        for v in x.iter_mut() {
            let input = *v;
            let y = b0 * input + state[0];
            state[0] = b1 * input - a1 * y + state[1];
            state[1] = b2 * input - a2 * y;
            *v = y;
        }
    }
}

/// Cascade of second-order sections.
#[derive(Debug, Clone, PartialEq)]
pub struct IirFilter<T> {
    pub sections: Vec<Biquad<T>>,
}

impl<T: Scalar> IirFilter<T> {
    pub fn order(&self) -> usize {
        2 * self.sections.len()
    }

    pub fn dc_gain(&self) -> T {
        self.sections.iter().fold(T::one(), |g, s| g * s.dc_gain())
    }

    pub fn is_stable(&self) -> bool {
        self.sections.iter().all(|s| s.pole_radius() < 1.0)
    }

    /// Magnitude of the frequency response at `freq_hz`.
    pub fn magnitude(&self, freq_hz: f64, sample_rate_hz: f64) -> f64 {
        let w = 2.0 * std::f64::consts::PI * freq_hz / sample_rate_hz;
        let (c1, s1) = (w.cos(), -w.sin());
        let (c2, s2) = ((2.0 * w).cos(), -(2.0 * w).sin());
        self.sections
            .iter()
            .map(|sec| {
                let b: Vec<f64> = sec.b.iter().map(|v| v.to_f64().unwrap()).collect();
                let a: Vec<f64> = sec.a.iter().map(|v| v.to_f64().unwrap()).collect();
                let num = (b[0] + b[1] * c1 + b[2] * c2, b[1] * s1 + b[2] * s2);
                let den = (1.0 + a[0] * c1 + a[1] * c2, a[0] * s1 + a[1] * s2);
                (num.0.hypot(num.1)) / (den.0.hypot(den.1))
            })
            .product()
    }

    pub fn magnitude_db(&self, freq_hz: f64, sample_rate_hz: f64) -> f64 {
        20.0 * self.magnitude(freq_hz, sample_rate_hz).log10()
    }

    /// Causal filtering from rest.
    pub fn apply(&self, x: &[T]) -> Vec<T> {
        let mut y = x.to_vec();
        for s in &self.sections {
            s.run(&mut y, [T::zero(); 2]);
        }
        y
    }

    /// Causal filtering with every section started in the steady state
    /// for a constant input equal to `y[0]`.
    fn apply_steady(&self, y: &mut [T]) {
        let mut level = match y.first() {
            Some(&v) => v,
            None => return,
        };
        for s in &self.sections {
            let [z1, z2] = s.step_state();
            s.run(y, [z1 * level, z2 * level]);
            level *= s.dc_gain();
        }
    }

    /// Edge padding used by [`IirFilter::filtfilt`].
    pub fn padding_len(&self) -> usize {
        3 * self.order()
    }

    /// Zero-phase filtering: forward pass, time reversal, second pass,
    /// reversal. The input is extended at both ends by odd reflection of
    /// `3 * order` samples which are stripped afterwards.
    pub fn filtfilt(&self, x: &[T]) -> Result<Vec<T>> {
        let pad = self.padding_len();
        let needed = 6 * self.order() + 1;
        if x.len() < needed {
            return Err(Error::TooShort {
                needed,
                actual: x.len(),
            });
        }
        let n = x.len();
        let two = T::of(2.0);
        let mut ext = Vec::with_capacity(n + 2 * pad);
        ext.extend((1..=pad).rev().map(|i| two * x[0] - x[i]));
        ext.extend_from_slice(x);
        ext.extend((1..=pad).map(|i| two * x[n - 1] - x[n - 1 - i]));

        self.apply_steady(&mut ext);
        ext.reverse();
        self.apply_steady(&mut ext);
        ext.reverse();
        Ok(ext[pad..pad + n].to_vec())
    }
}

/// Butterworth low-pass of even `order` via the bilinear transform with
/// the cutoff prewarped so that `|H(cutoff)| = 1/sqrt(2)` exactly.
pub fn design_butterworth_lowpass<T: Scalar>(
    order: usize,
    cutoff_hz: f64,
    sample_rate_hz: u32,
) -> Result<IirFilter<T>> {
    let nyquist = sample_rate_hz as f64 / 2.0;
    if !(cutoff_hz > 0.0 && cutoff_hz < nyquist) {
        return Err(Error::InvalidArgument(format!(
            "cutoff {cutoff_hz} Hz must lie in (0, {nyquist}) Hz"
        )));
    }
    if order == 0 || order % 2 != 0 {
        return Err(Error::InvalidArgument(format!(
            "butterworth order must be even and positive, got {order}"
        )));
    }
    let k = (std::f64::consts::PI * cutoff_hz / sample_rate_hz as f64).tan();
    let k2 = k * k;
    let sections = (0..order / 2)
        .map(|i| {
            // analog section s^2 + 2 zeta s + 1 from the conjugate pole pair i
            let theta = std::f64::consts::PI * (2 * i + 1) as f64 / (2 * order) as f64;
            let two_zeta = 2.0 * theta.sin();
            let norm = 1.0 / (1.0 + two_zeta * k + k2);
            let b0 = k2 * norm;
            Biquad {
                b: [T::of(b0), T::of(2.0 * b0), T::of(b0)],
                a: [T::of(2.0 * (k2 - 1.0) * norm), T::of((1.0 - two_zeta * k + k2) * norm)],
            }
        })
        .collect();
    Ok(IirFilter { sections })
}
