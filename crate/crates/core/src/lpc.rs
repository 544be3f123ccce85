//! Linear prediction by the autocorrelation method and the residual
//! obtained by inverse filtering.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::signal::TARGET_RATE_HZ;

/// LP analysis settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LpConfig {
    pub order: usize,
    pub frame_ms: f64,
    pub hop_ms: f64,
}

impl Default for LpConfig {
    fn default() -> Self {
        Self {
            order: 12,
            frame_ms: 25.0,
            hop_ms: 10.0,
        }
    }
}

/// Predictor for one analysis frame: `x[n] ~ sum_k a[k] x[n-1-k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LpcFrame<T> {
    pub start_sample: usize,
    pub coefficients: Vec<T>,
    /// Prediction error energy of the final recursion order.
    pub gain: T,
}

/// Solution of the normal equations produced by [`levinson`].
#[derive(Debug, Clone, PartialEq)]
pub struct LevinsonSolution<T> {
    pub coefficients: Vec<T>,
    pub reflection: Vec<T>,
    pub gain: T,
}

/// Biased autocorrelation `r[k] = sum_n x[n] x[n+k]` for `k = 0..=max_lag`.
pub fn autocorrelation<T: Scalar>(frame: &[T], max_lag: usize) -> Result<Vec<T>> {
    if frame.len() <= max_lag {
        return Err(Error::TooShort {
            needed: max_lag + 1,
            actual: frame.len(),
        });
    }
    Ok((0..=max_lag)
        .map(|k| frame.iter().zip(&frame[k..]).map(|(&a, &b)| a * b).sum())
        .collect())
}

/// Levinson-Durbin recursion for the Toeplitz system `R a = r[1..=order]`.
pub fn levinson<T: Scalar>(r: &[T], order: usize) -> Result<LevinsonSolution<T>> {
    if r.len() < order + 1 {
        return Err(Error::TooShort {
            needed: order + 1,
            actual: r.len(),
        });
    }
    if r[0] <= T::zero() {
        return Err(Error::DegenerateFrame);
    }
    let mut a = vec![T::zero(); order];
    let mut prev = vec![T::zero(); order];
    let mut reflection = Vec::with_capacity(order);
    let mut err = r[0];
    for i in 0..order {
        let mut acc = r[i + 1];
        for j in 0..i {
            acc -= a[j] * r[i - j];
        }
        let k = acc / err;
        if !(k.abs() < T::one()) {
            return Err(Error::SingularFrame(k.to_f64().unwrap_or(f64::NAN)));
        }
        prev[..i].copy_from_slice(&a[..i]);
        a[i] = k;
        for j in 0..i {
            a[j] = prev[j] - k * prev[i - 1 - j];
        }
        err *= T::one() - k * k;
        reflection.push(k);
    }
    Ok(LevinsonSolution {
        coefficients: a,
        reflection,
        gain: err,
    })
}

fn hamming<T: Scalar>(n: usize) -> Vec<T> {
    if n == 1 {
        return vec![T::one()];
    }
    (0..n)
        .map(|i| T::of(0.54 - 0.46 * (2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64).cos()))
        .collect()
}

/// Frame-wise LP analysis. One frame per hop-length segment, centered on
/// the segment and clamped to the signal; frames that fail the recursion
/// reuse the previous frame's predictor (zeros before the first success).
pub fn analyze<T: Scalar>(x: &[T], config: &LpConfig) -> Result<Vec<LpcFrame<T>>> {
    let rate = TARGET_RATE_HZ as f64;
    let frame_len = (config.frame_ms * rate / 1000.0).round() as usize;
    let hop = (config.hop_ms * rate / 1000.0).round() as usize;
    if frame_len <= config.order || hop == 0 {
        return Err(Error::InvalidArgument(format!(
            "LP frame of {frame_len} samples / hop {hop} unusable for order {}",
            config.order
        )));
    }
    if x.len() < frame_len {
        return Err(Error::TooShort {
            needed: frame_len,
            actual: x.len(),
        });
    }
    // The normal equations of resonant speech are badly conditioned, so the
    // autocorrelation and recursion run in f64 whatever the sample type.
    let window = hamming::<f64>(frame_len);
    let mut coefficients = vec![T::zero(); config.order];
    let mut gain = T::zero();
    let mut frames = Vec::with_capacity(x.len() / hop + 1);
    let mut buf = vec![0.0f64; frame_len];
    for seg_start in (0..x.len()).step_by(hop) {
        let center = seg_start + hop / 2;
        let start = center.saturating_sub(frame_len / 2).min(x.len() - frame_len);
        for ((b, &v), &w) in buf.iter_mut().zip(&x[start..start + frame_len]).zip(&window) {
            *b = v.to_f64().unwrap() * w;
        }
        let r = autocorrelation(&buf, config.order)?;
        if let Ok(sol) = levinson(&r, config.order) {
            coefficients = sol.coefficients.into_iter().map(T::of).collect();
            gain = T::of(sol.gain);
        }
        frames.push(LpcFrame {
            start_sample: seg_start,
            coefficients: coefficients.clone(),
            gain,
        });
    }
    Ok(frames)
}

/// LP residual `e[n] = x[n] - sum_k a_k x[n-k]`, switching predictors at
/// segment boundaries while keeping the input history continuous.
pub fn lp_residual<T: Scalar>(x: &[T], config: &LpConfig) -> Result<Vec<T>> {
    let frames = analyze(x, config)?;
    let mut e = vec![T::zero(); x.len()];
    for (i, frame) in frames.iter().enumerate() {
        let end = frames.get(i + 1).map_or(x.len(), |f| f.start_sample);
        for n in frame.start_sample..end {
            let mut acc = x[n];
            for (k, &a) in frame.coefficients.iter().enumerate().take(n) {
                acc -= a * x[n - 1 - k];
            }
            e[n] = acc;
        }
    }
    Ok(e)
}
