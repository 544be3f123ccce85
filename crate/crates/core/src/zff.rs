//! Zero-frequency filtering epoch detector used as the classical baseline.
//!
//! The differenced signal passes through two cascaded 0 Hz resonators,
//! the resulting polynomial trend is removed by repeated local-mean
//! subtraction over about one and a half pitch periods, and epochs are
//! read off the zero crossings. Always computed in `f64`: the resonator
//! output grows polynomially before trend removal.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::marks::{GciMarks, MarkSource};
use crate::signal::{lowpass, Waveform, TARGET_RATE_HZ};

/// Smallest gap between accepted epochs (2 ms at 16 kHz).
pub const MIN_EPOCH_SPACING: usize = 32;
/// Normalized autocorrelation peak below which a recording counts as unvoiced.
pub const VOICING_THRESHOLD: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ZffConfig {
    /// Trend window length as a multiple of the mean pitch period.
    pub trend_window_factor: f64,
    pub trend_passes: usize,
    pub f0_min_hz: f64,
    pub f0_max_hz: f64,
}

impl Default for ZffConfig {
    fn default() -> Self {
        Self {
            trend_window_factor: 1.5,
            trend_passes: 3,
            f0_min_hz: 60.0,
            f0_max_hz: 500.0,
        }
    }
}

impl ZffConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.trend_window_factor > 0.0) || self.trend_passes == 0 {
            return Err(Error::Config("ZFF trend window factor must be positive and passes at least 1".into()));
        }
        if !(self.f0_min_hz > 0.0 && self.f0_min_hz < self.f0_max_hz) {
            return Err(Error::Config("ZFF f0 search band must satisfy 0 < min < max".into()));
        }
        Ok(())
    }
}

/// `y[n] = x[n] + 2 y[n-1] - y[n-2]`: a double pole at z = 1.
pub fn zero_frequency_resonator(x: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; x.len()];
    for n in 0..x.len() {
        let y1 = if n >= 1 { y[n - 1] } else { 0.0 };
        let y2 = if n >= 2 { y[n - 2] } else { 0.0 };
        y[n] = x[n] + 2.0 * y1 - y2;
    }
    y
}

/// First difference (with `x[-1] = 0`) followed by two resonators.
pub fn zfr_cascade(x: &[f64]) -> Vec<f64> {
    let d: Vec<f64> = (0..x.len()).map(|n| x[n] - if n > 0 { x[n - 1] } else { 0.0 }).collect();
    zero_frequency_resonator(&zero_frequency_resonator(&d))
}

/// Subtracts the mean over `[n - half_width, n + half_width]` (truncated at
/// the edges), `passes` times.
pub fn remove_trend(y: &[f64], half_width: usize, passes: usize) -> Vec<f64> {
    let mut cur = y.to_vec();
    for _ in 0..passes {
        let mut prefix = Vec::with_capacity(cur.len() + 1);
        prefix.push(0.0);
        let mut acc = 0.0;
        for &v in &cur {
            acc += v;
            prefix.push(acc);
        }
        cur = (0..cur.len())
            .map(|n| {
                let lo = n.saturating_sub(half_width);
                let hi = (n + half_width + 1).min(cur.len());
                cur[n] - (prefix[hi] - prefix[lo]) / (hi - lo) as f64
            })
            .collect();
    }
    cur
}

/// Mean pitch period in samples from the autocorrelation of the low-passed
/// signal over the f0 search band; `None` for silence or weak periodicity.
pub fn estimate_pitch_period(x: &[f64], config: &ZffConfig) -> Result<Option<usize>> {
    let lp = lowpass(x)?;
    let r0: f64 = lp.iter().map(|v| v * v).sum();
    if r0 <= 0.0 {
        return Ok(None);
    }
    let fs = TARGET_RATE_HZ as f64;
    let lo = (fs / config.f0_max_hz).floor() as usize;
    let hi = ((fs / config.f0_min_hz).ceil() as usize).min(lp.len().saturating_sub(1));
    if lo >= hi {
        return Ok(None);
    }
    let r = |k: usize| lp[..lp.len() - k].iter().zip(&lp[k..]).map(|(a, b)| a * b).sum::<f64>();
    let (best, peak) = (lo..=hi).map(|k| (k, r(k))).fold((lo, f64::NEG_INFINITY), |b, c| if c.1 > b.1 { c } else { b });
    Ok((peak / r0 >= VOICING_THRESHOLD).then_some(best))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZffResult {
    pub marks: GciMarks,
    pub period: Option<usize>,
    /// Set when no pitch could be established; marks are then empty.
    pub low_confidence: bool,
}

/// Epochs of prepared (16 kHz, negative-polarity) speech: the first sample
/// of each upward zero crossing of the trend-free ZFF signal, at least 2 ms
/// apart.
pub fn zff_epochs(w: &Waveform<f64>, config: &ZffConfig) -> Result<ZffResult> {
    config.validate()?;
    if w.sample_rate_hz != TARGET_RATE_HZ {
        return Err(Error::InvalidArgument(format!("ZFF expects {TARGET_RATE_HZ} Hz speech")));
    }
    let Some(period) = estimate_pitch_period(&w.samples, config)? else {
        return Ok(ZffResult {
            marks: GciMarks::empty(MarkSource::Detector),
            period: None,
            low_confidence: true,
        });
    };
    let half_width = ((config.trend_window_factor * period as f64 / 2.0).round() as usize).max(1);
    let z = remove_trend(&zfr_cascade(&w.samples), half_width, config.trend_passes);
    let mut marks: Vec<usize> = Vec::new();
    for n in 1..z.len() {
        if z[n - 1] < 0.0 && z[n] >= 0.0 && marks.last().is_none_or(|&m| n - m >= MIN_EPOCH_SPACING) {
            marks.push(n);
        }
    }
    Ok(ZffResult {
        marks: GciMarks::new(marks, MarkSource::Detector)?,
        period: Some(period),
        low_confidence: false,
    })
}
