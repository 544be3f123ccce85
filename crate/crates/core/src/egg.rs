//! Reference GCI annotation from the EGG channel: negative peaks of the
//! differenced EGG, shifted by the EGG-to-microphone delay.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lpc::{lp_residual, LpConfig};
use crate::marks::{GciMarks, MarkSource};
use crate::scalar::Scalar;
use crate::signal::{lowpass, Waveform, TARGET_RATE_HZ};

/// Fewest marks for which a delay estimate is attempted.
pub const MIN_MARKS_FOR_DELAY: usize = 10;
/// Peak-to-mean-magnitude ratio of the delay objective below which an
/// estimate is reported as low confidence.
pub const DELAY_CONFIDENCE_RATIO: f64 = 1.5;
/// Relative margin under which a later delay-objective peak counts as a tie.
pub const DELAY_NEAR_TIE: f64 = 0.1;

/// Signal whose negative excursions the EGG marks are aligned to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DelayReference {
    /// Low-passed speech.
    LpfSpeech,
    /// Low-passed LP residual.
    LpfResidual,
    /// Full-band LP residual.
    #[default]
    Residual,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnotateConfig {
    pub min_distance_samples: usize,
    pub rel_threshold: f64,
    pub max_delay_ms: f64,
    pub delay_reference: DelayReference,
}

impl Default for AnnotateConfig {
    fn default() -> Self {
        Self {
            min_distance_samples: 32,
            rel_threshold: 0.2,
            max_delay_ms: 20.0,
            delay_reference: DelayReference::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DelayEstimate {
    pub samples: usize,
    /// Objective peak divided by the mean objective magnitude over all lags.
    pub peak_ratio: f64,
}

impl DelayEstimate {
    pub fn is_confident(&self) -> bool {
        self.peak_ratio >= DELAY_CONFIDENCE_RATIO
    }
}

/// First difference with `d[0] = 0`.
pub fn degg<T: Scalar>(egg: &[T]) -> Vec<T> {
    let mut d = Vec::with_capacity(egg.len());
    if !egg.is_empty() {
        d.push(T::zero());
    }
    d.extend(egg.windows(2).map(|w| w[1] - w[0]));
    d
}

/// Closure peaks: samples at most `-rel_threshold * max|d|` that are the
/// smallest value within `+-min_distance`, accepted greedily left to right
/// with at least `min_distance` samples between accepted marks.
pub fn pick_closure_peaks<T: Scalar>(d: &[T], min_distance: usize, rel_threshold: f64) -> GciMarks {
    let peak = d.iter().fold(T::zero(), |m, v| m.max(v.abs()));
    if peak == T::zero() {
        return GciMarks::empty(MarkSource::EggReference);
    }
    let threshold = -T::of(rel_threshold) * peak;
    let mut out: Vec<usize> = Vec::new();
    for (n, &v) in d.iter().enumerate() {
        if v > threshold {
            continue;
        }
        let lo = n.saturating_sub(min_distance);
        let hi = (n + min_distance + 1).min(d.len());
        if d[lo..hi].iter().any(|&u| u < v) {
            continue;
        }
        if out.last().is_some_and(|&last| n - last < min_distance) {
            continue;
        }
        out.push(n);
    }
    GciMarks::new(out, MarkSource::EggReference).expect("picked in increasing order")
}

/// Delay in samples that best aligns `marks` with the negative excursions
/// of `speech_repr`: the argmax over `d` in `[0, max_delay]` of
/// `sum_i -speech_repr[marks[i] + d]`. Formant ringing repeats the
/// excitation a few milliseconds later, so when local maxima less than half
/// a pitch period before the global one come within `DELAY_NEAR_TIE` of it
/// the earliest wins.
pub fn estimate_delay<T: Scalar>(speech_repr: &[T], marks: &GciMarks, max_delay_ms: f64) -> Result<DelayEstimate> {
    if marks.len() < MIN_MARKS_FOR_DELAY {
        return Err(Error::UnreliableDelay {
            marks: marks.len(),
            needed: MIN_MARKS_FOR_DELAY,
        });
    }
    let max_delay = (max_delay_ms * TARGET_RATE_HZ as f64 / 1000.0).round() as usize;
    let objective: Vec<f64> = (0..=max_delay)
        .map(|d| {
            marks
                .positions()
                .iter()
                .filter_map(|&m| speech_repr.get(m + d))
                .map(|v| -v.to_f64().unwrap())
                .sum()
        })
        .collect();
    let (argmax, peak) = objective
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) });
    let mut spacing: Vec<usize> = marks.positions().windows(2).map(|w| w[1] - w[0]).collect();
    spacing.sort_unstable();
    let reach = spacing[spacing.len() / 2] / 2;
    let floor = peak - DELAY_NEAR_TIE * peak.abs();
    let best = (argmax.saturating_sub(reach)..=argmax)
        .find(|&d| {
            let v = objective[d];
            let left = d == 0 || objective[d - 1] <= v;
            let right = d + 1 == objective.len() || objective[d + 1] <= v;
            v >= floor && left && right
        })
        .expect("the global maximum qualifies");
    let mean_mag = objective.iter().map(|v| v.abs()).sum::<f64>() / objective.len() as f64;
    let peak_ratio = if mean_mag > 0.0 { peak / mean_mag } else { 0.0 };
    Ok(DelayEstimate {
        samples: best,
        peak_ratio,
    })
}

/// Result of annotating one recording.
#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub marks: GciMarks,
    /// `None` when too few closures were found to estimate a delay.
    pub delay: Option<DelayEstimate>,
}

/// Representation the delay objective is evaluated on.
pub fn delay_reference_signal<T: Scalar>(speech: &[T], reference: DelayReference) -> Result<Vec<T>> {
    match reference {
        DelayReference::LpfSpeech => lowpass(speech),
        DelayReference::LpfResidual => lowpass(&lp_residual(speech, &LpConfig::default())?),
        DelayReference::Residual => lp_residual(speech, &LpConfig::default()),
    }
}

/// Reference marks on the speech timeline from a prepared 16 kHz speech
/// signal and its simultaneously recorded EGG.
pub fn annotate<T: Scalar>(speech: &Waveform<T>, egg: &Waveform<T>, config: &AnnotateConfig) -> Result<Annotation> {
    if speech.sample_rate_hz != TARGET_RATE_HZ || egg.sample_rate_hz != TARGET_RATE_HZ {
        return Err(Error::InvalidArgument("annotate expects 16 kHz speech and EGG".into()));
    }
    if speech.len() != egg.len() {
        return Err(Error::InvalidArgument(format!(
            "speech ({}) and EGG ({}) lengths differ",
            speech.len(),
            egg.len()
        )));
    }
    let closures = pick_closure_peaks(&degg(&egg.samples), config.min_distance_samples, config.rel_threshold);
    if closures.len() < MIN_MARKS_FOR_DELAY {
        return Ok(Annotation {
            marks: closures,
            delay: None,
        });
    }
    let repr = delay_reference_signal(&speech.samples, config.delay_reference)?;
    let delay = estimate_delay(&repr, &closures, config.max_delay_ms)?;
    Ok(Annotation {
        marks: closures.shifted(delay.samples as i64, speech.len()),
        delay: Some(delay),
    })
}
