//! Frame probabilities to GCI marks: threshold, then the deepest negative
//! sample of each positive frame.

use serde::{Deserialize, Serialize};

use crate::dataset::{RepresentationSet, FRAME_LEN};
use crate::error::{Error, Result};
use crate::marks::{GciMarks, MarkSource};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PeakSignal {
    #[default]
    LpfS,
    LpfLpr,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeConfig {
    pub threshold: f64,
    /// Emit one mark per run of consecutive positive frames instead of one per frame.
    pub merge_adjacent: bool,
    pub peak_signal: PeakSignal,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            threshold: 0.1,
            merge_adjacent: false,
            peak_signal: PeakSignal::LpfS,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config(format!("decode threshold {} must lie in (0, 1)", self.threshold)));
        }
        Ok(())
    }
}

/// `1` where `p >= threshold`.
pub fn classify_frames(p: &[f64], threshold: f64) -> Vec<u8> {
    p.iter().map(|&v| (v >= threshold) as u8).collect()
}

fn argmin<T: Scalar>(x: &[T], offset: usize) -> usize {
    let mut best = 0;
    for (i, &v) in x.iter().enumerate() {
        if v < x[best] {
            best = i;
        }
    }
    offset + best
}

/// Marks at the minimum of `peak_signal` inside each positive frame (or
/// each run of positive frames when merging); ties go to the earliest sample.
pub fn decode_gci<T: Scalar>(b: &[u8], peak_signal: &[T], merge_adjacent: bool) -> Result<GciMarks> {
    if peak_signal.len() < FRAME_LEN * b.len() {
        return Err(Error::TooShort {
            needed: FRAME_LEN * b.len(),
            actual: peak_signal.len(),
        });
    }
    let mut marks = Vec::new();
    let mut f = 0;
    while f < b.len() {
        if b[f] == 0 {
            f += 1;
            continue;
        }
        let mut end = f + 1;
        if merge_adjacent {
            while end < b.len() && b[end] == 1 {
                end += 1;
            }
        }
        marks.push(argmin(&peak_signal[f * FRAME_LEN..end * FRAME_LEN], f * FRAME_LEN));
        f = end;
    }
    GciMarks::new(marks, MarkSource::Detector)
}

/// Threshold and decode against the configured representation.
pub fn decode_probs<T: Scalar>(p: &[f64], reps: &RepresentationSet<T>, config: &DecodeConfig) -> Result<GciMarks> {
    config.validate()?;
    let signal = match config.peak_signal {
        PeakSignal::LpfS => &reps.lpf_s,
        PeakSignal::LpfLpr => &reps.lpf_lpr,
    };
    decode_gci(&classify_frames(p, config.threshold), signal, config.merge_adjacent)
}
