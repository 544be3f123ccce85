//! Waveforms, audio I/O, resampling, polarity handling, zero-phase
//! low-pass filtering and positive clipping.

mod filter;
mod resample;
mod wav;

pub use filter::{design_butterworth_lowpass, Biquad, IirFilter};
pub use resample::resample;
pub use wav::{read_wav, write_wav};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Working sample rate of the whole pipeline.
pub const TARGET_RATE_HZ: u32 = 16_000;
/// Peak amplitude every prepared signal is normalized to.
pub const PEAK_LEVEL: f64 = 0.99;
/// Low-pass applied to speech and residual representations.
pub const LOWPASS_ORDER: usize = 6;
pub const LOWPASS_CUTOFF_HZ: f64 = 1000.0;

const MIN_INPUT_RATE_HZ: u32 = 2000;
const POLARITY_EXTREMA: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Speech,
    Egg,
}

/// Uniformly sampled real signal.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform<T> {
    pub samples: Vec<T>,
    pub sample_rate_hz: u32,
    pub role: Role,
}

impl<T: Scalar> Waveform<T> {
    pub fn new(samples: Vec<T>, sample_rate_hz: u32, role: Role) -> Result<Self> {
        if sample_rate_hz == 0 {
            return Err(Error::InvalidArgument("sample rate must be positive".into()));
        }
        Ok(Self {
            samples,
            sample_rate_hz,
            role,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.len() as f64 / self.sample_rate_hz as f64
    }
}

/// How `prepare_speech` treats signal polarity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    /// Leave samples as recorded.
    #[default]
    Keep,
    /// Negate every sample.
    Flip,
    /// Negate when the low-passed signal's largest excursions are positive.
    Auto,
}

impl std::str::FromStr for Polarity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "keep" => Ok(Polarity::Keep),
            "flip" => Ok(Polarity::Flip),
            "auto" => Ok(Polarity::Auto),
            other => Err(Error::InvalidArgument(format!("unknown polarity '{other}'"))),
        }
    }
}

/// `y[n] = min(x[n], 0)`: keeps only the negative excursions.
pub fn positive_clip<T: Scalar>(x: &[T]) -> Vec<T> {
    x.iter().map(|&v| v.min(T::zero())).collect()
}

/// Scales `x` so that `max |x| == PEAK_LEVEL`; all-zero input is returned unchanged.
pub fn peak_normalize<T: Scalar>(x: &[T]) -> Vec<T> {
    let peak = x.iter().fold(T::zero(), |m, v| m.max(v.abs()));
    if peak == T::zero() {
        return x.to_vec();
    }
    let gain = T::of(PEAK_LEVEL) / peak;
    x.iter().map(|&v| v * gain).collect()
}

/// The order-6, 1 kHz low-pass used for every representation.
pub fn speech_lowpass<T: Scalar>() -> IirFilter<T> {
    design_butterworth_lowpass(LOWPASS_ORDER, LOWPASS_CUTOFF_HZ, TARGET_RATE_HZ)
        .expect("constant design parameters are valid")
}

/// Zero-phase low-pass at the pipeline cutoff.
pub fn lowpass<T: Scalar>(x: &[T]) -> Result<Vec<T>> {
    speech_lowpass().filtfilt(x)
}

fn mean_of_largest<T: Scalar>(mut values: Vec<T>) -> T {
    values.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    values.truncate(POLARITY_EXTREMA);
    if values.is_empty() {
        return T::zero();
    }
    let n = T::of(values.len() as f64);
    values.into_iter().sum::<T>() / n
}

/// True when the signal's dominant excursions are positive, i.e. when it
/// must be negated to follow the negative-polarity convention. Compares the
/// mean magnitude of the ten deepest local minima against the ten highest
/// local maxima of the low-passed signal.
pub fn needs_polarity_flip<T: Scalar>(x: &[T]) -> Result<bool> {
    let lp = lowpass(x)?;
    let mut maxima = Vec::new();
    let mut minima = Vec::new();
    for w in lp.windows(3) {
        if w[1] > w[0] && w[1] >= w[2] {
            maxima.push(w[1]);
        } else if w[1] < w[0] && w[1] <= w[2] {
            minima.push(-w[1]);
        }
    }
    Ok(mean_of_largest(minima) < mean_of_largest(maxima))
}

/// Brings speech to the pipeline convention: 16 kHz, requested polarity,
/// peak-normalized to 0.99.
pub fn prepare_speech<T: Scalar>(w: &Waveform<T>, polarity: Polarity) -> Result<Waveform<T>> {
    if w.role != Role::Speech {
        return Err(Error::InvalidArgument("prepare_speech expects a speech waveform".into()));
    }
    if w.sample_rate_hz < MIN_INPUT_RATE_HZ {
        return Err(Error::InvalidArgument(format!(
            "sample rate {} Hz is implausibly low (minimum {MIN_INPUT_RATE_HZ} Hz)",
            w.sample_rate_hz
        )));
    }
    if w.is_empty() {
        return Err(Error::TooShort { needed: 1, actual: 0 });
    }
    let mut x = resample(&w.samples, w.sample_rate_hz, TARGET_RATE_HZ);
    let flip = match polarity {
        Polarity::Keep => false,
        Polarity::Flip => true,
        Polarity::Auto => needs_polarity_flip(&x)?,
    };
    if flip {
        x.iter_mut().for_each(|v| *v = -*v);
    }
    Waveform::new(peak_normalize(&x), TARGET_RATE_HZ, Role::Speech)
}

/// Brings an EGG channel to the working rate without altering polarity or scale.
pub fn prepare_egg<T: Scalar>(w: &Waveform<T>) -> Result<Waveform<T>> {
    if w.sample_rate_hz < MIN_INPUT_RATE_HZ {
        return Err(Error::InvalidArgument(format!(
            "sample rate {} Hz is implausibly low",
            w.sample_rate_hz
        )));
    }
    Waveform::new(resample(&w.samples, w.sample_rate_hz, TARGET_RATE_HZ), TARGET_RATE_HZ, Role::Egg)
}
