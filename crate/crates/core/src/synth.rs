//! Synthetic sustained vowels with exactly known GCIs and a matching EGG
//! channel. The presets are verification knobs inspired by the disorder
//! labels, not models of any clinical condition.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::dataset::{Manifest, ManifestEntry};
use crate::error::{Error, Result};
use crate::marks::{GciMarks, MarkSource};
use crate::parallel::par_map;
use crate::rng::{derive_seed, SplitMix64};
use crate::signal::{peak_normalize, write_wav, Role, Waveform, TARGET_RATE_HZ};

const FS: f64 = TARGET_RATE_HZ as f64;
/// Open phase as a fraction of the nominal period.
const OPEN_QUOTIENT: f64 = 0.6;
/// Length in samples of the closing phase; closure itself is abrupt.
const CLOSING_SAMPLES: usize = 5;
/// Jitter and shimmer draws are clamped to this many standard deviations.
const PERTURBATION_CLAMP: f64 = 2.0;
const FIRST_CYCLE_AT: f64 = 10.0;
/// Smear is read as the full width of the Gaussian (four sigma).
const SMEAR_SIGMAS: f64 = 4.0;
const MARK_REFINE_RADIUS: usize = 3;
/// Opening decay time constant of the EGG as a fraction of the cycle.
const EGG_DECAY_FRACTION: f64 = 0.35;
/// How far before a closure a smeared EGG edge may start.
const EGG_LEAD: usize = 30;
pub const FORMANT_BANDWIDTHS_HZ: [f64; 3] = [60.0, 110.0, 170.0];
pub const DEFAULT_DURATION_S: f64 = 0.5;
pub const DEFAULT_MIC_DELAY: usize = 10;
pub const F0_RANGE_HZ: (f64, f64) = (90.0, 240.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum VoiceLabel {
    N,
    P,
    L,
    T,
    C,
    PV,
    Healthy,
}

impl VoiceLabel {
    pub const ALL: [VoiceLabel; 7] = [Self::N, Self::P, Self::L, Self::T, Self::C, Self::PV, Self::Healthy];
    pub const DISORDERS: [VoiceLabel; 6] = [Self::N, Self::P, Self::L, Self::T, Self::C, Self::PV];

    pub fn name(self) -> &'static str {
        match self {
            Self::N => "N",
            Self::P => "P",
            Self::L => "L",
            Self::T => "T",
            Self::C => "C",
            Self::PV => "PV",
            Self::Healthy => "healthy",
        }
    }

    /// (jitter %, shimmer %, closure smear ms, aspiration SNR dB).
    pub fn knobs(self) -> (f64, f64, f64, f64) {
        match self {
            Self::Healthy => (0.5, 2.0, 0.0, 40.0),
            Self::N => (1.5, 4.0, 0.3, 30.0),
            Self::P => (2.0, 5.0, 0.5, 28.0),
            Self::L => (3.0, 6.0, 0.8, 25.0),
            Self::T => (2.5, 5.0, 1.0, 25.0),
            Self::C => (5.0, 8.0, 1.2, 20.0),
            Self::PV => (6.0, 9.0, 1.5, 18.0),
        }
    }
}

impl fmt::Display for VoiceLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for VoiceLabel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|l| l.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown voice label '{s}' (expected N, P, L, T, C, PV or healthy)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Vowel {
    A,
    E,
    O,
}

impl Vowel {
    pub const ALL: [Vowel; 3] = [Self::A, Self::E, Self::O];

    pub fn formants_hz(self) -> [f64; 3] {
        match self {
            Self::A => [730.0, 1090.0, 2440.0],
            Self::E => [530.0, 1840.0, 2480.0],
            Self::O => [570.0, 840.0, 2410.0],
        }
    }
}

impl fmt::Display for Vowel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::A => "a",
            Self::E => "e",
            Self::O => "o",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoicePreset {
    pub label: VoiceLabel,
    pub f0_hz: f64,
    pub jitter_pct: f64,
    pub shimmer_pct: f64,
    pub closure_smear_ms: f64,
    pub aspiration_snr_db: f64,
    pub vowel: Vowel,
    pub mic_delay_samples: usize,
}

impl VoicePreset {
    pub fn new(label: VoiceLabel, f0_hz: f64, vowel: Vowel) -> Self {
        let (jitter_pct, shimmer_pct, closure_smear_ms, aspiration_snr_db) = label.knobs();
        Self {
            label,
            f0_hz,
            jitter_pct,
            shimmer_pct,
            closure_smear_ms,
            aspiration_snr_db,
            vowel,
            mic_delay_samples: DEFAULT_MIC_DELAY,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(60.0..=400.0).contains(&self.f0_hz) {
            return Err(Error::InvalidArgument(format!("f0 {} Hz outside [60, 400]", self.f0_hz)));
        }
        if !(self.jitter_pct >= 0.0 && self.shimmer_pct >= 0.0 && self.closure_smear_ms >= 0.0) {
            return Err(Error::InvalidArgument("jitter, shimmer and smear must be non-negative".into()));
        }
        if self.jitter_pct * PERTURBATION_CLAMP >= 100.0 * (1.0 - OPEN_QUOTIENT) {
            return Err(Error::InvalidArgument(format!("jitter {}% too large for the pulse model", self.jitter_pct)));
        }
        if self.aspiration_snr_db.is_nan() {
            return Err(Error::InvalidArgument("aspiration SNR is NaN".into()));
        }
        Ok(())
    }

    fn smear_sigma(&self) -> f64 {
        self.closure_smear_ms * FS / 1000.0 / SMEAR_SIGMAS
    }
}

fn clamped_normal(rng: &mut SplitMix64) -> f64 {
    rng.normal().clamp(-PERTURBATION_CLAMP, PERTURBATION_CLAMP)
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let half = (4.0 * sigma) as i64 + 1;
    let k: Vec<f64> = (-half..=half).map(|i| (-0.5 * (i as f64 / sigma).powi(2)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Centered ("same"-length) convolution with an odd-length kernel.
fn convolve_same(x: &[f64], k: &[f64]) -> Vec<f64> {
    let h = k.len() / 2;
    (0..x.len())
        .map(|n| {
            let mut acc = 0.0;
            for (j, &kv) in k.iter().enumerate() {
                let idx = n as i64 + h as i64 - j as i64;
                if idx >= 0 && (idx as usize) < x.len() {
                    acc += kv * x[idx as usize];
                }
            }
            acc
        })
        .collect()
}

/// First difference of one Rosenberg flow pulse: raised-cosine opening over
/// `open` samples, quarter-cosine closing over `close` samples. The last
/// sample is the closure, where the derivative is most negative.
pub fn rosenberg_derivative(open: usize, close: usize) -> Vec<f64> {
    let pi = std::f64::consts::PI;
    let flow = |k: usize| {
        if k <= open {
            0.5 * (1.0 - (pi * k as f64 / open as f64).cos())
        } else {
            (pi * (k - open) as f64 / (2 * close) as f64).cos()
        }
    };
    (1..=open + close).map(|k| flow(k) - flow(k - 1)).collect()
}

/// Rosenberg flow-derivative pulse train with i.i.d. (clamped Gaussian)
/// period and amplitude perturbations. Marks sit at the per-cycle
/// derivative minima, refined after smearing.
pub fn gen_glottal_source(preset: &VoicePreset, duration_s: f64, seed: u64) -> Result<(Vec<f64>, GciMarks)> {
    preset.validate()?;
    if !(duration_s >= 0.2) {
        return Err(Error::InvalidArgument(format!("duration {duration_s} s below 0.2 s")));
    }
    let n = (duration_s * FS) as usize;
    let mut rng = SplitMix64::new(seed);
    let mut src = vec![0.0; n];
    let mut marks = Vec::new();
    let nominal = FS / preset.f0_hz;
    let pulse = rosenberg_derivative((OPEN_QUOTIENT * nominal).round() as usize, CLOSING_SAMPLES);
    let mut pos = FIRST_CYCLE_AT;
    loop {
        let period = nominal * (1.0 + preset.jitter_pct / 100.0 * clamped_normal(&mut rng));
        let amp = (1.0 + preset.shimmer_pct / 100.0 * clamped_normal(&mut rng)).max(0.2);
        let start = pos.round() as usize;
        if start + period.round() as usize + 10 >= n {
            break;
        }
        for (i, v) in pulse.iter().enumerate() {
            src[start + i] += amp * v;
        }
        marks.push(start + pulse.len() - 1);
        pos += period;
    }
    if preset.closure_smear_ms > 0.0 {
        src = convolve_same(&src, &gaussian_kernel(preset.smear_sigma()));
    }
    let r = MARK_REFINE_RADIUS;
    let marks: Vec<usize> = marks
        .into_iter()
        .map(|m| {
            (m - r..=m + r)
                .min_by(|&a, &b| src[a].total_cmp(&src[b]))
                .unwrap()
        })
        .collect();
    if preset.aspiration_snr_db.is_finite() {
        let power = src.iter().map(|v| v * v).sum::<f64>() / n as f64;
        let sd = (power / 10f64.powf(preset.aspiration_snr_db / 10.0)).sqrt();
        for v in src.iter_mut() {
            *v += sd * rng.normal();
        }
    }
    Ok((src, GciMarks::new(marks, MarkSource::Synthetic)?))
}

/// Pole pair of a formant resonator as `(1 + a1 z^-1 + a2 z^-2)` coefficients.
pub fn formant_poles(freq_hz: f64, bandwidth_hz: f64) -> (f64, f64) {
    let r = (-std::f64::consts::PI * bandwidth_hz / FS).exp();
    let theta = 2.0 * std::f64::consts::PI * freq_hz / FS;
    (-2.0 * r * theta.cos(), r * r)
}

/// Cascade of three all-pole formant resonators, peak-normalized.
pub fn gen_vocal_tract(source: &[f64], vowel: Vowel) -> Vec<f64> {
    let mut y = source.to_vec();
    for (f, bw) in vowel.formants_hz().into_iter().zip(FORMANT_BANDWIDTHS_HZ) {
        let (a1, a2) = formant_poles(f, bw);
        let (mut y1, mut y2) = (0.0, 0.0);
        for v in y.iter_mut() {
            let out = *v - a1 * y1 - a2 * y2;
            y2 = y1;
            y1 = out;
            *v = out;
        }
    }
    peak_normalize(&y)
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2))
}

/// Maclaurin series below 2.5, erfc continued fraction above.
fn erf(x: f64) -> f64 {
    if x < 0.0 {
        return -erf(-x);
    }
    if x < 2.5 {
        let mut term = x;
        let mut sum = x;
        let x2 = x * x;
        for k in 1..200 {
            term *= -x2 / k as f64;
            let add = term / (2 * k + 1) as f64;
            sum += add;
            if add.abs() < 1e-17 * sum.abs() {
                break;
            }
        }
        return sum * 2.0 / std::f64::consts::PI.sqrt();
    }
    // erfc continued fraction, evaluated bottom-up
    let mut f = 0.0;
    for k in (1..60).rev() {
        f = (k as f64 / 2.0) / (x + f);
    }
    1.0 - (-x * x).exp() / std::f64::consts::PI.sqrt() / (x + f)
}

/// Contact-style EGG: at each mark the signal steps down (fast closing
/// edge), then relaxes exponentially until the next mark. The edge becomes
/// a Gaussian-integrated ramp when the closure is smeared, centered so the
/// dEGG minimum stays on the mark.
pub fn gen_egg(truth: &GciMarks, preset: &VoicePreset, length: usize) -> Result<Vec<f64>> {
    let marks = truth.positions();
    if marks.last().is_some_and(|&m| m >= length) {
        return Err(Error::InvalidArgument(format!("mark beyond EGG length {length}")));
    }
    let sigma = preset.smear_sigma();
    let mut e = vec![0.0; length];
    for (i, &m) in marks.iter().enumerate() {
        let end = marks.get(i + 1).copied().unwrap_or(length);
        let tau = EGG_DECAY_FRACTION * (end - m) as f64;
        for n in m.saturating_sub(EGG_LEAD)..end {
            let step = if sigma > 0.3 {
                std_normal_cdf((n as f64 - m as f64 + 0.5) / sigma)
            } else if n >= m {
                1.0
            } else {
                0.0
            };
            let decay = (-((n as f64 - m as f64).max(0.0)) / tau).exp();
            e[n] -= step * decay;
        }
    }
    Ok(e)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthRecording {
    /// Speech as picked up at the microphone, delayed by the preset's mic delay.
    pub speech: Waveform<f64>,
    pub egg: Waveform<f64>,
    /// GCIs on the source (EGG) timeline.
    pub truth: GciMarks,
    pub preset: VoicePreset,
    pub seed: u64,
}

impl SynthRecording {
    /// Truth moved onto the speech timeline.
    pub fn speech_truth(&self) -> GciMarks {
        self.truth.shifted(self.preset.mic_delay_samples as i64, self.speech.len())
    }
}

pub fn synthesize(preset: &VoicePreset, duration_s: f64, seed: u64) -> Result<SynthRecording> {
    let (src, truth) = gen_glottal_source(preset, duration_s, seed)?;
    let n = src.len();
    let voiced = gen_vocal_tract(&src, preset.vowel);
    let d = preset.mic_delay_samples.min(n);
    let mut speech = vec![0.0; n];
    speech[d..].copy_from_slice(&voiced[..n - d]);
    let egg = gen_egg(&truth, preset, n)?;
    Ok(SynthRecording {
        speech: Waveform::new(peak_normalize(&speech), TARGET_RATE_HZ, Role::Speech)?,
        egg: Waveform::new(egg, TARGET_RATE_HZ, Role::Egg)?,
        truth,
        preset: *preset,
        seed,
    })
}

/// Label cycle for a corpus; recording `i` takes `labels[i % len]` and
/// vowel `i % 3`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PresetMix {
    pub labels: Vec<VoiceLabel>,
}

impl Default for PresetMix {
    fn default() -> Self {
        Self {
            labels: VoiceLabel::ALL.to_vec(),
        }
    }
}

impl FromStr for PresetMix {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let labels = s.split(',').filter(|t| !t.trim().is_empty()).map(str::parse).collect::<Result<Vec<_>>>()?;
        if labels.is_empty() {
            return Err(Error::InvalidArgument("preset mix is empty".into()));
        }
        Ok(Self { labels })
    }
}

impl fmt::Display for PresetMix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.labels.iter().map(|l| l.name()).collect();
        f.write_str(&names.join(","))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorpusSpec {
    pub duration_s: f64,
    pub mic_delay_samples: usize,
    pub f0_range_hz: (f64, f64),
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            duration_s: DEFAULT_DURATION_S,
            mic_delay_samples: DEFAULT_MIC_DELAY,
            f0_range_hz: F0_RANGE_HZ,
        }
    }
}

pub fn recording_id(i: usize) -> String {
    format!("rec_{i:03}")
}

/// Preset and seed of recording `i`; depends only on `(i, root_seed)`.
pub fn corpus_member(i: usize, mix: &PresetMix, root_seed: u64, spec: &CorpusSpec) -> (VoicePreset, u64) {
    let seed = derive_seed(root_seed, i as u64);
    let mut rng = SplitMix64::new(derive_seed(seed, 0));
    let f0 = rng.uniform(spec.f0_range_hz.0, spec.f0_range_hz.1);
    let mut preset = VoicePreset::new(mix.labels[i % mix.labels.len()], f0, Vowel::ALL[i % 3]);
    preset.mic_delay_samples = spec.mic_delay_samples;
    (preset, seed)
}

pub fn gen_recording(i: usize, mix: &PresetMix, root_seed: u64, spec: &CorpusSpec) -> Result<SynthRecording> {
    let (preset, seed) = corpus_member(i, mix, root_seed, spec);
    synthesize(&preset, spec.duration_s, seed)
}

/// Writes `wav/<id>.wav` (speech, EGG), `truth/<id>.marks` (speech
/// timeline) and `manifest.tsv` under `out_dir`.
pub fn gen_corpus(n: usize, mix: &PresetMix, root_seed: u64, spec: &CorpusSpec, out_dir: &Path, jobs: usize) -> Result<Manifest> {
    if n < 3 {
        return Err(Error::InvalidArgument(format!("corpus needs at least 3 recordings, got {n}")));
    }
    if mix.labels.is_empty() {
        return Err(Error::InvalidArgument("preset mix is empty".into()));
    }
    for sub in ["wav", "truth"] {
        std::fs::create_dir_all(out_dir.join(sub)).map_err(|e| Error::io(&out_dir.join(sub), e))?;
    }
    let indices: Vec<usize> = (0..n).collect();
    let entries = par_map(&indices, jobs, |&i| -> Result<ManifestEntry> {
        let id = recording_id(i);
        let rec = gen_recording(i, mix, root_seed, spec)?;
        let wav = Path::new("wav").join(format!("{id}.wav"));
        let marks = Path::new("truth").join(format!("{id}.marks"));
        write_wav(&out_dir.join(&wav), &rec.speech, Some(&rec.egg))?;
        rec.speech_truth().save(&out_dir.join(&marks))?;
        Ok(ManifestEntry {
            id,
            wav_path: wav,
            marks_path: marks,
            disorder_label: rec.preset.label.name().to_string(),
            seed: rec.seed,
        })
    });
    let manifest = Manifest {
        entries: entries.into_iter().collect::<Result<_>>()?,
    };
    manifest.save(&out_dir.join("manifest.tsv"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::egg::{annotate, degg, pick_closure_peaks, AnnotateConfig};
    use crate::lpc::{lp_residual, LpConfig};
    use crate::signal::lowpass;
    use proptest::prelude::*;

    fn quiet(label: VoiceLabel, f0: f64, vowel: Vowel) -> VoicePreset {
        let mut p = VoicePreset::new(label, f0, vowel);
        p.aspiration_snr_db = f64::INFINITY;
        p
    }

    #[test]
    fn erf_reference_values() {
        for (x, e) in [(0.5, 0.5204998778130465), (1.0, 0.8427007929497149), (2.4, 0.9993114861033550), (3.0, 0.9999779095030014)] {
            assert!((erf(x) - e).abs() < 1e-13, "erf({x})");
            assert!((erf(-x) + e).abs() < 1e-13);
        }
    }

    #[test]
    fn healthy_intervals_follow_the_period() {
        for (f0, seed) in [(100.0, 1), (120.0, 2), (210.0, 3)] {
            let p = VoicePreset::new(VoiceLabel::Healthy, f0, Vowel::A);
            let (_, m) = gen_glottal_source(&p, 1.0, seed).unwrap();
            let t = 16000.0 / f0;
            for w in m.positions().windows(2) {
                // 2-sigma clamp of 0.5% jitter, plus one sample of rounding
                assert!(((w[1] - w[0]) as f64 - t).abs() <= 0.01 * t + 1.0, "f0 {f0}: interval {}", w[1] - w[0]);
            }
        }
    }

    #[test]
    fn one_second_at_120_hz_has_about_120_marks() {
        for seed in 0..5 {
            let p = VoicePreset::new(VoiceLabel::Healthy, 120.0, Vowel::A);
            let (_, m) = gen_glottal_source(&p, 1.0, seed).unwrap();
            assert!((118..=122).contains(&m.len()), "{} marks", m.len());
        }
    }

    #[test]
    fn smear_attenuates_the_closure_spike() {
        let sharp = quiet(VoiceLabel::Healthy, 130.0, Vowel::A);
        let mut smeared = sharp;
        smeared.closure_smear_ms = 2.0;
        let depth = |p: &VoicePreset| {
            let (s, m) = gen_glottal_source(p, 0.5, 11).unwrap();
            m.positions().iter().map(|&i| s[i].abs()).sum::<f64>() / m.len() as f64
        };
        let ratio = depth(&smeared) / depth(&sharp);
        println!("closure spike attenuation at 2 ms smear: {ratio:.3}");
        assert!(ratio < 0.5);
    }

    #[test]
    fn marks_are_source_minima() {
        for label in VoiceLabel::ALL {
            let p = quiet(label, 150.0, Vowel::E);
            let (s, m) = gen_glottal_source(&p, 0.5, 5).unwrap();
            for &i in m.positions() {
                assert!((i - 3..=i + 3).all(|j| s[i] <= s[j]));
                assert!(s[i] < 0.0);
            }
        }
    }

    /// Welch-averaged (Hann, non-overlapping) power at one frequency.
    fn band_power(x: &[f64], freq: f64, seg: usize) -> f64 {
        let w = 2.0 * std::f64::consts::PI * freq / 16000.0;
        let (c, s) = (w.cos(), w.sin());
        let mut total = 0.0;
        for chunk in x.chunks_exact(seg) {
            let (mut re, mut im) = (0.0, 0.0);
            let (mut pr, mut pi) = (1.0, 0.0);
            for (n, &v) in chunk.iter().enumerate() {
                let h = 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / seg as f64).cos();
                re += h * v * pr;
                im -= h * v * pi;
                (pr, pi) = (pr * c - pi * s, pr * s + pi * c);
            }
            total += re * re + im * im;
        }
        total
    }

    #[test]
    fn formant_peaks_of_filtered_white_noise() {
        let mut rng = SplitMix64::new(99);
        let noise: Vec<f64> = (0..1 << 17).map(|_| rng.normal()).collect();
        for vowel in Vowel::ALL {
            let y = gen_vocal_tract(&noise, vowel);
            for f in vowel.formants_hz() {
                // strongest smoothed periodogram value within +-15% of the formant
                let grid: Vec<f64> = (0..).map(|i| 0.85 * f + 2.0 * i as f64).take_while(|&g| g <= 1.15 * f).collect();
                let pw: Vec<f64> = grid.iter().map(|&g| band_power(&y, g, 2048)).collect();
                let sm: Vec<f64> = (0..pw.len())
                    .map(|i| {
                        let (lo, hi) = (i.saturating_sub(5), (i + 6).min(pw.len()));
                        pw[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
                    })
                    .collect();
                let best = (0..sm.len()).max_by(|&a, &b| sm[a].total_cmp(&sm[b])).unwrap();
                let off = (grid[best] - f).abs() / f;
                assert!(off <= 0.03, "/{vowel}/ formant {f} Hz: peak at {} Hz", grid[best]);
            }
        }
    }

    #[test]
    fn vocal_tract_is_stable_and_linear_at_zero() {
        assert!(gen_vocal_tract(&[0.0; 500], Vowel::O).iter().all(|&v| v == 0.0));
        for vowel in Vowel::ALL {
            for (f, bw) in vowel.formants_hz().into_iter().zip(FORMANT_BANDWIDTHS_HZ) {
                let (_, a2) = formant_poles(f, bw);
                assert!(a2.sqrt() < 1.0);
            }
        }
    }

    #[test]
    fn egg_closures_land_on_truth() {
        let empty = GciMarks::empty(MarkSource::Synthetic);
        let p = VoicePreset::new(VoiceLabel::Healthy, 120.0, Vowel::A);
        assert!(gen_egg(&empty, &p, 100).unwrap().iter().all(|&v| v == 0.0));
        let (_, truth) = gen_glottal_source(&p, 0.5, 3).unwrap();
        let e = gen_egg(&truth, &p, 8000).unwrap();
        let picked = pick_closure_peaks(&degg(&e), 32, 0.2);
        assert_eq!(picked.positions(), truth.positions());
        let scaled: Vec<f64> = e.iter().map(|v| v * 3.7).collect();
        assert_eq!(pick_closure_peaks(&degg(&scaled), 32, 0.2).positions(), truth.positions());

        // smeared edge still centered on the mark
        let mut s = p;
        s.closure_smear_ms = 1.5;
        let e = gen_egg(&truth, &s, 8000).unwrap();
        let picked = pick_closure_peaks(&degg(&e), 32, 0.2);
        for (a, b) in picked.positions().iter().zip(truth.positions()) {
            assert!(a.abs_diff(*b) <= 1);
        }
        assert!(gen_egg(&truth, &p, 100).is_err());
    }

    #[test]
    fn delay_round_trip() {
        let cfg = AnnotateConfig::default();
        let (mut exact, mut total) = (0, 0);
        for label in [VoiceLabel::Healthy, VoiceLabel::N, VoiceLabel::P, VoiceLabel::L, VoiceLabel::T] {
            for k in 0..12 {
                let f0 = 90.0 + 13.0 * k as f64;
                let rec = synthesize(&VoicePreset::new(label, f0, Vowel::ALL[k % 3]), 0.5, 40 + k as u64).unwrap();
                let d = annotate(&rec.speech, &rec.egg, &cfg).unwrap().delay.unwrap().samples;
                let err = d.abs_diff(DEFAULT_MIC_DELAY);
                if rec.preset.closure_smear_ms == 0.0 {
                    assert!(err <= 1, "{label} f0 {f0}: delay {d}");
                } else {
                    // smearing pulls the residual minimum ahead of the closure
                    assert!(err <= 3, "{label} f0 {f0}: delay {d}");
                    total += 1;
                    exact += usize::from(err <= 1);
                }
            }
        }
        println!("smeared presets within one sample of the mic delay: {exact}/{total}");
    }

    #[test]
    fn smear_weakens_excitation_at_closures() {
        let smears = [0.0, 0.5, 1.0, 1.5, 2.0];
        let rms = |x: &[f64]| (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt();
        let mut prominence = Vec::new();
        let mut lpf_s = Vec::new();
        for &sm in &smears {
            let (mut acc, mut acc_s, mut n) = (0.0, 0.0, 0);
            for i in 0..12 {
                let mut p = VoicePreset::new(VoiceLabel::Healthy, 100.0 + 11.0 * i as f64, Vowel::ALL[i % 3]);
                p.closure_smear_ms = sm;
                let rec = synthesize(&p, 0.5, 500 + i as u64).unwrap();
                let e = lp_residual(&rec.speech.samples, &LpConfig::default()).unwrap();
                let l = peak_normalize(&lowpass(&rec.speech.samples).unwrap());
                let scale = rms(&e);
                for &m in rec.speech_truth().positions() {
                    acc -= e[m] / scale;
                    acc_s += l[m].abs();
                    n += 1;
                }
            }
            prominence.push(acc / n as f64);
            lpf_s.push(acc_s / n as f64);
        }
        println!("residual prominence at closures by smear {smears:?}: {prominence:?}");
        println!("mean |LPF_S| at closures: {lpf_s:?}");
        assert!(prominence.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn corpus_is_complete_and_reproducible() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let mix = PresetMix::default();
        let spec = CorpusSpec::default();
        let m = gen_corpus(14, &mix, 7, &spec, a.path(), 1).unwrap();
        assert_eq!(m.entries.len(), 14);
        for l in VoiceLabel::DISORDERS {
            assert!(m.entries.iter().any(|e| e.disorder_label == l.name()));
        }
        let vowels: std::collections::HashSet<String> =
            (0..14).map(|i| corpus_member(i, &mix, 7, &spec).0.vowel.to_string()).collect();
        assert_eq!(vowels.len(), 3);
        let m2 = gen_corpus(14, &mix, 7, &spec, b.path(), 3).unwrap();
        assert_eq!(m, m2);
        for e in &m.entries {
            for rel in [&e.wav_path, &e.marks_path] {
                assert_eq!(std::fs::read(a.path().join(rel)).unwrap(), std::fs::read(b.path().join(rel)).unwrap());
            }
        }
        assert_eq!(std::fs::read(a.path().join("manifest.tsv")).unwrap(), std::fs::read(b.path().join("manifest.tsv")).unwrap());
        assert!(gen_corpus(2, &mix, 7, &spec, a.path(), 1).is_err());
    }

    #[test]
    fn mix_parsing() {
        assert_eq!("N,pv , healthy".parse::<PresetMix>().unwrap().labels, vec![VoiceLabel::N, VoiceLabel::PV, VoiceLabel::Healthy]);
        assert!("N,X".parse::<PresetMix>().is_err());
        assert!("".parse::<PresetMix>().is_err());
        assert_eq!(PresetMix::default().to_string().parse::<PresetMix>().unwrap(), PresetMix::default());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn truth_spacing_tracks_jitter(li in 0usize..7, f0 in 60.0f64..400.0, seed in any::<u64>()) {
            let p = VoicePreset::new(VoiceLabel::ALL[li], f0, Vowel::A);
            let (_, m) = gen_glottal_source(&p, 0.3, seed).unwrap();
            let t = 16000.0 / f0;
            let j = PERTURBATION_CLAMP * p.jitter_pct / 100.0;
            // rounding plus mark refinement on both ends
            let slack = 1.0 + 2.0 * MARK_REFINE_RADIUS as f64;
            prop_assert!(m.len() >= 2);
            for w in m.positions().windows(2) {
                let d = (w[1] - w[0]) as f64;
                prop_assert!(d >= t * (1.0 - j) - slack && d <= t * (1.0 + j) + slack);
            }
        }
    }
}
