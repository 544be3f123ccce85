//! Input representations, 16-sample framing with GCI labels, corpus splits,
//! and the corpus manifest.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{atomic_write, read_to_string};
use crate::lpc::{lp_residual, LpConfig};
use crate::marks::GciMarks;
use crate::rng::SplitMix64;
use crate::scalar::Scalar;
use crate::signal::{lowpass, peak_normalize, positive_clip, Waveform, TARGET_RATE_HZ};

pub const FRAME_LEN: usize = 16;
pub const N_REPRESENTATIONS: usize = 4;

/// The four network inputs, in frame-channel order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Representation {
    #[serde(rename = "LPF_S")]
    LpfS,
    #[serde(rename = "LPF_LPR")]
    LpfLpr,
    #[serde(rename = "PC_LPF_S")]
    PcLpfS,
    #[serde(rename = "PC_LPF_LPR")]
    PcLpfLpr,
}

impl Representation {
    pub const ALL: [Representation; N_REPRESENTATIONS] =
        [Representation::LpfS, Representation::LpfLpr, Representation::PcLpfS, Representation::PcLpfLpr];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Representation::LpfS => "LPF_S",
            Representation::LpfLpr => "LPF_LPR",
            Representation::PcLpfS => "PC_LPF_S",
            Representation::PcLpfLpr => "PC_LPF_LPR",
        }
    }
}

impl fmt::Display for Representation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Representation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Representation::ALL
            .into_iter()
            .find(|r| r.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown representation '{s}'")))
    }
}

/// LPF_S, LPF_LPR and their positive-clipped variants, all the same length.
#[derive(Debug, Clone, PartialEq)]
pub struct RepresentationSet<T> {
    pub lpf_s: Vec<T>,
    pub lpf_lpr: Vec<T>,
    pub pc_lpf_s: Vec<T>,
    pub pc_lpf_lpr: Vec<T>,
}

impl<T: Scalar> RepresentationSet<T> {
    pub fn get(&self, r: Representation) -> &[T] {
        match r {
            Representation::LpfS => &self.lpf_s,
            Representation::LpfLpr => &self.lpf_lpr,
            Representation::PcLpfS => &self.pc_lpf_s,
            Representation::PcLpfLpr => &self.pc_lpf_lpr,
        }
    }

    pub fn len(&self) -> usize {
        self.lpf_s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lpf_s.is_empty()
    }

    pub fn n_frames(&self) -> usize {
        self.len() / FRAME_LEN
    }
}

/// Builds the four representations of prepared 16 kHz speech. Each one is
/// peak-normalized to 0.99 on its own.
pub fn make_representations<T: Scalar>(speech: &Waveform<T>, lp: &LpConfig) -> Result<RepresentationSet<T>> {
    if speech.sample_rate_hz != TARGET_RATE_HZ {
        return Err(Error::InvalidArgument(format!(
            "representations need {TARGET_RATE_HZ} Hz speech, got {} Hz",
            speech.sample_rate_hz
        )));
    }
    let lpf_s = peak_normalize(&lowpass(&speech.samples)?);
    let lpf_lpr = peak_normalize(&lowpass(&lp_residual(&speech.samples, lp)?)?);
    Ok(RepresentationSet {
        pc_lpf_s: peak_normalize(&positive_clip(&lpf_s)),
        pc_lpf_lpr: peak_normalize(&positive_clip(&lpf_lpr)),
        lpf_s,
        lpf_lpr,
    })
}

/// Labeled 16-sample frames across the four representations.
///
/// `frames` is stored flat as `[frame][representation][sample]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameDataset<T> {
    frames: Vec<T>,
    labels: Vec<u8>,
    recording: Vec<u32>,
    recording_ids: Vec<String>,
}

const FRAME_STRIDE: usize = N_REPRESENTATIONS * FRAME_LEN;

impl<T: Scalar> FrameDataset<T> {
    pub fn empty() -> Self {
        Self {
            frames: Vec::new(),
            labels: Vec::new(),
            recording: Vec::new(),
            recording_ids: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn frame(&self, f: usize, r: Representation) -> &[T] {
        let start = f * FRAME_STRIDE + r.index() * FRAME_LEN;
        &self.frames[start..start + FRAME_LEN]
    }

    /// Id of the recording frame `f` was cut from.
    pub fn recording_of(&self, f: usize) -> &str {
        &self.recording_ids[self.recording[f] as usize]
    }

    pub fn recording_ids(&self) -> &[String] {
        &self.recording_ids
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }

    pub fn has_both_classes(&self) -> bool {
        let p = self.positives();
        p > 0 && p < self.len()
    }

    /// Samples of one representation for the listed frames, laid out as a
    /// `(batch, 1, 16)` block.
    pub fn gather(&self, r: Representation, indices: &[usize]) -> Vec<T> {
        let mut out = Vec::with_capacity(indices.len() * FRAME_LEN);
        for &f in indices {
            out.extend_from_slice(self.frame(f, r));
        }
        out
    }

    pub fn gather_labels(&self, indices: &[usize]) -> Vec<T> {
        indices.iter().map(|&f| T::of(self.labels[f] as f64)).collect()
    }

    /// Appends every frame of `other`.
    pub fn extend(&mut self, other: FrameDataset<T>) {
        let offset = self.recording_ids.len() as u32;
        self.frames.extend(other.frames);
        self.labels.extend(other.labels);
        self.recording.extend(other.recording.into_iter().map(|r| r + offset));
        self.recording_ids.extend(other.recording_ids);
    }

    pub fn concat(parts: impl IntoIterator<Item = FrameDataset<T>>) -> Self {
        let mut out = Self::empty();
        for p in parts {
            out.extend(p);
        }
        out
    }
}

/// Label of each non-overlapping 16-sample frame: 1 when any mark falls
/// inside it. The trailing partial frame is dropped.
pub fn frame_labels(n_frames: usize, marks: &GciMarks) -> Vec<u8> {
    let mut labels = vec![0u8; n_frames];
    for &m in marks.positions() {
        if let Some(l) = labels.get_mut(m / FRAME_LEN) {
            *l = 1;
        }
    }
    labels
}

pub fn frame_and_label<T: Scalar>(reps: &RepresentationSet<T>, marks: &GciMarks, recording_id: &str) -> FrameDataset<T> {
    let n = reps.n_frames();
    let mut frames = Vec::with_capacity(n * FRAME_STRIDE);
    for f in 0..n {
        for r in Representation::ALL {
            frames.extend_from_slice(&reps.get(r)[f * FRAME_LEN..(f + 1) * FRAME_LEN]);
        }
    }
    FrameDataset {
        frames,
        labels: frame_labels(n, marks),
        recording: vec![0; n],
        recording_ids: vec![recording_id.to_string()],
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusSplit {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

/// Recording-level train/validation/test split after a seeded shuffle.
/// Set sizes are `round(n * fraction)` for train and validation; the rest
/// is test.
pub fn split_corpus(ids: &[String], train_fraction: f64, val_fraction: f64, seed: u64) -> Result<CorpusSplit> {
    if ids.len() < 3 {
        return Err(Error::InvalidArgument(format!("need at least 3 recordings to split, got {}", ids.len())));
    }
    let valid = |f: f64| f > 0.0 && f < 1.0;
    if !valid(train_fraction) || !valid(val_fraction) || train_fraction + val_fraction >= 1.0 {
        return Err(Error::InvalidArgument(format!(
            "split fractions {train_fraction}/{val_fraction} must lie in (0,1) and sum below 1"
        )));
    }
    let n = ids.len();
    let n_train = ((n as f64 * train_fraction).round() as usize).clamp(1, n - 2);
    let n_val = ((n as f64 * val_fraction).round() as usize).clamp(1, n - 1 - n_train);
    let mut order: Vec<String> = ids.to_vec();
    SplitMix64::new(seed).shuffle(&mut order);
    let test = order.split_off(n_train + n_val);
    let val = order.split_off(n_train);
    Ok(CorpusSplit { train: order, val, test })
}

/// One corpus manifest row: `id<TAB>wav_path<TAB>marks_path<TAB>disorder_label<TAB>seed`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    pub wav_path: PathBuf,
    pub marks_path: PathBuf,
    pub disorder_label: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn ids(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.id.clone()).collect()
    }

    pub fn get(&self, id: &str) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for e in &self.entries {
            s.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                e.id,
                e.wav_path.display(),
                e.marks_path.display(),
                e.disorder_label,
                e.seed
            ));
        }
        s
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 5 {
                return Err(Error::format(
                    "manifest",
                    path,
                    format!("line {}: expected 5 tab-separated fields, found {}", i + 1, cols.len()),
                ));
            }
            let seed = cols[4]
                .trim()
                .parse()
                .map_err(|_| Error::format("manifest", path, format!("line {}: bad seed '{}'", i + 1, cols[4])))?;
            entries.push(ManifestEntry {
                id: cols[0].to_string(),
                wav_path: PathBuf::from(cols[1]),
                marks_path: PathBuf::from(cols[2]),
                disorder_label: cols[3].to_string(),
                seed,
            });
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read_to_string(path)?, path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        atomic_write(path, self.to_text().as_bytes())
    }
}

/// Resolves a manifest path relative to the directory holding the manifest.
pub fn resolve(manifest_path: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        return p.to_path_buf();
    }
    manifest_path.parent().map(|d| d.join(p)).unwrap_or_else(|| p.to_path_buf())
}
