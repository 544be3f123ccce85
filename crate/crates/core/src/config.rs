//! Pipeline configuration: every module's tunables plus paths and the root
//! seed, read from an optional TOML file. Absent keys take module defaults;
//! unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::decode::DecodeConfig;
use crate::egg::AnnotateConfig;
use crate::error::{Error, Result};
use crate::io::read_to_string;
use crate::lpc::LpConfig;
use crate::models::{ColumnConfig, FusionRule, TrainConfig};
use crate::signal::Polarity;
use crate::synth::{CorpusSpec, PresetMix, DEFAULT_DURATION_S, DEFAULT_MIC_DELAY, F0_RANGE_HZ};
use crate::zff::ZffConfig;

pub const DEFAULT_SEED: u64 = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub corpus_dir: PathBuf,
    pub checkpoint_dir: PathBuf,
    pub detection_dir: PathBuf,
    pub report_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            corpus_dir: "corpus".into(),
            checkpoint_dir: "checkpoints".into(),
            detection_dir: "detections".into(),
            report_dir: "reports".into(),
        }
    }
}

impl PathsConfig {
    pub fn manifest(&self) -> PathBuf {
        self.corpus_dir.join("manifest.tsv")
    }

    pub fn annotation_dir(&self) -> PathBuf {
        self.corpus_dir.join("annotations")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_recordings: usize,
    /// Comma-separated labels cycled over the recordings.
    pub mix: String,
    pub duration_s: f64,
    pub mic_delay_samples: usize,
    pub f0_min_hz: f64,
    pub f0_max_hz: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_recordings: 80,
            mix: PresetMix::default().to_string(),
            duration_s: DEFAULT_DURATION_S,
            mic_delay_samples: DEFAULT_MIC_DELAY,
            f0_min_hz: F0_RANGE_HZ.0,
            f0_max_hz: F0_RANGE_HZ.1,
        }
    }
}

impl SynthConfig {
    pub fn preset_mix(&self) -> Result<PresetMix> {
        self.mix.parse().map_err(|e: Error| Error::Config(e.to_string()))
    }

    pub fn corpus_spec(&self) -> CorpusSpec {
        CorpusSpec {
            duration_s: self.duration_s,
            mic_delay_samples: self.mic_delay_samples,
            f0_range_hz: (self.f0_min_hz, self.f0_max_hz),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SignalConfig {
    pub polarity: Polarity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub train_fraction: f64,
    pub val_fraction: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        // 54 / 8 / 18 of 80 recordings
        Self {
            train_fraction: 0.675,
            val_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Worker cap for per-recording work.
    pub jobs: usize,
    pub precision: Precision,
    pub paths: PathsConfig,
    pub synth: SynthConfig,
    pub signal: SignalConfig,
    pub lp: LpConfig,
    pub annotate: AnnotateConfig,
    pub split: SplitConfig,
    pub column: ColumnConfig,
    pub train: TrainConfig,
    pub fusion: FusionRule,
    pub decode: DecodeConfig,
    pub zff: ZffConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: DEFAULT_SEED,
            jobs: 1,
            precision: Precision::default(),
            paths: PathsConfig::default(),
            synth: SynthConfig::default(),
            signal: SignalConfig::default(),
            lp: LpConfig::default(),
            annotate: AnnotateConfig::default(),
            split: SplitConfig::default(),
            column: ColumnConfig::default(),
            train: TrainConfig::default(),
            fusion: FusionRule::default(),
            decode: DecodeConfig::default(),
            zff: ZffConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str, origin: &Path) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(format!("{}: {}", origin.display(), e.message())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&read_to_string(path)?, path)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("pipeline config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.preset_mix()?;
        if !(self.synth.duration_s >= 0.2) {
            return Err(Error::Config(format!("synth.duration_s {} below 0.2", self.synth.duration_s)));
        }
        if !(60.0 <= self.synth.f0_min_hz && self.synth.f0_min_hz <= self.synth.f0_max_hz && self.synth.f0_max_hz <= 400.0) {
            return Err(Error::Config("synth f0 range must lie within [60, 400] Hz".into()));
        }
        if self.lp.order == 0 || !(self.lp.frame_ms > 0.0 && self.lp.hop_ms > 0.0) {
            return Err(Error::Config("lp order, frame_ms and hop_ms must be positive".into()));
        }
        if self.column.channels.is_empty() || self.column.channels.contains(&0) || self.column.kernel_size % 2 == 0 {
            return Err(Error::Config("column channels must be positive and kernel_size odd".into()));
        }
        let t = &self.train;
        if t.batch_size < 2 || t.max_epochs == 0 || !(t.learning_rate > 0.0) || !(t.positive_weight > 0.0) || t.min_delta < 0.0 {
            return Err(Error::Config("train: batch_size >= 2, max_epochs >= 1, positive learning rate and weight".into()));
        }
        let s = &self.split;
        if !(s.train_fraction > 0.0 && s.val_fraction > 0.0 && s.train_fraction + s.val_fraction < 1.0) {
            return Err(Error::Config("split fractions must be positive and sum below 1".into()));
        }
        self.decode.validate()?;
        self.zff.validate()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = PipelineConfig::from_toml_str("", Path::new("x.toml")).unwrap();
        assert_eq!(c, PipelineConfig::default());
        assert_eq!(c.train.batch_size, 256);
        assert_eq!(c.lp.order, 12);
        assert_eq!(c.column.channels, vec![32, 32, 64, 64, 128]);
    }

    #[test]
    fn partial_sections_keep_other_defaults() {
        let c = PipelineConfig::from_toml_str(
            "seed = 3\n[train]\nmax_epochs = 2\n[decode]\nthreshold = 0.5\n[annotate]\ndelay_reference = \"lpf_speech\"\n",
            Path::new("x.toml"),
        )
        .unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.train.max_epochs, 2);
        assert_eq!(c.train.learning_rate, 1e-4);
        assert_eq!(c.decode.threshold, 0.5);
        assert_eq!(c.annotate.delay_reference, crate::egg::DelayReference::LpfSpeech);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        for text in ["sed = 3", "[train]\nbatchsize = 3", "[nonsense]\n", "[decode]\nthreshold = 1.5", "[synth]\nmix = \"N,Q\""] {
            assert!(matches!(PipelineConfig::from_toml_str(text, Path::new("c.toml")), Err(Error::Config(_))), "{text}");
        }
    }

    #[test]
    fn round_trips_through_toml() {
        let mut c = PipelineConfig::default();
        c.precision = Precision::F32;
        c.fusion = FusionRule::Max;
        c.synth.mix = "N,PV".into();
        let back = PipelineConfig::from_toml_str(&c.to_toml_string(), Path::new("x")).unwrap();
        assert_eq!(back, c);
    }
}
