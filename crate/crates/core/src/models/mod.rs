//! Single-column CNNs over one representation each, the joint model over
//! frozen PC_LPF_S / PC_LPF_LPR columns, and posterior fusion.

mod checkpoint;
mod train;

pub use checkpoint::{ModelCheckpoint, FORMAT_VERSION, MAGIC};
pub use train::{train_joint, train_single_column, EpochLog, TrainConfig, Trained};

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::{Representation, RepresentationSet, FRAME_LEN};
use crate::error::{Error, Result};
use crate::nn::{BatchNorm1d, Conv1d, Dense, Layer, Sequential, Tensor, PROB_CLIP};
use crate::rng::SplitMix64;
use crate::scalar::Scalar;

/// Shape of one CNN column.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ColumnConfig {
    pub channels: Vec<usize>,
    pub kernel_size: usize,
}

impl Default for ColumnConfig {
    fn default() -> Self {
        Self {
            channels: vec![32, 32, 64, 64, 128],
            kernel_size: 3,
        }
    }
}

impl ColumnConfig {
    pub fn feature_dim(&self) -> usize {
        FRAME_LEN * self.channels.last().copied().unwrap_or(1)
    }

    /// Index of the flatten layer: everything up to it is the feature
    /// extractor, everything after it the sigmoid head.
    fn flatten_index(&self) -> usize {
        3 * self.channels.len()
    }
}

/// Conv -> BatchNorm -> ReLU per entry of `config.channels` (no pooling),
/// then Flatten -> Dense(1) -> Sigmoid. Convolutions carry no bias: the
/// batch normalization that follows each one cancels it. Weights are He
/// normal from per-layer streams of `seed`.
pub fn build_single_column<T: Scalar>(config: &ColumnConfig, seed: u64) -> Result<Sequential<T>> {
    if config.channels.is_empty() {
        return Err(Error::InvalidArgument("a column needs at least one conv block".into()));
    }
    let mut root = SplitMix64::new(seed);
    let mut layers = Vec::new();
    let mut cin = 1;
    for (i, &c) in config.channels.iter().enumerate() {
        let mut conv = Conv1d::new(cin, c, config.kernel_size, false)?;
        conv.init_he(&mut root.split(i as u64));
        layers.push(Layer::Conv1d(conv));
        layers.push(Layer::BatchNorm1d(BatchNorm1d::new(c)));
        layers.push(Layer::relu());
        cin = c;
    }
    layers.push(Layer::flatten());
    let mut head = Dense::new(config.feature_dim(), 1);
    head.init_he(&mut root.split(config.channels.len() as u64));
    layers.push(Layer::Dense(head));
    layers.push(Layer::sigmoid());
    Ok(Sequential::new(layers))
}

/// `(frames, 1, 16)` input block of one representation.
pub fn frames_tensor<T: Scalar>(signal: &[T]) -> Result<Tensor<T>> {
    let n = signal.len() / FRAME_LEN;
    if n == 0 {
        return Err(Error::TooShort {
            needed: FRAME_LEN,
            actual: signal.len(),
        });
    }
    Tensor::new(vec![n, 1, FRAME_LEN], signal[..n * FRAME_LEN].to_vec())
}

const INFER_CHUNK: usize = 1024;

fn infer_chunked<T: Scalar>(x: &Tensor<T>, f: impl Fn(&Tensor<T>) -> Result<Tensor<T>>) -> Result<Vec<T>> {
    let (n, c, l) = x.dims3()?;
    let mut out = Vec::with_capacity(n);
    for start in (0..n).step_by(INFER_CHUNK) {
        let end = (start + INFER_CHUNK).min(n);
        let chunk = Tensor::new(vec![end - start, c, l], x.data()[start * c * l..end * c * l].to_vec())?;
        out.extend(f(&chunk)?.into_data());
    }
    Ok(out)
}

/// One trained column with the representation it reads.
#[derive(Debug, Clone, PartialEq)]
pub struct SingleColumn<T> {
    pub representation: Representation,
    pub config: ColumnConfig,
    pub net: Sequential<T>,
    pub seed: u64,
    pub epochs: usize,
    pub best_epoch: usize,
}

impl<T: Scalar> SingleColumn<T> {
    pub fn new(representation: Representation, config: ColumnConfig, seed: u64) -> Result<Self> {
        Ok(Self {
            net: build_single_column(&config, seed)?,
            representation,
            config,
            seed,
            epochs: 0,
            best_epoch: 0,
        })
    }

    /// Flattened features of the conv stack in eval mode.
    pub fn features(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut h = x.clone();
        for l in &self.net.layers[..=self.config.flatten_index()] {
            h = l.infer(&h)?;
        }
        Ok(h)
    }

    /// The column's own sigmoid head applied to precomputed features.
    pub fn head(&self, features: &Tensor<T>) -> Result<Tensor<T>> {
        let mut h = features.clone();
        for l in &self.net.layers[self.config.flatten_index() + 1..] {
            h = l.infer(&h)?;
        }
        Ok(h)
    }

    /// Eval-mode GCI probability of each `(frames, 1, 16)` input.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Vec<T>> {
        infer_chunked(x, |c| self.net.infer(c))
    }

    pub fn predict_reps(&self, reps: &RepresentationSet<T>) -> Result<Vec<T>> {
        self.predict(&frames_tensor(reps.get(self.representation))?)
    }

    fn meta(&self) -> Vec<(String, String)> {
        vec![
            ("representation".into(), self.representation.name().into()),
            ("channels".into(), join(&self.config.channels)),
            ("kernel_size".into(), self.config.kernel_size.to_string()),
            ("seed".into(), self.seed.to_string()),
            ("epochs".into(), self.epochs.to_string()),
            ("best_epoch".into(), self.best_epoch.to_string()),
        ]
    }

    fn from_parts(meta: &ModelCheckpoint<T>, prefix: &str, net: Sequential<T>) -> Result<Self> {
        let get = |k: &str| meta.meta(&format!("{prefix}{k}"));
        let num = |k: &str| -> Result<u64> {
            get(k)?
                .parse()
                .map_err(|_| Error::Checkpoint(format!("metadata '{prefix}{k}' is not a number")))
        };
        let config = ColumnConfig {
            channels: split_usize(get("channels")?)?,
            kernel_size: num("kernel_size")? as usize,
        };
        let col = Self {
            representation: get("representation")?.parse()?,
            net,
            seed: num("seed")?,
            epochs: num("epochs")? as usize,
            best_epoch: num("best_epoch")? as usize,
            config,
        };
        col.check_topology()?;
        Ok(col)
    }

    fn check_topology(&self) -> Result<()> {
        let expected = build_single_column::<T>(&self.config, 0)?.describe();
        if self.net.describe() != expected {
            return Err(Error::Checkpoint(format!(
                "{} column layers do not match its declared architecture",
                self.representation
            )));
        }
        Ok(())
    }

    pub fn to_checkpoint(&self) -> ModelCheckpoint<T> {
        let mut meta: std::collections::BTreeMap<String, String> = self.meta().into_iter().collect();
        meta.insert("model".into(), "single_column".into());
        ModelCheckpoint {
            meta,
            sections: vec![("column".into(), self.net.clone())],
        }
    }

    pub fn from_checkpoint(ckpt: &ModelCheckpoint<T>) -> Result<Self> {
        if ckpt.meta("model")? != "single_column" {
            return Err(Error::Checkpoint(format!("expected a single_column checkpoint, found '{}'", ckpt.meta("model")?)));
        }
        Self::from_parts(ckpt, "", ckpt.section("column")?.clone())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    /// Loads a column and checks it reads `expected` with architecture `config`.
    pub fn load(path: &Path, expected: Representation, config: &ColumnConfig) -> Result<Self> {
        let col = Self::from_checkpoint(&ModelCheckpoint::load(path)?)?;
        if col.representation != expected {
            return Err(Error::Checkpoint(format!(
                "{}: holds a {} column, expected {expected}",
                path.display(),
                col.representation
            )));
        }
        if &col.config != config {
            return Err(Error::Checkpoint(format!(
                "{}: column architecture {:?}/k{} differs from the requested {:?}/k{}",
                path.display(),
                col.config.channels,
                col.config.kernel_size,
                config.channels,
                config.kernel_size
            )));
        }
        Ok(col)
    }
}

fn join(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

fn split_usize(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|p| p.parse().map_err(|_| Error::Checkpoint(format!("bad channel list '{s}'"))))
        .collect()
}

/// Frozen PC_LPF_S and PC_LPF_LPR columns whose flattened features are
/// concatenated into a trainable dense sigmoid head.
#[derive(Debug, Clone, PartialEq)]
pub struct JointModel<T> {
    pub speech_column: SingleColumn<T>,
    pub residual_column: SingleColumn<T>,
    pub head: Sequential<T>,
    pub seed: u64,
    pub epochs: usize,
    pub best_epoch: usize,
}

impl<T: Scalar> JointModel<T> {
    pub fn new(speech_column: SingleColumn<T>, residual_column: SingleColumn<T>, seed: u64) -> Result<Self> {
        if speech_column.representation != Representation::PcLpfS {
            return Err(Error::Training(format!(
                "joint model needs a PC_LPF_S column first, got {}",
                speech_column.representation
            )));
        }
        if residual_column.representation != Representation::PcLpfLpr {
            return Err(Error::Training(format!(
                "joint model needs a PC_LPF_LPR column second, got {}",
                residual_column.representation
            )));
        }
        let dim = speech_column.config.feature_dim() + residual_column.config.feature_dim();
        let mut dense = Dense::new(dim, 1);
        dense.init_he(&mut SplitMix64::new(seed));
        Ok(Self {
            speech_column,
            residual_column,
            head: Sequential::new(vec![Layer::Dense(dense), Layer::sigmoid()]),
            seed,
            epochs: 0,
            best_epoch: 0,
        })
    }

    /// Concatenated column features for aligned PC_LPF_S / PC_LPF_LPR inputs.
    pub fn features(&self, speech: &Tensor<T>, residual: &Tensor<T>) -> Result<Tensor<T>> {
        let a = self.speech_column.features(speech)?;
        let b = self.residual_column.features(residual)?;
        let (n, da) = a.dims2()?;
        let (nb, db) = b.dims2()?;
        if n != nb {
            return Err(Error::Shape {
                expected: format!("{n} residual frames"),
                actual: format!("{nb}"),
            });
        }
        let mut out = Vec::with_capacity(n * (da + db));
        for i in 0..n {
            out.extend_from_slice(&a.data()[i * da..(i + 1) * da]);
            out.extend_from_slice(&b.data()[i * db..(i + 1) * db]);
        }
        Tensor::new(vec![n, da + db], out)
    }

    pub fn predict(&self, speech: &Tensor<T>, residual: &Tensor<T>) -> Result<Vec<T>> {
        let (n, _, _) = speech.dims3()?;
        let mut out = Vec::with_capacity(n);
        for start in (0..n).step_by(INFER_CHUNK) {
            let end = (start + INFER_CHUNK).min(n);
            let slice = |t: &Tensor<T>| Tensor::new(vec![end - start, 1, FRAME_LEN], t.data()[start * FRAME_LEN..end * FRAME_LEN].to_vec());
            let f = self.features(&slice(speech)?, &slice(residual)?)?;
            out.extend(self.head.infer(&f)?.into_data());
        }
        Ok(out)
    }

    pub fn predict_reps(&self, reps: &RepresentationSet<T>) -> Result<Vec<T>> {
        self.predict(&frames_tensor(&reps.pc_lpf_s)?, &frames_tensor(&reps.pc_lpf_lpr)?)
    }

    pub fn to_checkpoint(&self) -> ModelCheckpoint<T> {
        let mut meta = std::collections::BTreeMap::new();
        meta.insert("model".into(), "joint".into());
        meta.insert("seed".into(), self.seed.to_string());
        meta.insert("epochs".into(), self.epochs.to_string());
        meta.insert("best_epoch".into(), self.best_epoch.to_string());
        for (prefix, col) in [("speech.", &self.speech_column), ("residual.", &self.residual_column)] {
            for (k, v) in col.meta() {
                meta.insert(format!("{prefix}{k}"), v);
            }
        }
        ModelCheckpoint {
            meta,
            sections: vec![
                ("speech_column".into(), self.speech_column.net.clone()),
                ("residual_column".into(), self.residual_column.net.clone()),
                ("head".into(), self.head.clone()),
            ],
        }
    }

    pub fn from_checkpoint(ckpt: &ModelCheckpoint<T>) -> Result<Self> {
        if ckpt.meta("model")? != "joint" {
            return Err(Error::Checkpoint(format!("expected a joint checkpoint, found '{}'", ckpt.meta("model")?)));
        }
        let speech = SingleColumn::from_parts(ckpt, "speech.", ckpt.section("speech_column")?.clone())?;
        let residual = SingleColumn::from_parts(ckpt, "residual.", ckpt.section("residual_column")?.clone())?;
        let num = |k: &str| -> Result<u64> {
            ckpt.meta(k)?
                .parse()
                .map_err(|_| Error::Checkpoint(format!("metadata '{k}' is not a number")))
        };
        let mut m = Self::new(speech, residual, num("seed")?)?;
        let head = ckpt.section("head")?.clone();
        if head.describe() != m.head.describe() {
            return Err(Error::Checkpoint("joint head layers do not match the column feature sizes".into()));
        }
        m.head = head;
        m.epochs = num("epochs")? as usize;
        m.best_epoch = num("best_epoch")? as usize;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&ModelCheckpoint::load(path)?)
    }
}

/// How the joint-model and Model 1 posteriors are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionRule {
    /// Product of independent posteriors under a uniform prior.
    #[default]
    Product,
    Max,
}

impl fmt::Display for FusionRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FusionRule::Product => "product",
            FusionRule::Max => "max",
        })
    }
}

impl FromStr for FusionRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "product" => Ok(FusionRule::Product),
            "max" => Ok(FusionRule::Max),
            other => Err(Error::InvalidArgument(format!("unknown fusion rule '{other}' (product|max)"))),
        }
    }
}

/// `pj*p1 / (pj*p1 + (1-pj)(1-p1))` on clipped inputs, or `max(pj, p1)`.
pub fn fuse_posteriors(p_joint: f64, p_model1: f64, rule: FusionRule) -> f64 {
    let clip = |p: f64| p.clamp(PROB_CLIP, 1.0 - PROB_CLIP);
    let (a, b) = (clip(p_joint), clip(p_model1));
    match rule {
        FusionRule::Product => a * b / (a * b + (1.0 - a) * (1.0 - b)),
        FusionRule::Max => a.max(b),
    }
}

/// The final detector: Model 1 (LPF_S) fused with the joint model.
#[derive(Debug, Clone, PartialEq)]
pub struct FinalModel<T> {
    pub model1: SingleColumn<T>,
    pub joint: JointModel<T>,
    pub rule: FusionRule,
}

impl<T: Scalar> FinalModel<T> {
    pub fn new(model1: SingleColumn<T>, joint: JointModel<T>, rule: FusionRule) -> Result<Self> {
        if model1.representation != Representation::LpfS {
            return Err(Error::Training(format!("Model 1 must read LPF_S, got {}", model1.representation)));
        }
        Ok(Self { model1, joint, rule })
    }

    /// Fused GCI probability of every whole 16-sample frame.
    pub fn predict_frame_probs(&self, reps: &RepresentationSet<T>) -> Result<Vec<f64>> {
        let p1 = self.model1.predict_reps(reps)?;
        let pj = self.joint.predict_reps(reps)?;
        Ok(pj
            .iter()
            .zip(&p1)
            .map(|(&j, &m)| fuse_posteriors(j.to_f64().unwrap(), m.to_f64().unwrap(), self.rule))
            .collect())
    }
}

#[cfg(test)]
mod tests;
