//! Minibatch training with ADAM, per-epoch validation, and early stopping
//! that keeps the best-validation weights.

use serde::{Deserialize, Serialize};

use crate::dataset::{FrameDataset, Representation, FRAME_LEN};
use crate::error::{Error, Result};
use crate::nn::{bce_loss, Adam, Mode, Sequential, Tensor};
use crate::rng::{derive_seed, SplitMix64};
use crate::scalar::Scalar;

use super::{ColumnConfig, JointModel, SingleColumn};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// Epochs without an improvement of at least `min_delta` before stopping.
    pub patience: usize,
    pub min_delta: f64,
    pub positive_weight: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 256,
            learning_rate: 1e-4,
            max_epochs: 30,
            patience: 3,
            min_delta: 1e-4,
            positive_weight: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_bce: f64,
    pub val_bce: f64,
}

impl EpochLog {
    /// `epoch,train_bce,val_bce` lines with a header.
    pub fn to_csv(log: &[EpochLog]) -> String {
        let mut s = String::from("epoch,train_bce,val_bce\n");
        for e in log {
            s.push_str(&format!("{},{:.10},{:.10}\n", e.epoch, e.train_bce, e.val_bce));
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trained<M> {
    pub model: M,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_bce: f64,
}

type Inputs<'a, T> = dyn Fn(&[usize]) -> Result<Tensor<T>> + 'a;

struct FitResult {
    log: Vec<EpochLog>,
    best_epoch: usize,
    best_val_bce: f64,
}

const VAL_CHUNK: usize = 1024;

fn validation_bce<T: Scalar>(net: &Sequential<T>, inputs: &Inputs<'_, T>, labels: &[u8], positive_weight: f64) -> Result<f64> {
    let idx: Vec<usize> = (0..labels.len()).collect();
    let mut total = 0.0;
    for chunk in idx.chunks(VAL_CHUNK) {
        let p = net.infer(&inputs(chunk)?)?;
        let y: Vec<T> = chunk.iter().map(|&i| T::of(labels[i] as f64)).collect();
        let (l, _) = bce_loss(p.data(), &y, positive_weight);
        total += l.to_f64().unwrap() * chunk.len() as f64;
    }
    Ok(total / labels.len() as f64)
}

#[allow(clippy::too_many_arguments)]
fn fit<T: Scalar>(
    net: &mut Sequential<T>,
    train_inputs: &Inputs<'_, T>,
    train_labels: &[u8],
    val_inputs: &Inputs<'_, T>,
    val_labels: &[u8],
    config: &TrainConfig,
    shuffle_seed: u64,
) -> Result<FitResult> {
    if config.batch_size < 2 || config.max_epochs == 0 {
        return Err(Error::Config("batch_size must be at least 2 and max_epochs positive".into()));
    }
    let mut rng = SplitMix64::new(shuffle_seed);
    let mut adam = Adam::new(config.learning_rate);
    let mut order: Vec<usize> = (0..train_labels.len()).collect();
    let mut best = (f64::INFINITY, 0usize, net.clone());
    let mut reference = f64::INFINITY;
    let mut stale = 0;
    let mut log = Vec::new();
    for epoch in 1..=config.max_epochs {
        rng.shuffle(&mut order);
        let mut sum = 0.0;
        let mut seen = 0usize;
        for batch in order.chunks(config.batch_size) {
            // a lone trailing example cannot be batch-normalized
            if batch.len() < 2 {
                continue;
            }
            let x = train_inputs(batch)?;
            let y: Vec<T> = batch.iter().map(|&i| T::of(train_labels[i] as f64)).collect();
            net.zero_grad();
            let p = net.forward(&x, Mode::Train)?;
            let (loss, g) = bce_loss(p.data(), &y, config.positive_weight);
            let loss = loss.to_f64().unwrap();
            if !loss.is_finite() {
                return Err(Error::Training(format!("loss diverged at epoch {epoch}")));
            }
            net.backward(&Tensor::new(p.shape().to_vec(), g)?)?;
            adam.step(&mut net.param_blocks());
            sum += loss * batch.len() as f64;
            seen += batch.len();
        }
        let val_bce = validation_bce(net, val_inputs, val_labels, config.positive_weight)?;
        log.push(EpochLog {
            epoch,
            train_bce: sum / seen.max(1) as f64,
            val_bce,
        });
        if val_bce < best.0 {
            let mut snapshot = net.clone();
            snapshot.clear_transient();
            best = (val_bce, epoch, snapshot);
        }
        if val_bce <= reference - config.min_delta {
            reference = val_bce;
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }
    *net = best.2;
    Ok(FitResult {
        log,
        best_epoch: best.1,
        best_val_bce: best.0,
    })
}

fn check_sets<T: Scalar>(train: &FrameDataset<T>, val: &FrameDataset<T>) -> Result<()> {
    if !train.has_both_classes() {
        return Err(Error::Training(format!(
            "training set must contain both classes ({} of {} frames positive)",
            train.positives(),
            train.len()
        )));
    }
    if val.is_empty() {
        return Err(Error::Training("validation set is empty".into()));
    }
    Ok(())
}

fn column_inputs<T: Scalar>(data: &FrameDataset<T>, r: Representation) -> impl Fn(&[usize]) -> Result<Tensor<T>> + '_ {
    move |idx: &[usize]| Tensor::new(vec![idx.len(), 1, FRAME_LEN], data.gather(r, idx))
}

/// Trains one column on `representation`. Initial weights and the per-epoch
/// shuffles come from separate streams of `seed`.
pub fn train_single_column<T: Scalar>(
    representation: Representation,
    train: &FrameDataset<T>,
    val: &FrameDataset<T>,
    seed: u64,
    column: &ColumnConfig,
    config: &TrainConfig,
) -> Result<Trained<SingleColumn<T>>> {
    check_sets(train, val)?;
    let mut col = SingleColumn::new(representation, column.clone(), derive_seed(seed, 0))?;
    col.seed = seed;
    let fit = fit(
        &mut col.net,
        &column_inputs(train, representation),
        train.labels(),
        &column_inputs(val, representation),
        val.labels(),
        config,
        derive_seed(seed, 1),
    )?;
    col.epochs = fit.log.len();
    col.best_epoch = fit.best_epoch;
    Ok(Trained {
        model: col,
        log: fit.log,
        best_epoch: fit.best_epoch,
        best_val_bce: fit.best_val_bce,
    })
}

/// Trains only the dense head of a joint model; the two columns are used
/// in eval mode and never modified.
pub fn train_joint<T: Scalar>(
    speech_column: &SingleColumn<T>,
    residual_column: &SingleColumn<T>,
    train: &FrameDataset<T>,
    val: &FrameDataset<T>,
    seed: u64,
    config: &TrainConfig,
) -> Result<Trained<JointModel<T>>> {
    check_sets(train, val)?;
    let mut joint = JointModel::new(speech_column.clone(), residual_column.clone(), derive_seed(seed, 0))?;
    joint.seed = seed;
    let JointModel {
        speech_column: sc,
        residual_column: rc,
        head,
        ..
    } = &mut joint;
    let features = |data: &FrameDataset<T>, idx: &[usize]| -> Result<Tensor<T>> {
        let shape = vec![idx.len(), 1, FRAME_LEN];
        let a = sc.features(&Tensor::new(shape.clone(), data.gather(Representation::PcLpfS, idx))?)?;
        let b = rc.features(&Tensor::new(shape, data.gather(Representation::PcLpfLpr, idx))?)?;
        let (da, db) = (a.shape()[1], b.shape()[1]);
        let mut out = Vec::with_capacity(idx.len() * (da + db));
        for i in 0..idx.len() {
            out.extend_from_slice(&a.data()[i * da..(i + 1) * da]);
            out.extend_from_slice(&b.data()[i * db..(i + 1) * db]);
        }
        Tensor::new(vec![idx.len(), da + db], out)
    };
    let fit = fit(
        head,
        &|idx| features(train, idx),
        train.labels(),
        &|idx| features(val, idx),
        val.labels(),
        config,
        derive_seed(seed, 1),
    )?;
    joint.epochs = fit.log.len();
    joint.best_epoch = fit.best_epoch;
    Ok(Trained {
        model: joint,
        log: fit.log,
        best_epoch: fit.best_epoch,
        best_val_bce: fit.best_val_bce,
    })
}
