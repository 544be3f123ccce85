use std::time::Instant;

use approx::assert_abs_diff_eq;
use proptest::prelude::*;

use super::*;
use crate::rng::derive_seed;
use crate::dataset::{frame_and_label, FrameDataset};
use crate::marks::{GciMarks, MarkSource};
use crate::nn::{grad_check, GradCheckConfig};

/// Frames that hold one negative spike (positives) or low noise only.
fn toy_set(n_frames: usize, seed: u64) -> FrameDataset<f64> {
    let mut g = SplitMix64::new(seed);
    let mut x: Vec<f64> = (0..n_frames * FRAME_LEN).map(|_| 0.01 * g.normal()).collect();
    let mut marks = Vec::new();
    for f in 0..n_frames {
        if g.next_f64() < 0.3 {
            let at = f * FRAME_LEN + g.below(FRAME_LEN as u64) as usize;
            x[at] = -0.99;
            marks.push(at);
        }
    }
    let reps = RepresentationSet {
        lpf_s: x.clone(),
        lpf_lpr: x.clone(),
        pc_lpf_s: x.iter().map(|v| v.min(0.0)).collect(),
        pc_lpf_lpr: x.iter().map(|v| v.min(0.0)).collect(),
    };
    frame_and_label(&reps, &GciMarks::new(marks, MarkSource::Synthetic).unwrap(), "toy")
}

fn accuracy(p: &[f64], labels: &[u8]) -> f64 {
    let ok = p.iter().zip(labels).filter(|(&p, &l)| (p >= 0.5) == (l == 1)).count();
    ok as f64 / labels.len() as f64
}

fn all_frames(ds: &FrameDataset<f64>, r: Representation) -> Tensor<f64> {
    let idx: Vec<usize> = (0..ds.len()).collect();
    Tensor::new(vec![ds.len(), 1, FRAME_LEN], ds.gather(r, &idx)).unwrap()
}

#[test]
fn fusion_examples() {
    for x in [0.0, 0.1, 0.37, 0.5, 0.99] {
        assert_abs_diff_eq!(fuse_posteriors(0.5, x, FusionRule::Product), x, epsilon = 1e-7);
    }
    assert_abs_diff_eq!(fuse_posteriors(0.9, 0.9, FusionRule::Product), 0.81 / 0.82, epsilon = 1e-12);
    assert_abs_diff_eq!(fuse_posteriors(0.9, 0.9, FusionRule::Product), 0.9878, epsilon = 1e-4);
    assert!(fuse_posteriors(0.8, 0.0, FusionRule::Product) < 1e-6);
    assert!(fuse_posteriors(0.2, 1.0, FusionRule::Product) > 1.0 - 1e-6);
    assert_eq!(fuse_posteriors(0.3, 0.6, FusionRule::Max), 0.6);
}

proptest! {
    #[test]
    fn fusion_is_symmetric_and_monotone(a in 0.0f64..=1.0, b in 0.0f64..=1.0, d in 0.0f64..0.5) {
        let f = |x, y| fuse_posteriors(x, y, FusionRule::Product);
        prop_assert!((f(a, b) - f(b, a)).abs() < 1e-15);
        prop_assert!(f((a + d).min(1.0), b) >= f(a, b) - 1e-15);
        if a > 0.5 && b > 0.5 {
            prop_assert!(f(a, b) >= a.max(b) - 1e-12);
        }
        if a < 0.5 && b < 0.5 {
            prop_assert!(f(a, b) <= a.min(b) + 1e-12);
        }
    }
}

#[test]
fn default_column_shape() {
    let mut net = build_single_column::<f64>(&ColumnConfig::default(), 1).unwrap();
    assert_eq!(net.layers.len(), 18);
    let convs = net.layers.iter().filter(|l| matches!(l, Layer::Conv1d(_))).count();
    assert_eq!(convs, 5);
    assert!(net.describe().iter().all(|d| !d.contains("pool")));
    assert!(net.describe().contains(&"dense in=2048 out=1".to_string()));
    assert!(net.n_params() < 1_000_000);
    let x = Tensor::new(vec![3, 1, 16], vec![0.1; 48]).unwrap();
    assert_eq!(net.infer(&x).unwrap().shape(), &[3, 1]);
}

fn batch8(seed: u64) -> (Tensor<f64>, Vec<f64>) {
    let mut g = SplitMix64::new(seed);
    let x: Vec<f64> = (0..8 * 16).map(|_| g.normal()).collect();
    (Tensor::new(vec![8, 1, 16], x).unwrap(), (0..8).map(|i| (i % 2) as f64).collect())
}

#[test]
fn grad_check_full_architecture_sampled() {
    let start = Instant::now();
    let net = build_single_column::<f64>(&ColumnConfig::default(), 3).unwrap();
    let (x, y) = batch8(4);
    let cfg = GradCheckConfig {
        rel_tol: 1e-4,
        max_per_block: Some(24),
        seed: 5,
        ..Default::default()
    };
    let r = grad_check(&net, &x, &y, &cfg).unwrap();
    assert!(r.passed(), "{:?}", r.worst());
    let checked: usize = r.blocks.iter().map(|b| b.checked).sum();
    assert!(checked > 200, "only {checked} entries checked");
    assert!(start.elapsed().as_secs() < 60);
}

#[test]
fn grad_check_reduced_width_every_parameter() {
    let cfg = ColumnConfig {
        channels: vec![3, 3, 4, 4, 5],
        kernel_size: 3,
    };
    let net = build_single_column::<f64>(&cfg, 8).unwrap();
    let (x, y) = batch8(9);
    let r = grad_check(
        &net,
        &x,
        &y,
        &GradCheckConfig {
            rel_tol: 1e-4,
            ..Default::default()
        },
    )
    .unwrap();
    assert!(r.passed(), "{:?}", r.worst());
}

#[test]
fn toy_separable_set_is_learned() {
    let train = toy_set(200, 1);
    let val = toy_set(200, 2);
    let t = train_single_column(Representation::LpfS, &train, &val, 11, &ColumnConfig::default(), &TrainConfig::default()).unwrap();
    let p = t.model.predict(&all_frames(&val, Representation::LpfS)).unwrap();
    let acc = accuracy(&p, val.labels());
    assert!(acc >= 0.95, "validation accuracy {acc}");
    let best = t.log.iter().map(|e| e.val_bce).fold(f64::INFINITY, f64::min);
    assert_eq!(t.best_val_bce, best);
    assert_eq!(t.log[t.best_epoch - 1].val_bce, best);
}

#[test]
fn one_epoch_halves_toy_loss() {
    let train = toy_set(16_000, 3);
    let val = toy_set(400, 4);
    let col = SingleColumn::<f64>::new(Representation::LpfS, ColumnConfig::default(), derive_seed(5, 0)).unwrap();
    let y: Vec<f64> = val.labels().iter().map(|&l| l as f64).collect();
    let before = crate::nn::bce_loss(&col.predict(&all_frames(&val, Representation::LpfS)).unwrap(), &y, 1.0).0;
    let cfg = TrainConfig {
        max_epochs: 1,
        ..Default::default()
    };
    let t = train_single_column(Representation::LpfS, &train, &val, 5, &ColumnConfig::default(), &cfg).unwrap();
    assert!(t.log[0].val_bce <= 0.5 * before, "{before} -> {}", t.log[0].val_bce);
}

#[test]
fn single_class_training_set_is_rejected() {
    let reps = RepresentationSet {
        lpf_s: vec![0.0; 320],
        lpf_lpr: vec![0.0; 320],
        pc_lpf_s: vec![0.0; 320],
        pc_lpf_lpr: vec![0.0; 320],
    };
    let ds = frame_and_label(&reps, &GciMarks::empty(MarkSource::Synthetic), "z");
    let err = train_single_column(Representation::LpfS, &ds, &ds, 1, &ColumnConfig::default(), &TrainConfig::default());
    assert!(matches!(err, Err(Error::Training(_))));
}

fn small_config() -> ColumnConfig {
    ColumnConfig {
        channels: vec![4, 4, 8, 8, 8],
        kernel_size: 3,
    }
}

fn quick() -> TrainConfig {
    TrainConfig {
        batch_size: 64,
        max_epochs: 3,
        learning_rate: 1e-3,
        ..Default::default()
    }
}

#[test]
fn training_is_deterministic() {
    let train = toy_set(300, 5);
    let val = toy_set(100, 6);
    let run = || {
        train_single_column(Representation::PcLpfS, &train, &val, 42, &small_config(), &quick())
            .unwrap()
            .model
            .to_checkpoint()
            .to_bytes()
    };
    assert_eq!(run(), run());
}

fn trained_columns() -> (FrameDataset<f64>, FrameDataset<f64>, SingleColumn<f64>, SingleColumn<f64>) {
    let train = toy_set(300, 7);
    let val = toy_set(100, 8);
    let m3 = train_single_column(Representation::PcLpfS, &train, &val, 1, &small_config(), &quick()).unwrap().model;
    let m4 = train_single_column(Representation::PcLpfLpr, &train, &val, 2, &small_config(), &quick()).unwrap().model;
    (train, val, m3, m4)
}

#[test]
fn joint_training_leaves_columns_untouched() {
    let (train, val, m3, m4) = trained_columns();
    let before = (m3.to_checkpoint().to_bytes(), m4.to_checkpoint().to_bytes());
    let joint = train_joint(&m3, &m4, &train, &val, 3, &quick()).unwrap().model;
    assert_eq!(joint.speech_column.to_checkpoint().to_bytes(), before.0);
    assert_eq!(joint.residual_column.to_checkpoint().to_bytes(), before.1);

    // Model 3's own head on the joint model's column features reproduces Model 3.
    let x = all_frames(&val, Representation::PcLpfS);
    let feats = joint.speech_column.features(&x).unwrap();
    assert_eq!(m3.head(&feats).unwrap().into_data(), m3.predict(&x).unwrap());
}

#[test]
fn joint_rejects_swapped_columns() {
    let (train, val, m3, m4) = trained_columns();
    assert!(matches!(train_joint(&m4, &m3, &train, &val, 3, &quick()), Err(Error::Training(_))));
}

#[test]
fn zero_head_outputs_one_half() {
    let (_, val, m3, m4) = trained_columns();
    let mut joint = JointModel::new(m3, m4, 1).unwrap();
    if let Layer::Dense(d) = &mut joint.head.layers[0] {
        d.weight.iter_mut().for_each(|w| *w = 0.0);
        d.bias = vec![0.0];
    }
    let p = joint
        .predict(&all_frames(&val, Representation::PcLpfS), &all_frames(&val, Representation::PcLpfLpr))
        .unwrap();
    assert!(p.iter().all(|&v| v == 0.5));
}

#[test]
fn checkpoint_round_trips_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let (train, val, m3, m4) = trained_columns();
    let path = dir.path().join("m3.gcn");
    m3.save(&path).unwrap();
    let loaded = SingleColumn::<f64>::load(&path, Representation::PcLpfS, &small_config()).unwrap();
    assert_eq!(loaded, m3);
    let again = dir.path().join("again.gcn");
    loaded.save(&again).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
    let x = all_frames(&val, Representation::PcLpfS);
    assert_eq!(loaded.predict(&x).unwrap(), m3.predict(&x).unwrap());

    let joint = train_joint(&m3, &m4, &train, &val, 3, &quick()).unwrap().model;
    let jpath = dir.path().join("joint.gcn");
    joint.save(&jpath).unwrap();
    assert_eq!(JointModel::<f64>::load(&jpath).unwrap(), joint);
}

#[test]
fn checkpoint_errors() {
    let dir = tempfile::tempdir().unwrap();
    let col = SingleColumn::<f64>::new(Representation::LpfS, small_config(), 1).unwrap();
    let path = dir.path().join("c.gcn");
    col.save(&path).unwrap();
    assert!(SingleColumn::<f64>::load(&path, Representation::LpfLpr, &small_config()).is_err());
    assert!(SingleColumn::<f64>::load(&path, Representation::LpfS, &ColumnConfig::default()).is_err());

    let bytes = std::fs::read(&path).unwrap();
    let mut bad_magic = bytes.clone();
    bad_magic[0] = b'X';
    assert!(ModelCheckpoint::<f64>::from_bytes(&bad_magic).is_err());
    assert!(ModelCheckpoint::<f64>::from_bytes(&bytes[..bytes.len() - 8]).is_err());
    assert!(ModelCheckpoint::<f64>::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    let mut extra = bytes.clone();
    extra.extend_from_slice(&[0u8; 8]);
    assert!(ModelCheckpoint::<f64>::from_bytes(&extra).is_err());
    let missing = SingleColumn::<f64>::load(&dir.path().join("nope.gcn"), Representation::LpfS, &small_config());
    assert!(missing.unwrap_err().to_string().contains("nope.gcn"));
}

#[test]
fn final_model_frame_probabilities() {
    let (_, _, m3, m4) = trained_columns();
    let m1 = SingleColumn::<f64>::new(Representation::LpfS, small_config(), 4).unwrap();
    let fm = FinalModel::new(m1, JointModel::new(m3, m4, 5).unwrap(), FusionRule::Product).unwrap();
    let zeros = RepresentationSet {
        lpf_s: vec![0.0; 16_000],
        lpf_lpr: vec![0.0; 16_000],
        pc_lpf_s: vec![0.0; 16_000],
        pc_lpf_lpr: vec![0.0; 16_000],
    };
    let p = fm.predict_frame_probs(&zeros).unwrap();
    assert_eq!(p.len(), 1000);
    assert!(p.iter().all(|&v| v == p[0]));
    let short = RepresentationSet {
        lpf_s: vec![0.0; 10],
        lpf_lpr: vec![0.0; 10],
        pc_lpf_s: vec![0.0; 10],
        pc_lpf_lpr: vec![0.0; 10],
    };
    assert!(fm.predict_frame_probs(&short).is_err());
    assert!(FinalModel::new(fm.joint.speech_column.clone(), fm.joint.clone(), FusionRule::Max).is_err());
}

#[test]
fn loss_log_format() {
    let log = [EpochLog {
        epoch: 1,
        train_bce: 0.5,
        val_bce: 0.25,
    }];
    assert_eq!(EpochLog::to_csv(&log), "epoch,train_bce,val_bce\n1,0.5000000000,0.2500000000\n");
}
