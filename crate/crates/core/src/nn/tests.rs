use approx::assert_abs_diff_eq;
use proptest::prelude::*;

use super::*;
use crate::rng::SplitMix64;

fn t3(b: usize, c: usize, l: usize, data: Vec<f64>) -> Tensor<f64> {
    Tensor::new(vec![b, c, l], data).unwrap()
}

fn random(n: usize, seed: u64) -> Vec<f64> {
    let mut g = SplitMix64::new(seed);
    (0..n).map(|_| g.normal()).collect()
}

fn conv_with(weight: Vec<f64>, cin: usize, cout: usize, k: usize, bias: Option<Vec<f64>>) -> Conv1d<f64> {
    let mut c = Conv1d::new(cin, cout, k, bias.is_some()).unwrap();
    c.weight = weight;
    c.bias = bias;
    c
}

/// Direct zero-padded cross-correlation.
fn naive_conv(c: &Conv1d<f64>, x: &[f64], batch: usize, len: usize) -> Vec<f64> {
    let pad = (c.kernel_size - 1) as isize / 2;
    let mut y = vec![0.0; batch * c.out_channels * len];
    for b in 0..batch {
        for o in 0..c.out_channels {
            for l in 0..len {
                let mut acc = c.bias.as_ref().map_or(0.0, |bb| bb[o]);
                for i in 0..c.in_channels {
                    for j in 0..c.kernel_size {
                        let pos = l as isize + j as isize - pad;
                        if pos >= 0 && (pos as usize) < len {
                            acc += c.weight[(o * c.in_channels + i) * c.kernel_size + j]
                                * x[(b * c.in_channels + i) * len + pos as usize];
                        }
                    }
                }
                y[(b * c.out_channels + o) * len + l] = acc;
            }
        }
    }
    y
}

#[test]
fn conv_difference_kernel_example() {
    let c = conv_with(vec![1.0, 0.0, -1.0], 1, 1, 3, Some(vec![0.0]));
    let y = c.infer(&t3(1, 1, 4, vec![1.0, 2.0, 3.0, 4.0])).unwrap();
    assert_eq!(y.data(), &[-2.0, -2.0, -2.0, 3.0]);
}

#[test]
fn conv_identity_and_bias_broadcast() {
    let x = t3(1, 1, 5, vec![0.3, -1.0, 2.0, 0.0, 7.5]);
    let id = conv_with(vec![0.0, 1.0, 0.0], 1, 1, 3, None);
    assert_eq!(id.infer(&x).unwrap().data(), x.data());
    let c = conv_with(random(2 * 3, 1), 1, 2, 3, Some(vec![0.25, -4.0]));
    let y = c.infer(&t3(1, 1, 5, vec![0.0; 5])).unwrap();
    assert_eq!(y.data(), &[0.25, 0.25, 0.25, 0.25, 0.25, -4.0, -4.0, -4.0, -4.0, -4.0]);
}

#[test]
fn conv_matches_direct_definition() {
    let (b, cin, cout, k, l) = (3, 4, 5, 5, 11);
    let c = conv_with(random(cout * cin * k, 2), cin, cout, k, Some(random(cout, 3)));
    let x = random(b * cin * l, 4);
    let y = c.infer(&t3(b, cin, l, x.clone())).unwrap();
    for (a, e) in y.data().iter().zip(naive_conv(&c, &x, b, l)) {
        assert_abs_diff_eq!(*a, e, epsilon = 1e-12);
    }
}

#[test]
fn conv_rejects_even_kernel_and_wrong_channels() {
    assert!(Conv1d::<f64>::new(1, 1, 4, false).is_err());
    let c = Conv1d::<f64>::new(2, 1, 3, false).unwrap();
    assert!(c.infer(&t3(1, 1, 4, vec![0.0; 4])).is_err());
}

#[test]
fn batchnorm_three_value_example() {
    let mut bn = BatchNorm1d::new(1);
    let y = bn.forward(&t3(3, 1, 1, vec![1.0, 2.0, 3.0])).unwrap();
    for (a, e) in y.data().iter().zip([-1.2247, 0.0, 1.2247]) {
        assert_abs_diff_eq!(*a, e, epsilon = 1e-3);
    }
    assert_abs_diff_eq!(bn.running_mean[0], 0.2, epsilon = 1e-12);
    assert_abs_diff_eq!(bn.running_var[0], 0.9 + 0.1 * 1.0, epsilon = 1e-12);
}

#[test]
fn batchnorm_zero_gamma_and_eval_identity() {
    let mut bn = BatchNorm1d::new(2);
    bn.gamma = vec![0.0, 0.0];
    bn.beta = vec![0.5, -0.5];
    let y = bn.forward(&t3(2, 2, 3, random(12, 5))).unwrap();
    assert!(y.data()[..3].iter().all(|&v| v == 0.5));
    assert!(y.data()[3..6].iter().all(|&v| v == -0.5));
    let fresh = BatchNorm1d::new(2);
    let x = t3(2, 2, 3, random(12, 6));
    let out = fresh.infer(&x).unwrap();
    for (a, e) in out.data().iter().zip(x.data()) {
        assert_abs_diff_eq!(*a, e / (1.0f64 + 1e-5).sqrt(), epsilon = 1e-15);
    }
}

#[test]
fn batchnorm_train_needs_two_examples() {
    let mut bn = BatchNorm1d::<f64>::new(1);
    assert!(bn.forward(&t3(1, 1, 8, vec![1.0; 8])).is_err());
}

#[test]
fn dense_sigmoid_head_examples() {
    let head = Sequential::new(vec![Layer::Dense(Dense::new(3, 1)), Layer::sigmoid()]);
    let p = head.infer(&Tensor::new(vec![2, 3], random(6, 7)).unwrap()).unwrap();
    assert_eq!(p.data(), &[0.5, 0.5]);
    assert_eq!(sigmoid(800.0f64), 1.0);
    assert_eq!(sigmoid(-800.0f64), 0.0);
    assert_eq!(sigmoid(0.0f64), 0.5);
    let mut d = Dense::new(1, 1);
    d.weight = vec![1.0];
    let z = d.infer(&Tensor::new(vec![1, 1], vec![0.0]).unwrap()).unwrap();
    assert_eq!(sigmoid(z.data()[0]), 0.5);
}

#[test]
fn bce_examples() {
    let (l, _) = bce_loss(&[0.5], &[1.0], 1.0);
    assert_abs_diff_eq!(l, std::f64::consts::LN_2, epsilon = 1e-12);
    let (l, _) = bce_loss(&[1.0, 0.0], &[1.0, 0.0], 1.0);
    assert!(l <= 1.7e-7);
    let (l, _) = bce_loss(&[0.9], &[0.0], 1.0);
    assert_abs_diff_eq!(l, -(0.1f64).ln(), epsilon = 1e-12);
    let (l, _) = bce_loss(&[0.5], &[1.0], 3.0);
    assert_abs_diff_eq!(l, 3.0 * std::f64::consts::LN_2, epsilon = 1e-12);
}

#[test]
fn bce_gradient_matches_difference_quotient() {
    let y = [1.0, 0.0, 1.0];
    let p = [0.3, 0.6, 0.95];
    let (_, g) = bce_loss(&p, &y, 2.0);
    for i in 0..3 {
        let h = 1e-6;
        let mut up = p;
        let mut dn = p;
        up[i] += h;
        dn[i] -= h;
        let num = (bce_loss(&up, &y, 2.0).0 - bce_loss(&dn, &y, 2.0).0) / (2.0 * h);
        assert_abs_diff_eq!(g[i], num, epsilon = 1e-7);
    }
}

fn one_block<'a>(value: &'a mut Vec<f64>, grad: &'a mut Vec<f64>) -> Vec<ParamBlock<'a, f64>> {
    vec![ParamBlock {
        name: "p".into(),
        value,
        grad,
    }]
}

#[test]
fn adam_first_step_closed_form() {
    let mut adam = Adam::new(1e-4);
    let (mut v, mut g) = (vec![0.0], vec![1.0]);
    adam.step(&mut one_block(&mut v, &mut g));
    assert_abs_diff_eq!(v[0], -9.99999e-5, epsilon = 1e-10);
    assert_eq!(adam.t, 1);
}

#[test]
fn adam_zero_gradient_and_sign() {
    let mut adam = Adam::new(1e-4);
    let (mut v, mut g) = (vec![0.3, -2.0], vec![0.0, 0.0]);
    adam.step(&mut one_block(&mut v, &mut g));
    assert_eq!(v, vec![0.3, -2.0]);
    let mut adam = Adam::new(1e-4);
    let grads = random(50, 9);
    let (mut v, mut g) = (vec![0.0; 50], grads.clone());
    adam.step(&mut one_block(&mut v, &mut g));
    for (d, g) in v.iter().zip(&grads) {
        assert_eq!(d.signum(), -g.signum());
    }
    adam.step(&mut one_block(&mut v, &mut g));
    assert_eq!(adam.t, 2);
    assert!(adam.second_moments()[0].iter().all(|&m| m >= 0.0));
}

#[test]
fn he_normal_statistics() {
    let t: Tensor<f64> = he_normal_init(vec![100, 100], 50, 11);
    let n = t.len() as f64;
    let mean = t.data().iter().sum::<f64>() / n;
    let std = (t.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    assert!((std - 0.2).abs() < 0.01, "std {std}");
    assert!(mean.abs() < 3.0 * 0.2 / n.sqrt(), "mean {mean}");
    assert_eq!(t, he_normal_init(vec![100, 100], 50, 11));
}

fn head_model(in_dim: usize, seed: u64) -> Sequential<f64> {
    let mut d = Dense::new(in_dim, 1);
    d.init_he(&mut SplitMix64::new(seed));
    d.bias = vec![0.1];
    Sequential::new(vec![Layer::Dense(d), Layer::sigmoid()])
}

fn labels(n: usize) -> Vec<f64> {
    (0..n).map(|i| (i % 2) as f64).collect()
}

#[test]
fn grad_check_dense_sigmoid() {
    let model = head_model(6, 1);
    let x = Tensor::new(vec![4, 6], random(24, 2)).unwrap();
    let r = grad_check(&model, &x, &labels(4), &GradCheckConfig::default()).unwrap();
    assert!(r.passed(), "{:?}", r.worst());
    assert_eq!(r.blocks.iter().map(|b| b.checked).sum::<usize>(), 7);
}

fn isolated(layer: Layer<f64>, channels: usize, len: usize) -> Sequential<f64> {
    let mut d = Dense::new(channels * len, 1);
    d.init_he(&mut SplitMix64::new(77));
    Sequential::new(vec![layer, Layer::flatten(), Layer::Dense(d), Layer::sigmoid()])
}

#[test]
fn grad_check_isolated_conv() {
    let mut c = Conv1d::new(2, 3, 3, true).unwrap();
    c.init_he(&mut SplitMix64::new(3));
    c.bias = Some(random(3, 4));
    let model = isolated(Layer::Conv1d(c), 3, 8);
    let x = t3(4, 2, 8, random(64, 5));
    let r = grad_check(&model, &x, &labels(4), &GradCheckConfig::default()).unwrap();
    assert!(r.passed(), "{:?}", r.worst());
}

#[test]
fn grad_check_isolated_batchnorm() {
    let mut bn = BatchNorm1d::new(3);
    bn.gamma = vec![0.5, 1.5, -1.0];
    bn.beta = vec![0.1, -0.2, 0.3];
    let model = isolated(Layer::BatchNorm1d(bn), 3, 8);
    let x = t3(4, 3, 8, random(96, 6));
    let r = grad_check(&model, &x, &labels(4), &GradCheckConfig::default()).unwrap();
    assert!(r.passed(), "{:?}", r.worst());
}

#[test]
fn grad_check_flags_corrupted_gradient() {
    let model = head_model(6, 3);
    let x = Tensor::new(vec![4, 6], random(24, 4)).unwrap();
    let y = labels(4);
    let mut g = analytic_gradients(&model, &x, &y).unwrap();
    g.iter_mut().flatten().for_each(|v| *v *= 1.01);
    let r = check_gradients(&model, &x, &y, &g, &GradCheckConfig::default()).unwrap();
    assert!(!r.passed());
    assert!(r.worst().unwrap().worst_rel > 5e-3);
}

#[test]
fn relu_input_gradient_is_masked() {
    let mut seq = Sequential::new(vec![Layer::<f64>::relu()]);
    let x = t3(1, 1, 4, vec![-1.0, 2.0, 0.0, 3.0]);
    assert_eq!(seq.forward(&x, Mode::Train).unwrap().data(), &[0.0, 2.0, 0.0, 3.0]);
    let g = seq.backward(&t3(1, 1, 4, vec![1.0; 4])).unwrap();
    assert_eq!(g.data(), &[0.0, 1.0, 0.0, 1.0]);
}

#[test]
fn train_forward_matches_infer_for_stateless_layers() {
    let mut c = Conv1d::new(1, 4, 3, true).unwrap();
    c.init_he(&mut SplitMix64::new(1));
    let mut model = isolated(Layer::Conv1d(c), 4, 16);
    let x = t3(5, 1, 16, random(80, 2));
    let a = model.infer(&x).unwrap();
    let b = model.forward(&x, Mode::Train).unwrap();
    assert_eq!(a, b);
}

fn small_bn_net(seed: u64) -> Sequential<f64> {
    let mut rng = SplitMix64::new(seed);
    let mut c = Conv1d::new(1, 4, 3, false).unwrap();
    c.init_he(&mut rng);
    let mut bn = BatchNorm1d::new(4);
    bn.running_mean = random(4, seed + 1);
    bn.running_var = random(4, seed + 2).iter().map(|v| v * v + 0.1).collect();
    let mut d = Dense::new(64, 1);
    d.init_he(&mut rng);
    Sequential::new(vec![
        Layer::Conv1d(c),
        Layer::BatchNorm1d(bn),
        Layer::relu(),
        Layer::flatten(),
        Layer::Dense(d),
        Layer::sigmoid(),
    ])
}

proptest! {
    #[test]
    fn eval_forward_commutes_with_batch_permutation(seed in any::<u64>()) {
        let model = small_bn_net(seed % 1000);
        let x = random(6 * 16, seed);
        let mut perm: Vec<usize> = (0..6).collect();
        SplitMix64::new(seed).shuffle(&mut perm);
        let px: Vec<f64> = perm.iter().flat_map(|&i| x[16 * i..16 * i + 16].to_vec()).collect();
        let y = model.infer(&t3(6, 1, 16, x)).unwrap();
        let py = model.infer(&t3(6, 1, 16, px)).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            prop_assert_eq!(py.data()[k], y.data()[i]);
        }
    }

    #[test]
    fn conv_without_bias_is_homogeneous(seed in any::<u64>(), a in -10.0f64..10.0) {
        let c = conv_with(random(4 * 2 * 3, seed), 2, 4, 3, None);
        let x = random(3 * 2 * 10, seed ^ 1);
        let y = c.infer(&t3(3, 2, 10, x.clone())).unwrap();
        let ya = c.infer(&t3(3, 2, 10, x.iter().map(|v| a * v).collect())).unwrap();
        for (p, q) in y.data().iter().zip(ya.data()) {
            prop_assert!((a * p - q).abs() <= 1e-12 * (1.0 + q.abs()));
        }
    }

    #[test]
    fn batchnorm_train_output_is_standardized(seed in any::<u64>(), shift in -5.0f64..5.0, scale in 0.1f64..10.0) {
        let mut bn = BatchNorm1d::new(3);
        bn.epsilon = 0.0;
        let x: Vec<f64> = random(4 * 3 * 16, seed).iter().map(|v| shift + scale * v).collect();
        let y = bn.forward(&t3(4, 3, 16, x)).unwrap();
        for ch in 0..3 {
            let vals: Vec<f64> = (0..4).flat_map(|b| y.data()[(b * 3 + ch) * 16..(b * 3 + ch + 1) * 16].to_vec()).collect();
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            prop_assert!(mean.abs() < 1e-9);
            prop_assert!((var - 1.0).abs() < 1e-6);
        }
        prop_assert!(bn.running_var.iter().all(|&v| v >= 0.0));
    }
}
