//! Layer types with hand-derived backward passes. Activations are laid
//! out `(batch, channels, length)` for convolutional layers and
//! `(batch, features)` for dense ones.

use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::scalar::Scalar;

use super::init::he_normal;
use super::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

fn shape_err(expected: String, actual: &[usize]) -> Error {
    Error::Shape {
        expected,
        actual: format!("{actual:?}"),
    }
}

/// Stride-1 convolution (cross-correlation) with symmetric zero padding,
/// so the output length equals the input length.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_size: usize,
    /// `(out_channels, in_channels, kernel_size)`.
    pub weight: Vec<T>,
    pub bias: Option<Vec<T>>,
    pub grad_weight: Vec<T>,
    pub grad_bias: Option<Vec<T>>,
    cols: Vec<T>,
    cached: (usize, usize),
}

impl<T: Scalar> Conv1d<T> {
    pub fn new(in_channels: usize, out_channels: usize, kernel_size: usize, with_bias: bool) -> Result<Self> {
        if kernel_size % 2 == 0 || in_channels == 0 || out_channels == 0 {
            return Err(Error::InvalidArgument(format!(
                "conv1d needs an odd kernel and non-zero channels (got {in_channels}->{out_channels}, k={kernel_size})"
            )));
        }
        let n = out_channels * in_channels * kernel_size;
        Ok(Self {
            in_channels,
            out_channels,
            kernel_size,
            weight: vec![T::zero(); n],
            bias: with_bias.then(|| vec![T::zero(); out_channels]),
            grad_weight: vec![T::zero(); n],
            grad_bias: with_bias.then(|| vec![T::zero(); out_channels]),
            cols: Vec::new(),
            cached: (0, 0),
        })
    }

    pub fn init_he(&mut self, rng: &mut SplitMix64) {
        self.weight = he_normal(self.weight.len(), self.in_channels * self.kernel_size, rng);
    }

    pub(crate) fn clear_cache(&mut self) {
        self.cols = Vec::new();
        self.cached = (0, 0);
    }

    fn check(&self, x: &Tensor<T>) -> Result<(usize, usize)> {
        let (b, c, l) = x.dims3()?;
        if c != self.in_channels {
            return Err(shape_err(format!("(batch, {}, length)", self.in_channels), x.shape()));
        }
        Ok((b, l))
    }

    /// `(batch * length, in_channels * kernel)` patch matrix.
    fn im2col(&self, x: &[T], batch: usize, len: usize) -> Vec<T> {
        let (cin, k) = (self.in_channels, self.kernel_size);
        let pad = (k - 1) / 2;
        let width = cin * k;
        let mut cols = vec![T::zero(); batch * len * width];
        for b in 0..batch {
            for c in 0..cin {
                let src = &x[(b * cin + c) * len..(b * cin + c + 1) * len];
                for l in 0..len {
                    let row = &mut cols[(b * len + l) * width + c * k..(b * len + l) * width + c * k + k];
                    for (j, slot) in row.iter_mut().enumerate() {
                        let pos = l + j;
                        if pos >= pad && pos - pad < len {
                            *slot = src[pos - pad];
                        }
                    }
                }
            }
        }
        cols
    }

    fn apply_cols(&self, cols: &[T], batch: usize, len: usize) -> Tensor<T> {
        let (cout, width) = (self.out_channels, self.in_channels * self.kernel_size);
        let rows = batch * len;
        let mut yt = vec![T::zero(); rows * cout];
        T::gemm(
            rows,
            width,
            cout,
            T::one(),
            cols,
            width as isize,
            1,
            &self.weight,
            1,
            width as isize,
            T::zero(),
            &mut yt,
            cout as isize,
            1,
        );
        let mut y = vec![T::zero(); rows * cout];
        for b in 0..batch {
            for l in 0..len {
                let src = &yt[(b * len + l) * cout..(b * len + l + 1) * cout];
                for (o, &v) in src.iter().enumerate() {
                    y[(b * cout + o) * len + l] = v;
                }
            }
        }
        if let Some(bias) = &self.bias {
            for b in 0..batch {
                for (o, &bo) in bias.iter().enumerate() {
                    y[(b * cout + o) * len..(b * cout + o + 1) * len].iter_mut().for_each(|v| *v += bo);
                }
            }
        }
        Tensor::new(vec![batch, cout, len], y).expect("conv output shape")
    }

    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (b, l) = self.check(x)?;
        Ok(self.apply_cols(&self.im2col(x.data(), b, l), b, l))
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (b, l) = self.check(x)?;
        let cols = self.im2col(x.data(), b, l);
        let y = self.apply_cols(&cols, b, l);
        self.cols = cols;
        self.cached = (b, l);
        Ok(y)
    }

    pub fn backward(&mut self, gy: &Tensor<T>) -> Result<Tensor<T>> {
        let (batch, len) = self.cached;
        let (cin, cout, k) = (self.in_channels, self.out_channels, self.kernel_size);
        if gy.shape() != [batch, cout, len] {
            return Err(shape_err(format!("[{batch}, {cout}, {len}]"), gy.shape()));
        }
        let width = cin * k;
        let rows = batch * len;
        let gyd = gy.data();
        let mut g = vec![T::zero(); rows * cout];
        for b in 0..batch {
            for o in 0..cout {
                for l in 0..len {
                    g[(b * len + l) * cout + o] = gyd[(b * cout + o) * len + l];
                }
            }
        }
        if let Some(gb) = &mut self.grad_bias {
            for row in g.chunks_exact(cout) {
                gb.iter_mut().zip(row).for_each(|(a, &v)| *a += v);
            }
        }
        // dW += G^T * cols
        T::gemm(
            cout,
            rows,
            width,
            T::one(),
            &g,
            1,
            cout as isize,
            &self.cols,
            width as isize,
            1,
            T::one(),
            &mut self.grad_weight,
            width as isize,
            1,
        );
        let mut dcols = vec![T::zero(); rows * width];
        T::gemm(
            rows,
            cout,
            width,
            T::one(),
            &g,
            cout as isize,
            1,
            &self.weight,
            width as isize,
            1,
            T::zero(),
            &mut dcols,
            width as isize,
            1,
        );
        let pad = (k - 1) / 2;
        let mut dx = vec![T::zero(); batch * cin * len];
        for b in 0..batch {
            for l in 0..len {
                let row = &dcols[(b * len + l) * width..(b * len + l + 1) * width];
                for c in 0..cin {
                    for j in 0..k {
                        let pos = l + j;
                        if pos >= pad && pos - pad < len {
                            dx[(b * cin + c) * len + pos - pad] += row[c * k + j];
                        }
                    }
                }
            }
        }
        Tensor::new(vec![batch, cin, len], dx)
    }
}

/// Per-channel batch normalization over the batch and length axes.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm1d<T> {
    pub channels: usize,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub momentum: f64,
    pub epsilon: f64,
    pub grad_gamma: Vec<T>,
    pub grad_beta: Vec<T>,
    xhat: Vec<T>,
    inv_std: Vec<T>,
    cached: (usize, usize),
}

impl<T: Scalar> BatchNorm1d<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            momentum: 0.1,
            epsilon: 1e-5,
            grad_gamma: vec![T::zero(); channels],
            grad_beta: vec![T::zero(); channels],
            xhat: Vec::new(),
            inv_std: Vec::new(),
            cached: (0, 0),
        }
    }

    pub(crate) fn clear_cache(&mut self) {
        self.xhat = Vec::new();
        self.inv_std = Vec::new();
        self.cached = (0, 0);
    }

    fn check(&self, x: &Tensor<T>) -> Result<(usize, usize)> {
        let (b, c, l) = x.dims3()?;
        if c != self.channels {
            return Err(shape_err(format!("(batch, {}, length)", self.channels), x.shape()));
        }
        Ok((b, l))
    }

    /// Normalizes with the running statistics only.
    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (batch, len) = self.check(x)?;
        let c = self.channels;
        let eps = T::of(self.epsilon);
        let mut y = x.clone();
        let yd = y.data_mut();
        for ch in 0..c {
            let scale = self.gamma[ch] / (self.running_var[ch] + eps).sqrt();
            let shift = self.beta[ch] - self.running_mean[ch] * scale;
            for b in 0..batch {
                yd[(b * c + ch) * len..(b * c + ch + 1) * len].iter_mut().for_each(|v| *v = *v * scale + shift);
            }
        }
        Ok(y)
    }

    /// Train-mode pass: normalizes with batch statistics and updates the
    /// running estimates (running variance uses the unbiased batch variance).
    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (batch, len) = self.check(x)?;
        if batch < 2 {
            return Err(Error::InvalidArgument("batch normalization in training mode needs a batch of at least 2".into()));
        }
        let c = self.channels;
        let n = batch * len;
        let nt = T::of(n as f64);
        let eps = T::of(self.epsilon);
        let mom = T::of(self.momentum);
        let xd = x.data();
        let mut xhat = vec![T::zero(); xd.len()];
        let mut inv_std = vec![T::zero(); c];
        let mut y = vec![T::zero(); xd.len()];
        for ch in 0..c {
            let chunk = |b: usize| (b * c + ch) * len..(b * c + ch + 1) * len;
            let mean = (0..batch).map(|b| xd[chunk(b)].iter().copied().sum::<T>()).sum::<T>() / nt;
            let var = (0..batch)
                .map(|b| xd[chunk(b)].iter().map(|&v| (v - mean) * (v - mean)).sum::<T>())
                .sum::<T>()
                / nt;
            let is = T::one() / (var + eps).sqrt();
            inv_std[ch] = is;
            for b in 0..batch {
                for i in chunk(b) {
                    let h = (xd[i] - mean) * is;
                    xhat[i] = h;
                    y[i] = self.gamma[ch] * h + self.beta[ch];
                }
            }
            let unbiased = var * nt / T::of((n - 1) as f64);
            self.running_mean[ch] = (T::one() - mom) * self.running_mean[ch] + mom * mean;
            self.running_var[ch] = (T::one() - mom) * self.running_var[ch] + mom * unbiased;
        }
        self.xhat = xhat;
        self.inv_std = inv_std;
        self.cached = (batch, len);
        Tensor::new(x.shape().to_vec(), y)
    }

    pub fn backward(&mut self, gy: &Tensor<T>) -> Result<Tensor<T>> {
        let (batch, len) = self.cached;
        let c = self.channels;
        if gy.shape() != [batch, c, len] {
            return Err(shape_err(format!("[{batch}, {c}, {len}]"), gy.shape()));
        }
        let nt = T::of((batch * len) as f64);
        let g = gy.data();
        let mut dx = vec![T::zero(); g.len()];
        for ch in 0..c {
            let chunk = |b: usize| (b * c + ch) * len..(b * c + ch + 1) * len;
            let mut sum_g = T::zero();
            let mut sum_gx = T::zero();
            for b in 0..batch {
                for i in chunk(b) {
                    sum_g += g[i];
                    sum_gx += g[i] * self.xhat[i];
                }
            }
            self.grad_beta[ch] += sum_g;
            self.grad_gamma[ch] += sum_gx;
            let k = self.gamma[ch] * self.inv_std[ch] / nt;
            for b in 0..batch {
                for i in chunk(b) {
                    dx[i] = k * (nt * g[i] - sum_g - self.xhat[i] * sum_gx);
                }
            }
        }
        Tensor::new(gy.shape().to_vec(), dx)
    }
}

/// Fully connected layer, `y = W x + b` with `W` stored `(out_dim, in_dim)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
    pub grad_weight: Vec<T>,
    pub grad_bias: Vec<T>,
    input: Vec<T>,
    batch: usize,
}

impl<T: Scalar> Dense<T> {
    pub fn new(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weight: vec![T::zero(); in_dim * out_dim],
            bias: vec![T::zero(); out_dim],
            grad_weight: vec![T::zero(); in_dim * out_dim],
            grad_bias: vec![T::zero(); out_dim],
            input: Vec::new(),
            batch: 0,
        }
    }

    pub fn init_he(&mut self, rng: &mut SplitMix64) {
        self.weight = he_normal(self.weight.len(), self.in_dim, rng);
    }

    pub(crate) fn clear_cache(&mut self) {
        self.input = Vec::new();
        self.batch = 0;
    }

    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (batch, d) = x.dims2()?;
        if d != self.in_dim {
            return Err(shape_err(format!("(batch, {})", self.in_dim), x.shape()));
        }
        let mut y: Vec<T> = (0..batch).flat_map(|_| self.bias.iter().copied()).collect();
        T::gemm(
            batch,
            d,
            self.out_dim,
            T::one(),
            x.data(),
            d as isize,
            1,
            &self.weight,
            1,
            d as isize,
            T::one(),
            &mut y,
            self.out_dim as isize,
            1,
        );
        Tensor::new(vec![batch, self.out_dim], y)
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let y = self.infer(x)?;
        self.input = x.data().to_vec();
        self.batch = x.shape()[0];
        Ok(y)
    }

    pub fn backward(&mut self, gy: &Tensor<T>) -> Result<Tensor<T>> {
        let (batch, d, o) = (self.batch, self.in_dim, self.out_dim);
        if gy.shape() != [batch, o] {
            return Err(shape_err(format!("[{batch}, {o}]"), gy.shape()));
        }
        let g = gy.data();
        for row in g.chunks_exact(o) {
            self.grad_bias.iter_mut().zip(row).for_each(|(a, &v)| *a += v);
        }
        T::gemm(
            o,
            batch,
            d,
            T::one(),
            g,
            1,
            o as isize,
            &self.input,
            d as isize,
            1,
            T::one(),
            &mut self.grad_weight,
            d as isize,
            1,
        );
        let mut dx = vec![T::zero(); batch * d];
        T::gemm(
            batch,
            o,
            d,
            T::one(),
            g,
            o as isize,
            1,
            &self.weight,
            d as isize,
            1,
            T::zero(),
            &mut dx,
            d as isize,
            1,
        );
        Tensor::new(vec![batch, d], dx)
    }
}

/// Logistic function, evaluated without overflow for any finite input.
pub fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}
