//! Minimal dense neural-network engine: layers with hand-written
//! gradients, binary cross-entropy, ADAM, He initialization, and a
//! finite-difference gradient checker.

mod adam;
mod gradcheck;
mod init;
mod layers;
mod loss;
mod tensor;

pub use adam::Adam;
pub use gradcheck::{analytic_gradients, check_gradients, grad_check, BlockCheck, GradCheckConfig, GradCheckReport};
pub use init::{he_normal, he_normal_init};
pub use layers::{sigmoid, BatchNorm1d, Conv1d, Dense, Mode};
pub use loss::{bce_loss, PROB_CLIP};
pub use tensor::Tensor;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub enum Layer<T> {
    Conv1d(Conv1d<T>),
    BatchNorm1d(BatchNorm1d<T>),
    Dense(Dense<T>),
    Relu { mask: Vec<bool> },
    Sigmoid { output: Vec<T> },
    Flatten { input_shape: Vec<usize> },
}

/// A trainable parameter array together with its gradient accumulator.
pub struct ParamBlock<'a, T> {
    pub name: String,
    pub value: &'a mut [T],
    pub grad: &'a mut [T],
}

impl<T: Scalar> Layer<T> {
    pub fn relu() -> Self {
        Layer::Relu { mask: Vec::new() }
    }

    pub fn sigmoid() -> Self {
        Layer::Sigmoid { output: Vec::new() }
    }

    pub fn flatten() -> Self {
        Layer::Flatten { input_shape: Vec::new() }
    }

    /// Eval-mode forward pass that leaves the layer untouched.
    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Layer::Conv1d(c) => c.infer(x),
            Layer::BatchNorm1d(b) => b.infer(x),
            Layer::Dense(d) => d.infer(x),
            Layer::Relu { .. } => Ok(x.clone().map(|v| v.max(T::zero()))),
            Layer::Sigmoid { .. } => Ok(x.clone().map(sigmoid)),
            Layer::Flatten { .. } => flatten(x),
        }
    }

    /// Forward pass that caches what `backward` needs. In `Eval` mode batch
    /// normalization uses its running statistics.
    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let y = match self {
            Layer::Conv1d(c) => c.forward(x)?,
            Layer::BatchNorm1d(b) => match mode {
                Mode::Train => b.forward(x)?,
                Mode::Eval => {
                    return Err(Error::InvalidArgument(
                        "eval-mode batch normalization has no backward pass; use infer".into(),
                    ))
                }
            },
            Layer::Dense(d) => d.forward(x)?,
            Layer::Relu { mask } => {
                *mask = x.data().iter().map(|&v| v > T::zero()).collect();
                x.clone().map(|v| v.max(T::zero()))
            }
            Layer::Sigmoid { output } => {
                let y = x.clone().map(sigmoid);
                *output = y.data().to_vec();
                y
            }
            Layer::Flatten { input_shape } => {
                *input_shape = x.shape().to_vec();
                flatten(x)?
            }
        };
        debug_assert!(y.all_finite(), "non-finite activation");
        Ok(y)
    }

    pub fn backward(&mut self, g: &Tensor<T>) -> Result<Tensor<T>> {
        let dx = match self {
            Layer::Conv1d(c) => c.backward(g)?,
            Layer::BatchNorm1d(b) => b.backward(g)?,
            Layer::Dense(d) => d.backward(g)?,
            Layer::Relu { mask } => {
                check_len(mask.len(), g)?;
                let mut dx = g.clone();
                dx.data_mut().iter_mut().zip(mask.iter()).for_each(|(v, &on)| {
                    if !on {
                        *v = T::zero()
                    }
                });
                dx
            }
            Layer::Sigmoid { output } => {
                check_len(output.len(), g)?;
                let mut dx = g.clone();
                dx.data_mut().iter_mut().zip(output.iter()).for_each(|(v, &s)| *v *= s * (T::one() - s));
                dx
            }
            Layer::Flatten { input_shape } => g.clone().reshape(input_shape.clone())?,
        };
        debug_assert!(dx.all_finite(), "non-finite gradient");
        Ok(dx)
    }

    /// Drops cached activations and zeroes gradients, leaving only the
    /// persistent state.
    pub fn clear_transient(&mut self) {
        self.zero_grad();
        match self {
            Layer::Conv1d(c) => c.clear_cache(),
            Layer::BatchNorm1d(b) => b.clear_cache(),
            Layer::Dense(d) => d.clear_cache(),
            Layer::Relu { mask } => *mask = Vec::new(),
            Layer::Sigmoid { output } => *output = Vec::new(),
            Layer::Flatten { input_shape } => *input_shape = Vec::new(),
        }
    }

    pub fn zero_grad(&mut self) {
        for p in self.param_blocks() {
            p.grad.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    pub fn param_blocks(&mut self) -> Vec<ParamBlock<'_, T>> {
        match self {
            Layer::Conv1d(c) => {
                let mut v = vec![ParamBlock {
                    name: "weight".into(),
                    value: &mut c.weight[..],
                    grad: &mut c.grad_weight[..],
                }];
                if let (Some(b), Some(gb)) = (c.bias.as_mut(), c.grad_bias.as_mut()) {
                    v.push(ParamBlock {
                        name: "bias".into(),
                        value: &mut b[..],
                        grad: &mut gb[..],
                    });
                }
                v
            }
            Layer::BatchNorm1d(b) => vec![
                ParamBlock {
                    name: "gamma".into(),
                    value: &mut b.gamma[..],
                    grad: &mut b.grad_gamma[..],
                },
                ParamBlock {
                    name: "beta".into(),
                    value: &mut b.beta[..],
                    grad: &mut b.grad_beta[..],
                },
            ],
            Layer::Dense(d) => vec![
                ParamBlock {
                    name: "weight".into(),
                    value: &mut d.weight[..],
                    grad: &mut d.grad_weight[..],
                },
                ParamBlock {
                    name: "bias".into(),
                    value: &mut d.bias[..],
                    grad: &mut d.grad_bias[..],
                },
            ],
            _ => Vec::new(),
        }
    }

    /// Every persistent array (parameters and running statistics), in a
    /// fixed order.
    pub fn state(&self) -> Vec<(&'static str, &[T])> {
        match self {
            Layer::Conv1d(c) => {
                let mut v = vec![("weight", &c.weight[..])];
                if let Some(b) = &c.bias {
                    v.push(("bias", &b[..]));
                }
                v
            }
            Layer::BatchNorm1d(b) => vec![
                ("gamma", &b.gamma[..]),
                ("beta", &b.beta[..]),
                ("running_mean", &b.running_mean[..]),
                ("running_var", &b.running_var[..]),
            ],
            Layer::Dense(d) => vec![("weight", &d.weight[..]), ("bias", &d.bias[..])],
            _ => Vec::new(),
        }
    }

    pub fn state_mut(&mut self) -> Vec<(&'static str, &mut Vec<T>)> {
        match self {
            Layer::Conv1d(c) => {
                let mut v = vec![("weight", &mut c.weight)];
                if let Some(b) = &mut c.bias {
                    v.push(("bias", b));
                }
                v
            }
            Layer::BatchNorm1d(b) => vec![
                ("gamma", &mut b.gamma),
                ("beta", &mut b.beta),
                ("running_mean", &mut b.running_mean),
                ("running_var", &mut b.running_var),
            ],
            Layer::Dense(d) => vec![("weight", &mut d.weight), ("bias", &mut d.bias)],
            _ => Vec::new(),
        }
    }

    /// One-line description used in checkpoint descriptors.
    pub fn describe(&self) -> String {
        match self {
            Layer::Conv1d(c) => format!(
                "conv1d in={} out={} kernel={} bias={}",
                c.in_channels,
                c.out_channels,
                c.kernel_size,
                c.bias.is_some() as u8
            ),
            Layer::BatchNorm1d(b) => format!("batchnorm1d channels={} momentum={} epsilon={}", b.channels, b.momentum, b.epsilon),
            Layer::Dense(d) => format!("dense in={} out={}", d.in_dim, d.out_dim),
            Layer::Relu { .. } => "relu".into(),
            Layer::Sigmoid { .. } => "sigmoid".into(),
            Layer::Flatten { .. } => "flatten".into(),
        }
    }
}

fn check_len<T: Scalar>(cached: usize, g: &Tensor<T>) -> Result<()> {
    if cached != g.len() {
        return Err(Error::Shape {
            expected: format!("{cached} values from the last forward pass"),
            actual: format!("{:?}", g.shape()),
        });
    }
    Ok(())
}

fn flatten<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let b = x.shape()[0];
    let rest = x.len() / b;
    x.clone().reshape(vec![b, rest])
}

/// Layers applied in order.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequential<T> {
    pub layers: Vec<Layer<T>>,
}

impl<T: Scalar> Sequential<T> {
    pub fn new(layers: Vec<Layer<T>>) -> Self {
        Self { layers }
    }

    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut h = x.clone();
        for l in &self.layers {
            h = l.infer(&h)?;
        }
        Ok(h)
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let mut h = x.clone();
        for l in &mut self.layers {
            h = l.forward(&h, mode)?;
        }
        Ok(h)
    }

    /// Back-propagates `g` (gradient of the loss with respect to the last
    /// output), accumulating parameter gradients. Returns the input gradient.
    pub fn backward(&mut self, g: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = g.clone();
        for l in self.layers.iter_mut().rev() {
            g = l.backward(&g)?;
        }
        Ok(g)
    }

    pub fn zero_grad(&mut self) {
        self.layers.iter_mut().for_each(Layer::zero_grad);
    }

    pub fn clear_transient(&mut self) {
        self.layers.iter_mut().for_each(Layer::clear_transient);
    }

    pub fn param_blocks(&mut self) -> Vec<ParamBlock<'_, T>> {
        self.layers
            .iter_mut()
            .enumerate()
            .flat_map(|(i, l)| {
                l.param_blocks().into_iter().map(move |mut p| {
                    p.name = format!("{i}.{}", p.name);
                    p
                })
            })
            .collect()
    }

    pub fn n_params(&mut self) -> usize {
        self.param_blocks().iter().map(|p| p.value.len()).sum()
    }

    /// ReLU on/off pattern of the last training-mode forward pass.
    pub fn relu_pattern(&self) -> Vec<bool> {
        self.layers
            .iter()
            .flat_map(|l| match l {
                Layer::Relu { mask } => mask.clone(),
                _ => Vec::new(),
            })
            .collect()
    }

    pub fn describe(&self) -> Vec<String> {
        self.layers.iter().map(Layer::describe).collect()
    }
}

#[cfg(test)]
mod tests;
