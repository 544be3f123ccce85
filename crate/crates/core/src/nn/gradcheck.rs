//! Central finite-difference verification of back-propagated gradients
//! through a `Sequential` ending in a sigmoid, under mean BCE loss.

use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::scalar::Scalar;

use super::layers::Mode;
use super::loss::bce_loss;
use super::tensor::Tensor;
use super::Sequential;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    pub rel_tol: f64,
    /// Perturbation relative to the parameter magnitude (floored at 0.1).
    pub step: f64,
    /// Check at most this many randomly chosen entries per block.
    pub max_per_block: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            rel_tol: 1e-5,
            step: 1e-5,
            max_per_block: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockCheck {
    pub name: String,
    pub checked: usize,
    /// Entries whose perturbation flipped a ReLU, where the loss is not
    /// differentiable at the finite-difference scale.
    pub skipped_kinks: usize,
    pub worst_rel: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub rel_tol: f64,
    pub blocks: Vec<BlockCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.blocks.iter().all(|b| b.worst_rel <= self.rel_tol)
    }

    pub fn worst(&self) -> Option<&BlockCheck> {
        self.blocks.iter().max_by(|a, b| a.worst_rel.total_cmp(&b.worst_rel))
    }
}

fn loss_of<T: Scalar>(model: &mut Sequential<T>, x: &Tensor<T>, y: &[T]) -> Result<f64> {
    let p = model.forward(x, Mode::Train)?;
    Ok(bce_loss(p.data(), y, 1.0).0.to_f64().unwrap())
}

/// Back-propagated gradient of the mean BCE, one vector per parameter block.
pub fn analytic_gradients<T: Scalar>(model: &Sequential<T>, x: &Tensor<T>, y: &[T]) -> Result<Vec<Vec<f64>>> {
    let mut m = model.clone();
    m.zero_grad();
    let p = m.forward(x, Mode::Train)?;
    let (_, g) = bce_loss(p.data(), y, 1.0);
    m.backward(&Tensor::new(p.shape().to_vec(), g)?)?;
    Ok(m.param_blocks()
        .iter()
        .map(|b| b.grad.iter().map(|v| v.to_f64().unwrap()).collect())
        .collect())
}

/// Compares `analytic` against central differences of the loss.
pub fn check_gradients<T: Scalar>(
    model: &Sequential<T>,
    x: &Tensor<T>,
    y: &[T],
    analytic: &[Vec<f64>],
    config: &GradCheckConfig,
) -> Result<GradCheckReport> {
    let mut m = model.clone();
    m.forward(x, Mode::Train)?;
    let base_pattern = m.relu_pattern();
    let sizes: Vec<(String, usize)> = m.param_blocks().iter().map(|b| (b.name.clone(), b.value.len())).collect();
    if sizes.len() != analytic.len() {
        return Err(Error::InvalidArgument("analytic gradient blocks do not match the model".into()));
    }
    let mut rng = SplitMix64::new(config.seed);
    let mut blocks = Vec::new();
    for (bi, (name, len)) in sizes.into_iter().enumerate() {
        let mut indices: Vec<usize> = (0..len).collect();
        if let Some(k) = config.max_per_block.filter(|&k| k < len) {
            rng.shuffle(&mut indices);
            indices.truncate(k);
            indices.sort_unstable();
        }
        let mut report = BlockCheck {
            name,
            checked: 0,
            skipped_kinks: 0,
            worst_rel: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for i in indices {
            let original = m.param_blocks()[bi].value[i];
            let h = config.step * original.to_f64().unwrap().abs().max(0.1);
            let set = |m: &mut Sequential<T>, v: T| m.param_blocks()[bi].value[i] = v;
            set(&mut m, original + T::of(h));
            let up = loss_of(&mut m, x, y)?;
            let up_pattern = m.relu_pattern();
            set(&mut m, original - T::of(h));
            let down = loss_of(&mut m, x, y)?;
            let down_pattern = m.relu_pattern();
            set(&mut m, original);
            if up_pattern != base_pattern || down_pattern != base_pattern {
                report.skipped_kinks += 1;
                continue;
            }
            let numeric = (up - down) / (2.0 * h);
            let a = analytic[bi][i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-12);
            report.checked += 1;
            if rel > report.worst_rel {
                report.worst_rel = rel;
                report.worst_index = i;
                report.analytic = a;
                report.numeric = numeric;
            }
        }
        blocks.push(report);
    }
    Ok(GradCheckReport {
        rel_tol: config.rel_tol,
        blocks,
    })
}

pub fn grad_check<T: Scalar>(model: &Sequential<T>, x: &Tensor<T>, y: &[T], config: &GradCheckConfig) -> Result<GradCheckReport> {
    let analytic = analytic_gradients(model, x, y)?;
    check_gradients(model, x, y, &analytic, config)
}
