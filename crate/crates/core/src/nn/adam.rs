use crate::scalar::Scalar;

use super::ParamBlock;

/// ADAM with bias correction. Moment buffers are allocated on the first
/// step and matched to parameter blocks by position.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub t: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn second_moments(&self) -> &[Vec<T>] {
        &self.v
    }

    pub fn step(&mut self, blocks: &mut [ParamBlock<'_, T>]) {
        if self.m.is_empty() {
            self.m = blocks.iter().map(|b| vec![T::zero(); b.value.len()]).collect();
            self.v = self.m.clone();
        }
        assert_eq!(self.m.len(), blocks.len(), "parameter blocks changed between steps");
        self.t += 1;
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let c1 = T::one() - T::of(self.beta1.powi(self.t as i32));
        let c2 = T::one() - T::of(self.beta2.powi(self.t as i32));
        let lr = T::of(self.lr);
        let eps = T::of(self.epsilon);
        for ((block, m), v) in blocks.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            for i in 0..block.value.len() {
                let g = block.grad[i];
                m[i] = b1 * m[i] + (T::one() - b1) * g;
                v[i] = b2 * v[i] + (T::one() - b2) * g * g;
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                block.value[i] -= lr * mh / (vh.sqrt() + eps);
            }
        }
    }
}
