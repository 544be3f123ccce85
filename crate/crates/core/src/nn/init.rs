use crate::rng::SplitMix64;
use crate::scalar::Scalar;

use super::tensor::Tensor;

/// `len` i.i.d. normal draws with standard deviation `sqrt(2 / fan_in)`.
pub fn he_normal<T: Scalar>(len: usize, fan_in: usize, rng: &mut SplitMix64) -> Vec<T> {
    assert!(fan_in > 0, "fan_in must be positive");
    let std = (2.0 / fan_in as f64).sqrt();
    (0..len).map(|_| T::of(std * rng.normal())).collect()
}

pub fn he_normal_init<T: Scalar>(shape: Vec<usize>, fan_in: usize, seed: u64) -> Tensor<T> {
    let n = shape.iter().product();
    Tensor::new(shape, he_normal(n, fan_in, &mut SplitMix64::new(seed))).expect("shape matches draw count")
}
