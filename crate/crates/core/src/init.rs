//! Parameter initializers.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::tensor::Tensor;

pub fn normal<R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Tensor {
    let dist = Normal::new(0.0, std).expect("std is finite and positive");
    let mut t = Tensor::zeros(shape);
    t.values_mut()
        .iter_mut()
        .for_each(|v| *v = dist.sample(rng));
    t
}

/// Uniform on `[-bound, bound]`.
pub fn uniform<R: Rng + ?Sized>(shape: &[usize], bound: f64, rng: &mut R) -> Tensor {
    let mut t = Tensor::zeros(shape);
    t.values_mut()
        .iter_mut()
        .for_each(|v| *v = rng.random_range(-bound..=bound));
    t
}

/// `fan_in × fan_out` weight, uniform on `±1/sqrt(fan_in)`.
pub fn fan_in_uniform<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor {
    uniform(&[fan_in, fan_out], 1.0 / (fan_in as f64).sqrt(), rng)
}

/// Uniform with variance `gain / fan_in`, so a linear map keeps the scale of
/// its input (`gain = 1`) or of its input after a ReLU (`gain = 2`).
pub fn scaled_uniform<R: Rng + ?Sized>(
    fan_in: usize,
    fan_out: usize,
    gain: f64,
    rng: &mut R,
) -> Tensor {
    uniform(&[fan_in, fan_out], (3.0 * gain / fan_in as f64).sqrt(), rng)
}
