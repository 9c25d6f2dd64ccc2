use rand::Rng;

use crate::numerics::tensor::Tensor;

/// Fan-in scaled normal initialization, `std = sqrt(2 / fan_in)`.
///
/// `shape` is `[out, in, k, k]` for convolutions or `[out, in]` for linear
/// layers; the fan-in is the product of every axis after the first.
pub fn kaiming_normal<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor {
    let fan_in: usize = shape[1..].iter().product();
    Tensor::randn(shape, (2.0 / fan_in as f64).sqrt(), rng)
}
