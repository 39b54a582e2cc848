use alloc::vec::Vec;

use super::Tensor;
use crate::math;
use crate::rng::{self, Rng};

/// He-normal initialisation: N(0, 2 / fan_in).
pub fn he_normal(shape: &[usize], fan_in: usize, rng: &mut Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let std = math::sqrt(2.0 / fan_in.max(1) as f64);
    let data: Vec<f64> = (0..n).map(|_| std * rng::normal(rng)).collect();
    Tensor::new(shape, data).expect("shape product matches")
}
