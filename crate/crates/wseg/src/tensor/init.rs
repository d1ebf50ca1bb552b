//! Parameter initialization.

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::Tensor;

/// Fan-in/fan-out of a weight tensor: dense weights are out×in, conv kernels
/// C_out×C_in×k×k.
pub fn fan_in_out(shape: &[usize]) -> (usize, usize) {
    match shape.len() {
        2 => (shape[1], shape[0]),
        4 => {
            let rf = shape[2] * shape[3];
            (shape[1] * rf, shape[0] * rf)
        }
        _ => {
            let n: usize = shape.iter().product();
            (n, n)
        }
    }
}

/// Glorot (Xavier) uniform initialization: values drawn from
/// ±sqrt(6 / (fan_in + fan_out)), reproducible for a given seed.
pub fn glorot_uniform(shape: &[usize], seed: u64) -> Tensor {
    let (fan_in, fan_out) = fan_in_out(shape);
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = Uniform::new_inclusive(-limit, limit);
    let len: usize = shape.iter().product();
    let values = (0..len).map(|_| dist.sample(&mut rng)).collect();
    Tensor::from_vec(shape, values).expect("length matches shape by construction")
}
