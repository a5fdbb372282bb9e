use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diff::Tensor;
use crate::error::{Error, Result};

/// `fan_out × fan_in` matrix with entries drawn from `U[-1/√fan_in, 1/√fan_in]`.
///
/// This is the default initialisation of a fully connected layer in common
/// deep-learning frameworks (Kaiming uniform with `a = √5`).
pub fn kaiming_init(fan_in: usize, fan_out: usize, seed: u64) -> Result<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    kaiming_uniform(fan_in, fan_out, &mut rng)
}

pub fn kaiming_uniform<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Result<Tensor> {
    uniform_init(fan_in, fan_out, fan_in, rng)
}

/// Bias vector (`1 × fan_out`) with the same bound as the weights.
pub fn kaiming_bias<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Result<Tensor> {
    uniform_init(fan_in, 1, fan_out, rng)
}

fn uniform_init<R: Rng + ?Sized>(fan_in: usize, rows: usize, cols: usize, rng: &mut R) -> Result<Tensor> {
    if fan_in == 0 || rows == 0 || cols == 0 {
        return Err(Error::contract("layer dimensions must be at least 1"));
    }
    let bound = 1.0 / (fan_in as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::from_vec(rows, cols, data)
}
