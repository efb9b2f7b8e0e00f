//! He-normal weight initialization.

use crate::float::Float;
use crate::nn::conv::Conv2d;
use crate::nn::dense::Dense;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Standard normal sample via Box-Muller (keeps the RNG stream identical
/// for f32 and f64 models built from the same seed).
fn std_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

pub fn he_normal_conv<F: Float>(conv: &mut Conv2d<F>, rng: &mut ChaCha8Rng) {
    let fan_in = conv.weight.ncols() as f64;
    let std = (2.0 / fan_in).sqrt();
    conv.weight.mapv_inplace(|_| F::of(std_normal(rng) * std));
    conv.bias.fill(F::zero());
}

pub fn he_normal_dense<F: Float>(dense: &mut Dense<F>, rng: &mut ChaCha8Rng) {
    let fan_in = dense.weight.nrows() as f64;
    let std = (2.0 / fan_in).sqrt();
    dense.weight.mapv_inplace(|_| F::of(std_normal(rng) * std));
    dense.bias.fill(F::zero());
}
