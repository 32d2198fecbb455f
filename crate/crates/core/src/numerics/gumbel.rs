//! Gumbel-Softmax sampling.

use rand::Rng;

use super::tape::{argmax, softmax_in_place};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Uniform draws are kept inside `(ε, 1 − ε)` so the double log stays finite.
pub const UNIFORM_EPS: f64 = 1e-12;

pub fn sample_gumbel<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u: f64 = rng.random_range(UNIFORM_EPS..1.0 - UNIFORM_EPS);
    -(-u.ln()).ln()
}

pub fn gumbel_noise<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| sample_gumbel(rng)).collect()
}

/// Draws `softmax((logits + g) / tau)` with `g ~ Gumbel(0, 1)` per coordinate
/// and returns it with the index of its largest entry.
pub fn gumbel_softmax<R: Rng + ?Sized>(logits: &Tensor, tau: f64, rng: &mut R) -> Result<(Tensor, usize)> {
    if !(tau > 0.0) {
        return Err(Error::Parameter(format!("temperature must be positive, got {tau}")));
    }
    if !logits.is_finite() {
        return Err(Error::Parameter("logits must be finite".into()));
    }
    let noise = gumbel_noise(rng, logits.numel());
    Ok(relaxed_from_noise(logits.values(), &noise, tau))
}

pub(crate) fn relaxed_from_noise(logits: &[f64], noise: &[f64], tau: f64) -> (Tensor, usize) {
    let mut out: Vec<f64> = logits.iter().zip(noise).map(|(l, g)| (l + g) / tau).collect();
    softmax_in_place(&mut out);
    let hard = argmax(&out);
    (Tensor::vector(out), hard)
}
