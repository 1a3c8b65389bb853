//! Block Rayleigh fading and additive white Gaussian noise.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Result};
use crate::Complex64;

/// One `CN(0, var)` sample: independent real and imaginary parts of variance `var / 2`.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, var: f64) -> Complex64 {
    let s = (var / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re * s, im * s)
}

/// Per-user channel coefficients, constant over a slot and its feedback leg.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotChannels {
    pub h: Vec<Complex64>,
    /// Noise power `E|z|²` per complex sample.
    pub noise_power: f64,
}

pub fn draw_channels<R: Rng + ?Sized>(rng: &mut R, k_a: usize) -> Vec<Complex64> {
    (0..k_a).map(|_| complex_gaussian(rng, 1.0)).collect()
}

/// Adds `CN(0, n0)` samples in place.
pub fn add_noise<R: Rng + ?Sized>(y: &mut [Complex64], n0: f64, rng: &mut R) {
    if n0 > 0.0 {
        y.iter_mut().for_each(|v| *v += complex_gaussian(rng, n0));
    }
}

/// `y = Σ_k h_k x_k + z` with `z ~ CN(0, n0 I)`.
pub fn superpose<R, S>(signals: &[S], h: &[Complex64], len: usize, n0: f64, rng: &mut R) -> Result<Vec<Complex64>>
where
    R: Rng + ?Sized,
    S: AsRef<[Complex64]>,
{
    if signals.len() != h.len() {
        return Err(invalid(format!("{} signals but {} channel coefficients", signals.len(), h.len())));
    }
    if n0 < 0.0 {
        return Err(invalid("noise power must be non-negative"));
    }
    let mut y = vec![Complex64::new(0.0, 0.0); len];
    for (x, &hk) in signals.iter().zip(h) {
        let x = x.as_ref();
        if x.len() != len {
            return Err(invalid(format!("signal of length {} where {len} was expected", x.len())));
        }
        for (yi, xi) in y.iter_mut().zip(x) {
            *yi += hk * xi;
        }
    }
    add_noise(&mut y, n0, rng);
    Ok(y)
}
