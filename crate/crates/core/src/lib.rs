//! Link-level simulator for preamble/payload unsourced random access with
//! threshold-based feedback.
//!
//! The feed-forward chain is [`tx_chain`] → [`channel`] → [`ad_amp`] (activity
//! detection) → [`mud`] (payload multi-user detection). The base station then
//! classifies users and builds a feedback packet ([`feedback_bs`]); every user
//! decides whether to re-transmit from what it hears ([`feedback_ue`]).
//! [`harness`] closes the loop over many slots and produces the metrics.

pub mod ad_amp;
pub mod channel;
mod error;
pub mod fec;
pub mod feedback_bs;
pub mod feedback_ue;
pub mod harness;
pub mod mud;
pub mod tx_chain;

pub use error::{Error, Result};
pub use num_complex::Complex64;

/// Conjugate inner product `⟨a, b⟩ = Σ conj(a_i)·b_i`.
pub fn inner(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    debug_assert_eq!(a.len(), b.len());
    let (mut re, mut im) = (0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        re += x.re * y.re + x.im * y.im;
        im += x.re * y.im - x.im * y.re;
    }
    Complex64::new(re, im)
}

/// Squared Euclidean norm of a complex vector.
pub fn norm_sqr(a: &[Complex64]) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum()
}

/// Converts a decibel value to linear scale.
pub fn db_to_lin(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Converts a linear value to decibels.
pub fn lin_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}
