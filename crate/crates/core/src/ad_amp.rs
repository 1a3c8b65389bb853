//! Activity detection and channel estimation on the preamble by approximate
//! message passing with a Bernoulli-Gaussian denoiser and hard thresholding.

use rayon::prelude::*;

use crate::error::{invalid, Result};
use crate::tx_chain::SensingMatrix;
use crate::Complex64;

#[derive(Debug, Clone, PartialEq)]
pub struct AmpConfig {
    /// Threshold multiplier `c`.
    pub c: f64,
    pub max_iters: usize,
    /// Weight of the previous estimate in `[0, 1)`.
    pub damping: f64,
    /// Prior activity probability per dictionary column.
    pub sparsity: f64,
}

impl AmpConfig {
    /// Defaults for an expected load of `k_a` users on `2^{b_p}` preambles.
    pub fn for_load(k_a: usize, preamble_bits: usize) -> Self {
        let cols = (1u64 << preamble_bits) as f64;
        AmpConfig {
            c: 3.0,
            max_iters: 25,
            damping: 0.0,
            sparsity: (k_a.max(1) as f64 / cols).min(0.5),
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.c > 0.0) {
            return Err(invalid("threshold multiplier must be positive"));
        }
        if !(0.0..1.0).contains(&self.damping) {
            return Err(invalid("damping must lie in [0, 1)"));
        }
        if !(self.sparsity > 0.0 && self.sparsity < 1.0) {
            return Err(invalid("sparsity prior must lie in (0, 1)"));
        }
        if self.max_iters == 0 {
            return Err(invalid("at least one AMP iteration is required"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActivityEstimate {
    /// Detected preamble indices, ascending.
    pub detected: Vec<usize>,
    /// Channel estimate per entry of `detected`.
    pub h_hat: Vec<Complex64>,
    pub tau: f64,
    pub iterations_run: usize,
    pub per_iteration_tau: Vec<f64>,
    pub diverged: bool,
}

impl ActivityEstimate {
    pub fn empty() -> Self {
        ActivityEstimate {
            detected: Vec::new(),
            h_hat: Vec::new(),
            tau: 0.0,
            iterations_run: 0,
            per_iteration_tau: Vec::new(),
            diverged: false,
        }
    }

    pub fn estimate_for(&self, nu: usize) -> Option<Complex64> {
        self.detected.binary_search(&nu).ok().map(|i| self.h_hat[i])
    }
}

/// Posterior weight of the active hypothesis and the scalar `1 / (1 + τ²)`.
fn posterior(r2: f64, tau2: f64, log_prior: f64) -> (f64, f64) {
    let g = 1.0 / (1.0 + tau2);
    let log_odds = log_prior - (1.0 + 1.0 / tau2).ln() + r2 * g / tau2;
    (1.0 / (1.0 + (-log_odds).exp()), g)
}

/// Bernoulli-Gaussian posterior mean under the prior `(1 − ε) δ_0 + ε CN(0, 1)`
/// observed through `CN(0, τ²)` noise.
pub fn denoise(r: &[Complex64], tau2: f64, eps: f64) -> Vec<Complex64> {
    if tau2 <= 0.0 {
        return r.to_vec();
    }
    let log_prior = (eps / (1.0 - eps)).ln();
    r.iter()
        .map(|&x| {
            let (w, g) = posterior(x.norm_sqr(), tau2, log_prior);
            x * (w * g)
        })
        .collect()
}

/// Wirtinger derivative `∂η/∂r` of [`denoise`] at one point.
fn denoise_derivative(r2: f64, tau2: f64, log_prior: f64) -> f64 {
    let (w, g) = posterior(r2, tau2, log_prior);
    g * (w + r2 * w * (1.0 - w) * g / tau2)
}

/// Keeps entries strictly above `c·τ`; returns the surviving `(index, value)` pairs.
pub fn threshold_prune(h_tilde: &[Complex64], c: f64, tau: f64) -> Vec<(usize, Complex64)> {
    let t = c * tau;
    h_tilde
        .iter()
        .enumerate()
        .filter(|(_, v)| v.norm() > t)
        .map(|(j, &v)| (j, v))
        .collect()
}

struct Iterate {
    support: Vec<(usize, Complex64)>,
    tau: f64,
}

fn run(y: &[Complex64], a: &SensingMatrix, cfg: &AmpConfig) -> (Iterate, Vec<f64>, bool) {
    let n_p = a.rows() as f64;
    let log_prior = (cfg.sparsity / (1.0 - cfg.sparsity)).ln();
    let mut estimate: Vec<(usize, Complex64)> = Vec::new();
    let mut z_prev = vec![Complex64::new(0.0, 0.0); y.len()];
    let mut onsager = 0.0;
    let mut taus = Vec::new();
    let mut best: Option<Iterate> = None;
    let mut rising = 0;
    let mut diverged = false;

    for _ in 0..cfg.max_iters {
        let fit = a.apply_sparse(&estimate);
        let z: Vec<Complex64> = y
            .iter()
            .zip(&fit)
            .zip(&z_prev)
            .map(|((yi, fi), zp)| yi - fi + zp * onsager)
            .collect();
        let tau2 = z.iter().map(|v| v.norm_sqr()).sum::<f64>() / n_p;
        let tau = tau2.sqrt();

        let mut r = a.adjoint_apply(&z);
        for &(j, v) in &estimate {
            r[j] += v;
        }
        let mut prev = vec![Complex64::new(0.0, 0.0); 0];
        if cfg.damping > 0.0 {
            prev = vec![Complex64::new(0.0, 0.0); r.len()];
            for &(j, v) in &estimate {
                prev[j] = v;
            }
        }
        let threshold = cfg.c * tau;
        let kept: Vec<(usize, Complex64, f64)> = r
            .par_iter()
            .enumerate()
            .filter_map(|(j, &rj)| {
                let (v, d) = if tau2 > 0.0 {
                    let r2 = rj.norm_sqr();
                    let (w, g) = posterior(r2, tau2, log_prior);
                    (rj * (w * g), denoise_derivative(r2, tau2, log_prior))
                } else {
                    (rj, 1.0)
                };
                let v = if prev.is_empty() { v } else { v * (1.0 - cfg.damping) + prev[j] * cfg.damping };
                (v.norm() > threshold && v != Complex64::new(0.0, 0.0)).then_some((j, v, d))
            })
            .collect();
        onsager = kept.iter().map(|k| k.2).sum::<f64>() * (1.0 - cfg.damping) / n_p;
        let support: Vec<(usize, Complex64)> = kept.iter().map(|k| (k.0, k.1)).collect();

        if let Some(&last) = taus.last() {
            rising = if tau > last * (1.0 + 1e-3) { rising + 1 } else { 0 };
        }
        let same_set = support.len() == estimate.len()
            && support.iter().zip(&estimate).all(|(s, e)| s.0 == e.0);
        let stable = taus.last().is_some_and(|&last: &f64| (tau - last).abs() <= 1e-4 * last);
        taus.push(tau);
        if best.as_ref().map_or(true, |b| tau <= b.tau) {
            best = Some(Iterate { support: support.clone(), tau });
        }
        if rising >= 3 {
            diverged = true;
            break;
        }
        z_prev = z;
        estimate = support;
        if tau == 0.0 || (same_set && stable) {
            break;
        }
    }
    let out = if diverged {
        best.expect("at least one iteration ran")
    } else {
        Iterate { support: estimate, tau: *taus.last().expect("at least one iteration ran") }
    };
    (out, taus, diverged)
}

/// Runs AMP on the received preamble `y_p` (unit-variance channel scale).
/// A divergent undamped run is retried once with damping 0.5.
pub fn amp_detect(y_p: &[Complex64], a: &SensingMatrix, cfg: &AmpConfig) -> Result<ActivityEstimate> {
    cfg.validate()?;
    if y_p.len() != a.rows() {
        return Err(invalid(format!("received preamble has {} samples, dictionary has {} rows", y_p.len(), a.rows())));
    }
    let (mut it, mut taus, mut diverged) = run(y_p, a, cfg);
    if diverged && cfg.damping == 0.0 {
        let damped = AmpConfig { damping: 0.5, ..cfg.clone() };
        let (it2, taus2, d2) = run(y_p, a, &damped);
        taus.extend(taus2);
        if it2.tau < it.tau {
            it = it2;
            diverged = d2;
        }
    }
    Ok(ActivityEstimate {
        detected: it.support.iter().map(|s| s.0).collect(),
        h_hat: it.support.iter().map(|s| s.1).collect(),
        tau: it.tau,
        iterations_run: taus.len(),
        per_iteration_tau: taus,
        diverged,
    })
}
