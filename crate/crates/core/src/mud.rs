//! Iterative multi-user detection of the payloads: soft interference
//! cancellation over repetition-coded IDMA-style signals, SINR-gated FEC
//! decoding and LMMSE channel re-estimation from decoded data.

use std::f64::consts::SQRT_2;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::ad_amp::ActivityEstimate;
use crate::error::{invalid, Error, Result};
use crate::fec::{self, CodeSpec};
use crate::tx_chain::{index_to_bits, modulate_replicas, payload_symbols, FrameLayout, SequencePair};
use crate::{inner, lin_to_db, Complex64};

const SIGMA2_FLOOR: f64 = 1e-12;
/// Iterations without a new decode, once some user is decoded, before giving up.
pub const STALL_ITERS: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct MudConfig {
    /// SINR in dB above which the FEC decoder replaces soft repetition decoding.
    pub alpha_db: f64,
    pub max_iters: usize,
}

impl MudConfig {
    pub fn for_load(k_a: usize) -> Self {
        MudConfig { alpha_db: alpha_schedule_db(k_a), max_iters: 100 }
    }
}

/// FEC activation threshold, linear in the load between 50 and 300 users.
pub fn alpha_schedule_db(k_a: usize) -> f64 {
    let t = ((k_a as f64 - 50.0) / 250.0).clamp(0.0, 1.0);
    -20.0 + 9.0 * t
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum UserStatus {
    Active,
    Decoded,
    Failed,
}

/// Final per-detected-index state.
#[derive(Debug, Clone, PartialEq)]
pub struct MudUser {
    pub nu: usize,
    pub h_hat: Complex64,
    pub status: UserStatus,
    pub crc_pass_streak: u32,
    pub sinr_db: f64,
    /// Decoded information bits (set once decoded).
    pub info_bits: Option<Vec<u8>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MudTraceRow {
    pub iteration: usize,
    pub decoded: usize,
    pub mean_sigma2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MudOutput {
    /// One entry per detected index, in the order of `ActivityEstimate::detected`.
    pub users: Vec<MudUser>,
    pub iterations: usize,
    pub trace: Vec<MudTraceRow>,
}

impl MudOutput {
    /// The decoded message list.
    pub fn decoded(&self) -> impl Iterator<Item = &MudUser> {
        self.users.iter().filter(|u| u.status == UserStatus::Decoded)
    }

    pub fn failed(&self) -> impl Iterator<Item = &MudUser> {
        self.users.iter().filter(|u| u.status == UserStatus::Failed)
    }
}

/// Accepts or rejects a candidate message for index `nu` beyond what the code
/// itself can check. Used with codes that carry no CRC.
pub type MessageCheck<'a> = &'a (dyn Fn(usize, &[u8]) -> bool + Sync);

pub fn matched_filter(y_d: &[Complex64], h_hat: Complex64) -> Vec<Complex64> {
    let c = h_hat.conj();
    y_d.iter().map(|y| c * y).collect()
}

/// Multiplies by the conjugate scrambler and splits into `n_rails` real rails
/// (real part then imaginary part per symbol).
pub fn descramble_rails(r: &[Complex64], scrambler: &[Complex64], n_rails: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n_rails + 1);
    for (x, s) in r.iter().zip(scrambler).take(n_rails.div_ceil(2)) {
        let d = x * s.conj();
        out.push(d.re);
        out.push(d.im);
    }
    out.truncate(n_rails);
    out
}

/// `2 r / σ²` per rail.
pub fn symbol_llrs(rails: &[f64], sigma2: f64) -> Result<Vec<f64>> {
    if !(sigma2 > 0.0) {
        return Err(Error::InvalidState(format!("interference-plus-noise power {sigma2} is not positive")));
    }
    Ok(rails.iter().map(|r| 2.0 * r / sigma2).collect())
}

pub fn combine_replicas(replicas: &[f64]) -> f64 {
    replicas.iter().sum()
}

/// Extrinsic soft bits `tanh(Σ_{m' ≠ m} λ_{m'})`.
pub fn soft_bits(replicas: &[f64]) -> Vec<f64> {
    let total = combine_replicas(replicas);
    replicas.iter().map(|l| (total - l).tanh()).collect()
}

/// `ĥ · x̃` where `x̃` re-applies permutation, QPSK mapping and scrambling to
/// per-replica amplitudes in `[−1, 1]`.
pub fn remodulate(amplitudes: &[f64], pair: &SequencePair, h_hat: Complex64, n_d: usize) -> Vec<Complex64> {
    let mut x = modulate_replicas(amplitudes, pair, n_d);
    x.iter_mut().for_each(|v| *v *= h_hat);
    x
}

/// Cancellation for user `k` from peers' estimates, and the variance of the
/// full residual scaled by `ĥ_k^*`.
pub fn interference_cancel(
    y_d: &[Complex64],
    h_hats: &[Complex64],
    x_tilde: &[Vec<Complex64>],
    k: usize,
) -> (Vec<Complex64>, f64) {
    let c = h_hats[k].conj();
    let mut r = matched_filter(y_d, h_hats[k]);
    let mut full = r.clone();
    for (kp, (h, x)) in h_hats.iter().zip(x_tilde).enumerate() {
        for ((ri, fi), xi) in r.iter_mut().zip(full.iter_mut()).zip(x) {
            let t = c * h * xi;
            *fi -= t;
            if kp != k {
                *ri -= t;
            }
        }
    }
    (r, variance(&full))
}

fn variance(v: &[Complex64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<Complex64>() / n;
    v.iter().map(|x| (x - mean).norm_sqr()).sum::<f64>() / n
}

/// `(X^H X + σ² I)^{-1} X^H y_c` for the columns of `X`. The flag reports that
/// the system needed extra diagonal loading.
pub fn lmmse_reestimate(y_c: &[Complex64], columns: &[&[Complex64]], sigma2: f64) -> (Vec<Complex64>, bool) {
    let gram = gram_matrix(columns);
    lmmse_with_gram(y_c, columns, &gram, sigma2)
}

fn gram_matrix(columns: &[&[Complex64]]) -> DMatrix<Complex64> {
    let n = columns.len();
    let mut g = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = inner(columns[i], columns[j]);
            g[(i, j)] = v;
            g[(j, i)] = v.conj();
        }
    }
    g
}

fn lmmse_with_gram(
    y_c: &[Complex64],
    columns: &[&[Complex64]],
    gram: &DMatrix<Complex64>,
    sigma2: f64,
) -> (Vec<Complex64>, bool) {
    let n = columns.len();
    if n == 0 {
        return (Vec::new(), false);
    }
    let rhs = DMatrix::from_iterator(n, 1, columns.iter().map(|x| inner(x, y_c)));
    let mut m = gram.clone();
    for i in 0..n {
        m[(i, i)] += sigma2;
    }
    let (chol, flagged) = match m.clone().cholesky() {
        Some(c) => (c, false),
        None => {
            for i in 0..n {
                m[(i, i)] += 1e-9;
            }
            match m.cholesky() {
                Some(c) => (c, true),
                None => return (vec![Complex64::new(0.0, 0.0); n], true),
            }
        }
    };
    (chol.solve(&rhs).iter().copied().collect(), flagged)
}

fn residual_power(y_c: &[Complex64], columns: &[&[Complex64]], h: &[Complex64]) -> f64 {
    let mut r = y_c.to_vec();
    for (x, hk) in columns.iter().zip(h) {
        for (ri, xi) in r.iter_mut().zip(x.iter()) {
            *ri -= hk * xi;
        }
    }
    r.iter().map(|v| v.norm_sqr()).sum()
}

/// Accepts new estimates iff they strictly lower the residual power. Returns
/// the flag and the residual power after re-estimation.
pub fn nip_gate(y_c: &[Complex64], columns: &[&[Complex64]], h_new: &[Complex64], nip_before: f64) -> (bool, f64) {
    if columns.is_empty() {
        return (false, nip_before);
    }
    let after = residual_power(y_c, columns, h_new);
    (after < nip_before, after)
}

struct UserState {
    nu: usize,
    pair: SequencePair,
    preamble_bits: Vec<u8>,
    h_hat: Complex64,
    amplitudes: Vec<f64>,
    x_tilde: Vec<Complex64>,
    status: UserStatus,
    streak: u32,
    sinr_db: f64,
    info_bits: Option<Vec<u8>>,
}

struct Step {
    amplitudes: Vec<f64>,
    passed: Option<Vec<u8>>,
    sinr_db: f64,
}

impl UserState {
    fn step(
        &self,
        residual: &[Complex64],
        sigma2_res: f64,
        code: &CodeSpec,
        layout: &FrameLayout,
        cfg: &MudConfig,
        check: Option<MessageCheck<'_>>,
    ) -> Result<Step> {
        let m = layout.repetition;
        let n_rails = self.amplitudes.len();
        let g = self.h_hat.norm_sqr();
        let sigma2 = (g * sigma2_res).max(SIGMA2_FLOOR);
        let sinr_db = lin_to_db(g * g / sigma2);
        if g == 0.0 {
            return Ok(Step { amplitudes: vec![0.0; n_rails], passed: None, sinr_db });
        }
        // r̃ = ĥ^*(y − S) + |ĥ|² x̃, normalized so the rails carry ±1.
        let c = self.h_hat.conj();
        let own = Complex64::new(g, 0.0);
        let r: Vec<Complex64> = residual.iter().zip(&self.x_tilde).map(|(e, x)| c * e + own * x).collect();
        let scale = SQRT_2 / g;
        let rails: Vec<f64> = descramble_rails(&r, &self.pair.scrambler, n_rails).iter().map(|v| v * scale).collect();
        let half = symbol_llrs(&rails, 2.0 * sigma2 / (g * g))?;
        let inv = self.pair.inverse();
        let replica: Vec<f64> = (0..n_rails).map(|i| half[inv[i]]).collect();
        let b_d = n_rails / m;
        let theta: Vec<f64> = replica.chunks(m).map(combine_replicas).collect();

        if sinr_db >= cfg.alpha_db {
            let mut llrs = vec![0.0; layout.preamble_bits];
            llrs.extend(theta.iter().map(|t| 2.0 * t));
            let out = fec::decode(code, &llrs, Some(&self.preamble_bits))?;
            let accepted = out.crc_ok && check.map_or(true, |f| f(self.nu, &out.info_bits));
            if accepted {
                let amplitudes = out.codeword[layout.preamble_bits..]
                    .iter()
                    .flat_map(|&b| std::iter::repeat(1.0 - 2.0 * f64::from(b)).take(m))
                    .collect();
                return Ok(Step { amplitudes, passed: Some(out.info_bits), sinr_db });
            }
        }
        let mut amplitudes = Vec::with_capacity(n_rails);
        for j in 0..b_d {
            amplitudes.extend(soft_bits(&replica[j * m..(j + 1) * m]));
        }
        Ok(Step { amplitudes, passed: None, sinr_db })
    }
}

/// Decodes the payload segment `y_d` (unit-variance channel scale) for every
/// detected preamble index.
pub fn mud_decode(
    y_d: &[Complex64],
    activity: &ActivityEstimate,
    cfg: &MudConfig,
    code: &CodeSpec,
    layout: &FrameLayout,
    check: Option<MessageCheck<'_>>,
) -> Result<MudOutput> {
    if y_d.len() != layout.payload_len {
        return Err(invalid(format!("payload segment has {} samples, expected {}", y_d.len(), layout.payload_len)));
    }
    let b_d = layout.payload_bits(code);
    let n_rails = layout.repetition * b_d;
    let n_sym = payload_symbols(layout.repetition, b_d);
    if n_sym > layout.payload_len {
        return Err(invalid("repetition factor does not fit the payload segment"));
    }
    let n_d = layout.payload_len;
    let mut users: Vec<UserState> = activity
        .detected
        .iter()
        .zip(&activity.h_hat)
        .map(|(&nu, &h)| UserState {
            nu,
            pair: layout.sequences(code, nu),
            preamble_bits: index_to_bits(nu, layout.preamble_bits),
            h_hat: h,
            amplitudes: vec![0.0; n_rails],
            x_tilde: vec![Complex64::new(0.0, 0.0); n_d],
            status: UserStatus::Active,
            streak: 0,
            sinr_db: f64::NEG_INFINITY,
            info_bits: None,
        })
        .collect();

    let mut trace = Vec::new();
    let mut pilots: Vec<usize> = Vec::new();
    let mut gram = DMatrix::<Complex64>::zeros(0, 0);
    let mut iterations = 0;
    let mut idle = 0;

    while iterations < cfg.max_iters && users.iter().any(|u| u.status == UserStatus::Active) {
        iterations += 1;
        let mut residual = y_d[..n_sym].to_vec();
        for u in &users {
            for (e, x) in residual.iter_mut().zip(&u.x_tilde) {
                *e -= u.h_hat * x;
            }
        }
        let sigma2_res = variance(&residual).max(SIGMA2_FLOOR);

        let steps: Vec<Option<Step>> = users
            .par_iter()
            .map(|u| {
                (u.status == UserStatus::Active)
                    .then(|| u.step(&residual, sigma2_res, code, layout, cfg, check))
                    .transpose()
            })
            .collect::<Result<_>>()?;

        let mut sigma_sum = 0.0;
        let mut active = 0;
        for (u, step) in users.iter_mut().zip(steps) {
            let Some(step) = step else { continue };
            active += 1;
            sigma_sum += u.h_hat.norm_sqr() * sigma2_res;
            u.sinr_db = step.sinr_db;
            match step.passed {
                Some(bits) => {
                    u.streak += 1;
                    u.info_bits = Some(bits);
                }
                None => {
                    u.streak = 0;
                    u.info_bits = None;
                }
            }
            u.amplitudes = step.amplitudes;
            u.x_tilde = modulate_replicas(&u.amplitudes, &u.pair, n_d);
            if u.streak >= 2 {
                u.status = UserStatus::Decoded;
            }
        }

        let newly: Vec<usize> = (0..users.len())
            .filter(|&i| users[i].status == UserStatus::Decoded && !pilots.contains(&i))
            .collect();
        if !newly.is_empty() {
            let old = pilots.len();
            pilots.extend(newly);
            let cols: Vec<&[Complex64]> = pilots.iter().map(|&i| &users[i].x_tilde[..n_sym]).collect();
            let mut g = DMatrix::zeros(pilots.len(), pilots.len());
            g.view_mut((0, 0), (old, old)).copy_from(&gram);
            for j in old..pilots.len() {
                for i in 0..=j {
                    let v = inner(cols[i], cols[j]);
                    g[(i, j)] = v;
                    g[(j, i)] = v.conj();
                }
            }
            gram = g;
        }
        if !pilots.is_empty() {
            let mut y_c = y_d[..n_sym].to_vec();
            for u in users.iter().filter(|u| u.status != UserStatus::Decoded) {
                for (e, x) in y_c.iter_mut().zip(&u.x_tilde) {
                    *e -= u.h_hat * x;
                }
            }
            let cols: Vec<&[Complex64]> = pilots.iter().map(|&i| &users[i].x_tilde[..n_sym]).collect();
            let h_old: Vec<Complex64> = pilots.iter().map(|&i| users[i].h_hat).collect();
            let before = residual_power(&y_c, &cols, &h_old);
            let (h_new, _) = lmmse_with_gram(&y_c, &cols, &gram, before / n_sym as f64);
            let (accept, _) = nip_gate(&y_c, &cols, &h_new, before);
            if accept {
                for (&i, h) in pilots.iter().zip(h_new) {
                    users[i].h_hat = h;
                }
            }
        }

        trace.push(MudTraceRow {
            iteration: iterations,
            decoded: pilots.len(),
            mean_sigma2: if active > 0 { sigma_sum / active as f64 } else { 0.0 },
        });
        let stalled = trace.len() >= 2 && trace[trace.len() - 2].decoded == pilots.len();
        idle = if stalled && !pilots.is_empty() { idle + 1 } else { 0 };
        if idle >= STALL_ITERS {
            break;
        }
    }

    Ok(MudOutput {
        users: users
            .into_iter()
            .map(|u| MudUser {
                nu: u.nu,
                h_hat: u.h_hat,
                status: if u.status == UserStatus::Decoded { UserStatus::Decoded } else { UserStatus::Failed },
                crc_pass_streak: u.streak,
                sinr_db: u.sinr_db,
                info_bits: if u.status == UserStatus::Decoded { u.info_bits } else { None },
            })
            .collect(),
        iterations,
        trace,
    })
}
