//! Transmitter: preamble selection from the compressed-sensing dictionary and
//! payload repetition, permutation, QPSK mapping and scrambling.

use std::f64::consts::{FRAC_1_SQRT_2, TAU};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::fec::{self, CodeSpec};
use crate::{inner, Complex64};

/// Largest preamble bit count for which a dense dictionary is built.
pub const MAX_PREAMBLE_BITS: usize = 24;

/// Dense `N_p × 2^{B_p}` dictionary with unit-norm columns, stored column-major.
#[derive(Debug, Clone)]
pub struct SensingMatrix {
    rows: usize,
    preamble_bits: usize,
    seed: u64,
    data: Vec<Complex64>,
}

impl SensingMatrix {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        1 << self.preamble_bits
    }

    pub fn preamble_bits(&self) -> usize {
        self.preamble_bits
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn column(&self, j: usize) -> &[Complex64] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    /// `A^H z`, one correlation per column.
    pub fn adjoint_apply(&self, z: &[Complex64]) -> Vec<Complex64> {
        debug_assert_eq!(z.len(), self.rows);
        self.data.par_chunks(self.rows).map(|col| inner(col, z)).collect()
    }

    /// `A x` for a sparse `x` given as `(column, value)` pairs.
    pub fn apply_sparse(&self, entries: &[(usize, Complex64)]) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); self.rows];
        for &(j, v) in entries {
            for (o, a) in out.iter_mut().zip(self.column(j)) {
                *o += a * v;
            }
        }
        out
    }
}

/// Draws i.i.d. circular complex Gaussian entries and normalizes every column.
pub fn build_sensing_matrix(seed: u64, rows: usize, preamble_bits: usize) -> Result<SensingMatrix> {
    if rows == 0 {
        return Err(invalid("preamble length must be at least 1"));
    }
    if preamble_bits > MAX_PREAMBLE_BITS {
        return Err(Error::ResourceLimit(format!(
            "B_p = {preamble_bits} exceeds the dense dictionary limit of {MAX_PREAMBLE_BITS}"
        )));
    }
    let cols = 1usize << preamble_bits;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..cols {
        let start = data.len();
        for _ in 0..rows {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            data.push(Complex64::new(re, im));
        }
        let col = &mut data[start..];
        let norm = col.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        col.iter_mut().for_each(|z| *z /= norm);
    }
    Ok(SensingMatrix { rows, preamble_bits, seed, data })
}

/// Binary-to-decimal conversion, most significant bit first.
pub fn bits_to_index(bits: &[u8]) -> usize {
    bits.iter().fold(0, |acc, &b| (acc << 1) | usize::from(b & 1))
}

/// Inverse of [`bits_to_index`] for a fixed width.
pub fn index_to_bits(index: usize, width: usize) -> Vec<u8> {
    (0..width).rev().map(|i| ((index >> i) & 1) as u8).collect()
}

/// Maps preamble bits to their dictionary column index and sequence.
pub fn map_preamble<'a>(v_p: &[u8], a: &'a SensingMatrix) -> (usize, &'a [Complex64]) {
    let nu = bits_to_index(v_p);
    (nu, a.column(nu))
}

/// Payload permutation and scrambling sequence tied to one preamble index.
#[derive(Debug, Clone, PartialEq)]
pub struct SequencePair {
    /// Output position `q` carries replica `permutation[q]`.
    pub permutation: Vec<usize>,
    pub scrambler: Vec<Complex64>,
    inverse: Vec<usize>,
}

impl SequencePair {
    /// Position at which replica `i` is transmitted.
    pub fn inverse(&self) -> &[usize] {
        &self.inverse
    }
}

/// Keyed generator for the sequence pool; `(global_seed, nu)` fully determines the stream.
fn sequence_rng(global_seed: u64, nu: usize) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(b"ura-seq\0");
    key[8..16].copy_from_slice(&global_seed.to_le_bytes());
    key[16..24].copy_from_slice(&(nu as u64).to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

pub fn derive_sequences(global_seed: u64, nu: usize, m: usize, b_d: usize, n_d: usize) -> SequencePair {
    let mut rng = sequence_rng(global_seed, nu);
    let mut permutation: Vec<usize> = (0..m * b_d).collect();
    permutation.shuffle(&mut rng);
    let scrambler = (0..n_d)
        .map(|_| Complex64::from_polar(1.0, rng.gen_range(0.0..TAU)))
        .collect();
    let mut inverse = vec![0; permutation.len()];
    for (q, &i) in permutation.iter().enumerate() {
        inverse[i] = q;
    }
    SequencePair { permutation, scrambler, inverse }
}

/// Number of QPSK symbols carrying data for `b_d` bits repeated `m` times.
pub fn payload_symbols(m: usize, b_d: usize) -> usize {
    (m * b_d).div_ceil(2)
}

/// Gray-mapped QPSK: `(b0, b1) → ((1 − 2 b0) + j (1 − 2 b1)) / √2`.
pub fn qpsk(b0: u8, b1: u8) -> Complex64 {
    Complex64::new(1.0 - 2.0 * f64::from(b0), 1.0 - 2.0 * f64::from(b1)) * FRAC_1_SQRT_2
}

/// Modulates per-replica rail amplitudes (replica `j·M + m` of bit `j`):
/// permute, pair into QPSK symbols, scramble, zero-pad to `n_d`. Amplitude
/// `±1` reproduces the hard constellation; values in between give soft symbols.
pub fn modulate_replicas(amplitudes: &[f64], pair: &SequencePair, n_d: usize) -> Vec<Complex64> {
    let total = amplitudes.len();
    debug_assert_eq!(total, pair.permutation.len());
    let mut out = vec![Complex64::new(0.0, 0.0); n_d];
    for (p, sym) in out.iter_mut().enumerate().take(total.div_ceil(2)) {
        let re = amplitudes[pair.permutation[2 * p]];
        // An odd replica count leaves the last quadrature rail carrying bit 0.
        let im = pair.permutation.get(2 * p + 1).map_or(1.0, |&i| amplitudes[i]);
        *sym = Complex64::new(re, im) * FRAC_1_SQRT_2 * pair.scrambler[p];
    }
    out
}

pub fn encode_payload(v_d: &[u8], m: usize, pair: &SequencePair, n_d: usize) -> Result<Vec<Complex64>> {
    if v_d.len() * m != pair.permutation.len() {
        return Err(invalid(format!(
            "payload of {} bits × {m} replicas does not match permutation length {}",
            v_d.len(),
            pair.permutation.len()
        )));
    }
    if payload_symbols(m, v_d.len()) > n_d || pair.scrambler.len() != n_d {
        return Err(invalid(format!("{} replicas do not fit {n_d} payload symbols", m * v_d.len())));
    }
    let amplitudes: Vec<f64> = v_d
        .iter()
        .flat_map(|&b| std::iter::repeat(1.0 - 2.0 * f64::from(b)).take(m))
        .collect();
    Ok(modulate_replicas(&amplitudes, pair, n_d))
}

/// Frame layout shared by every user of a configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameLayout {
    pub preamble_bits: usize,
    pub repetition: usize,
    pub payload_len: usize,
    pub sequence_seed: u64,
}

impl FrameLayout {
    pub fn payload_bits(&self, code: &CodeSpec) -> usize {
        code.coded_len - self.preamble_bits
    }

    pub fn sequences(&self, code: &CodeSpec, nu: usize) -> SequencePair {
        derive_sequences(self.sequence_seed, nu, self.repetition, self.payload_bits(code), self.payload_len)
    }
}

/// One active user's transmission for a slot. The preamble itself is column
/// `preamble_index` of the dictionary.
#[derive(Debug, Clone)]
pub struct UserPacket {
    pub user_id: u64,
    pub info_bits: Vec<u8>,
    pub codeword_bits: Vec<u8>,
    pub preamble_index: usize,
    pub payload: Vec<Complex64>,
}

impl UserPacket {
    pub fn preamble_bits<'a>(&'a self, layout: &FrameLayout) -> &'a [u8] {
        &self.codeword_bits[..layout.preamble_bits]
    }

    pub fn payload_bits<'a>(&'a self, layout: &FrameLayout) -> &'a [u8] {
        &self.codeword_bits[layout.preamble_bits..]
    }
}

pub fn build_packet(user_id: u64, info_bits: &[u8], code: &CodeSpec, layout: &FrameLayout) -> Result<UserPacket> {
    if layout.preamble_bits >= code.coded_len {
        return Err(invalid("preamble bits must leave room for a payload"));
    }
    let cw = fec::encode(code, info_bits)?;
    let preamble_index = bits_to_index(&cw.bits[..layout.preamble_bits]);
    let pair = layout.sequences(code, preamble_index);
    let payload = encode_payload(&cw.bits[layout.preamble_bits..], layout.repetition, &pair, layout.payload_len)?;
    Ok(UserPacket {
        user_id,
        info_bits: cw.info_bits,
        codeword_bits: cw.bits,
        preamble_index,
        payload,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, proptest, ProptestConfig};

    const C1: Complex64 = Complex64::new(FRAC_1_SQRT_2, FRAC_1_SQRT_2);

    #[test]
    fn matrix_is_deterministic_and_unit_norm() {
        let a = build_sensing_matrix(7, 64, 6).unwrap();
        let b = build_sensing_matrix(7, 64, 6).unwrap();
        assert_eq!(a.data, b.data);
        assert_eq!((a.rows(), a.cols()), (64, 64));
        for j in 0..a.cols() {
            let n: f64 = a.column(j).iter().map(|z| z.norm_sqr()).sum();
            assert!((n.sqrt() - 1.0).abs() < 1e-9);
        }
        assert_ne!(build_sensing_matrix(8, 64, 6).unwrap().data, a.data);
    }

    #[test]
    fn oversized_dictionary_is_refused() {
        assert!(matches!(build_sensing_matrix(0, 10, 25), Err(Error::ResourceLimit(_))));
        assert!(build_sensing_matrix(0, 0, 4).is_err());
    }

    #[test]
    fn preamble_index_conversion() {
        let a = build_sensing_matrix(1, 4, 15).unwrap();
        assert_eq!(map_preamble(&[0; 15], &a).0, 0);
        let mut one = [0u8; 15];
        one[14] = 1;
        assert_eq!(map_preamble(&one, &a).0, 1);
        let (nu, col) = map_preamble(&[1; 15], &a);
        assert_eq!(nu, 32767);
        assert_eq!(col, a.column(32767));
        assert_eq!(index_to_bits(5, 4), vec![0, 1, 0, 1]);
    }

    #[test]
    fn sequences_are_deterministic_bijective_unit_modulus() {
        let p = derive_sequences(11, 123, 22, 496, 5500);
        assert_eq!(p, derive_sequences(11, 123, 22, 496, 5500));
        let mut sorted = p.permutation.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..22 * 496).collect::<Vec<_>>());
        assert!(p.scrambler.iter().all(|s| (s.norm() - 1.0).abs() < 1e-12));
    }

    #[test]
    fn distinct_indices_give_distinct_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let a = rng.gen_range(0..32768usize);
            let mut b = rng.gen_range(0..32768usize);
            if b == a {
                b = (a + 1) % 32768;
            }
            let pa = derive_sequences(5, a, 2, 8, 16);
            let pb = derive_sequences(5, b, 2, 8, 16);
            assert!(pa.permutation != pb.permutation || pa.scrambler != pb.scrambler);
        }
    }

    #[test]
    fn two_zero_bits_identity_sequences() {
        let pair = SequencePair {
            permutation: vec![0, 1, 2, 3],
            scrambler: vec![Complex64::new(1.0, 0.0); 5],
            inverse: vec![0, 1, 2, 3],
        };
        let x = encode_payload(&[0, 0], 2, &pair, 5).unwrap();
        assert!((x[0] - C1).norm() < 1e-15 && (x[1] - C1).norm() < 1e-15);
        assert!(x[2..].iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn system_a_payload_padding() {
        let pair = derive_sequences(1, 9, 22, 496, 5500);
        let x = encode_payload(&[0; 496], 22, &pair, 5500).unwrap();
        assert_eq!(payload_symbols(22, 496), 5456);
        assert_eq!(x.iter().filter(|z| z.norm() == 0.0).count(), 44);
        for (p, z) in x.iter().take(5456).enumerate() {
            assert!((z - C1 * pair.scrambler[p]).norm() < 1e-12);
        }
    }

    #[test]
    fn payload_length_errors() {
        let pair = derive_sequences(1, 0, 3, 4, 6);
        assert!(encode_payload(&[0; 5], 3, &pair, 6).is_err());
        let pair = derive_sequences(1, 0, 3, 4, 5);
        assert!(encode_payload(&[0; 4], 3, &pair, 5).is_err());
    }

    #[test]
    fn colliding_users_share_everything() {
        let code = CodeSpec::hamming_109_100();
        let layout = FrameLayout { preamble_bits: 15, repetition: 117, payload_len: 5500, sequence_seed: 4 };
        let mut a = vec![0u8; 100];
        let mut b = vec![0u8; 100];
        a[3] = 1;
        b[3] = 1;
        b[50] = 1;
        let pa = build_packet(1, &a, &code, &layout).unwrap();
        let pb = build_packet(2, &b, &code, &layout).unwrap();
        assert_eq!(pa.preamble_index, pb.preamble_index);
        assert_eq!(layout.sequences(&code, pa.preamble_index), layout.sequences(&code, pb.preamble_index));
        assert_ne!(pa.payload, pb.payload);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn descramble_unpermute_recovers_replicas(
            bits in proptest::collection::vec(0u8..2, 1..40),
            m in 1usize..6,
            nu in 0usize..4096,
        ) {
            let b_d = bits.len();
            let n_d = payload_symbols(m, b_d) + 3;
            let pair = derive_sequences(99, nu, m, b_d, n_d);
            let x = encode_payload(&bits, m, &pair, n_d).unwrap();
            let energy: f64 = x.iter().map(|z| z.norm_sqr()).sum();
            prop_assert!((energy - payload_symbols(m, b_d) as f64).abs() < 1e-9);
            let rails: Vec<f64> = x.iter().zip(&pair.scrambler)
                .flat_map(|(z, s)| { let d = z * s.conj(); [d.re, d.im] })
                .collect();
            for j in 0..b_d {
                for r in 0..m {
                    let q = pair.inverse()[j * m + r];
                    let expect = (1.0 - 2.0 * f64::from(bits[j])) * FRAC_1_SQRT_2;
                    prop_assert!((rails[q] - expect).abs() < 1e-12);
                }
            }
        }
    }
}
