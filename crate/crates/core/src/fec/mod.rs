//! Forward error correction: shortened Hamming (109, 100) and CRC-aided polar
//! codes with successive cancellation list decoding.
//!
//! LLRs follow `llr = ln P(bit = 0) / P(bit = 1)`.

pub mod crc;
pub mod hamming;
pub mod polar;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

pub use crc::{crc_append, crc_check};

/// LLR magnitude assigned to bits the receiver already knows.
pub const KNOWN_LLR: f64 = 1.0e4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CodeKind {
    Hamming109_100,
    PolarCrc,
}

/// Code parameters. Construct through [`CodeSpec::hamming_109_100`],
/// [`CodeSpec::polar_crc`] or [`CodeSpec::polar_with_frozen`].
#[derive(Debug, Clone, PartialEq)]
pub struct CodeSpec {
    pub kind: CodeKind,
    pub info_len: usize,
    pub coded_len: usize,
    pub crc_len: usize,
    pub list_size: usize,
    /// Sorted frozen positions of the mother code (polar only).
    pub frozen_set: Vec<usize>,
    mother_len: usize,
    info_positions: Vec<usize>,
    frozen_mask: Vec<bool>,
}

impl CodeSpec {
    pub fn hamming_109_100() -> Self {
        Self {
            kind: CodeKind::Hamming109_100,
            info_len: hamming::INFO_LEN,
            coded_len: hamming::CODED_LEN,
            crc_len: 0,
            list_size: 1,
            frozen_set: Vec::new(),
            mother_len: hamming::CODED_LEN,
            info_positions: Vec::new(),
            frozen_mask: Vec::new(),
        }
    }

    /// CRC-aided polar code of length `coded_len`, shortened from the next
    /// power of two by fixing the trailing positions to zero. The frozen set
    /// comes from Gaussian-approximation ordering at `design_snr_db`.
    pub fn polar_crc(
        info_len: usize,
        crc_len: usize,
        coded_len: usize,
        list_size: usize,
        design_snr_db: f64,
    ) -> Result<Self> {
        let mother_len = coded_len.next_power_of_two();
        let shortened = mother_len - coded_len;
        if info_len + crc_len + shortened > mother_len || info_len + crc_len > coded_len {
            return Err(invalid(format!(
                "polar ({coded_len},{info_len}) with CRC {crc_len} does not fit"
            )));
        }
        let frozen = polar::frozen_set(mother_len, info_len + crc_len, shortened, design_snr_db);
        Self::polar_inner(mother_len, coded_len, frozen, crc_len, list_size)
    }

    /// Unshortened polar code with an explicit frozen set.
    pub fn polar_with_frozen(
        mother_len: usize,
        frozen: Vec<usize>,
        crc_len: usize,
        list_size: usize,
    ) -> Result<Self> {
        if !mother_len.is_power_of_two() {
            return Err(invalid(format!("mother length {mother_len} is not a power of two")));
        }
        Self::polar_inner(mother_len, mother_len, frozen, crc_len, list_size)
    }

    fn polar_inner(
        mother_len: usize,
        coded_len: usize,
        mut frozen: Vec<usize>,
        crc_len: usize,
        list_size: usize,
    ) -> Result<Self> {
        if list_size == 0 {
            return Err(invalid("list size must be positive"));
        }
        if !crc::is_supported(crc_len) {
            return Err(invalid(format!("no CRC polynomial for length {crc_len}")));
        }
        frozen.sort_unstable();
        frozen.dedup();
        if frozen.iter().any(|&i| i >= mother_len) {
            return Err(invalid("frozen index outside the mother code"));
        }
        let mut frozen_mask = vec![false; mother_len];
        for &i in &frozen {
            frozen_mask[i] = true;
        }
        // Shortened tail positions must be frozen so the punctured bits are zero.
        if (coded_len..mother_len).any(|i| !frozen_mask[i]) {
            return Err(invalid("shortened positions must be frozen"));
        }
        let info_positions: Vec<usize> = (0..mother_len).filter(|&i| !frozen_mask[i]).collect();
        if info_positions.len() < crc_len {
            return Err(invalid("fewer unfrozen positions than CRC bits"));
        }
        Ok(Self {
            kind: CodeKind::PolarCrc,
            info_len: info_positions.len() - crc_len,
            coded_len,
            crc_len,
            list_size,
            frozen_set: frozen,
            mother_len,
            info_positions,
            frozen_mask,
        })
    }

    pub fn mother_len(&self) -> usize {
        self.mother_len
    }

    pub fn with_list_size(mut self, list_size: usize) -> Self {
        self.list_size = list_size.max(1);
        self
    }
}

/// A codeword and the information bits it carries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Codeword {
    pub bits: Vec<u8>,
    pub info_bits: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeOutcome {
    pub info_bits: Vec<u8>,
    /// Re-encoded codeword of the chosen candidate.
    pub codeword: Vec<u8>,
    /// CRC passed (polar) or syndrome consistent (Hamming).
    pub crc_ok: bool,
}

pub fn encode(spec: &CodeSpec, info_bits: &[u8]) -> Result<Codeword> {
    if info_bits.len() != spec.info_len {
        return Err(invalid(format!(
            "expected {} information bits, got {}",
            spec.info_len,
            info_bits.len()
        )));
    }
    let bits = match spec.kind {
        CodeKind::Hamming109_100 => hamming::encode(info_bits),
        CodeKind::PolarCrc => {
            let data = crc_append(info_bits, spec.crc_len);
            let mut x = polar::encode(spec.mother_len, &spec.info_positions, &data);
            x.truncate(spec.coded_len);
            x
        }
    };
    Ok(Codeword { bits, info_bits: info_bits.to_vec() })
}

/// Decodes `llrs` (length `coded_len`). `known_prefix` pins the first coded
/// bits to values the receiver already has, e.g. preamble bits recovered by
/// activity detection.
pub fn decode(spec: &CodeSpec, llrs: &[f64], known_prefix: Option<&[u8]>) -> Result<DecodeOutcome> {
    if llrs.len() != spec.coded_len {
        return Err(invalid(format!("expected {} LLRs, got {}", spec.coded_len, llrs.len())));
    }
    let prefix = known_prefix.unwrap_or(&[]);
    if prefix.len() > spec.coded_len {
        return Err(invalid("known prefix longer than the codeword"));
    }
    match spec.kind {
        CodeKind::Hamming109_100 => {
            let mut hard: Vec<u8> = llrs.iter().map(|&l| u8::from(l < 0.0)).collect();
            hard[..prefix.len()].copy_from_slice(prefix);
            let (codeword, ok) = hamming::decode_hard(&hard);
            let info_bits = codeword[..hamming::INFO_LEN].to_vec();
            Ok(DecodeOutcome { info_bits, codeword, crc_ok: ok })
        }
        CodeKind::PolarCrc => {
            let mut channel = vec![KNOWN_LLR; spec.mother_len];
            channel[..spec.coded_len].copy_from_slice(llrs);
            for (c, &b) in channel.iter_mut().zip(prefix) {
                *c = if b == 0 { KNOWN_LLR } else { -KNOWN_LLR };
            }
            let candidates = polar::scl_decode(&channel, &spec.frozen_mask, spec.list_size);
            let unpack = |u: &[u8]| -> Vec<u8> { spec.info_positions.iter().map(|&i| u[i]).collect() };
            let chosen = candidates
                .iter()
                .map(|c| unpack(&c.u))
                .enumerate()
                .find(|(_, data)| crc_check(data, spec.crc_len));
            let (data, crc_ok) = match chosen {
                Some((_, data)) => (data, true),
                None => (unpack(&candidates[0].u), false),
            };
            let info_bits = data[..spec.info_len].to_vec();
            let mut codeword = polar::encode(spec.mother_len, &spec.info_positions, &data);
            codeword.truncate(spec.coded_len);
            Ok(DecodeOutcome { info_bits, codeword, crc_ok })
        }
    }
}
