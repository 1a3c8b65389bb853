//! Shortened SEC-DED Hamming code (109, 100).
//!
//! The mother code is a (128, 119) extended Hamming code with nine parity
//! rows whose parity-check columns are all distinct odd-weight 9-bit words:
//! nine unit vectors for the parity positions and, for the information
//! positions, the odd-weight words of weight at least three in increasing
//! numeric order. Shortening fixes the first 19 information positions to zero
//! and deletes them, which leaves information columns 19..119 of that list.
//! Distinct odd-weight columns give minimum distance 4: any single error is
//! corrected and any double error leaves an even-weight, detectable syndrome.
//!
//! Codewords are systematic: `[info (100) ∥ parity (9)]`.

use std::sync::OnceLock;

pub const INFO_LEN: usize = 100;
pub const PARITY_LEN: usize = 9;
pub const CODED_LEN: usize = INFO_LEN + PARITY_LEN;
const MOTHER_INFO_LEN: usize = 119;
const SHORTENED: usize = MOTHER_INFO_LEN - INFO_LEN;

fn info_columns() -> &'static [u16] {
    static COLUMNS: OnceLock<Vec<u16>> = OnceLock::new();
    COLUMNS.get_or_init(|| {
        let all: Vec<u16> = (0u16..512)
            .filter(|c| c.count_ones() % 2 == 1 && c.count_ones() >= 3)
            .take(MOTHER_INFO_LEN)
            .collect();
        all[SHORTENED..].to_vec()
    })
}

fn column(pos: usize) -> u16 {
    if pos < INFO_LEN {
        info_columns()[pos]
    } else {
        1 << (pos - INFO_LEN)
    }
}

fn syndrome(word: &[u8]) -> u16 {
    word.iter()
        .enumerate()
        .filter(|(_, &b)| b == 1)
        .fold(0, |s, (i, _)| s ^ column(i))
}

pub fn encode(info: &[u8]) -> Vec<u8> {
    debug_assert_eq!(info.len(), INFO_LEN);
    let parity = info
        .iter()
        .enumerate()
        .filter(|(_, &b)| b == 1)
        .fold(0u16, |s, (i, _)| s ^ info_columns()[i]);
    let mut out = info.to_vec();
    out.extend((0..PARITY_LEN).map(|r| ((parity >> r) & 1) as u8));
    out
}

/// Hard-decision syndrome decoding. Returns the corrected codeword and
/// whether the syndrome was consistent (zero, or a single correctable error).
pub fn decode_hard(word: &[u8]) -> (Vec<u8>, bool) {
    let mut out = word.to_vec();
    let s = syndrome(word);
    if s == 0 {
        return (out, true);
    }
    if s.count_ones() % 2 == 1 {
        if let Some(pos) = (0..CODED_LEN).find(|&i| column(i) == s) {
            out[pos] ^= 1;
            return (out, true);
        }
    }
    (out, false)
}
