//! Bitwise CRC over GF(2), zero initial register, no reflection.
//!
//! Bits are `u8` values in `{0, 1}`, most significant (first transmitted)
//! first. The appended check bits are the remainder of `m(x)·x^w mod g(x)`.

/// Generator polynomials indexed by check length, including the leading
/// `x^w` term. Length 11 is `x^11 + x^10 + x^9 + x^5 + 1`.
const POLYNOMIALS: &[(usize, u32)] = &[
    (6, 0x61),     // x^6 + x^5 + 1
    (8, 0x107),    // x^8 + x^2 + x + 1
    (11, 0xE21),   // x^11 + x^10 + x^9 + x^5 + 1
    (16, 0x11021), // x^16 + x^12 + x^5 + 1
];

/// Generator polynomial for `crc_len`, or `None` if the length is unsupported.
/// A length of zero is valid and means "no CRC".
pub fn polynomial(crc_len: usize) -> Option<u32> {
    if crc_len == 0 {
        return Some(1);
    }
    POLYNOMIALS
        .iter()
        .find(|(w, _)| *w == crc_len)
        .map(|&(_, p)| p)
}

/// Whether [`crc_append`] accepts this length.
pub fn is_supported(crc_len: usize) -> bool {
    polynomial(crc_len).is_some()
}

fn remainder(bits: &[u8], crc_len: usize) -> u32 {
    if crc_len == 0 {
        return 0;
    }
    let poly = polynomial(crc_len)
        .unwrap_or_else(|| panic!("unsupported CRC length {crc_len}"));
    let mask = (1u32 << crc_len) - 1;
    let low = poly & mask;
    let mut reg = 0u32;
    for &b in bits {
        let feedback = ((reg >> (crc_len - 1)) & 1) ^ u32::from(b & 1);
        reg = (reg << 1) & mask;
        if feedback == 1 {
            reg ^= low;
        }
    }
    reg
}

/// Returns `info_bits ∥ check_bits`.
///
/// Panics if `crc_len` has no registered polynomial; [`is_supported`] tells
/// which lengths are available.
pub fn crc_append(info_bits: &[u8], crc_len: usize) -> Vec<u8> {
    let rem = remainder(info_bits, crc_len);
    let mut out = Vec::with_capacity(info_bits.len() + crc_len);
    out.extend_from_slice(info_bits);
    out.extend((0..crc_len).rev().map(|i| ((rem >> i) & 1) as u8));
    out
}

/// True when `bits` (message followed by its check bits) has a zero syndrome.
pub fn crc_check(bits: &[u8], crc_len: usize) -> bool {
    bits.len() >= crc_len && remainder(bits, crc_len) == 0
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Schoolbook polynomial long division over GF(2) on a bit vector.
    fn long_division(message: &[u8], poly: u32, w: usize) -> Vec<u8> {
        let mut dividend: Vec<u8> = message.to_vec();
        dividend.extend(std::iter::repeat(0).take(w));
        let gen: Vec<u8> = (0..=w).rev().map(|i| ((poly >> i) & 1) as u8).collect();
        for i in 0..message.len() {
            if dividend[i] == 1 {
                for (j, g) in gen.iter().enumerate() {
                    dividend[i + j] ^= g;
                }
            }
        }
        dividend[message.len()..].to_vec()
    }

    #[test]
    fn zero_message_has_zero_check() {
        let out = crc_append(&[0; 100], 11);
        assert_eq!(out.len(), 111);
        assert!(out[100..].iter().all(|&b| b == 0));
    }

    #[test]
    fn single_one_matches_long_division() {
        let mut m = vec![0u8; 100];
        m[0] = 1;
        let out = crc_append(&m, 11);
        assert_eq!(&out[100..], long_division(&m, 0xE21, 11).as_slice());
        assert!(crc_check(&out, 11));
    }

    #[test]
    fn every_single_bit_message_matches_long_division() {
        for w in [6, 8, 11, 16] {
            let poly = polynomial(w).unwrap();
            for pos in 0..40 {
                let mut m = vec![0u8; 40];
                m[pos] = 1;
                let out = crc_append(&m, w);
                assert_eq!(&out[40..], long_division(&m, poly, w).as_slice(), "w={w} pos={pos}");
            }
        }
    }

    #[test]
    fn detects_single_bit_flip() {
        let m: Vec<u8> = (0..100).map(|i| ((i * 7 + 3) % 5 == 0) as u8).collect();
        let good = crc_append(&m, 11);
        for i in 0..good.len() {
            let mut bad = good.clone();
            bad[i] ^= 1;
            assert!(!crc_check(&bad, 11), "flip at {i} undetected");
        }
    }

    #[test]
    fn zero_length_crc_is_identity() {
        let m = [1, 0, 1];
        assert_eq!(crc_append(&m, 0), m.to_vec());
        assert!(crc_check(&m, 0));
        assert!(!is_supported(7));
    }
}
