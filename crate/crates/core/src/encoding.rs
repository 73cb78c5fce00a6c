// SPDX-License-Identifier: Apache-2.0

//! Order-preserving integer encoding of bounded-length strings.
//!
//! Every byte in `0x20..=0x7e` maps to the two-digit decimal code
//! `byte - 0x20`; the codes are concatenated and right-padded with `00`
//! up to the column's maximal length. `"AB"` becomes `3334`, or
//! `3334000000` in a five-character column.

use num_bigint::BigUint;
use num_traits::Zero;

use crate::error::{Error, Result};

pub const MIN_BYTE: u8 = 0x20;
pub const MAX_BYTE: u8 = 0x7e;
const RADIX: u32 = 100;

/// Checks that `s` can be encoded for a column of `max_len` bytes.
///
/// A trailing space would encode exactly like padding, so such values are
/// rejected to keep the encoding injective.
pub fn validate(s: &[u8], max_len: usize) -> Result<()> {
    if s.len() > max_len {
        return Err(Error::Length {
            len: s.len(),
            max: max_len,
        });
    }
    if let Some((position, &byte)) = s
        .iter()
        .enumerate()
        .find(|(_, &b)| !(MIN_BYTE..=MAX_BYTE).contains(&b))
    {
        return Err(Error::Alphabet { byte, position });
    }
    if s.last() == Some(&b' ') {
        return Err(Error::TrailingSpace);
    }
    Ok(())
}

pub fn encode(s: &[u8], max_len: usize) -> Result<BigUint> {
    validate(s, max_len)?;
    Ok(encode_unchecked(s, max_len))
}

fn encode_unchecked(s: &[u8], max_len: usize) -> BigUint {
    if max_len == 0 {
        return BigUint::zero();
    }
    let mut digits = vec![0u8; max_len];
    for (d, &b) in digits.iter_mut().zip(s) {
        *d = b - MIN_BYTE;
    }
    BigUint::from_radix_be(&digits, RADIX).expect("digits below radix")
}

/// One past the largest encoding in a column of `max_len` bytes, used as the
/// modulus of rotated comparisons.
pub fn domain_max(max_len: usize) -> BigUint {
    let top = vec![MAX_BYTE; max_len];
    encode_unchecked(&top, max_len) + 1u32
}

/// `(x - anchor) mod modulus` for `x, anchor < modulus`.
pub fn mod_shift(x: &BigUint, anchor: &BigUint, modulus: &BigUint) -> BigUint {
    if x >= anchor {
        x - anchor
    } else {
        modulus - anchor + x
    }
}
