//! Exponential-Golomb and sparse-exponential-Golomb codes.
//!
//! The order-`k` exponential-Golomb code of `x` is the 0-order code of
//! `x >> k` followed by the low `k` bits of `x`. The 0-order code of `v` is
//! `bin(v + 1)` preceded by one zero per bit after its leading one.
//!
//! The sparse variant reserves the single-bit codeword `1` for zero. Every
//! non-zero `x` is written as `0` followed by the order-`k` code of `x - 1`.
//! At `k = 0` the sparse code is identical to the plain code, since the plain
//! 0-order code already spends one bit on zero.

use super::CodecError;
use crate::bitstream::{from_bit_string, to_bit_string, BitReader, BitWriter};

/// Largest order accepted by the coders.
pub const MAX_ORDER: u32 = 32;

fn bit_width(v: u128) -> u32 {
    128 - v.leading_zeros()
}

/// Length in bits of the order-`k` exponential-Golomb code of `x`.
#[inline]
pub fn eg_len(x: u64, k: u32) -> u32 {
    let q = (x >> k) as u128 + 1;
    2 * bit_width(q) - 1 + k
}

/// Length in bits of the sparse-exponential-Golomb code of `x`.
#[inline]
pub fn seg_len(x: u64, k: u32) -> u32 {
    if k == 0 {
        eg_len(x, 0)
    } else if x == 0 {
        1
    } else {
        1 + eg_len(x - 1, k)
    }
}

fn write_eg0(w: &mut BitWriter, v: u64) {
    let v1 = v as u128 + 1;
    let width = bit_width(v1);
    w.write_zeros((width - 1) as u64);
    if width > 64 {
        w.write_bit(true);
        w.write_bits(v1 as u64, 64).expect("64-bit write");
    } else {
        w.write_bits(v1 as u64, width).expect("width matches value");
    }
}

fn read_eg0(r: &mut BitReader<'_>) -> Result<u64, CodecError> {
    let zeros = r.read_unary_zeros(64)?;
    // leading one already consumed
    let tail = r.read_bits(zeros)? as u128;
    let v1 = (1u128 << zeros) | tail;
    u64::try_from(v1 - 1).map_err(|_| CodecError::Corrupt("exp-Golomb value exceeds 64 bits".into()))
}

pub fn write_eg(w: &mut BitWriter, x: u64, k: u32) {
    debug_assert!(k <= MAX_ORDER);
    write_eg0(w, x >> k);
    if k > 0 {
        let rem = x & ((1u64 << k) - 1);
        w.write_bits(rem, k).expect("remainder fits in k bits");
    }
}

pub fn read_eg(r: &mut BitReader<'_>, k: u32) -> Result<u64, CodecError> {
    let q = read_eg0(r)?;
    if k == 0 {
        return Ok(q);
    }
    let rem = r.read_bits(k)?;
    q.checked_mul(1u64 << k)
        .and_then(|v| v.checked_add(rem))
        .ok_or_else(|| CodecError::Corrupt("exp-Golomb value exceeds 64 bits".into()))
}

pub fn write_seg(w: &mut BitWriter, x: u64, k: u32) {
    if k == 0 {
        write_eg(w, x, 0);
    } else if x == 0 {
        w.write_bit(true);
    } else {
        w.write_bit(false);
        write_eg(w, x - 1, k);
    }
}

pub fn read_seg(r: &mut BitReader<'_>, k: u32) -> Result<u64, CodecError> {
    if k == 0 {
        return read_eg(r, 0);
    }
    if r.read_bit()? {
        Ok(0)
    } else {
        read_eg(r, k)?
            .checked_add(1)
            .ok_or_else(|| CodecError::Corrupt("sparse exp-Golomb value exceeds 64 bits".into()))
    }
}

fn check_order(k: u32) -> Result<(), CodecError> {
    if k > MAX_ORDER {
        Err(CodecError::Config(format!("order k={k} exceeds {MAX_ORDER}")))
    } else {
        Ok(())
    }
}

fn to_string(w: BitWriter) -> String {
    let n = w.bit_len();
    to_bit_string(w.as_bytes(), n)
}

fn decode_str(
    bits: &str,
    k: u32,
    read: fn(&mut BitReader<'_>, u32) -> Result<u64, CodecError>,
) -> Result<(u64, usize), CodecError> {
    check_order(k)?;
    let (bytes, n) =
        from_bit_string(bits).ok_or_else(|| CodecError::Corrupt("not a bit string".into()))?;
    let mut r = BitReader::with_bit_len(&bytes, n);
    let x = read(&mut r, k)?;
    Ok((x, r.position() as usize))
}

/// Codeword of `x` under order-`k` exponential-Golomb, as a `'0'`/`'1'` string.
pub fn eg_encode(x: u64, k: u32) -> Result<String, CodecError> {
    check_order(k)?;
    let mut w = BitWriter::new();
    write_eg(&mut w, x, k);
    Ok(to_string(w))
}

/// Decodes one codeword from the front of `bits`, returning the value and the
/// number of bits it occupied.
pub fn eg_decode(bits: &str, k: u32) -> Result<(u64, usize), CodecError> {
    decode_str(bits, k, read_eg)
}

pub fn seg_encode(x: u64, k: u32) -> Result<String, CodecError> {
    check_order(k)?;
    let mut w = BitWriter::new();
    write_seg(&mut w, x, k);
    Ok(to_string(w))
}

pub fn seg_decode(bits: &str, k: u32) -> Result<(u64, usize), CodecError> {
    decode_str(bits, k, read_seg)
}
