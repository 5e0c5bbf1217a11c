//! Zero-value compression: a one-bit-per-element occupancy mask for the whole
//! tensor, followed by the non-zero values in order at a fixed `q` bits each.

use super::CodecError;
use crate::bitstream::{BitReader, BitWriter};

pub fn encoded_bits(n: u64, nnz: u64, q: u32) -> u64 {
    n + q as u64 * nnz
}

pub fn encode(values: &[u32], q: u32) -> Result<BitWriter, CodecError> {
    let nnz = values.iter().filter(|&&v| v != 0).count() as u64;
    let mut w = BitWriter::with_capacity_bits(encoded_bits(values.len() as u64, nnz, q));
    for &v in values {
        w.write_bit(v != 0);
    }
    for &v in values.iter().filter(|&&v| v != 0) {
        w.write_bits(v as u64, q).map_err(|_| CodecError::SymbolRange { value: v, q })?;
    }
    Ok(w)
}

pub fn decode(payload: &[u8], payload_bits: u64, n: u64, q: u32) -> Result<Vec<u32>, CodecError> {
    if payload_bits < n {
        return Err(CodecError::Corrupt(format!(
            "zvc payload of {payload_bits} bits cannot hold a {n}-bit mask"
        )));
    }
    let mut r = BitReader::with_bit_len(payload, payload_bits);
    let mut mask = Vec::with_capacity(n as usize);
    for _ in 0..n {
        mask.push(r.read_bit()?);
    }
    let nnz = mask.iter().filter(|&&b| b).count() as u64;
    if encoded_bits(n, nnz, q) != payload_bits {
        return Err(CodecError::Corrupt(format!(
            "zvc mask has {nnz} set bits but payload length is {payload_bits} bits"
        )));
    }
    let mut out = Vec::with_capacity(n as usize);
    for set in mask {
        if set {
            let v = r.read_bits(q)? as u32;
            if v == 0 {
                return Err(CodecError::Corrupt("zvc stores an explicit zero".into()));
            }
            out.push(v);
        } else {
            out.push(0);
        }
    }
    Ok(out)
}
