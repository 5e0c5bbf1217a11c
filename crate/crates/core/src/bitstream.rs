//! MSB-first bit writer and reader.
//!
//! Bits are packed from the most significant bit of each byte downwards, so a
//! code written as the text `"00100"` occupies the top five bits of the first
//! byte. The final byte is zero padded; callers that need to distinguish pad
//! bits from payload keep the exact bit length alongside the bytes.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BitError {
    #[error("value {value} does not fit in {nbits} bits")]
    Range { value: u64, nbits: u32 },
    #[error("bit count {0} exceeds 64")]
    Width(u32),
    #[error("read of {wanted} bits at bit {at} runs past end of {limit}-bit stream")]
    Truncated { at: u64, wanted: u64, limit: u64 },
}

#[derive(Debug, Clone, Default)]
pub struct BitWriter {
    buf: Vec<u8>,
    bits: u64,
}

impl BitWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity_bits(bits: u64) -> Self {
        Self {
            buf: Vec::with_capacity(bits.div_ceil(8) as usize),
            bits: 0,
        }
    }

    /// Number of bits written so far.
    pub fn bit_len(&self) -> u64 {
        self.bits
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.buf
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.buf
    }

    /// Appends the `nbits` low-order bits of `value`, most significant first.
    pub fn write_bits(&mut self, value: u64, nbits: u32) -> Result<(), BitError> {
        if nbits > 64 {
            return Err(BitError::Width(nbits));
        }
        if nbits < 64 && value >> nbits != 0 {
            return Err(BitError::Range { value, nbits });
        }
        self.put(value, nbits);
        Ok(())
    }

    pub fn write_bit(&mut self, bit: bool) {
        self.put(bit as u64, 1);
    }

    /// Appends `n` zero bits.
    pub fn write_zeros(&mut self, mut n: u64) {
        while n > 0 {
            let chunk = n.min(64) as u32;
            self.put(0, chunk);
            n -= chunk as u64;
        }
    }

    /// Appends every bit of `other` (up to its exact bit length).
    pub fn append(&mut self, other: &BitWriter) {
        let mut r = BitReader::with_bit_len(&other.buf, other.bits);
        let mut left = other.bits;
        while left > 0 {
            let n = left.min(64) as u32;
            let v = r.read_bits(n).expect("bounded by source length");
            self.put(v, n);
            left -= n as u64;
        }
    }

    fn put(&mut self, value: u64, mut nbits: u32) {
        while nbits > 0 {
            let used = (self.bits % 8) as u32;
            if used == 0 {
                self.buf.push(0);
            }
            let free = 8 - used;
            let take = free.min(nbits);
            let chunk = ((value >> (nbits - take)) & ((1u64 << take) - 1)) as u8;
            let last = self.buf.last_mut().expect("byte pushed above");
            *last |= chunk << (free - take);
            nbits -= take;
            self.bits += take as u64;
        }
    }
}

/// Reader over a byte slice. Reads are bounded by an explicit bit length so
/// the zero padding of the final byte is never consumed as data.
#[derive(Debug, Clone)]
pub struct BitReader<'a> {
    buf: &'a [u8],
    pos: u64,
    limit: u64,
}

impl<'a> BitReader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self {
            buf,
            pos: 0,
            limit: buf.len() as u64 * 8,
        }
    }

    /// Reader that stops after `bits` bits; `bits` is clamped to the buffer.
    pub fn with_bit_len(buf: &'a [u8], bits: u64) -> Self {
        Self {
            buf,
            pos: 0,
            limit: bits.min(buf.len() as u64 * 8),
        }
    }

    pub fn position(&self) -> u64 {
        self.pos
    }

    pub fn remaining(&self) -> u64 {
        self.limit - self.pos
    }

    pub fn is_at_end(&self) -> bool {
        self.pos == self.limit
    }

    fn check(&self, n: u64) -> Result<(), BitError> {
        if self.pos + n > self.limit {
            Err(BitError::Truncated {
                at: self.pos,
                wanted: n,
                limit: self.limit,
            })
        } else {
            Ok(())
        }
    }

    pub fn read_bit(&mut self) -> Result<bool, BitError> {
        self.check(1)?;
        let byte = self.buf[(self.pos / 8) as usize];
        let bit = (byte >> (7 - (self.pos % 8))) & 1;
        self.pos += 1;
        Ok(bit == 1)
    }

    /// Reads `nbits` bits as an MSB-first integer.
    pub fn read_bits(&mut self, nbits: u32) -> Result<u64, BitError> {
        if nbits > 64 {
            return Err(BitError::Width(nbits));
        }
        self.check(nbits as u64)?;
        let mut out = 0u64;
        let mut left = nbits;
        while left > 0 {
            let byte = self.buf[(self.pos / 8) as usize];
            let used = (self.pos % 8) as u32;
            let avail = 8 - used;
            let take = avail.min(left);
            let chunk = (byte >> (avail - take)) & (((1u16 << take) - 1) as u8);
            out = (out << take) | chunk as u64;
            left -= take;
            self.pos += take as u64;
        }
        Ok(out)
    }

    /// Consumes zero bits up to and including the next `1`, returning the
    /// number of zeros seen. Fails if the stream ends first or more than
    /// `max` zeros are seen.
    pub fn read_unary_zeros(&mut self, max: u32) -> Result<u32, BitError> {
        let mut zeros = 0u32;
        loop {
            // fast path: skip whole zero bytes when aligned
            if self.pos % 8 == 0 && self.pos + 8 <= self.limit && zeros + 8 <= max {
                let byte = self.buf[(self.pos / 8) as usize];
                if byte == 0 {
                    zeros += 8;
                    self.pos += 8;
                    continue;
                }
            }
            if self.read_bit()? {
                return Ok(zeros);
            }
            zeros += 1;
            if zeros > max {
                return Err(BitError::Truncated {
                    at: self.pos,
                    wanted: 1,
                    limit: self.limit,
                });
            }
        }
    }
}

/// Renders the first `nbits` bits of `bytes` as a `'0'`/`'1'` string.
pub fn to_bit_string(bytes: &[u8], nbits: u64) -> String {
    let mut r = BitReader::with_bit_len(bytes, nbits);
    let mut s = String::with_capacity(nbits as usize);
    while let Ok(b) = r.read_bit() {
        s.push(if b { '1' } else { '0' });
    }
    s
}

/// Packs a `'0'`/`'1'` string into bytes. Returns `None` on any other character.
pub fn from_bit_string(s: &str) -> Option<(Vec<u8>, u64)> {
    let mut w = BitWriter::new();
    for c in s.chars() {
        match c {
            '0' => w.write_bit(false),
            '1' => w.write_bit(true),
            _ => return None,
        }
    }
    let n = w.bit_len();
    Some((w.into_bytes(), n))
}
