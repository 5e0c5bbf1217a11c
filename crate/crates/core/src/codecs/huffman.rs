//! Canonical Huffman coding with a per-tensor codebook.
//!
//! The table covers every symbol observed when it was built plus one reserved
//! escape symbol (`1 << q`). Values missing from the table are written as the
//! escape codeword followed by the raw `q`-bit value, so a table built on one
//! sample can encode any other.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};

use super::CodecError;
use crate::bitstream::{BitReader, BitWriter};

/// Longest codeword the builder emits. Deeper trees are flattened by
/// rescaling counts and rebuilding.
pub const MAX_CODE_LEN: u8 = 32;

/// Ordering rule tag stored in the side band: codes assigned in order of
/// (length, symbol).
const CANONICAL_LEN_THEN_SYMBOL: u8 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HuffmanTable {
    q: u32,
    /// (symbol, code length) in canonical order.
    entries: Vec<(u32, u8)>,
    codes: Vec<u32>,
    /// Code length by symbol, 0 when absent.
    lens: Vec<u8>,
    // decode tables indexed by code length
    first_code: Vec<u64>,
    count: Vec<u32>,
    offset: Vec<u32>,
}

/// Code lengths for the given (symbol, weight) pairs via the usual
/// two-smallest merge. Ties are resolved by creation order, so the result is
/// deterministic.
fn code_lengths(weights: &[(u32, u64)]) -> Vec<u8> {
    let n = weights.len();
    if n == 1 {
        return vec![1];
    }
    // nodes 0..n are leaves, the rest internal
    let mut parent = vec![usize::MAX; 2 * n - 1];
    let mut heap = BinaryHeap::with_capacity(n);
    for (i, &(_, w)) in weights.iter().enumerate() {
        heap.push(Reverse((w, i)));
    }
    let mut next = n;
    while heap.len() > 1 {
        let Reverse((wa, a)) = heap.pop().expect("len > 1");
        let Reverse((wb, b)) = heap.pop().expect("len > 1");
        parent[a] = next;
        parent[b] = next;
        heap.push(Reverse((wa.saturating_add(wb), next)));
        next += 1;
    }
    let root = next - 1;
    let mut depth = vec![0u32; 2 * n - 1];
    // parents always have larger ids than children
    for node in (0..root).rev() {
        depth[node] = depth[parent[node]] + 1;
    }
    depth[..n].iter().map(|&d| d.min(255) as u8).collect()
}

impl HuffmanTable {
    /// Builds a table from a symbol histogram. Symbols must be `< 2^q`.
    pub fn build(histogram: &BTreeMap<u32, u64>, q: u32) -> Result<Self, CodecError> {
        let escape = 1u32 << q;
        let mut weights: Vec<(u32, u64)> = Vec::with_capacity(histogram.len() + 1);
        for (&sym, &count) in histogram {
            if sym >= escape {
                return Err(CodecError::SymbolRange { value: sym, q });
            }
            if count > 0 {
                weights.push((sym, count));
            }
        }
        weights.push((escape, 1));

        let mut lens = code_lengths(&weights);
        while lens.iter().any(|&l| l > MAX_CODE_LEN) {
            for w in &mut weights {
                w.1 = (w.1 >> 1).max(1);
            }
            lens = code_lengths(&weights);
        }
        let entries = weights.iter().map(|w| w.0).zip(lens).collect();
        Self::from_entries(q, entries)
    }

    fn from_entries(q: u32, mut entries: Vec<(u32, u8)>) -> Result<Self, CodecError> {
        let escape = 1u32 << q;
        if entries.is_empty() {
            return Err(CodecError::Table("empty code table".into()));
        }
        entries.sort_by_key(|&(s, l)| (l, s));
        let mut kraft: u64 = 0;
        let mut seen = vec![false; escape as usize + 1];
        for &(s, l) in &entries {
            if l == 0 || l > MAX_CODE_LEN {
                return Err(CodecError::Table(format!("code length {l} out of range")));
            }
            if s > escape {
                return Err(CodecError::Table(format!("symbol {s} outside {q}-bit alphabet")));
            }
            if std::mem::replace(&mut seen[s as usize], true) {
                return Err(CodecError::Table(format!("symbol {s} listed twice")));
            }
            kraft += 1u64 << (MAX_CODE_LEN - l);
        }
        if kraft > 1u64 << MAX_CODE_LEN {
            return Err(CodecError::Table("code lengths violate the Kraft inequality".into()));
        }
        if !seen[escape as usize] {
            return Err(CodecError::Table("escape symbol missing".into()));
        }

        let max_len = entries.last().map(|e| e.1).unwrap_or(0) as usize;
        let mut codes = vec![0u32; escape as usize + 1];
        let mut lens = vec![0u8; escape as usize + 1];
        let mut first_code = vec![0u64; max_len + 1];
        let mut count = vec![0u32; max_len + 1];
        let mut offset = vec![0u32; max_len + 1];
        let mut code: u64 = 0;
        let mut prev_len = entries[0].1;
        first_code[prev_len as usize] = 0;
        for (i, &(s, l)) in entries.iter().enumerate() {
            if l != prev_len {
                code <<= l - prev_len;
                prev_len = l;
                first_code[l as usize] = code;
                offset[l as usize] = i as u32;
            } else if count[l as usize] == 0 {
                offset[l as usize] = i as u32;
            }
            count[l as usize] += 1;
            codes[s as usize] = code as u32;
            lens[s as usize] = l;
            code += 1;
        }
        Ok(Self {
            q,
            entries,
            codes,
            lens,
            first_code,
            count,
            offset,
        })
    }

    pub fn q(&self) -> u32 {
        self.q
    }

    pub fn escape_symbol(&self) -> u32 {
        1 << self.q
    }

    /// (symbol, length) pairs in canonical order.
    pub fn entries(&self) -> &[(u32, u8)] {
        &self.entries
    }

    pub fn code_len(&self, symbol: u32) -> Option<u8> {
        self.lens.get(symbol as usize).copied().filter(|&l| l > 0)
    }

    /// Bits spent on `symbol`, including the escape and raw value for
    /// symbols outside the table.
    pub fn symbol_cost(&self, symbol: u32) -> u64 {
        match self.code_len(symbol) {
            Some(l) if symbol < self.escape_symbol() => l as u64,
            _ => self.lens[self.escape_symbol() as usize] as u64 + self.q as u64,
        }
    }

    pub fn kraft_sum(&self) -> f64 {
        self.entries.iter().map(|&(_, l)| 2f64.powi(-(l as i32))).sum()
    }

    fn encode_one(&self, w: &mut BitWriter, v: u32) -> Result<(), CodecError> {
        let escape = self.escape_symbol();
        if v >= escape {
            return Err(CodecError::SymbolRange { value: v, q: self.q });
        }
        let l = self.lens[v as usize];
        if l > 0 {
            w.write_bits(self.codes[v as usize] as u64, l as u32)?;
        } else {
            let e = escape as usize;
            w.write_bits(self.codes[e] as u64, self.lens[e] as u32)?;
            w.write_bits(v as u64, self.q)?;
        }
        Ok(())
    }

    pub fn encode(&self, values: &[u32]) -> Result<BitWriter, CodecError> {
        let mut w = BitWriter::new();
        for &v in values {
            self.encode_one(&mut w, v)?;
        }
        Ok(w)
    }

    fn decode_one(&self, r: &mut BitReader<'_>) -> Result<u32, CodecError> {
        let mut code: u64 = 0;
        for len in 1..self.first_code.len() {
            code = (code << 1) | r.read_bit()? as u64;
            let n = self.count[len] as u64;
            if n > 0 && code >= self.first_code[len] && code - self.first_code[len] < n {
                let idx = self.offset[len] as u64 + code - self.first_code[len];
                let sym = self.entries[idx as usize].0;
                return if sym == self.escape_symbol() {
                    Ok(r.read_bits(self.q)? as u32)
                } else {
                    Ok(sym)
                };
            }
        }
        Err(CodecError::Corrupt("bit pattern matches no Huffman codeword".into()))
    }

    pub fn decode(&self, payload: &[u8], payload_bits: u64, n: u64) -> Result<Vec<u32>, CodecError> {
        let mut r = BitReader::with_bit_len(payload, payload_bits);
        let mut out = Vec::with_capacity(n as usize);
        for _ in 0..n {
            out.push(self.decode_one(&mut r)?);
        }
        if !r.is_at_end() {
            return Err(CodecError::Corrupt(format!(
                "{} trailing bits after Huffman payload",
                r.remaining()
            )));
        }
        Ok(out)
    }

    /// Side-band layout: rule u8 | entry count u32 LE | (symbol u32 LE, length u8)*.
    pub fn to_side_band(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(5 + 5 * self.entries.len());
        out.push(CANONICAL_LEN_THEN_SYMBOL);
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for &(s, l) in &self.entries {
            out.extend_from_slice(&s.to_le_bytes());
            out.push(l);
        }
        out
    }

    pub fn from_side_band(bytes: &[u8], q: u32) -> Result<Self, CodecError> {
        let bad = |m: &str| CodecError::Table(m.to_string());
        let (&rule, rest) = bytes.split_first().ok_or_else(|| bad("empty side band"))?;
        if rule != CANONICAL_LEN_THEN_SYMBOL {
            return Err(bad("unknown canonical ordering rule"));
        }
        if rest.len() < 4 {
            return Err(bad("side band too short"));
        }
        let n = u32::from_le_bytes(rest[..4].try_into().expect("4 bytes")) as usize;
        let body = &rest[4..];
        if body.len() != n * 5 {
            return Err(bad("side band length does not match entry count"));
        }
        let entries = body
            .chunks_exact(5)
            .map(|c| (u32::from_le_bytes(c[..4].try_into().expect("4 bytes")), c[4]))
            .collect();
        Self::from_entries(q, entries)
    }
}
