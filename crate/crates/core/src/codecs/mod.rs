//! Entropy coders for quantized activation maps and the self-describing blob
//! container that carries their output.

pub mod golomb;
pub mod huffman;
pub mod zvc;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bitstream::{BitError, BitReader, BitWriter};
use crate::quantizer::{Bitwidth, QuantParams};
use crate::tensorio::{ActivationTensor, TensorData};

pub use golomb::{eg_decode, eg_encode, eg_len, seg_decode, seg_encode, seg_len};
pub use huffman::HuffmanTable;

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("symbol {value} does not fit in {q} bits")]
    SymbolRange { value: u32, q: u32 },
    #[error("corrupt payload: {0}")]
    Corrupt(String),
    #[error("bad Huffman table: {0}")]
    Table(String),
    #[error("bad blob: {0}")]
    Format(String),
    #[error("compression gain undefined for an empty payload")]
    ZeroPayload,
    #[error(transparent)]
    Bits(#[from] BitError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CodecKind {
    Raw,
    Eg,
    Seg,
    Zvc,
    Huffman,
}

impl CodecKind {
    pub const ALL: [CodecKind; 5] = [
        CodecKind::Raw,
        CodecKind::Eg,
        CodecKind::Seg,
        CodecKind::Zvc,
        CodecKind::Huffman,
    ];

    pub fn tag(self) -> u8 {
        match self {
            CodecKind::Raw => 0,
            CodecKind::Eg => 1,
            CodecKind::Seg => 2,
            CodecKind::Zvc => 3,
            CodecKind::Huffman => 4,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.tag() == tag)
    }

    pub fn name(self) -> &'static str {
        match self {
            CodecKind::Raw => "raw",
            CodecKind::Eg => "eg",
            CodecKind::Seg => "seg",
            CodecKind::Zvc => "zvc",
            CodecKind::Huffman => "huffman",
        }
    }

    /// Whether the codec takes an order parameter.
    pub fn has_order(self) -> bool {
        matches!(self, CodecKind::Eg | CodecKind::Seg)
    }
}

impl fmt::Display for CodecKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CodecKind {
    type Err = CodecError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "raw" => Ok(CodecKind::Raw),
            "eg" => Ok(CodecKind::Eg),
            "seg" => Ok(CodecKind::Seg),
            "zvc" => Ok(CodecKind::Zvc),
            "huffman" | "hc" => Ok(CodecKind::Huffman),
            other => Err(CodecError::Config(format!("unknown codec `{other}`"))),
        }
    }
}

/// Codec plus its order parameter (ignored by codecs without one).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CodecId {
    pub kind: CodecKind,
    pub k: u8,
}

impl CodecId {
    pub fn new(kind: CodecKind, k: u32) -> Result<Self, CodecError> {
        if k > golomb::MAX_ORDER {
            return Err(CodecError::Config(format!(
                "order k={k} exceeds {}",
                golomb::MAX_ORDER
            )));
        }
        let k = if kind.has_order() { k as u8 } else { 0 };
        Ok(Self { kind, k })
    }

    pub fn raw() -> Self {
        Self { kind: CodecKind::Raw, k: 0 }
    }

    pub fn eg(k: u32) -> Self {
        Self::new(CodecKind::Eg, k).expect("valid order")
    }

    pub fn seg(k: u32) -> Self {
        Self::new(CodecKind::Seg, k).expect("valid order")
    }

    pub fn zvc() -> Self {
        Self { kind: CodecKind::Zvc, k: 0 }
    }

    pub fn huffman() -> Self {
        Self { kind: CodecKind::Huffman, k: 0 }
    }
}

impl fmt::Display for CodecId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.kind.has_order() {
            write!(f, "{}(k={})", self.kind, self.k)
        } else {
            write!(f, "{}", self.kind)
        }
    }
}

pub const BLOB_MAGIC: &[u8; 4] = b"SEGB";
pub const BLOB_VERSION: u8 = 1;
const BLOB_HEADER_LEN: usize = 4 + 1 + 1 + 1 + 1 + 8 + 8 + 4;

/// Compressed symbol stream plus everything needed to decode it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedBlob {
    pub codec: CodecId,
    /// Symbol bitwidth; 0 marks a float32 passthrough.
    pub q: u8,
    pub n_symbols: u64,
    pub payload_bits: u64,
    pub payload: Vec<u8>,
    pub side_band: Vec<u8>,
}

impl EncodedBlob {
    fn from_writer(codec: CodecId, q: u32, n: usize, w: BitWriter, side_band: Vec<u8>) -> Self {
        let payload_bits = w.bit_len();
        Self {
            codec,
            q: q as u8,
            n_symbols: n as u64,
            payload_bits,
            payload: w.into_bytes(),
            side_band,
        }
    }

    /// Payload bits plus side-band bits; the quantity compression gains are
    /// measured against.
    pub fn compressed_bits(&self) -> u64 {
        self.payload_bits + 8 * self.side_band.len() as u64
    }

    /// Serializes to the `SEGB` container.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out =
            Vec::with_capacity(BLOB_HEADER_LEN + self.side_band.len() + self.payload.len());
        out.extend_from_slice(BLOB_MAGIC);
        out.push(BLOB_VERSION);
        out.push(self.codec.kind.tag());
        out.push(self.codec.k);
        out.push(self.q);
        out.extend_from_slice(&self.n_symbols.to_le_bytes());
        out.extend_from_slice(&self.payload_bits.to_le_bytes());
        out.extend_from_slice(&(self.side_band.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.side_band);
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CodecError> {
        let bad = |m: String| CodecError::Format(m);
        if bytes.len() < BLOB_HEADER_LEN {
            return Err(bad(format!("{} bytes is shorter than the header", bytes.len())));
        }
        if &bytes[..4] != BLOB_MAGIC {
            return Err(bad("missing SEGB magic".into()));
        }
        if bytes[4] != BLOB_VERSION {
            return Err(bad(format!("unsupported version {}", bytes[4])));
        }
        let kind = CodecKind::from_tag(bytes[5])
            .ok_or_else(|| bad(format!("unknown codec tag {}", bytes[5])))?;
        let codec = CodecId::new(kind, bytes[6] as u32)?;
        let q = bytes[7];
        let n_symbols = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
        let payload_bits = u64::from_le_bytes(bytes[16..24].try_into().expect("8 bytes"));
        let sb_len = u32::from_le_bytes(bytes[24..28].try_into().expect("4 bytes")) as usize;
        let rest = &bytes[BLOB_HEADER_LEN..];
        if rest.len() < sb_len {
            return Err(bad("side band truncated".into()));
        }
        let (side_band, payload) = rest.split_at(sb_len);
        if payload.len() as u64 != payload_bits.div_ceil(8) {
            return Err(bad(format!(
                "payload is {} bytes, header promises {payload_bits} bits",
                payload.len()
            )));
        }
        Ok(Self {
            codec,
            q,
            n_symbols,
            payload_bits,
            payload: payload.to_vec(),
            side_band: side_band.to_vec(),
        })
    }
}

fn check_symbol_width(q: u32) -> Result<(), CodecError> {
    if (1..=16).contains(&q) {
        Ok(())
    } else {
        Err(CodecError::Config(format!("symbol bitwidth {q} outside 1..=16")))
    }
}

fn check_range(values: &[u32], q: u32) -> Result<(), CodecError> {
    match values.iter().find(|&&v| v >> q != 0) {
        Some(&value) => Err(CodecError::SymbolRange { value, q }),
        None => Ok(()),
    }
}

pub fn histogram(values: &[u32]) -> BTreeMap<u32, u64> {
    let mut h = BTreeMap::new();
    for &v in values {
        *h.entry(v).or_insert(0) += 1;
    }
    h
}

/// Encodes a stream of `q`-bit symbols.
pub fn encode_symbols(values: &[u32], codec: CodecId, q: u32) -> Result<EncodedBlob, CodecError> {
    check_symbol_width(q)?;
    check_range(values, q)?;
    let k = codec.k as u32;
    let (w, side_band) = match codec.kind {
        CodecKind::Raw => {
            let mut w = BitWriter::with_capacity_bits(values.len() as u64 * q as u64);
            for &v in values {
                w.write_bits(v as u64, q)?;
            }
            (w, Vec::new())
        }
        CodecKind::Eg => {
            let mut w = BitWriter::new();
            for &v in values {
                golomb::write_eg(&mut w, v as u64, k);
            }
            (w, Vec::new())
        }
        CodecKind::Seg => {
            let mut w = BitWriter::new();
            for &v in values {
                golomb::write_seg(&mut w, v as u64, k);
            }
            (w, Vec::new())
        }
        CodecKind::Zvc => (zvc::encode(values, q)?, Vec::new()),
        CodecKind::Huffman => {
            let table = HuffmanTable::build(&histogram(values), q)?;
            (table.encode(values)?, table.to_side_band())
        }
    };
    Ok(EncodedBlob::from_writer(codec, q, values.len(), w, side_band))
}

fn read_all(
    blob: &EncodedBlob,
    mut one: impl FnMut(&mut BitReader<'_>) -> Result<u64, CodecError>,
) -> Result<Vec<u32>, CodecError> {
    let mut r = BitReader::with_bit_len(&blob.payload, blob.payload_bits);
    let limit = 1u64 << blob.q;
    let mut out = Vec::with_capacity(blob.n_symbols as usize);
    for _ in 0..blob.n_symbols {
        let v = one(&mut r)?;
        if v >= limit {
            return Err(CodecError::Corrupt(format!(
                "decoded value {v} exceeds {}-bit range",
                blob.q
            )));
        }
        out.push(v as u32);
    }
    if !r.is_at_end() {
        return Err(CodecError::Corrupt(format!(
            "{} unused bits before padding",
            r.remaining()
        )));
    }
    Ok(out)
}

/// Inverse of [`encode_symbols`].
pub fn decode_symbols(blob: &EncodedBlob) -> Result<Vec<u32>, CodecError> {
    let q = blob.q as u32;
    check_symbol_width(q)?;
    if blob.payload.len() as u64 != blob.payload_bits.div_ceil(8) {
        return Err(CodecError::Corrupt("payload length disagrees with bit count".into()));
    }
    let k = blob.codec.k as u32;
    match blob.codec.kind {
        CodecKind::Raw => read_all(blob, |r| Ok(r.read_bits(q)?)),
        CodecKind::Eg => read_all(blob, |r| golomb::read_eg(r, k)),
        CodecKind::Seg => read_all(blob, |r| golomb::read_seg(r, k)),
        CodecKind::Zvc => zvc::decode(&blob.payload, blob.payload_bits, blob.n_symbols, q),
        CodecKind::Huffman => {
            let table = HuffmanTable::from_side_band(&blob.side_band, q)?;
            table.decode(&blob.payload, blob.payload_bits, blob.n_symbols)
        }
    }
}

/// Exact encoded size in bits without producing the stream. Huffman sizes
/// include the side-band table.
pub fn encoded_size_bits(hist: &BTreeMap<u32, u64>, codec: CodecId, q: u32) -> Result<u64, CodecError> {
    let k = codec.k as u32;
    let n: u64 = hist.values().sum();
    Ok(match codec.kind {
        CodecKind::Raw => n * q as u64,
        CodecKind::Eg => hist.iter().map(|(&v, &c)| c * eg_len(v as u64, k) as u64).sum(),
        CodecKind::Seg => hist.iter().map(|(&v, &c)| c * seg_len(v as u64, k) as u64).sum(),
        CodecKind::Zvc => zvc::encoded_bits(n, n - hist.get(&0).copied().unwrap_or(0), q),
        CodecKind::Huffman => {
            let t = HuffmanTable::build(hist, q)?;
            let payload: u64 = hist.iter().map(|(&v, &c)| c * t.symbol_cost(v)).sum();
            payload + 8 * t.to_side_band().len() as u64
        }
    })
}

/// Ratio of raw size to compressed size (payload plus side band).
///
/// `raw_bits` is the quantized size `n * q`. With `include_quantization` the
/// ratio is additionally scaled by `source_bits / q`, crediting the
/// reduction from the source representation (float32) to `q` bits.
pub fn compression_gain(
    raw_bits: u64,
    blob: &EncodedBlob,
    include_quantization: bool,
    source_bits: u32,
) -> Result<f64, CodecError> {
    let compressed = blob.compressed_bits();
    if compressed == 0 {
        return Err(CodecError::ZeroPayload);
    }
    let gain = raw_bits as f64 / compressed as f64;
    if include_quantization {
        if blob.q == 0 {
            return Err(CodecError::Config("float passthrough has no quantization gain".into()));
        }
        Ok(gain * source_bits as f64 / blob.q as f64)
    } else {
        Ok(gain)
    }
}

/// Encodes a tensor's elements in storage (N, H, W, C row-major) order.
///
/// Quantized tensors accept every codec. Float tensors only accept `Raw`,
/// which stores the IEEE-754 bit patterns and records `q = 0`.
pub fn encode_tensor(t: &ActivationTensor, codec: CodecId) -> Result<EncodedBlob, CodecError> {
    match &t.data {
        TensorData::F32(v) => {
            if codec.kind != CodecKind::Raw {
                return Err(CodecError::Config(format!(
                    "{codec} needs a quantized tensor; `{}` is float32",
                    t.layer
                )));
            }
            let mut w = BitWriter::with_capacity_bits(v.len() as u64 * 32);
            for x in v {
                w.write_bits(x.to_bits() as u64, 32)?;
            }
            Ok(EncodedBlob::from_writer(codec, 0, v.len(), w, Vec::new()))
        }
        TensorData::Quantized { params, values } => {
            let symbols: Vec<u32> = values.iter().map(|&v| v as u32).collect();
            encode_symbols(&symbols, codec, params.bits.get())
        }
    }
}

/// Rebuilds a tensor from a blob given the metadata the blob does not carry.
pub fn decode_tensor(
    blob: &EncodedBlob,
    layer: &str,
    dims: [u32; 4],
    x_max: f32,
) -> Result<ActivationTensor, CodecError> {
    let n: u64 = dims.iter().map(|&d| d as u64).product();
    if n != blob.n_symbols {
        return Err(CodecError::Config(format!(
            "dims {dims:?} hold {n} elements, blob has {}",
            blob.n_symbols
        )));
    }
    let data = if blob.q == 0 {
        if blob.codec.kind != CodecKind::Raw || blob.payload_bits != 32 * n {
            return Err(CodecError::Corrupt("float passthrough blob is malformed".into()));
        }
        let mut r = BitReader::with_bit_len(&blob.payload, blob.payload_bits);
        let mut v = Vec::with_capacity(n as usize);
        for _ in 0..n {
            v.push(f32::from_bits(r.read_bits(32)? as u32));
        }
        TensorData::F32(v)
    } else {
        let bits = Bitwidth::new(blob.q as u32)
            .map_err(|e| CodecError::Config(e.to_string()))?;
        let params = QuantParams::new(bits, x_max).map_err(|e| CodecError::Config(e.to_string()))?;
        let values = decode_symbols(blob)?.into_iter().map(|v| v as u16).collect();
        TensorData::Quantized { params, values }
    };
    Ok(ActivationTensor {
        layer: layer.to_string(),
        dims,
        data,
    })
}
