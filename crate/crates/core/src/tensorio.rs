//! `AMC1` activation tensor files and the `manifest.jsonl` index that groups
//! them into dumps.
//!
//! File layout, all integers little-endian:
//!
//! ```text
//! "AMC1" | version u8 | name_len u16 | name (UTF-8) | dtype u8 | q u8 |
//! x_max f32 | dims 4 x u32 (N, H, W, C) | payload_len u64 | payload
//! ```
//!
//! Payload encodings: F32 as IEEE-754 LE, U8 as bytes, U16 as LE pairs, and
//! U12 packed two values per three bytes with the high nibble first. An odd
//! trailing U12 value takes two bytes with the low nibble zeroed.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quantizer::{Bitwidth, QuantParams};

pub const TENSOR_MAGIC: &[u8; 4] = b"AMC1";
pub const TENSOR_VERSION: u8 = 1;
pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Debug, Error)]
pub enum TensorIoError {
    #[error("{0}")]
    Format(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Stream(#[from] io::Error),
    #[error("manifest line {line}: {msg}")]
    Manifest { line: usize, msg: String },
}

fn format_err<T>(msg: impl Into<String>) -> Result<T, TensorIoError> {
    Err(TensorIoError::Format(msg.into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Dtype {
    F32,
    U8,
    U12,
    U16,
}

impl Dtype {
    pub fn code(self) -> u8 {
        match self {
            Dtype::F32 => 0,
            Dtype::U8 => 1,
            Dtype::U12 => 2,
            Dtype::U16 => 3,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        [Dtype::F32, Dtype::U8, Dtype::U12, Dtype::U16]
            .into_iter()
            .find(|d| d.code() == c)
    }

    fn for_bits(b: Bitwidth) -> Self {
        match b.get() {
            8 => Dtype::U8,
            12 => Dtype::U12,
            _ => Dtype::U16,
        }
    }

    /// Payload size in bytes for `count` elements.
    pub fn payload_len(self, count: u64) -> u64 {
        match self {
            Dtype::F32 => 4 * count,
            Dtype::U8 => count,
            Dtype::U12 => (count * 12).div_ceil(8),
            Dtype::U16 => 2 * count,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    /// Quantized codes; 8- and 12-bit values travel in 16-bit containers.
    Quantized { params: QuantParams, values: Vec<u16> },
}

/// One layer's activation map for a batch, in (N, H, W, C) row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationTensor {
    pub layer: String,
    pub dims: [u32; 4],
    pub data: TensorData,
}

impl ActivationTensor {
    pub fn from_f32(layer: impl Into<String>, dims: [u32; 4], data: Vec<f32>) -> Result<Self, TensorIoError> {
        let t = Self {
            layer: layer.into(),
            dims,
            data: TensorData::F32(data),
        };
        t.validate()?;
        Ok(t)
    }

    pub fn element_count(&self) -> u64 {
        self.dims.iter().map(|&d| d as u64).product()
    }

    pub fn len(&self) -> usize {
        match &self.data {
            TensorData::F32(v) => v.len(),
            TensorData::Quantized { values, .. } => values.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> Dtype {
        match &self.data {
            TensorData::F32(_) => Dtype::F32,
            TensorData::Quantized { params, .. } => Dtype::for_bits(params.bits),
        }
    }

    pub fn quant(&self) -> Option<QuantParams> {
        match &self.data {
            TensorData::F32(_) => None,
            TensorData::Quantized { params, .. } => Some(*params),
        }
    }

    pub fn validate(&self) -> Result<(), TensorIoError> {
        if self.element_count() != self.len() as u64 {
            return format_err(format!(
                "`{}`: dims {:?} imply {} elements, data has {}",
                self.layer,
                self.dims,
                self.element_count(),
                self.len()
            ));
        }
        if let TensorData::Quantized { params, values } = &self.data {
            let max = params.bits.max_code();
            if let Some(v) = values.iter().find(|&&v| v as u32 > max) {
                return format_err(format!("`{}`: code {v} exceeds {}-bit range", self.layer, params.bits.get()));
            }
        }
        Ok(())
    }

    pub fn nonzero_count(&self) -> u64 {
        match &self.data {
            TensorData::F32(v) => v.iter().filter(|&&x| x != 0.0).count() as u64,
            TensorData::Quantized { values, .. } => values.iter().filter(|&&x| x != 0).count() as u64,
        }
    }

    /// Fraction of elements that are not exactly zero (0 for an empty tensor).
    pub fn nonzero_fraction(&self) -> f64 {
        let n = self.len();
        if n == 0 {
            0.0
        } else {
            self.nonzero_count() as f64 / n as f64
        }
    }

    /// Elements as symbols for the codecs; `None` for float tensors.
    pub fn symbols(&self) -> Option<Vec<u32>> {
        match &self.data {
            TensorData::F32(_) => None,
            TensorData::Quantized { values, .. } => Some(values.iter().map(|&v| v as u32).collect()),
        }
    }
}

pub fn pack_u12(values: &[u16]) -> Vec<u8> {
    let mut out = Vec::with_capacity((values.len() * 3).div_ceil(2));
    for pair in values.chunks(2) {
        let a = pair[0];
        out.push((a >> 4) as u8);
        match pair.get(1) {
            Some(&b) => {
                out.push((((a & 0xF) << 4) | (b >> 8)) as u8);
                out.push((b & 0xFF) as u8);
            }
            None => out.push(((a & 0xF) << 4) as u8),
        }
    }
    out
}

pub fn unpack_u12(bytes: &[u8], count: usize) -> Vec<u16> {
    let mut out = Vec::with_capacity(count);
    for chunk in bytes.chunks(3) {
        let a = ((chunk[0] as u16) << 4) | (chunk.get(1).copied().unwrap_or(0) as u16 >> 4);
        out.push(a);
        if out.len() == count {
            break;
        }
        if chunk.len() == 3 {
            out.push((((chunk[1] & 0xF) as u16) << 8) | chunk[2] as u16);
        }
        if out.len() == count {
            break;
        }
    }
    out
}

fn encode_payload(t: &ActivationTensor) -> Vec<u8> {
    match &t.data {
        TensorData::F32(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
        TensorData::Quantized { params, values } => match Dtype::for_bits(params.bits) {
            Dtype::U8 => values.iter().map(|&v| v as u8).collect(),
            Dtype::U12 => pack_u12(values),
            _ => values.iter().flat_map(|v| v.to_le_bytes()).collect(),
        },
    }
}

/// Writes `t` as an `AMC1` record and returns the number of bytes written.
pub fn save_tensor<W: Write>(t: &ActivationTensor, mut sink: W) -> Result<u64, TensorIoError> {
    t.validate()?;
    let name = t.layer.as_bytes();
    if name.len() > u16::MAX as usize {
        return format_err("layer name longer than 65535 bytes");
    }
    let (q, x_max) = match t.quant() {
        Some(p) => (p.bits.get() as u8, p.x_max),
        None => (0, 0.0),
    };
    let payload = encode_payload(t);
    let mut header = Vec::with_capacity(4 + 1 + 2 + name.len() + 2 + 4 + 16 + 8);
    header.extend_from_slice(TENSOR_MAGIC);
    header.push(TENSOR_VERSION);
    header.extend_from_slice(&(name.len() as u16).to_le_bytes());
    header.extend_from_slice(name);
    header.push(t.dtype().code());
    header.push(q);
    header.extend_from_slice(&x_max.to_le_bytes());
    for d in t.dims {
        header.extend_from_slice(&d.to_le_bytes());
    }
    header.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    sink.write_all(&header)?;
    sink.write_all(&payload)?;
    sink.flush()?;
    Ok((header.len() + payload.len()) as u64)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], TensorIoError> {
        if self.buf.len() - self.pos < n {
            return format_err(format!("truncated AMC1 record at byte {}", self.pos));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, TensorIoError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, TensorIoError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }
    fn u32(&mut self) -> Result<u32, TensorIoError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64, TensorIoError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Parses one complete `AMC1` record. Any inconsistency is a format error;
/// no partial tensor is ever returned.
pub fn decode_tensor_bytes(bytes: &[u8]) -> Result<ActivationTensor, TensorIoError> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    if c.take(4)? != TENSOR_MAGIC {
        return format_err("missing AMC1 magic");
    }
    let version = c.u8()?;
    if version != TENSOR_VERSION {
        return format_err(format!("unsupported AMC1 version {version}"));
    }
    let name_len = c.u16()? as usize;
    let layer = std::str::from_utf8(c.take(name_len)?)
        .map_err(|_| TensorIoError::Format("layer name is not UTF-8".into()))?
        .to_string();
    let dtype_code = c.u8()?;
    let dtype = Dtype::from_code(dtype_code)
        .ok_or_else(|| TensorIoError::Format(format!("unknown dtype {dtype_code}")))?;
    let q = c.u8()?;
    let x_max = f32::from_le_bytes(c.take(4)?.try_into().expect("4 bytes"));
    let mut dims = [0u32; 4];
    for d in &mut dims {
        *d = c.u32()?;
    }
    let count = dims.iter().map(|&d| d as u64).product::<u64>();
    let payload_len = c.u64()?;
    if payload_len != dtype.payload_len(count) {
        return format_err(format!(
            "payload length {payload_len} does not match {count} {dtype:?} elements"
        ));
    }
    let payload = c.take(payload_len as usize)?;
    if c.pos != bytes.len() {
        return format_err(format!("{} trailing bytes after AMC1 record", bytes.len() - c.pos));
    }
    let count = count as usize;
    let data = match dtype {
        Dtype::F32 => {
            if q != 0 {
                return format_err("float32 tensor carries a bitwidth");
            }
            TensorData::F32(
                payload
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
                    .collect(),
            )
        }
        _ => {
            let bits = Bitwidth::new(q as u32).map_err(|e| TensorIoError::Format(e.to_string()))?;
            if Dtype::for_bits(bits) != dtype {
                return format_err(format!("dtype {dtype:?} disagrees with q={q}"));
            }
            let params = QuantParams::new(bits, x_max).map_err(|e| TensorIoError::Format(e.to_string()))?;
            let values = match dtype {
                Dtype::U8 => payload.iter().map(|&b| b as u16).collect(),
                Dtype::U12 => unpack_u12(payload, count),
                _ => payload
                    .chunks_exact(2)
                    .map(|b| u16::from_le_bytes([b[0], b[1]]))
                    .collect(),
            };
            TensorData::Quantized { params, values }
        }
    };
    let t = ActivationTensor { layer, dims, data };
    t.validate()?;
    Ok(t)
}

pub fn load_tensor<R: Read>(mut source: R) -> Result<ActivationTensor, TensorIoError> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    decode_tensor_bytes(&bytes)
}

fn io_at(path: &Path) -> impl FnOnce(io::Error) -> TensorIoError + '_ {
    move |source| TensorIoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn save_tensor_file(t: &ActivationTensor, path: &Path) -> Result<u64, TensorIoError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io_at(dir))?;
    }
    let f = File::create(path).map_err(io_at(path))?;
    save_tensor(t, BufWriter::new(f))
}

pub fn load_tensor_file(path: &Path) -> Result<ActivationTensor, TensorIoError> {
    let f = File::open(path).map_err(io_at(path))?;
    load_tensor(BufReader::new(f)).map_err(|e| match e {
        TensorIoError::Format(m) => TensorIoError::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// One line of `manifest.jsonl`. `path` is relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub layer: String,
    pub batch: u64,
    pub role: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Manifest {
    pub dir: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: dir.into(),
            entries: Vec::new(),
        }
    }

    /// Reads `manifest.jsonl` from `dir` (or from the file itself if `dir`
    /// names it directly).
    pub fn read(dir: &Path) -> Result<Self, TensorIoError> {
        let (dir, file) = if dir.is_file() {
            (dir.parent().unwrap_or(Path::new(".")).to_path_buf(), dir.to_path_buf())
        } else {
            (dir.to_path_buf(), dir.join(MANIFEST_FILE))
        };
        let text = std::fs::read_to_string(&file).map_err(io_at(&file))?;
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let e: ManifestEntry = serde_json::from_str(line).map_err(|e| TensorIoError::Manifest {
                line: i + 1,
                msg: e.to_string(),
            })?;
            entries.push(e);
        }
        Ok(Self { dir, entries })
    }

    pub fn write(&self) -> Result<(), TensorIoError> {
        std::fs::create_dir_all(&self.dir).map_err(io_at(&self.dir))?;
        let file = self.dir.join(MANIFEST_FILE);
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("manifest entries serialize"));
            out.push('\n');
        }
        std::fs::write(&file, out).map_err(io_at(&file))
    }

    pub fn resolve(&self, e: &ManifestEntry) -> PathBuf {
        self.dir.join(&e.path)
    }

    /// Saves `t` under the manifest directory and records it.
    pub fn add(&mut self, t: &ActivationTensor, batch: u64, role: &str) -> Result<(), TensorIoError> {
        let rel = format!("{}/{:05}.amc", sanitize(&t.layer), batch);
        save_tensor_file(t, &self.dir.join(&rel))?;
        self.entries.push(ManifestEntry {
            path: rel,
            layer: t.layer.clone(),
            batch,
            role: role.to_string(),
        });
        Ok(())
    }

    pub fn load(&self, e: &ManifestEntry) -> Result<ActivationTensor, TensorIoError> {
        load_tensor_file(&self.resolve(e))
    }

    /// Layer names in first-appearance order.
    pub fn layers(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for e in &self.entries {
            if !out.contains(&e.layer) {
                out.push(e.layer.clone());
            }
        }
        out
    }
}

/// Makes a layer name safe to use as a path component.
pub fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect()
}
