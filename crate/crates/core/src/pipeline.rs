//! Calibration, quantization, codec parameter search, batch compression with
//! a decode gate, and report generation.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use flate2::write::ZlibEncoder;
use flate2::Compression;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codecs::{
    decode_symbols, encode_symbols, encoded_size_bits, histogram, CodecError, CodecId, CodecKind, EncodedBlob,
};
use crate::quantizer::{calibrate_max, quantize_tensor, Bitwidth, QuantError, QuantParams};
use crate::tensorio::{sanitize, ActivationTensor, Manifest, TensorData, TensorIoError};

/// Bits per element of the unquantized source activations.
pub const SOURCE_BITS: u32 = 32;
pub const BLOB_INDEX_FILE: &str = "blobs.jsonl";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Quant(#[from] QuantError),
    #[error(transparent)]
    Tensor(#[from] TensorIoError),
    #[error("round trip failed for {tensor}: {detail}")]
    Verification { tensor: String, detail: String },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Tensors grouped by layer, in a fixed layer order.
pub type LayerSet = Vec<(String, Vec<ActivationTensor>)>;

/// Groups a `name -> tensors` map into a [`LayerSet`] in `order`.
pub fn layer_set(mut by_layer: BTreeMap<String, Vec<ActivationTensor>>, order: &[String]) -> LayerSet {
    let mut out = Vec::new();
    for name in order {
        if let Some(t) = by_layer.remove(name) {
            out.push((name.clone(), t));
        }
    }
    out.extend(by_layer);
    out
}

/// Loads every tensor of a manifest grouped by layer in manifest order.
/// Also returns each tensor's batch index.
pub fn load_manifest(manifest: &Manifest) -> Result<(LayerSet, Vec<Vec<u64>>), PipelineError> {
    let layers = manifest.layers();
    let mut set: LayerSet = layers.iter().map(|l| (l.clone(), Vec::new())).collect();
    let mut batches = vec![Vec::new(); layers.len()];
    for e in &manifest.entries {
        let i = layers.iter().position(|l| *l == e.layer).expect("layer listed");
        let t = manifest.load(e)?;
        if t.layer != e.layer {
            return Err(PipelineError::Config(format!(
                "{} holds layer `{}`, manifest says `{}`",
                e.path, t.layer, e.layer
            )));
        }
        set[i].1.push(t);
        batches[i].push(e.batch);
    }
    Ok((set, batches))
}

/// Per-layer calibration maximum from float tensors.
pub fn calibrate(cal: &LayerSet, bits: Bitwidth) -> Result<BTreeMap<String, QuantParams>, PipelineError> {
    cal.iter()
        .map(|(name, ts)| Ok((name.clone(), calibrate_max(ts, bits)?)))
        .collect()
}

/// Quantizes float tensors with their layer's parameters. Tensors that are
/// already quantized pass through if their bitwidth matches.
pub fn quantize_set(set: &LayerSet, params: &BTreeMap<String, QuantParams>) -> Result<LayerSet, PipelineError> {
    set.iter()
        .map(|(name, ts)| {
            let p = params
                .get(name)
                .ok_or_else(|| PipelineError::Config(format!("no calibration for layer `{name}`")))?;
            let out = ts
                .iter()
                .map(|t| match &t.data {
                    TensorData::F32(_) => Ok(quantize_tensor(t, *p)?),
                    TensorData::Quantized { params: tp, .. } if tp.bits == p.bits => Ok(t.clone()),
                    TensorData::Quantized { params: tp, .. } => Err(PipelineError::Config(format!(
                        "layer `{name}` is stored at {} bits, {} requested",
                        tp.bits.get(),
                        p.bits.get()
                    ))),
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok((name.clone(), out))
        })
        .collect()
}

/// Quantization parameters carried by already-quantized tensors.
pub fn stored_params(set: &LayerSet) -> Option<BTreeMap<String, QuantParams>> {
    set.iter()
        .map(|(name, ts)| ts.first().and_then(|t| t.quant()).map(|p| (name.clone(), p)))
        .collect()
}

fn symbols(t: &ActivationTensor) -> Result<Vec<u32>, PipelineError> {
    t.symbols()
        .ok_or_else(|| PipelineError::Config(format!("tensor of layer `{}` is not quantized", t.layer)))
}

fn layer_histogram(ts: &[ActivationTensor]) -> Result<BTreeMap<u32, u64>, PipelineError> {
    let mut h = BTreeMap::new();
    for t in ts {
        for (v, c) in histogram(&symbols(t)?) {
            *h.entry(v).or_insert(0) += c;
        }
    }
    Ok(h)
}

/// Empirical entropy in bits per symbol.
pub fn entropy_bits(hist: &BTreeMap<u32, u64>) -> f64 {
    let n: u64 = hist.values().sum();
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    -hist
        .values()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            p * p.log2()
        })
        .sum::<f64>()
}

/// Orders searched when none is given. SEG at `k = 0` is plain EG, so its
/// search starts at 1.
pub fn default_k_range(kind: CodecKind) -> std::ops::RangeInclusive<u32> {
    match kind {
        CodecKind::Seg => 1..=15,
        _ => 0..=15,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KSearch {
    pub k: u32,
    /// Total encoded bits over the search set for every candidate order.
    pub bits: Vec<(u32, u64)>,
}

/// The order in `range` that minimizes total encoded bits over `tensors`,
/// ties going to the smaller order.
pub fn search_k(
    tensors: &[ActivationTensor],
    kind: CodecKind,
    range: std::ops::RangeInclusive<u32>,
) -> Result<KSearch, PipelineError> {
    if !kind.has_order() {
        return Err(PipelineError::Config(format!("{kind} has no order parameter")));
    }
    if tensors.is_empty() {
        return Err(PipelineError::Config("k search needs at least one tensor".into()));
    }
    let q = tensors[0]
        .quant()
        .ok_or_else(|| PipelineError::Config("k search needs quantized tensors".into()))?
        .bits
        .get();
    let hist = layer_histogram(tensors)?;
    let mut bits = Vec::new();
    for k in range {
        bits.push((k, encoded_size_bits(&hist, CodecId::new(kind, k)?, q)?));
    }
    let &(k, _) = bits
        .iter()
        .min_by(|a, b| a.1.cmp(&b.1).then(a.0.cmp(&b.0)))
        .ok_or_else(|| PipelineError::Config("empty k range".into()))?;
    Ok(KSearch { k, bits })
}

/// How a codec's order is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KSpec {
    Fixed(u32),
    /// Searched per layer on the calibration split.
    Auto,
}

/// A codec to evaluate. `Zlib` is an off-the-shelf baseline measured on the
/// packed raw symbols; it produces no blob files.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CodecSpec {
    Coder(CodecKind, KSpec),
    Zlib,
}

impl CodecSpec {
    pub fn label(&self) -> &'static str {
        match self {
            CodecSpec::Coder(kind, _) => kind.name(),
            CodecSpec::Zlib => "zlib",
        }
    }

    /// The default comparison set: RAW, EG, SEG, ZVC, Huffman and zlib,
    /// with orders searched.
    pub fn standard_set() -> Vec<CodecSpec> {
        vec![
            CodecSpec::Coder(CodecKind::Raw, KSpec::Fixed(0)),
            CodecSpec::Coder(CodecKind::Eg, KSpec::Auto),
            CodecSpec::Coder(CodecKind::Seg, KSpec::Auto),
            CodecSpec::Coder(CodecKind::Zvc, KSpec::Fixed(0)),
            CodecSpec::Coder(CodecKind::Huffman, KSpec::Fixed(0)),
            CodecSpec::Zlib,
        ]
    }
}

impl fmt::Display for CodecSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for CodecSpec {
    type Err = PipelineError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("zlib") {
            return Ok(CodecSpec::Zlib);
        }
        let kind: CodecKind = s.parse().map_err(|e: CodecError| PipelineError::Config(e.to_string()))?;
        Ok(CodecSpec::Coder(kind, if kind.has_order() { KSpec::Auto } else { KSpec::Fixed(0) }))
    }
}

/// One codec's outcome on a layer or on the whole dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodecResult {
    pub codec: String,
    pub k: Option<u32>,
    pub compressed_bits: u64,
    /// Raw `n * q` bits over compressed bits.
    pub entropy_gain: f64,
    /// Entropy gain times `32 / q`.
    pub total_gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRow {
    pub layer: String,
    pub tensors: usize,
    pub elements: u64,
    pub nonzero: u64,
    pub nonzero_fraction: f64,
    pub entropy_bits: f64,
    pub raw_bits: u64,
    pub x_max: Option<f32>,
    pub codecs: Vec<CodecResult>,
}

impl LayerRow {
    pub fn codec(&self, label: &str) -> Option<&CodecResult> {
        self.codecs.iter().find(|c| c.codec == label)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressionReport {
    pub variant: String,
    pub q: u32,
    pub source_bits: u32,
    pub layers: Vec<LayerRow>,
    /// Totals over all layers; gains are summed raw bits over summed
    /// compressed bits.
    pub aggregate: LayerRow,
    /// Number of blobs that decoded back to their source symbols.
    pub verified_blobs: usize,
}

/// Where a blob came from, enough to rebuild its tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobEntry {
    pub path: String,
    pub layer: String,
    pub batch: u64,
    pub codec: String,
    pub dims: [u32; 4],
    pub q: u32,
    pub x_max: f32,
}

fn gains(raw_bits: u64, compressed: u64, q: u32) -> (f64, f64) {
    let e = if compressed == 0 {
        f64::INFINITY
    } else {
        raw_bits as f64 / compressed as f64
    };
    (e, e * SOURCE_BITS as f64 / q as f64)
}

/// Packs symbols as `q`-bit big-endian fields, the layout zlib is given.
fn pack_raw(values: &[u32], q: u32) -> Result<Vec<u8>, CodecError> {
    Ok(encode_symbols(values, CodecId::raw(), q)?.payload)
}

fn zlib_bits(values: &[u32], q: u32) -> Result<u64, PipelineError> {
    let raw = pack_raw(values, q)?;
    let mut z = ZlibEncoder::new(Vec::new(), Compression::best());
    z.write_all(&raw).and_then(|_| z.finish()).map(|b| b.len() as u64 * 8).map_err(|source| {
        PipelineError::Io {
            path: "zlib".into(),
            source,
        }
    })
}

/// Resolves `Auto` orders per layer using the calibration split.
pub fn resolve_orders(
    specs: &[CodecSpec],
    cal: Option<&LayerSet>,
    layers: &[String],
) -> Result<BTreeMap<(String, &'static str), u32>, PipelineError> {
    let mut out = BTreeMap::new();
    for spec in specs {
        let CodecSpec::Coder(kind, k) = *spec else { continue };
        for layer in layers {
            let k = match k {
                KSpec::Fixed(k) => k,
                KSpec::Auto if !kind.has_order() => 0,
                KSpec::Auto => {
                    let cal = cal.ok_or_else(|| {
                        PipelineError::Config(format!("automatic k for {kind} needs a calibration set"))
                    })?;
                    let ts = cal
                        .iter()
                        .find(|(n, _)| n == layer)
                        .map(|(_, t)| t.as_slice())
                        .ok_or_else(|| PipelineError::Config(format!("calibration set lacks layer `{layer}`")))?;
                    search_k(ts, kind, default_k_range(kind))?.k
                }
            };
            out.insert((layer.clone(), kind.name()), k);
        }
    }
    Ok(out)
}

/// Options for [`compress`].
#[derive(Debug, Clone)]
pub struct CompressOptions {
    pub variant: String,
    pub codecs: Vec<CodecSpec>,
    /// Write blobs under `<out>/<codec>/<layer>/<batch>.segb`.
    pub out_dir: Option<PathBuf>,
    /// Worker threads; 0 uses all cores.
    pub jobs: usize,
}

struct Job<'a> {
    layer: usize,
    batch: u64,
    t: &'a ActivationTensor,
}

struct JobResult {
    bits: Vec<u64>,
    blobs: Vec<Option<EncodedBlob>>,
}

/// Encodes every quantized tensor of `eval` with every codec, decodes each
/// blob again and compares it with its source, then reports gains.
///
/// `batches` gives each tensor's batch index for blob file names; when
/// `None`, tensors are numbered by position.
pub fn compress(
    eval: &LayerSet,
    batches: Option<&[Vec<u64>]>,
    orders: &BTreeMap<(String, &'static str), u32>,
    opts: &CompressOptions,
) -> Result<(CompressionReport, Vec<BlobEntry>), PipelineError> {
    if opts.codecs.is_empty() {
        return Err(PipelineError::Config("no codecs selected".into()));
    }
    let mut q = None;
    for (name, ts) in eval {
        if ts.is_empty() {
            return Err(PipelineError::Config(format!("layer `{name}` has no tensors")));
        }
        for t in ts {
            let p = t
                .quant()
                .ok_or_else(|| PipelineError::Config(format!("layer `{name}` is not quantized")))?;
            if *q.get_or_insert(p.bits.get()) != p.bits.get() {
                return Err(PipelineError::Config("all tensors must share one bitwidth".into()));
            }
        }
    }
    let q = q.ok_or_else(|| PipelineError::Config("nothing to compress".into()))?;

    let mut ids: Vec<Vec<Option<CodecId>>> = Vec::new();
    for (name, _) in eval {
        let mut row = Vec::new();
        for spec in &opts.codecs {
            row.push(match *spec {
                CodecSpec::Coder(kind, _) => {
                    let k = orders.get(&(name.clone(), kind.name())).copied().unwrap_or(0);
                    Some(CodecId::new(kind, k)?)
                }
                CodecSpec::Zlib => None,
            });
        }
        ids.push(row);
    }

    let jobs: Vec<Job> = eval
        .iter()
        .enumerate()
        .flat_map(|(li, (_, ts))| {
            ts.iter().enumerate().map(move |(ti, t)| Job {
                layer: li,
                batch: batches.map_or(ti as u64, |b| b[li][ti]),
                t,
            })
        })
        .collect();

    let keep_blobs = opts.out_dir.is_some();
    let run = |job: &Job| -> Result<JobResult, PipelineError> {
        let values = symbols(job.t)?;
        let mut bits = Vec::with_capacity(opts.codecs.len());
        let mut blobs = Vec::with_capacity(opts.codecs.len());
        for id in &ids[job.layer] {
            match id {
                Some(id) => {
                    let blob = encode_symbols(&values, *id, q)?;
                    let name = format!("{} batch {} ({id})", job.t.layer, job.batch);
                    let back = decode_symbols(&EncodedBlob::from_bytes(&blob.to_bytes())?)
                        .map_err(|e| PipelineError::Verification {
                            tensor: name.clone(),
                            detail: e.to_string(),
                        })?;
                    if back != values {
                        return Err(PipelineError::Verification {
                            tensor: name,
                            detail: "decoded symbols differ from the source".into(),
                        });
                    }
                    bits.push(blob.compressed_bits());
                    blobs.push(keep_blobs.then_some(blob));
                }
                None => {
                    bits.push(zlib_bits(&values, q)?);
                    blobs.push(None);
                }
            }
        }
        Ok(JobResult { bits, blobs })
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs)
        .build()
        .map_err(|e| PipelineError::Config(e.to_string()))?;
    // collect keeps job order regardless of the worker count
    let results: Vec<JobResult> = pool.install(|| jobs.par_iter().map(run).collect::<Result<_, _>>())?;

    let mut entries = Vec::new();
    if let Some(out) = &opts.out_dir {
        for (job, r) in jobs.iter().zip(&results) {
            for (spec, blob) in opts.codecs.iter().zip(&r.blobs) {
                let Some(blob) = blob else { continue };
                let rel = format!("{}/{}/{:05}.segb", spec.label(), sanitize(&job.t.layer), job.batch);
                let path = out.join(&rel);
                std::fs::create_dir_all(path.parent().expect("has parent")).map_err(io_err(&path))?;
                std::fs::write(&path, blob.to_bytes()).map_err(io_err(&path))?;
                entries.push(BlobEntry {
                    path: rel,
                    layer: job.t.layer.clone(),
                    batch: job.batch,
                    codec: spec.label().to_string(),
                    dims: job.t.dims,
                    q,
                    x_max: job.t.quant().expect("checked").x_max,
                });
            }
        }
        let index = out.join(BLOB_INDEX_FILE);
        let mut text = String::new();
        for e in &entries {
            text.push_str(&serde_json::to_string(e).expect("serializable"));
            text.push('\n');
        }
        std::fs::write(&index, text).map_err(io_err(&index))?;
    }

    let ncodec = opts.codecs.len();
    let mut layer_bits = vec![vec![0u64; ncodec]; eval.len()];
    for (job, r) in jobs.iter().zip(&results) {
        for (c, b) in r.bits.iter().enumerate() {
            layer_bits[job.layer][c] += b;
        }
    }
    let mut rows = Vec::new();
    let mut all_hist = BTreeMap::new();
    for ((name, ts), bits) in eval.iter().zip(&layer_bits) {
        let hist = layer_histogram(ts)?;
        for (&v, &c) in &hist {
            *all_hist.entry(v).or_insert(0) += c;
        }
        let row_ids = &ids[rows.len()];
        rows.push(make_row(name, ts.len(), &hist, q, ts[0].quant().map(|p| p.x_max), opts, bits, Some(row_ids)));
    }
    let total_bits: Vec<u64> = (0..ncodec).map(|c| layer_bits.iter().map(|b| b[c]).sum()).collect();
    let tensors = eval.iter().map(|(_, t)| t.len()).sum();
    let aggregate = make_row("all", tensors, &all_hist, q, None, opts, &total_bits, None);
    let verified_blobs = results.len() * ids.first().map_or(0, |r| r.iter().flatten().count());
    Ok((
        CompressionReport {
            variant: opts.variant.clone(),
            q,
            source_bits: SOURCE_BITS,
            layers: rows,
            aggregate,
            verified_blobs,
        },
        entries,
    ))
}

#[allow(clippy::too_many_arguments)]
fn make_row(
    name: &str,
    tensors: usize,
    hist: &BTreeMap<u32, u64>,
    q: u32,
    x_max: Option<f32>,
    opts: &CompressOptions,
    bits: &[u64],
    ids: Option<&Vec<Option<CodecId>>>,
) -> LayerRow {
    let elements: u64 = hist.values().sum();
    let nonzero = elements - hist.get(&0).copied().unwrap_or(0);
    let raw_bits = elements * q as u64;
    LayerRow {
        layer: name.to_string(),
        tensors,
        elements,
        nonzero,
        nonzero_fraction: if elements == 0 { 0.0 } else { nonzero as f64 / elements as f64 },
        entropy_bits: entropy_bits(hist),
        raw_bits,
        x_max,
        codecs: opts
            .codecs
            .iter()
            .enumerate()
            .map(|(c, spec)| {
                let (entropy_gain, total_gain) = gains(raw_bits, bits[c], q);
                let k = ids
                    .and_then(|ids| ids[c])
                    .filter(|id| id.kind.has_order())
                    .map(|id| id.k as u32);
                CodecResult {
                    codec: spec.label().to_string(),
                    k,
                    compressed_bits: bits[c],
                    entropy_gain,
                    total_gain,
                }
            })
            .collect(),
    }
}

/// Writes `report.csv` and `report.json` into `dir`.
pub fn write_report(report: &CompressionReport, dir: &Path) -> Result<(), PipelineError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let json = dir.join("report.json");
    let text = serde_json::to_string_pretty(report).expect("serializable") + "\n";
    std::fs::write(&json, text).map_err(io_err(&json))?;
    let csv_path = dir.join("report.csv");
    std::fs::write(&csv_path, report_csv(report)).map_err(io_err(&csv_path))
}

/// One row per layer plus the aggregate, with a `k`, total-gain and
/// entropy-gain column per codec.
pub fn report_csv(report: &CompressionReport) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = ["variant", "layer", "index", "elements", "nonzero_fraction", "entropy_bits"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for c in &report.aggregate.codecs {
        header.push(format!("{}_k", c.codec));
        header.push(format!("{}_total_gain", c.codec));
        header.push(format!("{}_entropy_gain", c.codec));
    }
    w.write_record(&header).expect("in-memory write");
    let rows = report.layers.iter().enumerate().map(|(i, r)| (i.to_string(), r));
    for (index, row) in rows.chain(std::iter::once((String::new(), &report.aggregate))) {
        let mut rec = vec![
            report.variant.clone(),
            row.layer.clone(),
            index,
            row.elements.to_string(),
            format!("{:.6}", row.nonzero_fraction),
            format!("{:.6}", row.entropy_bits),
        ];
        for c in &row.codecs {
            rec.push(c.k.map(|k| k.to_string()).unwrap_or_default());
            rec.push(format!("{:.4}", c.total_gain));
            rec.push(format!("{:.4}", c.entropy_gain));
        }
        w.write_record(&rec).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flushed")).expect("utf-8")
}

pub fn read_blob_index(dir: &Path) -> Result<Vec<BlobEntry>, PipelineError> {
    let path = dir.join(BLOB_INDEX_FILE);
    let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| PipelineError::Config(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}

/// Decodes one indexed blob back to a quantized tensor.
pub fn decode_entry(dir: &Path, e: &BlobEntry) -> Result<ActivationTensor, PipelineError> {
    let path = dir.join(&e.path);
    let bytes = std::fs::read(&path).map_err(io_err(&path))?;
    let blob = EncodedBlob::from_bytes(&bytes)?;
    if blob.q as u32 != e.q {
        return Err(PipelineError::Config(format!("{}: blob q {} disagrees with index", e.path, blob.q)));
    }
    Ok(crate::codecs::decode_tensor(&blob, &e.layer, e.dims, e.x_max)?)
}

/// Per-layer histogram of quantized values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramRow {
    pub layer: String,
    pub q: u32,
    /// Counts folded into at most 256 equal-width bins.
    pub bins: Vec<u64>,
    /// `log10(count + 1)` per bin.
    pub log_counts: Vec<f64>,
    /// Entropy of the full `2^q`-symbol histogram.
    pub entropy_bits: f64,
}

pub fn histogram_report(set: &LayerSet) -> Result<Vec<HistogramRow>, PipelineError> {
    set.iter()
        .map(|(name, ts)| {
            let q = ts
                .first()
                .and_then(|t| t.quant())
                .ok_or_else(|| PipelineError::Config(format!("layer `{name}` is not quantized")))?
                .bits
                .get();
            let hist = layer_histogram(ts)?;
            let shift = q.saturating_sub(8);
            let mut bins = vec![0u64; 1 << (q - shift)];
            for (&v, &c) in &hist {
                bins[(v >> shift) as usize] += c;
            }
            Ok(HistogramRow {
                layer: name.clone(),
                q,
                log_counts: bins.iter().map(|&c| (c as f64 + 1.0).log10()).collect(),
                bins,
                entropy_bits: entropy_bits(&hist),
            })
        })
        .collect()
}

/// Baseline against sparse per-layer entropy; `true` marks layers where the
/// sparse model's entropy is not higher.
pub fn entropy_comparison(baseline: &[HistogramRow], sparse: &[HistogramRow]) -> Vec<(String, f64, f64, bool)> {
    baseline
        .iter()
        .filter_map(|b| {
            sparse
                .iter()
                .find(|s| s.layer == b.layer)
                .map(|s| (b.layer.clone(), b.entropy_bits, s.entropy_bits, s.entropy_bits <= b.entropy_bits))
        })
        .collect()
}

/// Aggregate total gain of `codec` on the full dump and on a random half of
/// its batches (the same batch indices in every layer).
pub fn split_stability(
    eval: &LayerSet,
    orders: &BTreeMap<(String, &'static str), u32>,
    codec: CodecSpec,
    seed: u64,
) -> Result<(f64, f64), PipelineError> {
    let opts = CompressOptions {
        variant: "split".into(),
        codecs: vec![codec],
        out_dir: None,
        jobs: 0,
    };
    let count = eval.iter().map(|(_, t)| t.len()).min().unwrap_or(0);
    if count < 2 {
        return Err(PipelineError::Config("need at least two batches per layer to split".into()));
    }
    let mut idx: Vec<usize> = (0..count).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx.truncate(count / 2);
    idx.sort_unstable();
    let half: LayerSet = eval
        .iter()
        .map(|(n, ts)| (n.clone(), idx.iter().map(|&i| ts[i].clone()).collect()))
        .collect();
    let full = compress(eval, None, orders, &opts)?.0.aggregate.codecs[0].total_gain;
    let part = compress(&half, None, orders, &opts)?.0.aggregate.codecs[0].total_gain;
    Ok((full, part))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codecs::golomb::{eg_len, seg_len};
    use rand::Rng;

    fn qt(layer: &str, values: Vec<u16>, q: u32, x_max: f32) -> ActivationTensor {
        let n = values.len() as u32;
        ActivationTensor {
            layer: layer.into(),
            dims: [1, 1, 1, n],
            data: TensorData::Quantized {
                params: QuantParams::new(Bitwidth::new(q).unwrap(), x_max).unwrap(),
                values,
            },
        }
    }

    fn sparse_values(rng: &mut ChaCha8Rng, n: usize, density: f64, q: u32) -> Vec<u16> {
        (0..n)
            .map(|_| {
                if rng.gen_bool(density) {
                    // a geometric-ish tail
                    let u: f64 = rng.gen_range(1e-6..1.0);
                    ((-u.ln() * 300.0) as u32).min((1 << q) - 1) as u16
                } else {
                    0
                }
            })
            .collect()
    }

    fn opts(codecs: Vec<CodecSpec>) -> CompressOptions {
        CompressOptions {
            variant: "test".into(),
            codecs,
            out_dir: None,
            jobs: 1,
        }
    }

    #[test]
    fn entropy_oracle_cases() {
        assert_eq!(entropy_bits(&BTreeMap::from([(0, 100)])), 0.0);
        let uniform: BTreeMap<u32, u64> = (0..256).map(|v| (v, 4)).collect();
        assert!((entropy_bits(&uniform) - 8.0).abs() < 1e-12);
    }

    #[test]
    fn k_search_zero_tensors_ties_to_one() {
        let ts = vec![qt("a", vec![0; 500], 16, 1.0), qt("a", vec![0; 300], 16, 1.0)];
        let r = search_k(&ts, CodecKind::Seg, default_k_range(CodecKind::Seg)).unwrap();
        assert_eq!(r.k, 1);
        assert!(r.bits.iter().all(|&(_, b)| b == 800));
    }

    #[test]
    fn k_search_constant_4096() {
        let ts = vec![qt("a", vec![4096; 100], 16, 1.0)];
        let r = search_k(&ts, CodecKind::Eg, 0..=15).unwrap();
        // brute force from the length function
        let best = (0..=15u32).min_by_key(|&k| (eg_len(4096, k), k)).unwrap();
        assert_eq!(r.k, best);
        assert_eq!(eg_len(4096, 0), 25);
        assert!(eg_len(4096, r.k) < 25);
        assert_eq!(r.bits[r.k as usize].1, 100 * eg_len(4096, r.k) as u64);
    }

    #[test]
    fn k_search_matches_brute_force_encoding() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let ts: Vec<_> = (0..3).map(|_| qt("a", sparse_values(&mut rng, 2000, 0.3, 16), 16, 1.0)).collect();
        for kind in [CodecKind::Eg, CodecKind::Seg] {
            let r = search_k(&ts, kind, default_k_range(kind)).unwrap();
            let mut best = (u64::MAX, 0);
            for k in default_k_range(kind) {
                let bits: u64 = ts
                    .iter()
                    .map(|t| encode_symbols(&t.symbols().unwrap(), CodecId::new(kind, k).unwrap(), 16).unwrap().payload_bits)
                    .sum();
                if bits < best.0 {
                    best = (bits, k);
                }
            }
            assert_eq!(r.k, best.1);
        }
        assert!(search_k(&[], CodecKind::Seg, 1..=15).is_err());
        assert!(search_k(&ts, CodecKind::Zvc, 0..=15).is_err());
    }

    #[test]
    fn raw_only_gains_are_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let set: LayerSet = vec![("a".into(), vec![qt("a", sparse_values(&mut rng, 999, 0.5, 12), 12, 2.0)])];
        let (r, _) = compress(&set, None, &BTreeMap::new(), &opts(vec!["raw".parse().unwrap()])).unwrap();
        assert_eq!(r.aggregate.codecs[0].entropy_gain, 1.0);
        assert_eq!(r.aggregate.codecs[0].total_gain, 32.0 / 12.0);
        assert_eq!(r.layers[0].codecs[0].entropy_gain, 1.0);
    }

    #[test]
    fn aggregate_uses_summed_bits() {
        let set: LayerSet = vec![
            ("a".into(), vec![qt("a", vec![0; 1000], 16, 1.0)]),
            ("b".into(), vec![qt("b", vec![7; 10], 16, 1.0)]),
        ];
        let orders = BTreeMap::from([(("a".to_string(), "seg"), 3), (("b".to_string(), "seg"), 3)]);
        let (r, _) = compress(&set, None, &orders, &opts(vec!["seg".parse().unwrap()])).unwrap();
        let a = r.layers[0].codecs[0].compressed_bits;
        let b = r.layers[1].codecs[0].compressed_bits;
        assert_eq!(a, 1000);
        assert_eq!(b, 10 * seg_len(7, 3) as u64);
        let agg = &r.aggregate.codecs[0];
        assert_eq!(agg.compressed_bits, a + b);
        assert_eq!(agg.entropy_gain, (1010.0 * 16.0) / (a + b) as f64);
        assert_eq!(r.aggregate.nonzero, 10);
        assert_eq!(r.layers[0].codecs[0].k, Some(3));
    }

    #[test]
    fn seg_beats_eg_on_sparse_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cal: LayerSet = vec![("a".into(), vec![qt("a", sparse_values(&mut rng, 5000, 0.3, 16), 16, 1.0)])];
        let eval: LayerSet = vec![("a".into(), vec![qt("a", sparse_values(&mut rng, 5000, 0.3, 16), 16, 1.0)])];
        let specs: Vec<CodecSpec> = ["eg", "seg", "zvc", "huffman", "zlib"].iter().map(|s| s.parse().unwrap()).collect();
        let orders = resolve_orders(&specs, Some(&cal), &["a".into()]).unwrap();
        let (r, _) = compress(&eval, None, &orders, &opts(specs)).unwrap();
        let g = |c: &str| r.aggregate.codec(c).unwrap().total_gain;
        assert!(g("seg") > g("eg"), "{r:?}");
        assert!(g("zlib") > 1.0);
        assert_eq!(r.verified_blobs, 4);
    }

    #[test]
    fn auto_k_without_calibration_is_an_error() {
        let specs = vec!["seg".parse().unwrap()];
        assert!(resolve_orders(&specs, None, &["a".into()]).is_err());
    }

    #[test]
    fn blobs_written_and_decodable() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = qt("conv/1", sparse_values(&mut rng, 300, 0.4, 8), 8, 3.5);
        let set: LayerSet = vec![("conv/1".into(), vec![t.clone()])];
        let mut o = opts(CodecSpec::standard_set());
        o.out_dir = Some(dir.path().to_path_buf());
        let orders = resolve_orders(&o.codecs, Some(&set), &["conv/1".into()]).unwrap();
        let (_, entries) = compress(&set, Some(&[vec![7]]), &orders, &o).unwrap();
        assert_eq!(entries.len(), 5);
        assert_eq!(read_blob_index(dir.path()).unwrap(), entries);
        assert!(dir.path().join("seg/conv_1/00007.segb").is_file());
        for e in &entries {
            assert_eq!(decode_entry(dir.path(), e).unwrap(), t);
        }
    }

    #[test]
    fn job_count_does_not_change_results() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let set: LayerSet = vec![(
            "a".into(),
            (0..6).map(|_| qt("a", sparse_values(&mut rng, 400, 0.3, 16), 16, 1.0)).collect(),
        )];
        let orders = resolve_orders(&CodecSpec::standard_set(), Some(&set), &["a".into()]).unwrap();
        let mut o = opts(CodecSpec::standard_set());
        let (one, _) = compress(&set, None, &orders, &o).unwrap();
        o.jobs = 3;
        let (three, _) = compress(&set, None, &orders, &o).unwrap();
        assert_eq!(one, three);
        assert_eq!(report_csv(&one), report_csv(&three));
    }

    #[test]
    fn histogram_bins_fold_to_256() {
        let set: LayerSet = vec![("a".into(), vec![qt("a", vec![0, 0, 255, 256, 65535], 16, 1.0)])];
        let h = histogram_report(&set).unwrap();
        assert_eq!(h[0].bins.len(), 256);
        assert_eq!(h[0].bins[0], 3);
        assert_eq!(h[0].bins[1], 1);
        assert_eq!(h[0].bins[255], 1);
        let flat: LayerSet = vec![("a".into(), vec![qt("a", (0..=255).collect(), 8, 1.0)])];
        assert!((histogram_report(&flat).unwrap()[0].entropy_bits - 8.0).abs() < 1e-12);
        let cmp = entropy_comparison(&histogram_report(&flat).unwrap(), &h);
        assert_eq!(cmp.len(), 1);
        assert!(cmp[0].3);
    }

    #[test]
    fn calibrate_then_quantize() {
        let f = ActivationTensor::from_f32("a", [1, 1, 1, 3], vec![0.0, 1.0, 2.0]).unwrap();
        let set: LayerSet = vec![("a".into(), vec![f])];
        let p = calibrate(&set, Bitwidth::new(8).unwrap()).unwrap();
        assert_eq!(p["a"].x_max, 2.0);
        let q = quantize_set(&set, &p).unwrap();
        assert_eq!(q[0].1[0].symbols().unwrap(), vec![0, 128, 255]);
        assert_eq!(stored_params(&q).unwrap(), p);
        assert!(quantize_set(&set, &BTreeMap::new()).is_err());
    }
}
