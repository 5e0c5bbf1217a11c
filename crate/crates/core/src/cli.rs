//! Command-line front end.
//!
//! Exit codes: 0 success, 2 usage error, 3 data or format error, 4 a
//! decoded tensor did not match its source.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::codecs::CodecKind;
use crate::pipeline::{
    self, calibrate, compress, decode_entry, default_k_range, histogram_report, load_manifest, quantize_set,
    read_blob_index, resolve_orders, search_k, stored_params, write_report, CodecSpec, CompressOptions,
    CompressionReport, KSpec, LayerSet, PipelineError,
};
use crate::quantizer::Bitwidth;
use crate::sparsetrain::data::{load_mnist, synthetic_digits, Dataset};
use crate::sparsetrain::train::{
    dump_activations, evaluate, finetune, lenet5_network, pretrain, write_curve_csv, EpochStats, TrainConfig,
};
use crate::sparsetrain::{speedup, SpeedupConvention, TrainError};
use crate::tensorio::{save_tensor, ActivationTensor, Manifest};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_VERIFY: i32 = 4;

const FORMATS: &str = "Formats: tensor files AMC1 v1, compressed blobs SEGB v1, manifest.jsonl.";
const DEFAULT_SEED: u64 = 1;

#[derive(Debug, Parser)]
#[command(name = "amc", version, about = "Activation map sparsification, quantization and entropy coding")]
#[command(after_help = FORMATS)]
pub struct Cli {
    /// Seed for every random choice. Falls back to AMC_SEED, then to the
    /// config file, then to 1.
    #[arg(long, global = true, env = "AMC_SEED")]
    pub seed: Option<u64>,
    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a LeNet-5 baseline, fine-tune it with the activation penalty and
    /// dump both models' activations.
    #[command(after_help = FORMATS)]
    TrainDemo(TrainDemoArgs),
    /// Calibrate and quantize float tensors.
    #[command(after_help = FORMATS)]
    Quantize(QuantizeArgs),
    /// Encode tensors with one or more codecs and write a report.
    #[command(after_help = FORMATS)]
    Compress(CompressArgs),
    /// Decode blobs written by `compress`, optionally checking them.
    #[command(after_help = FORMATS)]
    Decompress(DecompressArgs),
    /// Pick the exponential-Golomb order per layer.
    #[command(name = "search-k", after_help = FORMATS)]
    SearchK(SearchKArgs),
    /// Per-layer nonzero fractions (and entropy for quantized tensors).
    #[command(after_help = FORMATS)]
    Stats(StatsArgs),
    /// Compare a baseline and a sparse compression report.
    #[command(after_help = FORMATS)]
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct TrainDemoArgs {
    /// Directory with the MNIST IDX files. Without it, or with
    /// `--synthetic`, procedurally generated digits are used.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Use this many synthetic training digits instead of MNIST.
    #[arg(long)]
    pub synthetic: Option<usize>,
    /// TOML training configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Override the pretraining epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Override the fine-tuning epochs.
    #[arg(long)]
    pub finetune_epochs: Option<usize>,
    /// Cap the number of training samples.
    #[arg(long)]
    pub limit: Option<usize>,
    /// Samples dumped for calibration and k search.
    #[arg(long, default_value_t = 1000)]
    pub calibration: usize,
    /// Samples per dumped tensor.
    #[arg(long, default_value_t = 100)]
    pub dump_batch: usize,
}

#[derive(Debug, Args)]
pub struct QuantizeArgs {
    /// Directory (or manifest.jsonl) of float tensors.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 16)]
    pub q: u32,
    /// Float tensors to take the per-layer maximum from; defaults to the
    /// input itself.
    #[arg(long)]
    pub calibration: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompressArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Codecs: raw, eg, seg, zvc, huffman, zlib or all. Repeat or separate
    /// with commas.
    #[arg(long, value_delimiter = ',', default_value = "all")]
    pub codec: Vec<String>,
    /// Golomb order: a number in 0..=15, or `auto` to search it per layer on
    /// `--train-manifest`.
    #[arg(long, default_value = "auto")]
    pub k: String,
    /// Bitwidth for float inputs (8, 12 or 16).
    #[arg(long, default_value_t = 16)]
    pub q: u32,
    /// Calibration tensors for x_max and the k search.
    #[arg(long)]
    pub train_manifest: Option<PathBuf>,
    /// Label stored in the report, e.g. baseline or sparse.
    #[arg(long, default_value = "model")]
    pub variant: String,
}

#[derive(Debug, Args)]
pub struct DecompressArgs {
    /// Output directory of `compress`.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Write decoded tensors here as AMC1 files with a manifest.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Compare every decoded tensor with these sources (float sources are
    /// quantized with the blob's parameters first).
    #[arg(long)]
    pub verify: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SearchKArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, default_value = "seg")]
    pub codec: String,
    #[arg(long, default_value_t = 16)]
    pub q: u32,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Print JSON instead of a table.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// report.json of the baseline model (or the directory holding it).
    #[arg(long)]
    pub baseline: PathBuf,
    /// report.json of the sparse model (or the directory holding it).
    #[arg(long)]
    pub sparse: PathBuf,
    /// Also write the comparison as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Data(String),
    Verify(String),
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Verification { .. } => Failure::Verify(e.to_string()),
            e => Failure::Data(e.to_string()),
        }
    }
}

impl From<TrainError> for Failure {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(m) => Failure::Usage(m),
            e => Failure::Data(e.to_string()),
        }
    }
}

impl From<crate::tensorio::TensorIoError> for Failure {
    fn from(e: crate::tensorio::TensorIoError) -> Self {
        Failure::Data(e.to_string())
    }
}

fn usage<T>(m: impl Into<String>) -> Result<T, Failure> {
    Err(Failure::Usage(m.into()))
}

/// Parses `argv` (program name first) and runs the command.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            let (code, kind, msg) = match f {
                Failure::Usage(m) => (EXIT_USAGE, "usage", m),
                Failure::Data(m) => (EXIT_DATA, "data", m),
                Failure::Verify(m) => (EXIT_VERIFY, "verification", m),
            };
            eprintln!("error[{kind}]: {msg}");
            code
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    let jobs = cli.jobs;
    match cli.command {
        Command::TrainDemo(a) => train_demo(a, cli.seed),
        Command::Quantize(a) => quantize_cmd(a),
        Command::Compress(a) => compress_cmd(a, jobs),
        Command::Decompress(a) => decompress_cmd(a),
        Command::SearchK(a) => search_k_cmd(a),
        Command::Stats(a) => stats_cmd(a),
        Command::Report(a) => report_cmd(a),
    }
}

fn bitwidth(q: u32) -> Result<Bitwidth, Failure> {
    Bitwidth::new(q).map_err(|e| Failure::Usage(e.to_string()))
}

fn read_set(dir: &Path) -> Result<(Manifest, LayerSet, Vec<Vec<u64>>), Failure> {
    let m = Manifest::read(dir)?;
    if m.entries.is_empty() {
        return Err(Failure::Data(format!("{} lists no tensors", dir.display())));
    }
    let (set, batches) = load_manifest(&m)?;
    Ok((m, set, batches))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).expect("serializable") + "\n";
    std::fs::write(path, text).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn write_set(dir: &Path, set: &LayerSet, batches: &[Vec<u64>], role: &str) -> Result<(), Failure> {
    let mut m = Manifest::new(dir);
    for ((_, ts), b) in set.iter().zip(batches) {
        for (t, &batch) in ts.iter().zip(b) {
            m.add(t, batch, role)?;
        }
    }
    m.write()?;
    Ok(())
}

fn parse_codecs(names: &[String], k: &str) -> Result<Vec<CodecSpec>, Failure> {
    let kspec = if k.eq_ignore_ascii_case("auto") {
        KSpec::Auto
    } else {
        match k.parse::<u32>() {
            Ok(k) if k <= 15 => KSpec::Fixed(k),
            _ => return usage(format!("--k must be `auto` or 0..=15, got `{k}`")),
        }
    };
    let mut out = Vec::new();
    for n in names {
        let specs = if n.eq_ignore_ascii_case("all") {
            CodecSpec::standard_set()
        } else {
            vec![n.parse::<CodecSpec>().map_err(|e| Failure::Usage(e.to_string()))?]
        };
        for s in specs {
            let s = match s {
                CodecSpec::Coder(kind, _) if kind.has_order() => CodecSpec::Coder(kind, kspec),
                s => s,
            };
            if !out.contains(&s) {
                out.push(s);
            }
        }
    }
    Ok(out)
}

fn train_data(a: &TrainDemoArgs, seed: u64) -> Result<(Dataset, Dataset, String), Failure> {
    if let (Some(dir), None) = (&a.data, a.synthetic) {
        let (train, test) = load_mnist(dir)?;
        return Ok((train, test, format!("mnist:{}", dir.display())));
    }
    let n = a.synthetic.unwrap_or(12_000);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xda7a);
    let train = synthetic_digits(n, &mut rng);
    let test = synthetic_digits((n / 5).max(100), &mut rng);
    Ok((train, test, format!("synthetic:{n}")))
}

#[derive(Serialize)]
struct TrainSummary {
    data: String,
    config: TrainConfig,
    baseline: EpochStats,
    sparse: EpochStats,
    selected_epoch: usize,
    speedup_ratio: f64,
    speedup_percent: f64,
}

fn dump_dir(net: &crate::sparsetrain::Network<f32>, data: &Dataset, dir: &Path, batch: usize, role: &str) -> Result<(), Failure> {
    let order: Vec<String> = net.activation_layers().iter().map(|&i| net.layers()[i].name.clone()).collect();
    let set = pipeline::layer_set(dump_activations(net, data, batch)?, &order);
    let batches: Vec<Vec<u64>> = set.iter().map(|(_, ts)| (0..ts.len() as u64).collect()).collect();
    write_set(dir, &set, &batches, role)
}

fn train_demo(a: TrainDemoArgs, seed_flag: Option<u64>) -> Result<(), Failure> {
    let mut cfg = match &a.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    // flags and AMC_SEED win over the file
    if let Some(s) = seed_flag {
        cfg.seed = s;
    } else if a.config.is_none() {
        cfg.seed = DEFAULT_SEED;
    }
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(e) = a.finetune_epochs {
        cfg.finetune_epochs = e;
    }
    cfg.validate()?;
    if a.dump_batch == 0 {
        return usage("--dump-batch must be positive");
    }
    let (train, test, source) = train_data(&a, cfg.seed)?;
    let mut train = train;
    if let Some(l) = a.limit {
        train = train.range(0, l.min(train.len()));
    }
    let val_size = cfg.validation_size.min(train.len() / 5);
    let (fit, val) = train.split_tail(val_size);
    let mut cal_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xca1);
    let cal = fit.sample(a.calibration.min(fit.len()), &mut cal_rng);

    std::fs::create_dir_all(&a.out).map_err(|e| Failure::Data(format!("{}: {e}", a.out.display())))?;
    let mut net = lenet5_network(&cfg)?;
    let mut curve = pretrain(&mut net, &fit, &val, &cfg, |s| {
        eprintln!("pretrain epoch {:>3}  top1 {:.4}  nonzero {:.4}", s.epoch, s.top1, s.nonzero_fraction)
    })?;
    let ft = finetune(&net, &fit, &val, &cfg, |s| {
        eprintln!("finetune epoch {:>3}  top1 {:.4}  nonzero {:.4}", s.epoch, s.top1, s.nonzero_fraction)
    })?;
    let pre = curve.len();
    curve.extend(ft.curve.iter().skip(1).map(|s| EpochStats {
        epoch: s.epoch + pre,
        ..s.clone()
    }));
    let curve_path = a.out.join("curve.csv");
    let f = std::fs::File::create(&curve_path).map_err(|e| Failure::Data(format!("{}: {e}", curve_path.display())))?;
    write_curve_csv(&curve, f)?;

    let base = evaluate(&net, &test, 500)?;
    let sparse = evaluate(&ft.net, &test, 500)?;
    for (name, model) in [("baseline", &net), ("sparse", &ft.net)] {
        let dir = a.out.join(name);
        dump_dir(model, &cal, &dir.join("cal"), a.dump_batch, "calibration")?;
        dump_dir(model, &test, &dir.join("eval"), a.dump_batch, "evaluation")?;
    }
    let summary = TrainSummary {
        data: source,
        config: cfg,
        speedup_ratio: speedup(base.nonzero as f64, sparse.nonzero as f64, SpeedupConvention::Ratio),
        speedup_percent: speedup(base.nonzero as f64, sparse.nonzero as f64, SpeedupConvention::Percent),
        baseline: base,
        sparse,
        selected_epoch: ft.selected,
    };
    write_json(&a.out.join("summary.json"), &summary)?;
    println!(
        "baseline top1 {:.4} nonzero {:.4} | sparse top1 {:.4} nonzero {:.4} | speed-up {:.2}x",
        summary.baseline.top1,
        summary.baseline.nonzero_fraction,
        summary.sparse.top1,
        summary.sparse.nonzero_fraction,
        summary.speedup_ratio
    );
    Ok(())
}

fn quantize_cmd(a: QuantizeArgs) -> Result<(), Failure> {
    let bits = bitwidth(a.q)?;
    let (_, set, batches) = read_set(&a.input)?;
    let cal = match &a.calibration {
        Some(c) => read_set(c)?.1,
        None => set.clone(),
    };
    let params = calibrate(&cal, bits)?;
    let q = quantize_set(&set, &params)?;
    write_set(&a.out, &q, &batches, "quantized")?;
    for (layer, p) in &params {
        println!("{layer}\tq={}\tx_max={}", p.bits.get(), p.x_max);
    }
    Ok(())
}

/// Quantizes `set` unless it already is, calibrating on `cal` (or on the
/// set itself).
fn ensure_quantized(set: &LayerSet, cal: Option<&LayerSet>, bits: Bitwidth) -> Result<(LayerSet, Option<LayerSet>), Failure> {
    let params = match stored_params(set) {
        Some(p) => p,
        None => calibrate(cal.unwrap_or(set), bits)?,
    };
    let q = quantize_set(set, &params)?;
    let qcal = match cal {
        Some(c) => Some(quantize_set(c, &params)?),
        None => None,
    };
    Ok((q, qcal))
}

fn compress_cmd(a: CompressArgs, jobs: usize) -> Result<(), Failure> {
    let bits = bitwidth(a.q)?;
    let specs = parse_codecs(&a.codec, &a.k)?;
    let needs_search = specs.iter().any(|s| matches!(s, CodecSpec::Coder(_, KSpec::Auto)));
    if needs_search && a.train_manifest.is_none() {
        return usage("--k auto needs --train-manifest");
    }
    let (_, set, batches) = read_set(&a.input)?;
    let cal = match &a.train_manifest {
        Some(p) => Some(read_set(p)?.1),
        None => None,
    };
    let (eval, qcal) = ensure_quantized(&set, cal.as_ref(), bits)?;
    let layers: Vec<String> = eval.iter().map(|(n, _)| n.clone()).collect();
    let orders = resolve_orders(&specs, qcal.as_ref(), &layers)?;
    let opts = CompressOptions {
        variant: a.variant.clone(),
        codecs: specs,
        out_dir: Some(a.out.clone()),
        jobs,
    };
    let (report, entries) = compress(&eval, Some(&batches), &orders, &opts)?;
    write_report(&report, &a.out)?;
    write_json(&a.out.join("histograms.json"), &histogram_report(&eval)?)?;
    print_report(&report);
    eprintln!("{} blobs verified, written under {}", entries.len(), a.out.display());
    Ok(())
}

fn print_report(r: &CompressionReport) {
    print!("{:<12} {:>9} {:>8}", "layer", "nonzero%", "H(bits)");
    for c in &r.aggregate.codecs {
        print!(" {:>16}", c.codec);
    }
    println!();
    for row in r.layers.iter().chain(std::iter::once(&r.aggregate)) {
        print!("{:<12} {:>9.2} {:>8.3}", row.layer, 100.0 * row.nonzero_fraction, row.entropy_bits);
        for c in &row.codecs {
            let k = c.k.map(|k| format!(" k={k}")).unwrap_or_default();
            print!(" {:>16}", format!("{:.2}x ({:.2}x){k}", c.total_gain, c.entropy_gain));
        }
        println!();
    }
}

fn decompress_cmd(a: DecompressArgs) -> Result<(), Failure> {
    let entries = read_blob_index(&a.input)?;
    let sources: Option<BTreeMap<(String, u64), ActivationTensor>> = match &a.verify {
        Some(dir) => {
            let (_, set, batches) = read_set(dir)?;
            let mut map = BTreeMap::new();
            for ((_, ts), b) in set.into_iter().zip(batches) {
                for (t, batch) in ts.into_iter().zip(b) {
                    map.insert((t.layer.clone(), batch), t);
                }
            }
            Some(map)
        }
        None => None,
    };
    let mut out = a.out.as_ref().map(|d| (d.clone(), Manifest::new(d)));
    let mut checked = 0usize;
    for e in &entries {
        let t = decode_entry(&a.input, e)?;
        if let Some(src) = &sources {
            let s = src
                .get(&(e.layer.clone(), e.batch))
                .ok_or_else(|| Failure::Verify(format!("{}: no source tensor for layer {} batch {}", e.path, e.layer, e.batch)))?;
            let expect = match s.quant() {
                Some(_) => s.clone(),
                None => crate::quantizer::quantize_tensor(s, t.quant().expect("decoded tensors are quantized"))
                    .map_err(|err| Failure::Data(err.to_string()))?,
            };
            let (mut x, mut y) = (Vec::new(), Vec::new());
            save_tensor(&t, &mut x)?;
            save_tensor(&expect, &mut y)?;
            if x != y {
                return Err(Failure::Verify(format!("{} does not match its source", e.path)));
            }
            checked += 1;
        }
        if let Some((_, m)) = out.as_mut() {
            // one output tree per codec keeps identical tensors apart
            let mut sub = Manifest::new(m.dir.join(&e.codec));
            sub.add(&t, e.batch, "decoded")?;
            m.entries.push(crate::tensorio::ManifestEntry {
                path: format!("{}/{}", e.codec, sub.entries[0].path),
                ..sub.entries.remove(0)
            });
        }
    }
    if let Some((_, m)) = out {
        m.write()?;
    }
    if a.verify.is_some() {
        println!("{checked} of {} blobs match their sources", entries.len());
    } else {
        println!("{} blobs decoded", entries.len());
    }
    Ok(())
}

fn search_k_cmd(a: SearchKArgs) -> Result<(), Failure> {
    let kind: CodecKind = a.codec.parse().map_err(|e: crate::codecs::CodecError| Failure::Usage(e.to_string()))?;
    if !kind.has_order() {
        return usage(format!("{kind} has no order to search"));
    }
    let (_, set, _) = read_set(&a.input)?;
    let (q, _) = ensure_quantized(&set, None, bitwidth(a.q)?)?;
    for (layer, ts) in &q {
        let r = search_k(ts, kind, default_k_range(kind))?;
        let best = r.bits.iter().find(|b| b.0 == r.k).map_or(0, |b| b.1);
        println!("{layer}\t{kind}\tk={}\tbits={best}", r.k);
    }
    Ok(())
}

#[derive(Serialize)]
struct StatsRow {
    layer: String,
    tensors: usize,
    elements: u64,
    nonzero: u64,
    nonzero_fraction: f64,
    entropy_bits: Option<f64>,
}

fn stats_cmd(a: StatsArgs) -> Result<(), Failure> {
    let (_, set, _) = read_set(&a.input)?;
    let hist = stored_params(&set).map(|_| histogram_report(&set)).transpose()?;
    let mut rows = Vec::new();
    let (mut nz, mut total) = (0u64, 0u64);
    for (i, (layer, ts)) in set.iter().enumerate() {
        let n: u64 = ts.iter().map(|t| t.element_count()).sum();
        let z: u64 = ts.iter().map(|t| t.nonzero_count()).sum();
        nz += z;
        total += n;
        rows.push(StatsRow {
            layer: layer.clone(),
            tensors: ts.len(),
            elements: n,
            nonzero: z,
            nonzero_fraction: if n == 0 { 0.0 } else { z as f64 / n as f64 },
            entropy_bits: hist.as_ref().map(|h| h[i].entropy_bits),
        });
    }
    rows.push(StatsRow {
        layer: "all".into(),
        tensors: set.iter().map(|(_, t)| t.len()).sum(),
        elements: total,
        nonzero: nz,
        nonzero_fraction: if total == 0 { 0.0 } else { nz as f64 / total as f64 },
        entropy_bits: None,
    });
    if a.json {
        println!("{}", serde_json::to_string_pretty(&rows).expect("serializable"));
    } else {
        println!("{:<12} {:>8} {:>12} {:>10}", "layer", "tensors", "elements", "nonzero%");
        for r in &rows {
            let h = r.entropy_bits.map(|h| format!("  H={h:.3}")).unwrap_or_default();
            println!("{:<12} {:>8} {:>12} {:>10.2}{h}", r.layer, r.tensors, r.elements, 100.0 * r.nonzero_fraction);
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct Comparison {
    layer: String,
    baseline_nonzero: f64,
    sparse_nonzero: f64,
    baseline_entropy: f64,
    sparse_entropy: f64,
    sparse_entropy_lower: bool,
    gains: Vec<(String, f64, f64)>,
}

fn read_report(p: &Path) -> Result<CompressionReport, Failure> {
    let path = if p.is_dir() { p.join("report.json") } else { p.to_path_buf() };
    let text = std::fs::read_to_string(&path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn report_cmd(a: ReportArgs) -> Result<(), Failure> {
    let b = read_report(&a.baseline)?;
    let s = read_report(&a.sparse)?;
    let mut rows = Vec::new();
    for br in b.layers.iter().chain(std::iter::once(&b.aggregate)) {
        let sr = match s.layers.iter().chain(std::iter::once(&s.aggregate)).find(|r| r.layer == br.layer) {
            Some(r) => r,
            None => continue,
        };
        let gains = br
            .codecs
            .iter()
            .filter_map(|c| sr.codec(&c.codec).map(|d| (c.codec.clone(), c.total_gain, d.total_gain)))
            .collect();
        rows.push(Comparison {
            layer: br.layer.clone(),
            baseline_nonzero: br.nonzero_fraction,
            sparse_nonzero: sr.nonzero_fraction,
            baseline_entropy: br.entropy_bits,
            sparse_entropy: sr.entropy_bits,
            sparse_entropy_lower: sr.entropy_bits <= br.entropy_bits,
            gains,
        });
    }
    println!("{:<12} {:>14} {:>16}  total gain baseline -> sparse", "layer", "nonzero%", "entropy");
    for r in &rows {
        let flag = if r.sparse_entropy_lower { "" } else { "  (entropy not lower)" };
        let g: Vec<String> = r.gains.iter().map(|(c, x, y)| format!("{c} {x:.2}->{y:.2}")).collect();
        println!(
            "{:<12} {:>6.2}->{:<6.2} {:>7.3}->{:<7.3}  {}{flag}",
            r.layer,
            100.0 * r.baseline_nonzero,
            100.0 * r.sparse_nonzero,
            r.baseline_entropy,
            r.sparse_entropy,
            g.join(", ")
        );
    }
    if let Some(out) = &a.out {
        write_json(out, &rows)?;
    }
    Ok(())
}
