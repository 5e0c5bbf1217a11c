//! Browser demo: codeword explorer, quantizer and codec comparison on
//! synthetic sparse activations. Each export returns a JSON string; the
//! plain functions underneath are used natively by the tests.

use std::collections::BTreeMap;

use amc::codecs::{decode_symbols, eg_encode, encode_symbols, encoded_size_bits, histogram, seg_encode, CodecId, CodecKind};
use amc::quantizer::{Bitwidth, QuantParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Debug, Serialize, PartialEq)]
pub struct Codeword {
    pub k: u32,
    pub eg: String,
    pub seg: String,
}

/// EG and SEG codewords of `x` for every order in `0..=max_k`.
pub fn codewords(x: u64, max_k: u32) -> Result<Vec<Codeword>, String> {
    if max_k > 31 {
        return Err("order must be at most 31".into());
    }
    (0..=max_k)
        .map(|k| {
            Ok(Codeword {
                k,
                eg: eg_encode(x, k).map_err(|e| e.to_string())?,
                seg: seg_encode(x, k).map_err(|e| e.to_string())?,
            })
        })
        .collect()
}

#[derive(Debug, Serialize, PartialEq)]
pub struct QuantizedValue {
    pub input: f32,
    pub code: u32,
    pub restored: f32,
}

/// Quantizes a comma- or whitespace-separated list of numbers.
pub fn quantize_list(text: &str, q: u32, x_max: f32) -> Result<Vec<QuantizedValue>, String> {
    let params = QuantParams::new(Bitwidth::new(q).map_err(|e| e.to_string())?, x_max).map_err(|e| e.to_string())?;
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| {
            let input: f32 = s.parse().map_err(|_| format!("not a number: `{s}`"))?;
            let code = params.quantize(input).map_err(|e| e.to_string())?;
            let restored = params.dequantize(code).map_err(|e| e.to_string())?;
            Ok(QuantizedValue { input, code, restored })
        })
        .collect()
}

#[derive(Debug, Serialize)]
pub struct CodecRow {
    pub codec: &'static str,
    pub k: Option<u32>,
    pub bits: u64,
    pub entropy_gain: f64,
    pub total_gain: f64,
}

#[derive(Debug, Serialize)]
pub struct Comparison {
    pub elements: usize,
    pub nonzero_fraction: f64,
    pub rows: Vec<CodecRow>,
}

/// Post-ReLU-like values: zero with probability `1 - density`, otherwise an
/// exponential with the given mean, clipped at `x_max`.
pub fn synthetic_activations(n: usize, density: f64, mean: f64, x_max: f32, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            if rng.gen_bool(density.clamp(0.0, 1.0)) {
                let u: f64 = rng.gen_range(f64::EPSILON..1.0);
                ((-u.ln() * mean) as f32).min(x_max)
            } else {
                0.0
            }
        })
        .collect()
}

/// Quantizes synthetic activations and measures every codec, searching the
/// order of EG and SEG.
pub fn compare_codecs(n: usize, density: f64, mean: f64, q: u32, seed: u64) -> Result<Comparison, String> {
    if n == 0 || n > 1 << 22 {
        return Err("element count must be between 1 and 4194304".into());
    }
    if !(mean > 0.0) {
        return Err("mean must be positive".into());
    }
    let x_max = (mean * 8.0) as f32;
    let params = QuantParams::new(Bitwidth::new(q).map_err(|e| e.to_string())?, x_max).map_err(|e| e.to_string())?;
    let values: Vec<u32> = synthetic_activations(n, density, mean, x_max, seed)
        .into_iter()
        .map(|x| params.quantize(x))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let hist: BTreeMap<u32, u64> = histogram(&values);
    let raw = n as u64 * q as u64;
    let mut rows = Vec::new();
    for kind in [CodecKind::Raw, CodecKind::Eg, CodecKind::Seg, CodecKind::Zvc, CodecKind::Huffman] {
        let candidates: Vec<u32> = match kind {
            CodecKind::Eg => (0..=15).collect(),
            CodecKind::Seg => (1..=15).collect(),
            _ => vec![0],
        };
        let mut best: Option<(u32, u64)> = None;
        for k in candidates {
            let bits = encoded_size_bits(&hist, CodecId::new(kind, k).map_err(|e| e.to_string())?, q).map_err(|e| e.to_string())?;
            if best.map_or(true, |(_, b)| bits < b) {
                best = Some((k, bits));
            }
        }
        let (k, bits) = best.ok_or("no candidate order")?;
        // encode once for real and confirm the stream decodes
        let blob = encode_symbols(&values, CodecId::new(kind, k).map_err(|e| e.to_string())?, q).map_err(|e| e.to_string())?;
        if decode_symbols(&blob).map_err(|e| e.to_string())? != values || blob.compressed_bits() != bits {
            return Err(format!("{kind} failed to round trip"));
        }
        let entropy_gain = raw as f64 / bits as f64;
        rows.push(CodecRow {
            codec: kind.name(),
            k: kind.has_order().then_some(k),
            bits,
            entropy_gain,
            total_gain: entropy_gain * 32.0 / q as f64,
        });
    }
    Ok(Comparison {
        elements: n,
        nonzero_fraction: values.iter().filter(|&&v| v != 0).count() as f64 / n as f64,
        rows,
    })
}

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<String, JsValue> {
    r.and_then(|v| serde_json::to_string(&v).map_err(|e| e.to_string()))
        .map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = codewords)]
pub fn codewords_js(x: f64, max_k: u32) -> Result<String, JsValue> {
    if !(x >= 0.0 && x.fract() == 0.0 && x < 9.007e15) {
        return Err(JsValue::from_str("x must be a non-negative integer"));
    }
    to_js(codewords(x as u64, max_k))
}

#[wasm_bindgen(js_name = quantize)]
pub fn quantize_js(text: &str, q: u32, x_max: f32) -> Result<String, JsValue> {
    to_js(quantize_list(text, q, x_max))
}

#[wasm_bindgen(js_name = compareCodecs)]
pub fn compare_codecs_js(n: u32, density: f64, mean: f64, q: u32, seed: u32) -> Result<String, JsValue> {
    to_js(compare_codecs(n as usize, density, mean, q, seed as u64))
}
