//! Uniform quantization of post-ReLU activations.
//!
//! A layer's values are clipped to `[0, x_max]` and mapped linearly onto
//! `[0, 2^q - 1]`, rounding half away from zero. `x_max` comes from a
//! calibration set; larger values seen later saturate at the top code.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensorio::{ActivationTensor, TensorData};

#[derive(Debug, Error, PartialEq)]
pub enum QuantError {
    #[error("unsupported bitwidth {0}; expected 8, 12 or 16")]
    Bitwidth(u32),
    #[error("calibration maximum must be finite and positive, got {0}")]
    BadMax(f32),
    #[error("cannot calibrate from an empty tensor set")]
    EmptyCalibration,
    #[error("calibration tensor `{0}` is already quantized")]
    NotFloat(String),
    #[error("NaN activation")]
    NaN,
    #[error("code {value} outside {bits}-bit range")]
    Range { value: u32, bits: u32 },
}

/// Activation bitwidth; one of 8, 12 or 16.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct Bitwidth(u32);

impl Bitwidth {
    pub const ALL: [Bitwidth; 3] = [Bitwidth(8), Bitwidth(12), Bitwidth(16)];

    pub fn new(q: u32) -> Result<Self, QuantError> {
        match q {
            8 | 12 | 16 => Ok(Self(q)),
            _ => Err(QuantError::Bitwidth(q)),
        }
    }

    pub fn get(self) -> u32 {
        self.0
    }

    pub fn max_code(self) -> u32 {
        (1 << self.0) - 1
    }
}

impl TryFrom<u32> for Bitwidth {
    type Error = QuantError;
    fn try_from(q: u32) -> Result<Self, Self::Error> {
        Self::new(q)
    }
}

impl From<Bitwidth> for u32 {
    fn from(b: Bitwidth) -> u32 {
        b.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantParams {
    pub bits: Bitwidth,
    /// Upper clipping bound; the lower bound is always 0.
    pub x_max: f32,
}

impl QuantParams {
    pub fn new(bits: Bitwidth, x_max: f32) -> Result<Self, QuantError> {
        if !(x_max.is_finite() && x_max > 0.0) {
            return Err(QuantError::BadMax(x_max));
        }
        Ok(Self { bits, x_max })
    }

    pub fn quantize(&self, x: f32) -> Result<u32, QuantError> {
        if x.is_nan() {
            return Err(QuantError::NaN);
        }
        let clipped = x.clamp(0.0, self.x_max) as f64;
        // f64::round rounds half away from zero
        Ok((clipped / self.x_max as f64 * self.bits.max_code() as f64).round() as u32)
    }

    pub fn dequantize(&self, v: u32) -> Result<f32, QuantError> {
        if v > self.bits.max_code() {
            return Err(QuantError::Range { value: v, bits: self.bits.get() });
        }
        Ok((v as f64 / self.bits.max_code() as f64 * self.x_max as f64) as f32)
    }

    /// Largest round-trip error for values inside `[0, x_max]`.
    pub fn half_step(&self) -> f32 {
        self.x_max / self.bits.max_code() as f32 / 2.0
    }
}

/// Largest element over all tensors; an all-zero layer calibrates to 1.
pub fn calibrate_max<'a, I>(tensors: I, bits: Bitwidth) -> Result<QuantParams, QuantError>
where
    I: IntoIterator<Item = &'a ActivationTensor>,
{
    let mut seen = false;
    let mut max = 0f32;
    for t in tensors {
        seen = true;
        match &t.data {
            TensorData::F32(v) => {
                for &x in v {
                    if x.is_nan() {
                        return Err(QuantError::NaN);
                    }
                    max = max.max(x);
                }
            }
            TensorData::Quantized { .. } => return Err(QuantError::NotFloat(t.layer.clone())),
        }
    }
    if !seen {
        return Err(QuantError::EmptyCalibration);
    }
    QuantParams::new(bits, if max > 0.0 { max } else { 1.0 })
}

pub fn quantize_slice(values: &[f32], params: &QuantParams) -> Result<Vec<u16>, QuantError> {
    values
        .iter()
        .map(|&x| params.quantize(x).map(|v| v as u16))
        .collect()
}

pub fn quantize_tensor(t: &ActivationTensor, params: QuantParams) -> Result<ActivationTensor, QuantError> {
    let values = match &t.data {
        TensorData::F32(v) => quantize_slice(v, &params)?,
        TensorData::Quantized { .. } => return Err(QuantError::NotFloat(t.layer.clone())),
    };
    Ok(ActivationTensor {
        layer: t.layer.clone(),
        dims: t.dims,
        data: TensorData::Quantized { params, values },
    })
}

pub fn dequantize_tensor(t: &ActivationTensor) -> Result<ActivationTensor, QuantError> {
    let data = match &t.data {
        TensorData::F32(v) => TensorData::F32(v.clone()),
        TensorData::Quantized { params, values } => TensorData::F32(
            values
                .iter()
                .map(|&v| params.dequantize(v as u32))
                .collect::<Result<_, _>>()?,
        ),
    };
    Ok(ActivationTensor {
        layer: t.layer.clone(),
        dims: t.dims,
        data,
    })
}
