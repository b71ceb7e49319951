//! Symmetric power-of-two quantization.
//!
//! A real value `r` maps to the integer `q = clamp(round(S * r))` where the
//! scale `S = 2^n` is chosen from the largest magnitude in the tensor so that
//! `S * max|r| <= 2^(k-1)`. Because `S` is a power of two, multiplying by it is
//! exact in binary floating point and dequantization is a plain shift.

use serde::{Deserialize, Serialize};

use super::{IntTensor, RealTensor};
use crate::error::{Error, Result};

pub const MIN_BITS: u32 = 2;
pub const MAX_BITS: u32 = 16;

/// Bit width `k` and scale exponent `n` of a quantized tensor (`S = 2^n`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QuantParams {
    bits: u32,
    exponent: i32,
}

impl QuantParams {
    pub fn new(bits: u32, exponent: i32) -> Result<Self> {
        if !(MIN_BITS..=MAX_BITS).contains(&bits) {
            return Err(Error::InvalidBitWidth(bits));
        }
        Ok(Self { bits, exponent })
    }

    /// Parameters used for an all-zero tensor: `S = 2^(k-1)`.
    pub fn for_zero_tensor(bits: u32) -> Result<Self> {
        Self::new(bits, bits as i32 - 1)
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn exponent(&self) -> i32 {
        self.exponent
    }

    /// The scale `S = 2^n`, exact.
    pub fn scale(&self) -> f64 {
        pow2(self.exponent)
    }

    pub fn qmin(&self) -> i32 {
        -(1 << (self.bits - 1))
    }

    pub fn qmax(&self) -> i32 {
        (1 << (self.bits - 1)) - 1
    }

    pub fn contains(&self, q: i32) -> bool {
        (self.qmin()..=self.qmax()).contains(&q)
    }

    /// Quantizes one value: round half away from zero, then saturate.
    pub fn quantize_value(&self, r: f64) -> i32 {
        let scaled = (r * self.scale()).round();
        scaled.clamp(self.qmin() as f64, self.qmax() as f64) as i32
    }

    pub fn dequantize_value(&self, q: i32) -> f64 {
        q as f64 / self.scale()
    }
}

/// `2^n` for any exponent representable by a normal or subnormal double.
pub(crate) fn pow2(n: i32) -> f64 {
    // powi on 2.0 is exact for every exponent in the normal range.
    2f64.powi(n)
}

/// Derives the scale for a tensor whose largest magnitude is `r_max`.
///
/// `n = floor(log2(2^(k-1) / r_max))`, evaluated exactly: the estimate from
/// `log2` is corrected by comparing power-of-two multiples of `r_max`, which
/// involves no rounding.
pub fn compute_scale(r_max: f64, bits: u32) -> Result<QuantParams> {
    if !(MIN_BITS..=MAX_BITS).contains(&bits) {
        return Err(Error::InvalidBitWidth(bits));
    }
    if !r_max.is_finite() {
        return Err(Error::NonFinite("r_max"));
    }
    if r_max < 0.0 {
        return Err(Error::InvalidConfig(format!("r_max must be nonnegative, got {r_max}")));
    }
    if r_max == 0.0 {
        return Err(Error::DegenerateRange);
    }
    let limit = pow2(bits as i32 - 1);
    let mut n = (limit / r_max).log2().floor() as i32;
    // Invariant sought: r_max * 2^n <= limit < r_max * 2^(n+1).
    while r_max * pow2(n) > limit {
        n -= 1;
    }
    while r_max * pow2(n + 1) <= limit {
        n += 1;
    }
    QuantParams::new(bits, n)
}

pub fn max_abs(values: &[f64]) -> f64 {
    values.iter().fold(0.0, |m, v| m.max(v.abs()))
}

pub fn quantize(t: &RealTensor, params: QuantParams) -> Result<IntTensor> {
    if t.values().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("tensor"));
    }
    let values = t.values().iter().map(|&r| params.quantize_value(r)).collect();
    IntTensor::new(t.shape().to_vec(), values, params)
}

pub fn dequantize(t: &IntTensor) -> RealTensor {
    let p = t.params();
    let values = t.values().iter().map(|&q| p.dequantize_value(q)).collect();
    RealTensor::new(t.shape().to_vec(), values).expect("shape preserved")
}

/// Forward pass of a quantization node: quantize with a scale derived from
/// the tensor itself, then map back to reals. An all-zero tensor passes
/// through unchanged.
pub fn fake_quantize(t: &RealTensor, bits: u32) -> Result<RealTensor> {
    let params = match compute_scale(max_abs(t.values()), bits) {
        Ok(p) => p,
        Err(Error::DegenerateRange) => QuantParams::for_zero_tensor(bits)?,
        Err(e) => return Err(e),
    };
    Ok(dequantize(&quantize(t, params)?))
}
