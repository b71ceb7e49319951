//! Fixed-point tensors, spike maps and accumulator maps.

mod quant;

pub use quant::{compute_scale, dequantize, fake_quantize, max_abs, quantize, QuantParams, MAX_BITS, MIN_BITS};
pub(crate) use quant::pow2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_len(shape: &[usize], len: usize) -> Result<()> {
    let expected: usize = shape.iter().product();
    if expected != len {
        return Err(Error::ShapeMismatch(format!(
            "shape {shape:?} holds {expected} values, got {len}"
        )));
    }
    Ok(())
}

/// Dense real tensor in row-major order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealTensor {
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl RealTensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        check_len(&shape, values.len())?;
        Ok(Self { shape, values })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// Dense signed-integer tensor in row-major order, every value inside the
/// signed range of its bit width.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntTensor {
    shape: Vec<usize>,
    values: Vec<i32>,
    params: QuantParams,
}

impl IntTensor {
    pub fn new(shape: Vec<usize>, values: Vec<i32>, params: QuantParams) -> Result<Self> {
        check_len(&shape, values.len())?;
        if let Some(q) = values.iter().find(|&&q| !params.contains(q)) {
            return Err(Error::ShapeMismatch(format!(
                "value {q} outside the signed {}-bit range",
                params.bits()
            )));
        }
        Ok(Self { shape, values, params })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[i32] {
        &self.values
    }

    pub fn params(&self) -> QuantParams {
        self.params
    }

    pub fn max_abs(&self) -> i32 {
        self.values.iter().map(|v| v.abs()).max().unwrap_or(0)
    }
}

/// Extents of a channel-major feature map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Shape3 {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape3 {
    pub const fn new(channels: usize, height: usize, width: usize) -> Self {
        Self { channels, height, width }
    }

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn area(&self) -> usize {
        self.height * self.width
    }
}

impl std::fmt::Display for Shape3 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.channels, self.height, self.width)
    }
}

/// A `(channels, height, width)` map stored channel-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Map3<T> {
    shape: Shape3,
    data: Vec<T>,
}

impl<T: Copy + Default> Map3<T> {
    pub fn new(shape: Shape3, data: Vec<T>) -> Result<Self> {
        check_len(&[shape.channels, shape.height, shape.width], data.len())?;
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Shape3) -> Self {
        Self { shape, data: vec![T::default(); shape.len()] }
    }

    pub fn from_fn(shape: Shape3, mut f: impl FnMut(usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(shape.len());
        for c in 0..shape.channels {
            for y in 0..shape.height {
                for x in 0..shape.width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self { shape, data }
    }

    pub fn shape(&self) -> Shape3 {
        self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn index(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.shape.height + y) * self.shape.width + x
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> T {
        self.data[self.index(c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: T) {
        let i = self.index(c, y, x);
        self.data[i] = v;
    }

    pub fn plane(&self, c: usize) -> &[T] {
        let a = self.shape.area();
        &self.data[c * a..(c + 1) * a]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [T] {
        let a = self.shape.area();
        &mut self.data[c * a..(c + 1) * a]
    }

    pub fn map<U: Copy + Default>(&self, f: impl Fn(T) -> U) -> Map3<U> {
        Map3 { shape: self.shape, data: self.data.iter().map(|&v| f(v)).collect() }
    }
}

/// Surrounds every channel with a zero border `p` pixels wide.
pub fn pad2d<T: Copy + Default>(x: &Map3<T>, p: usize) -> Map3<T> {
    if p == 0 {
        return x.clone();
    }
    let s = x.shape();
    let out_shape = Shape3::new(s.channels, s.height + 2 * p, s.width + 2 * p);
    let mut out = Map3::zeros(out_shape);
    for c in 0..s.channels {
        for y in 0..s.height {
            let src = &x.plane(c)[y * s.width..(y + 1) * s.width];
            let start = out.index(c, y + p, p);
            out.data[start..start + s.width].copy_from_slice(src);
        }
    }
    out
}

/// Binary activation map; every element is 0 or 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpikeMap(Map3<u8>);

impl SpikeMap {
    pub fn new(map: Map3<u8>) -> Result<Self> {
        if map.data().iter().any(|&v| v > 1) {
            return Err(Error::ShapeMismatch("spike map holds a value other than 0 or 1".into()));
        }
        Ok(Self(map))
    }

    pub fn zeros(shape: Shape3) -> Self {
        Self(Map3::zeros(shape))
    }

    pub fn from_fn(shape: Shape3, mut f: impl FnMut(usize, usize, usize) -> bool) -> Self {
        Self(Map3::from_fn(shape, |c, y, x| f(c, y, x) as u8))
    }

    pub fn shape(&self) -> Shape3 {
        self.0.shape()
    }

    pub fn as_map(&self) -> &Map3<u8> {
        &self.0
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> bool {
        self.0.get(c, y, x) == 1
    }

    pub fn count_ones(&self) -> usize {
        self.0.data().iter().map(|&v| v as usize).sum()
    }

    pub fn pad(&self, p: usize) -> SpikeMap {
        SpikeMap(pad2d(&self.0, p))
    }
}

/// Wide signed accumulators in the fixed-point scale `2^exponent`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AccumulatorMap {
    map: Map3<i64>,
    exponent: i32,
}

impl AccumulatorMap {
    pub fn new(map: Map3<i64>, exponent: i32) -> Self {
        Self { map, exponent }
    }

    pub fn zeros(shape: Shape3, exponent: i32) -> Self {
        Self { map: Map3::zeros(shape), exponent }
    }

    /// Lifts a spike map into accumulator scale: a spike is the real value 1,
    /// which is `2^exponent` in this scale.
    pub fn from_spikes(spikes: &SpikeMap, exponent: i32) -> Result<Self> {
        if exponent < 0 {
            return Err(Error::ScaleMismatch { left: exponent, right: 0 });
        }
        let one = 1i64 << exponent;
        Ok(Self { map: spikes.as_map().map(|v| v as i64 * one), exponent })
    }

    pub fn shape(&self) -> Shape3 {
        self.map.shape()
    }

    pub fn exponent(&self) -> i32 {
        self.exponent
    }

    pub fn as_map(&self) -> &Map3<i64> {
        &self.map
    }

    pub fn as_map_mut(&mut self) -> &mut Map3<i64> {
        &mut self.map
    }

    pub fn into_map(self) -> Map3<i64> {
        self.map
    }

    pub fn max_abs(&self) -> i64 {
        self.map.data().iter().map(|v| v.abs()).max().unwrap_or(0)
    }
}

/// Anything a convolution can consume: spike maps and quantized pixel tensors.
pub trait FeatureInput {
    fn feature_map(&self) -> Result<Map3<i32>>;
    /// Scale exponent of the values (spikes are unscaled).
    fn exponent(&self) -> i32;
    /// Storage width of one value.
    fn element_bits(&self) -> u32;
}

impl FeatureInput for SpikeMap {
    fn feature_map(&self) -> Result<Map3<i32>> {
        Ok(self.0.map(|v| v as i32))
    }

    fn exponent(&self) -> i32 {
        0
    }

    fn element_bits(&self) -> u32 {
        1
    }
}

impl FeatureInput for IntTensor {
    fn feature_map(&self) -> Result<Map3<i32>> {
        match *self.shape() {
            [c, h, w] => Map3::new(Shape3::new(c, h, w), self.values().to_vec()),
            _ => Err(Error::ShapeMismatch(format!(
                "expected a (channels, height, width) tensor, got {:?}",
                self.shape()
            ))),
        }
    }

    fn exponent(&self) -> i32 {
        self.params().exponent()
    }

    fn element_bits(&self) -> u32 {
        self.params().bits()
    }
}
