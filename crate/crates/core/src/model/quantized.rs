//! The fused, quantized network consumed by the golden engine and the simulator.
//!
//! Weights are 8-bit (or `bits`-bit) symmetric power-of-two tensors. Each
//! convolution accumulates in the scale `2^(weight exponent + input exponent)`;
//! its fused bias and firing threshold are stored as 32-bit integers in that
//! same scale so the threshold test is a plain integer comparison. Spikes are
//! unscaled (exponent 0) and pixels use the model's input parameters.

use serde::{Deserialize, Serialize};

use super::graph::{build_resnet10, LayerRole, LayerShape, NetworkConfig, NetworkGraph};
use super::real::RealModel;
use crate::error::{Error, Result};
use crate::sim::ArrayPlan;
use crate::tensor::{compute_scale, max_abs, pow2, IntTensor, QuantParams};

/// Pixel bytes map to reals as `p / PIXEL_RANGE`.
pub const PIXEL_RANGE: f64 = 255.0;

const ACC_LIMIT: i128 = 1 << 31;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvLayerSpec {
    pub shape: LayerShape,
    /// `(out, in / g, k, k)`
    pub weights: IntTensor,
    /// Per-output-channel bias in accumulator scale.
    pub bias: Vec<i32>,
    pub acc_exponent: i32,
    /// Firing threshold in accumulator scale. Unused by shortcut convolutions,
    /// whose output is added into the next main-path layer before firing.
    pub threshold_q: i32,
}

impl ConvLayerSpec {
    pub fn new(shape: LayerShape, weights: IntTensor, bias: Vec<i32>, acc_exponent: i32, threshold_q: i32) -> Result<Self> {
        shape.validate()?;
        if weights.shape() != shape.weight_shape().as_slice() {
            return Err(Error::ShapeMismatch(format!(
                "{}: weights {:?}, expected {:?}",
                shape.name,
                weights.shape(),
                shape.weight_shape()
            )));
        }
        if bias.len() != shape.out_channels {
            return Err(Error::ShapeMismatch(format!("{}: {} biases for {} outputs", shape.name, bias.len(), shape.out_channels)));
        }
        Ok(Self { shape, weights, bias, acc_exponent, threshold_q })
    }

    pub fn name(&self) -> &str {
        &self.shape.name
    }

    pub fn weight_exponent(&self) -> i32 {
        self.weights.params().exponent()
    }

    /// Exponent the layer's input must carry.
    pub fn input_exponent(&self) -> i32 {
        self.acc_exponent - self.weight_exponent()
    }

    pub fn is_encoding(&self) -> bool {
        self.shape.role == LayerRole::Encoding
    }

    pub fn is_residual_1x1(&self) -> bool {
        self.shape.role == LayerRole::Shortcut
    }

    #[inline]
    pub fn weight(&self, out: usize, in_group: usize, ky: usize, kx: usize) -> i32 {
        let k = self.shape.kernel;
        self.weights.values()[((out * self.shape.in_per_group() + in_group) * k + ky) * k + kx]
    }

    /// Weights of one output channel, `(in / g, k, k)` contiguous.
    pub fn kernel_of(&self, out: usize) -> &[i32] {
        let n = self.shape.in_per_group() * self.shape.kernel * self.shape.kernel;
        &self.weights.values()[out * n..(out + 1) * n]
    }

    /// Worst-case accumulator magnitude given the largest input magnitude.
    fn bound(&self, max_input: i128) -> i128 {
        let taps = (self.shape.in_per_group() * self.shape.kernel * self.shape.kernel) as i128;
        let bias = self.bias.iter().map(|b| (*b as i128).abs()).max().unwrap_or(0);
        bias + taps * self.weights.max_abs() as i128 * max_input
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FcLayerSpec {
    pub shape: LayerShape,
    /// `(classes, features)`
    pub weights: IntTensor,
    /// Bias in the scale of `weights x spike counts`, i.e. `2^n * pool_area`.
    pub bias: Vec<i32>,
    /// Spatial positions summed per pooled feature.
    pub pool_area: usize,
}

impl FcLayerSpec {
    pub fn new(shape: LayerShape, weights: IntTensor, bias: Vec<i32>, pool_area: usize) -> Result<Self> {
        if weights.shape() != [shape.out_channels, shape.in_channels] || bias.len() != shape.out_channels {
            return Err(Error::ShapeMismatch(format!("{}: classifier dimensions", shape.name)));
        }
        Ok(Self { shape, weights, bias, pool_area })
    }

    pub fn classes(&self) -> usize {
        self.shape.out_channels
    }

    pub fn features(&self) -> usize {
        self.shape.in_channels
    }

    pub fn row(&self, class: usize) -> &[i32] {
        &self.weights.values()[class * self.features()..(class + 1) * self.features()]
    }

    fn bound(&self) -> i128 {
        let bias = self.bias.iter().map(|b| (*b as i128).abs()).max().unwrap_or(0);
        bias + self.features() as i128 * self.weights.max_abs() as i128 * self.pool_area as i128
    }
}

/// Quantized parameters of a whole network, aligned with its graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantizedModel {
    pub config: NetworkConfig,
    pub graph: NetworkGraph,
    pub input_params: QuantParams,
    /// One entry per convolution, in graph order.
    pub convs: Vec<ConvLayerSpec>,
    pub fc: FcLayerSpec,
    pub arrays: ArrayPlan,
}

impl QuantizedModel {
    pub fn new(
        config: NetworkConfig,
        input_params: QuantParams,
        convs: Vec<ConvLayerSpec>,
        fc: FcLayerSpec,
        arrays: ArrayPlan,
    ) -> Result<Self> {
        let graph = build_resnet10(&config)?;
        let m = Self { config, graph, input_params, convs, fc, arrays };
        m.validate()?;
        Ok(m)
    }

    pub fn conv(&self, layer: usize) -> &ConvLayerSpec {
        &self.convs[layer]
    }

    pub fn encoder(&self) -> &ConvLayerSpec {
        &self.convs[0]
    }

    /// Checks alignment with the graph, residual scale agreement and the
    /// 32-bit accumulator bound of every layer.
    pub fn validate(&self) -> Result<()> {
        let shapes: Vec<&LayerShape> = self.graph.conv_layers().collect();
        if shapes.len() != self.convs.len() {
            return Err(Error::ShapeMismatch(format!(
                "graph has {} convolutions, model carries {}",
                shapes.len(),
                self.convs.len()
            )));
        }
        for (shape, conv) in shapes.iter().zip(&self.convs) {
            if **shape != conv.shape {
                return Err(Error::ShapeMismatch(format!("layer {} does not match the graph", conv.name())));
            }
            let want = if conv.is_encoding() { self.input_params.exponent() } else { 0 };
            if conv.input_exponent() != want {
                return Err(Error::ScaleMismatch { left: conv.input_exponent(), right: want });
            }
        }
        if Some(&self.fc.shape) != self.graph.fc() {
            return Err(Error::ShapeMismatch("classifier does not match the graph".into()));
        }
        let pooled = self.graph.pooled_shape().map(|s| s.area()).unwrap_or(0);
        if self.fc.pool_area != pooled {
            return Err(Error::ShapeMismatch(format!("pool area {} vs {}", self.fc.pool_area, pooled)));
        }
        for b in &self.graph.blocks {
            let main = &self.convs[b.conv_b];
            match b.shortcut {
                Some(s) if self.convs[s].acc_exponent != main.acc_exponent => {
                    return Err(Error::ScaleMismatch { left: main.acc_exponent, right: self.convs[s].acc_exponent });
                }
                None if main.acc_exponent < 0 => {
                    return Err(Error::ScaleMismatch { left: main.acc_exponent, right: 0 });
                }
                _ => {}
            }
        }
        for (i, conv) in self.convs.iter().enumerate() {
            let bound = self.accumulator_bound(i);
            if bound >= ACC_LIMIT {
                return Err(Error::AccumulatorOverflow { layer: conv.name().into(), bound });
            }
        }
        if self.fc.bound() >= ACC_LIMIT {
            return Err(Error::AccumulatorOverflow { layer: self.fc.shape.name.clone(), bound: self.fc.bound() });
        }
        Ok(())
    }

    /// Worst-case `|accumulator|` of a convolution, including the residual
    /// term added into main-path layers that close a block.
    pub fn accumulator_bound(&self, layer: usize) -> i128 {
        let conv = &self.convs[layer];
        let max_input = if conv.is_encoding() { -(self.input_params.qmin() as i128) } else { 1 };
        let mut bound = conv.bound(max_input);
        if let Some(b) = self.graph.blocks.iter().find(|b| b.conv_b == layer) {
            bound += match b.shortcut {
                Some(s) => self.convs[s].bound(1),
                None => 1i128 << conv.acc_exponent.max(0),
            };
        }
        bound
    }

    pub fn fc_accumulator_bound(&self) -> i128 {
        self.fc.bound()
    }

    /// Quantizes a channel-planar `C x H x W` pixel buffer with the input parameters.
    pub fn quantize_pixels(&self, pixels: &[u8]) -> Result<IntTensor> {
        let s = self.graph.input;
        if pixels.len() != s.len() {
            return Err(Error::ShapeMismatch(format!("image has {} bytes, network expects {}", pixels.len(), s.len())));
        }
        let p = self.input_params;
        let values = pixels.iter().map(|&b| p.quantize_value(b as f64 / PIXEL_RANGE)).collect();
        IntTensor::new(vec![s.channels, s.height, s.width], values, p)
    }

    /// Seeded random model: random real parameters, fused and quantized.
    pub fn random(config: &NetworkConfig, seed: u64, bits: u32) -> Result<Self> {
        quantize_model(&RealModel::random(config, seed)?.fuse()?, bits, ArrayPlan::default())
    }
}

fn tensor_params(values: &[f64], bits: u32) -> Result<QuantParams> {
    match compute_scale(max_abs(values), bits) {
        Err(Error::DegenerateRange) => QuantParams::for_zero_tensor(bits),
        r => r,
    }
}

fn saturate_i32(v: f64) -> i32 {
    v.round().clamp(i32::MIN as f64, i32::MAX as f64) as i32
}

fn quantize_conv(shape: &LayerShape, weights: &[f64], bias: &[f64], threshold: f64, wp: QuantParams, in_exp: i32) -> Result<ConvLayerSpec> {
    let q: Vec<i32> = weights.iter().map(|&w| wp.quantize_value(w)).collect();
    let acc_exponent = wp.exponent() + in_exp;
    let acc_scale = pow2(acc_exponent);
    let bias_q = bias.iter().map(|&d| saturate_i32(d * acc_scale)).collect();
    let threshold_q = saturate_i32(threshold * acc_scale);
    ConvLayerSpec::new(shape.clone(), IntTensor::new(shape.weight_shape(), q, wp)?, bias_q, acc_exponent, threshold_q)
}

/// Quantizes a fused real model. Each tensor gets its own power-of-two scale,
/// except that the two convolutions meeting at a residual add share one so
/// both branches land in the same accumulator scale.
pub fn quantize_model(real: &RealModel, bits: u32, arrays: ArrayPlan) -> Result<QuantizedModel> {
    let graph = real.validate()?;
    if !real.is_fused() {
        return Err(Error::InvalidConfig("model still carries batch norm; fuse it before quantizing".into()));
    }
    let input_params = compute_scale(real.input_max, bits)?;
    let shapes: Vec<&LayerShape> = graph.conv_layers().collect();
    let mut wparams = real
        .convs
        .iter()
        .map(|c| tensor_params(&c.weights, bits))
        .collect::<Result<Vec<_>>>()?;
    for b in &graph.blocks {
        if let Some(s) = b.shortcut {
            let shared = wparams[b.conv_b].exponent().min(wparams[s].exponent());
            wparams[b.conv_b] = QuantParams::new(bits, shared)?;
            wparams[s] = QuantParams::new(bits, shared)?;
        }
    }
    let convs = shapes
        .iter()
        .zip(&real.convs)
        .zip(&wparams)
        .map(|((shape, c), &wp)| {
            let in_exp = if shape.role == LayerRole::Encoding { input_params.exponent() } else { 0 };
            quantize_conv(shape, &c.weights, &c.bias, c.threshold, wp, in_exp)
        })
        .collect::<Result<Vec<_>>>()?;

    let fc_shape = graph.fc().expect("classifier").clone();
    let pool_area = graph.pooled_shape().map(|s| s.area()).unwrap_or(0);
    let fp = tensor_params(&real.fc.weights, bits)?;
    let fw: Vec<i32> = real.fc.weights.iter().map(|&w| fp.quantize_value(w)).collect();
    let bias_scale = fp.scale() * pool_area as f64;
    let fb = real.fc.bias.iter().map(|&b| saturate_i32(b * bias_scale)).collect();
    let fc = FcLayerSpec::new(
        fc_shape.clone(),
        IntTensor::new(vec![fc_shape.out_channels, fc_shape.in_channels], fw, fp)?,
        fb,
        pool_area,
    )?;
    QuantizedModel::new(real.network.clone(), input_params, convs, fc, arrays)
}

/// Pairs a quantized model with the real weights it was derived from; used
/// by tools that report quantization error.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct QuantizationSummary {
    pub layer: String,
    pub exponent: i32,
    pub max_abs_error: f64,
}

pub fn quantization_summary(real: &RealModel, model: &QuantizedModel) -> Vec<QuantizationSummary> {
    real.convs
        .iter()
        .zip(&model.convs)
        .map(|(r, q)| {
            let p = q.weights.params();
            let max_abs_error = r
                .weights
                .iter()
                .zip(q.weights.values())
                .map(|(&w, &qw)| (w - p.dequantize_value(qw)).abs())
                .fold(0.0, f64::max);
            QuantizationSummary { layer: r.name.clone(), exponent: p.exponent(), max_abs_error }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_model_is_consistent() {
        let m = QuantizedModel::random(&NetworkConfig::default(), 11, 8).unwrap();
        assert_eq!(m.convs.len(), 10);
        assert_eq!(m.input_params.exponent(), 7);
        assert_eq!(m.fc.pool_area, 256);
        for c in &m.convs {
            assert_eq!(c.weights.params().bits(), 8);
            assert!(c.weights.values().iter().all(|&w| (-128..=127).contains(&w)));
        }
        let b = m.graph.blocks[2];
        let sc = b.shortcut.unwrap();
        assert_eq!(m.convs[b.conv_b].acc_exponent, m.convs[sc].acc_exponent);
        for i in 0..m.convs.len() {
            assert!(m.accumulator_bound(i) < 1 << 31);
        }
    }

    #[test]
    fn unfused_model_is_rejected() {
        let real = RealModel::random(&NetworkConfig::default(), 1).unwrap();
        assert!(matches!(quantize_model(&real, 8, ArrayPlan::default()), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn zero_weights_use_top_exponent() {
        let mut real = RealModel::random(&NetworkConfig::default(), 2).unwrap().fuse().unwrap();
        real.convs[1].weights.iter_mut().for_each(|w| *w = 0.0);
        let m = quantize_model(&real, 8, ArrayPlan::default()).unwrap();
        assert_eq!(m.convs[1].weight_exponent(), 7);
        assert!(m.convs[1].weights.values().iter().all(|&w| w == 0));
    }

    #[test]
    fn threshold_lands_in_accumulator_scale() {
        let real = RealModel::random(&NetworkConfig::default(), 2).unwrap().fuse().unwrap();
        let m = quantize_model(&real, 8, ArrayPlan::default()).unwrap();
        for (r, q) in real.convs.iter().zip(&m.convs) {
            assert_eq!(q.threshold_q as f64, (r.threshold * pow2(q.acc_exponent)).round());
        }
    }

    #[test]
    fn quantization_error_is_half_step() {
        let real = RealModel::random(&NetworkConfig::default(), 4).unwrap().fuse().unwrap();
        let m = quantize_model(&real, 8, ArrayPlan::default()).unwrap();
        for (s, q) in quantization_summary(&real, &m).iter().zip(&m.convs) {
            // Layers that share a residual scale are never clamped; others may
            // clamp only at +r_max by less than one step.
            assert!(s.max_abs_error <= 1.0 / q.weights.params().scale(), "{s:?}");
        }
    }

    #[test]
    fn pixel_quantization() {
        let m = QuantizedModel::random(&NetworkConfig::default(), 1, 8).unwrap();
        let mut px = vec![0u8; 3072];
        px[1] = 255;
        px[2] = 128;
        let t = m.quantize_pixels(&px).unwrap();
        assert_eq!(&t.values()[..3], &[0, 127, 64]);
        assert!(m.quantize_pixels(&px[1..]).is_err());
    }
}
