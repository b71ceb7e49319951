//! Bit-exact integer inference over a quantized model.
//!
//! Everything here is exact integer arithmetic: convolutions accumulate in
//! `i64`, pooling carries spike counts instead of averages, and the
//! classifier scores are integer dot products. The accelerator simulator is
//! checked against these functions.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{threshold_activate, ConvLayerSpec, FcLayerSpec, QuantizedModel};
use crate::tensor::{pad2d, AccumulatorMap, FeatureInput, IntTensor, Map3, SpikeMap};

/// Mean spike rate of one channel, kept as an exact `sum / area` pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PooledFeature {
    pub sum: u32,
    pub area: u32,
}

impl PooledFeature {
    pub fn rate(&self) -> f64 {
        self.sum as f64 / self.area as f64
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InferenceResult {
    pub label: usize,
    pub scores: Vec<i64>,
}

impl InferenceResult {
    pub fn from_scores(scores: Vec<i64>) -> Self {
        Self { label: argmax(&scores), scores }
    }
}

/// Index of the largest score; ties go to the lowest index.
pub fn argmax(scores: &[i64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Grouped strided cross-correlation plus bias, in the layer's accumulator scale.
pub fn conv2d_grouped<X: FeatureInput>(x: &X, layer: &ConvLayerSpec) -> Result<AccumulatorMap> {
    if x.exponent() != layer.input_exponent() {
        return Err(Error::ScaleMismatch { left: x.exponent(), right: layer.input_exponent() });
    }
    let input = x.feature_map()?;
    let shape = &layer.shape;
    if input.shape() != shape.input {
        return Err(Error::ShapeMismatch(format!(
            "{} expects input {}, got {}",
            shape.name,
            shape.input,
            input.shape()
        )));
    }
    let padded = pad2d(&input, shape.padding);
    let pw = padded.shape().width;
    let out_shape = shape.output();
    let (oh, ow, area) = (out_shape.height, out_shape.width, out_shape.area());
    let (k, s) = (shape.kernel, shape.stride);
    let (in_g, out_g) = (shape.in_per_group(), shape.out_per_group());

    let mut acc = Map3::<i64>::zeros(out_shape);
    for oc in 0..shape.out_channels {
        let group = oc / out_g;
        let plane = acc.plane_mut(oc);
        plane.fill(layer.bias[oc] as i64);
        let kernel = layer.kernel_of(oc);
        for icg in 0..in_g {
            let xplane = padded.plane(group * in_g + icg);
            for ky in 0..k {
                for kx in 0..k {
                    let w = kernel[(icg * k + ky) * k + kx] as i64;
                    if w == 0 {
                        continue;
                    }
                    for oy in 0..oh {
                        let row = &xplane[(oy * s + ky) * pw + kx..];
                        let out_row = &mut plane[oy * ow..(oy + 1) * ow];
                        for (ox, o) in out_row.iter_mut().enumerate() {
                            *o += w * row[ox * s] as i64;
                        }
                    }
                }
            }
        }
    }
    debug_assert_eq!(acc.data().len(), area * shape.out_channels);
    Ok(AccumulatorMap::new(acc, layer.acc_exponent))
}

pub fn residual_add(a: &AccumulatorMap, b: &AccumulatorMap) -> Result<AccumulatorMap> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch(format!("residual add of {} and {}", a.shape(), b.shape())));
    }
    if a.exponent() != b.exponent() {
        return Err(Error::ScaleMismatch { left: a.exponent(), right: b.exponent() });
    }
    let data = a.as_map().data().iter().zip(b.as_map().data()).map(|(x, y)| x + y).collect();
    Ok(AccumulatorMap::new(Map3::new(a.shape(), data)?, a.exponent()))
}

pub fn global_avg_pool(x: &SpikeMap) -> Vec<PooledFeature> {
    let s = x.shape();
    (0..s.channels)
        .map(|c| PooledFeature {
            sum: x.as_map().plane(c).iter().map(|&v| v as u32).sum(),
            area: s.area() as u32,
        })
        .collect()
}

/// Classifier over spike counts. The common `1 / area` factor of the mean is
/// left out; it is positive and cannot move the argmax.
pub fn fully_connected(pooled: &[PooledFeature], fc: &FcLayerSpec) -> Result<InferenceResult> {
    if pooled.len() != fc.features() {
        return Err(Error::ShapeMismatch(format!("classifier expects {} features, got {}", fc.features(), pooled.len())));
    }
    if let Some(p) = pooled.iter().find(|p| p.area as usize != fc.pool_area) {
        return Err(Error::ShapeMismatch(format!("pooled area {} vs classifier area {}", p.area, fc.pool_area)));
    }
    let scores = (0..fc.classes())
        .map(|c| {
            let dot: i64 = fc.row(c).iter().zip(pooled).map(|(&w, p)| w as i64 * p.sum as i64).sum();
            dot + fc.bias[c] as i64
        })
        .collect();
    Ok(InferenceResult::from_scores(scores))
}

/// Activations of one residual block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockTrace {
    /// Spikes between the two main-path convolutions.
    pub mid: SpikeMap,
    /// Main-path accumulators plus the shortcut, before firing.
    pub merged: AccumulatorMap,
    pub out: SpikeMap,
}

/// Every intermediate activation of one inference.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GoldenTrace {
    pub encoded: SpikeMap,
    pub blocks: Vec<BlockTrace>,
    pub pooled: Vec<PooledFeature>,
    pub result: InferenceResult,
}

/// Residual block: `fire(conv_b(fire(conv_a(x))) + shortcut(x))`.
pub fn residual_block(model: &QuantizedModel, block: usize, x: &SpikeMap) -> Result<BlockTrace> {
    let b = model.graph.blocks[block];
    let conv_a = model.conv(b.conv_a);
    let conv_b = model.conv(b.conv_b);
    let mid = threshold_activate(&conv2d_grouped(x, conv_a)?, conv_a.threshold_q as i64);
    let main = conv2d_grouped(&mid, conv_b)?;
    let side = match b.shortcut {
        Some(s) => conv2d_grouped(x, model.conv(s))?,
        None => AccumulatorMap::from_spikes(x, conv_b.acc_exponent)?,
    };
    let merged = residual_add(&main, &side)?;
    let out = threshold_activate(&merged, conv_b.threshold_q as i64);
    Ok(BlockTrace { mid, merged, out })
}

pub fn run(model: &QuantizedModel, image: &IntTensor) -> Result<GoldenTrace> {
    let enc = model.encoder();
    let encoded = threshold_activate(&conv2d_grouped(image, enc)?, enc.threshold_q as i64);
    let mut blocks = Vec::with_capacity(model.graph.blocks.len());
    let mut x = encoded.clone();
    for i in 0..model.graph.blocks.len() {
        let t = residual_block(model, i, &x)?;
        x = t.out.clone();
        blocks.push(t);
    }
    let pooled = global_avg_pool(&x);
    let result = fully_connected(&pooled, &model.fc)?;
    Ok(GoldenTrace { encoded, blocks, pooled, result })
}

pub fn infer(model: &QuantizedModel, image: &IntTensor) -> Result<InferenceResult> {
    run(model, image).map(|t| t.result)
}

/// Classifies raw channel-planar pixels.
pub fn infer_pixels(model: &QuantizedModel, pixels: &[u8]) -> Result<InferenceResult> {
    infer(model, &model.quantize_pixels(pixels)?)
}

/// Classifies a batch, fanning images out over the rayon pool.
pub fn infer_batch(model: &QuantizedModel, images: &[IntTensor]) -> Result<Vec<InferenceResult>> {
    images.par_iter().map(|img| infer(model, img)).collect()
}
