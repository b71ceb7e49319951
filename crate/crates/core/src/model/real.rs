//! Real-valued network parameters, as a trainer would hand them over.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use super::bn::{fuse_bn, BnParams};
use super::graph::{build_resnet10, LayerShape, NetworkConfig, NetworkGraph};
use crate::error::{Error, Result};

pub const REAL_MODEL_FORMAT: &str = "rsnn-real-model/1";

/// Firing threshold given to every layer of a randomly generated model.
pub const RANDOM_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealConv {
    pub name: String,
    /// `(out, in / g, k, k)`, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    /// Per-output-channel normalization; `None` once fused.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bn: Option<Vec<BnParams>>,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealFc {
    /// `(classes, features)`, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealModel {
    pub format: String,
    pub network: NetworkConfig,
    /// Largest input value over the dataset; pixels are mapped to `[0, 1]`.
    pub input_max: f64,
    pub convs: Vec<RealConv>,
    pub fc: RealFc,
}

impl RealModel {
    pub fn graph(&self) -> Result<NetworkGraph> {
        build_resnet10(&self.network)
    }

    pub fn validate(&self) -> Result<NetworkGraph> {
        if self.format != REAL_MODEL_FORMAT {
            return Err(Error::InvalidConfig(format!("unknown real model format {:?}", self.format)));
        }
        let graph = self.graph()?;
        let shapes: Vec<&LayerShape> = graph.conv_layers().collect();
        if shapes.len() != self.convs.len() {
            return Err(Error::ShapeMismatch(format!(
                "network has {} convolutions, model carries {}",
                shapes.len(),
                self.convs.len()
            )));
        }
        for (shape, conv) in shapes.iter().zip(&self.convs) {
            let want: usize = shape.weight_shape().iter().product();
            if conv.name != shape.name
                || conv.weights.len() != want
                || conv.bias.len() != shape.out_channels
                || conv.bn.as_ref().is_some_and(|b| b.len() != shape.out_channels)
            {
                return Err(Error::ShapeMismatch(format!("layer {} does not match {}", conv.name, shape.name)));
            }
            if let Some(bn) = &conv.bn {
                bn.iter().try_for_each(BnParams::validate)?;
            }
            let finite = conv.weights.iter().chain(&conv.bias).all(|v| v.is_finite()) && conv.threshold.is_finite();
            if !finite {
                return Err(Error::NonFinite("layer parameters"));
            }
        }
        let fc = graph.fc().expect("built graphs end in a classifier");
        if self.fc.weights.len() != fc.in_channels * fc.out_channels || self.fc.bias.len() != fc.out_channels {
            return Err(Error::ShapeMismatch("classifier dimensions".into()));
        }
        if !(self.input_max > 0.0 && self.input_max.is_finite()) {
            return Err(Error::InvalidConfig("input_max must be positive".into()));
        }
        Ok(graph)
    }

    pub fn is_fused(&self) -> bool {
        self.convs.iter().all(|c| c.bn.is_none())
    }

    /// Folds every batch norm into its convolution.
    pub fn fuse(&self) -> Result<RealModel> {
        let graph = self.validate()?;
        let convs = graph
            .conv_layers()
            .zip(&self.convs)
            .map(|(shape, conv)| {
                let Some(bn) = &conv.bn else { return conv.clone() };
                let per_out = shape.in_per_group() * shape.kernel * shape.kernel;
                let mut weights = Vec::with_capacity(conv.weights.len());
                let mut bias = Vec::with_capacity(conv.bias.len());
                for (o, p) in bn.iter().enumerate() {
                    let (c, d) = fuse_bn(&conv.weights[o * per_out..(o + 1) * per_out], conv.bias[o], p);
                    weights.extend(c);
                    bias.push(d);
                }
                RealConv { name: conv.name.clone(), weights, bias, bn: None, threshold: conv.threshold }
            })
            .collect();
        Ok(RealModel { convs, ..self.clone() })
    }

    /// Seeded random parameters: He-normal weights, small biases and
    /// batch-norm statistics near identity.
    pub fn random(network: &NetworkConfig, seed: u64) -> Result<RealModel> {
        let graph = build_resnet10(network)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let small = Normal::new(0.0, 0.05).expect("valid");
        let mut convs = Vec::new();
        for shape in graph.conv_layers() {
            let fan_in = (shape.in_per_group() * shape.kernel * shape.kernel) as f64;
            let he = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("valid");
            let n: usize = shape.weight_shape().iter().product();
            let weights = (0..n).map(|_| rng.sample(he)).collect();
            let bias = (0..shape.out_channels).map(|_| rng.sample(small)).collect();
            let bn = (0..shape.out_channels)
                .map(|_| BnParams {
                    gamma: rng.random_range(0.8..1.2),
                    beta: rng.random_range(-0.1..0.1),
                    mean: rng.sample(small),
                    var: rng.random_range(0.5..1.5),
                    eps: 1e-5,
                })
                .collect();
            convs.push(RealConv {
                name: shape.name.clone(),
                weights,
                bias,
                bn: Some(bn),
                threshold: RANDOM_THRESHOLD,
            });
        }
        let fc_shape = graph.fc().expect("classifier");
        let fc_init = Normal::new(0.0, (1.0 / fc_shape.in_channels as f64).sqrt()).expect("valid");
        let fc = RealFc {
            weights: (0..fc_shape.in_channels * fc_shape.out_channels).map(|_| rng.sample(fc_init)).collect(),
            bias: (0..fc_shape.out_channels).map(|_| rng.sample(small)).collect(),
        };
        Ok(RealModel { format: REAL_MODEL_FORMAT.into(), network: network.clone(), input_max: 1.0, convs, fc })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data serializes")
    }

    pub fn from_json(text: &str) -> Result<RealModel> {
        let m: RealModel = serde_json::from_str(text).map_err(|e| Error::CorruptFile(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }
}
