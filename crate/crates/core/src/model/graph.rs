//! Residual network topology: layer shapes, residual blocks and parameter counts.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Shape3;

/// Weight count of a (possibly grouped) convolution:
/// `(C_in / g) * (C_out / g) * g * k * k`.
pub fn conv_param_count(in_channels: usize, out_channels: usize, groups: usize, kernel: usize) -> Result<usize> {
    if groups == 0 || !in_channels.is_multiple_of(groups) || !out_channels.is_multiple_of(groups) {
        return Err(Error::IndivisibleGroups { in_channels, out_channels, groups });
    }
    Ok((in_channels / groups) * (out_channels / groups) * groups * kernel * kernel)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayerRole {
    /// First convolution; consumes quantized pixels rather than spikes.
    Encoding,
    /// Spike-driven 3x3 convolution on the main path of a residual block.
    Main,
    /// 1x1 convolution on a downsampling shortcut.
    Shortcut,
    FullyConnected,
}

impl LayerRole {
    pub fn as_str(&self) -> &'static str {
        match self {
            LayerRole::Encoding => "encoding",
            LayerRole::Main => "main",
            LayerRole::Shortcut => "shortcut",
            LayerRole::FullyConnected => "fc",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub name: String,
    pub role: LayerRole,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
    /// Spatial extent of the input; `(features, 1, 1)` for the classifier.
    pub input: Shape3,
}

impl LayerShape {
    pub fn output(&self) -> Shape3 {
        let out = |n: usize| (n + 2 * self.padding - self.kernel) / self.stride + 1;
        Shape3::new(self.out_channels, out(self.input.height), out(self.input.width))
    }

    pub fn in_per_group(&self) -> usize {
        self.in_channels / self.groups
    }

    pub fn out_per_group(&self) -> usize {
        self.out_channels / self.groups
    }

    pub fn param_count(&self) -> usize {
        conv_param_count(self.in_channels, self.out_channels, self.groups, self.kernel)
            .expect("validated at construction")
    }

    /// Shape of the weight tensor: `(out, in / g, k, k)`.
    pub fn weight_shape(&self) -> Vec<usize> {
        vec![self.out_channels, self.in_per_group(), self.kernel, self.kernel]
    }

    pub fn is_conv(&self) -> bool {
        self.role != LayerRole::FullyConnected
    }

    pub fn validate(&self) -> Result<()> {
        conv_param_count(self.in_channels, self.out_channels, self.groups, self.kernel)?;
        if self.kernel == 0 || self.stride == 0 {
            return Err(Error::InvalidConfig(format!("{}: kernel and stride must be positive", self.name)));
        }
        if self.input.channels != self.in_channels {
            return Err(Error::InvalidConfig(format!(
                "{}: input has {} channels, layer expects {}",
                self.name, self.input.channels, self.in_channels
            )));
        }
        if self.input.height + 2 * self.padding < self.kernel || self.input.width + 2 * self.padding < self.kernel {
            return Err(Error::InvalidConfig(format!("{}: input smaller than kernel", self.name)));
        }
        Ok(())
    }
}

/// Indices into [`NetworkGraph::layers`] describing one residual block. The
/// block output is `threshold(conv_b(conv_a(x)) + shortcut(x))`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockTopology {
    pub conv_a: usize,
    pub conv_b: usize,
    /// `None` is an identity shortcut.
    pub shortcut: Option<usize>,
}

/// A residual edge: the value added just before the threshold of `add_into`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResidualEdge {
    /// Layer whose input is the block input.
    pub block_input_of: usize,
    /// Convolution applied on the edge, if any.
    pub through: Option<usize>,
    pub add_into: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    pub in_channels: usize,
    pub input_size: usize,
    pub stem_channels: usize,
    /// Channel width of each stage; every stage after the first halves the
    /// spatial size in its first block.
    pub stage_channels: Vec<usize>,
    pub blocks_per_stage: usize,
    /// Group count of the 3x3 main-path convolutions.
    pub groups: usize,
    pub num_classes: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            in_channels: 3,
            input_size: 32,
            stem_channels: 128,
            stage_channels: vec![128, 256],
            blocks_per_stage: 2,
            groups: 4,
            num_classes: 10,
        }
    }
}

impl NetworkConfig {
    pub fn with_groups(groups: usize) -> Self {
        Self { groups, ..Self::default() }
    }
}

/// Ordered layers of the network plus its residual structure. Convolutions
/// come first in execution order; the classifier, if present, is last.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct NetworkGraph {
    pub input: Shape3,
    pub layers: Vec<LayerShape>,
    pub blocks: Vec<BlockTopology>,
}

impl NetworkGraph {
    pub fn encoder(&self) -> Option<&LayerShape> {
        self.layers.first().filter(|l| l.role == LayerRole::Encoding)
    }

    pub fn fc(&self) -> Option<&LayerShape> {
        self.layers.last().filter(|l| l.role == LayerRole::FullyConnected)
    }

    pub fn conv_layers(&self) -> impl Iterator<Item = &LayerShape> {
        self.layers.iter().filter(|l| l.is_conv())
    }

    /// Layers with trainable weights, shortcut convolutions excluded.
    pub fn trainable_layer_count(&self) -> usize {
        self.layers.iter().filter(|l| l.role != LayerRole::Shortcut).count()
    }

    /// Spatial map fed to the global pool.
    pub fn pooled_shape(&self) -> Option<Shape3> {
        let last = self.blocks.last()?;
        Some(self.layers[last.conv_b].output())
    }

    pub fn residual_edges(&self) -> Vec<ResidualEdge> {
        self.blocks
            .iter()
            .map(|b| ResidualEdge { block_input_of: b.conv_a, through: b.shortcut, add_into: b.conv_b })
            .collect()
    }

    pub fn layer_index(&self, name: &str) -> Option<usize> {
        self.layers.iter().position(|l| l.name == name)
    }

    /// Checks layer shapes and that every residual add joins equal shapes.
    pub fn validate(&self) -> Result<()> {
        for l in &self.layers {
            l.validate()?;
        }
        for b in &self.blocks {
            let get = |i: usize| {
                self.layers
                    .get(i)
                    .ok_or_else(|| Error::InvalidConfig(format!("block refers to missing layer {i}")))
            };
            let a = get(b.conv_a)?;
            let main = get(b.conv_b)?;
            if main.input != a.output() {
                return Err(Error::InvalidConfig(format!("{} does not consume {}", main.name, a.name)));
            }
            let side = match b.shortcut {
                Some(s) => {
                    let sc = get(s)?;
                    if sc.input != a.input {
                        return Err(Error::InvalidConfig(format!("{} does not read the block input", sc.name)));
                    }
                    sc.output()
                }
                None => a.input,
            };
            if side != main.output() {
                return Err(Error::InvalidConfig(format!(
                    "residual add into {} joins {} with {}",
                    main.name,
                    main.output(),
                    side
                )));
            }
        }
        Ok(())
    }
}

/// Builds the residual network: a pixel-encoding convolution, residual stages
/// of grouped 3x3 convolutions, global pooling and a linear classifier.
pub fn build_resnet10(cfg: &NetworkConfig) -> Result<NetworkGraph> {
    if cfg.in_channels == 0 || cfg.input_size == 0 || cfg.stem_channels == 0 || cfg.num_classes == 0 {
        return Err(Error::InvalidConfig("channel counts and input size must be positive".into()));
    }
    if cfg.stage_channels.is_empty() || cfg.blocks_per_stage == 0 {
        return Err(Error::InvalidConfig("network needs at least one stage with one block".into()));
    }
    if cfg.groups == 0 {
        return Err(Error::InvalidConfig("groups must be positive".into()));
    }
    for &c in &cfg.stage_channels {
        if c % cfg.groups != 0 {
            return Err(Error::InvalidConfig(format!("stage width {c} not divisible by {} groups", cfg.groups)));
        }
    }
    let mut layers = Vec::new();
    let mut blocks = Vec::new();
    let input = Shape3::new(cfg.in_channels, cfg.input_size, cfg.input_size);

    let conv = |name: String, role, input: Shape3, out, kernel, stride, groups| LayerShape {
        name,
        role,
        in_channels: input.channels,
        out_channels: out,
        kernel,
        stride,
        padding: kernel / 2,
        groups,
        input,
    };

    let stem = conv("conv1".into(), LayerRole::Encoding, input, cfg.stem_channels, 3, 1, 1);
    let mut x = stem.output();
    layers.push(stem);

    for (si, &width) in cfg.stage_channels.iter().enumerate() {
        for bi in 0..cfg.blocks_per_stage {
            let stride = if si > 0 && bi == 0 { 2 } else { 1 };
            let prefix = format!("conv{}_{}", si + 2, bi + 1);
            let a = conv(format!("{prefix}a"), LayerRole::Main, x, width, 3, stride, cfg.groups);
            let b = conv(format!("{prefix}b"), LayerRole::Main, a.output(), width, 3, 1, cfg.groups);
            let out = b.output();
            if out.height == 0 || out.width == 0 {
                return Err(Error::InvalidConfig("input too small for the number of stages".into()));
            }
            let conv_a = layers.len();
            layers.push(a);
            let conv_b = layers.len();
            layers.push(b);
            let shortcut = if stride != 1 || x.channels != width {
                let sc = conv(format!("{prefix}sc"), LayerRole::Shortcut, x, width, 1, stride, 1);
                layers.push(sc);
                Some(layers.len() - 1)
            } else {
                None
            };
            blocks.push(BlockTopology { conv_a, conv_b, shortcut });
            x = out;
        }
    }
    layers.push(LayerShape {
        name: "fc".into(),
        role: LayerRole::FullyConnected,
        in_channels: x.channels,
        out_channels: cfg.num_classes,
        kernel: 1,
        stride: 1,
        padding: 0,
        groups: 1,
        input: Shape3::new(x.channels, 1, 1),
    });

    let graph = NetworkGraph { input, layers, blocks };
    graph.validate()?;
    Ok(graph)
}

/// Total weight count over every convolution and the classifier; biases
/// (one per output channel) are added when `include_bias` is set.
pub fn count_params(graph: &NetworkGraph, include_bias: bool) -> usize {
    graph
        .layers
        .iter()
        .map(|l| l.param_count() + if include_bias { l.out_channels } else { 0 })
        .sum()
}
