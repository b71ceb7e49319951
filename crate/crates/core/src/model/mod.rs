//! Neuron dynamics, batch-norm folding, network topology and the quantized
//! parameter set.

mod bn;
mod graph;
mod neuron;
mod quantized;
mod real;

pub use bn::{bn_forward, fuse_bn, BnParams};
pub use graph::{
    build_resnet10, conv_param_count, count_params, BlockTopology, LayerRole, LayerShape, NetworkConfig,
    NetworkGraph, ResidualEdge,
};
pub use neuron::{lif_run, lif_step, threshold_activate, LifParams, ResetMode};
pub use quantized::{
    quantization_summary, quantize_model, ConvLayerSpec, FcLayerSpec, QuantizationSummary, QuantizedModel,
    PIXEL_RANGE,
};
pub use real::{RealConv, RealFc, RealModel, RANDOM_THRESHOLD, REAL_MODEL_FORMAT};
