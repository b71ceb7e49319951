//! Fixed-point residual spiking network: a bit-exact integer reference model
//! and a cycle-level simulator of a pipelined PE-array accelerator that runs it.
//!
//! - [`tensor`]: power-of-two quantization and feature-map containers.
//! - [`model`]: neurons, batch-norm folding, the network graph and its
//!   real-valued and quantized parameters.
//! - [`engine`]: integer inference, the reference every simulation is checked against.
//! - [`sim`]: PE arrays, tiling, BRAM, timing and resource models.
//! - [`io`]: model files, packed weights and CIFAR-10 batches.

pub mod engine;
pub mod error;
pub mod io;
pub mod model;
pub mod sim;
pub mod tensor;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/quantization.md")]
    mod quantization {}
    #[doc = include_str!("../../../book/src/neurons.md")]
    mod neurons {}
    #[doc = include_str!("../../../book/src/bn-fusion.md")]
    mod bn_fusion {}
    #[doc = include_str!("../../../book/src/network.md")]
    mod network {}
    #[doc = include_str!("../../../book/src/engine.md")]
    mod engine {}
    #[doc = include_str!("../../../book/src/accelerator.md")]
    mod accelerator {}
    #[doc = include_str!("../../../book/src/timing.md")]
    mod timing {}
    #[doc = include_str!("../../../book/src/resources.md")]
    mod resources {}
    #[doc = include_str!("../../../book/src/formats.md")]
    mod formats {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
