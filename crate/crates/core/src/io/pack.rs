//! Weight layout matching the PE array.
//!
//! Weights are stored tile by tile in schedule order. Within a tile the
//! layout is core-major with rows (input channels) outermost, then columns
//! (output channels), then the core's kernel taps in raster order:
//!
//! ```text
//! tile 0: [row 0: col 0 taps, col 1 taps, ...], [row 1: ...], ...
//! tile 1: ...
//! ```
//!
//! so the array reads one tile's segment front to back.

use crate::error::{Error, Result};
use crate::model::{ConvLayerSpec, LayerShape};
use crate::sim::{tile_layer, PeArrayGeometry, TileSchedule};
use crate::tensor::{IntTensor, QuantParams};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedWeights {
    pub bytes: Vec<i8>,
    /// `(offset, len)` of each tile's segment, in schedule order.
    pub segments: Vec<(usize, usize)>,
}

impl PackedWeights {
    pub fn segment(&self, tile: usize) -> &[i8] {
        let (off, len) = self.segments[tile];
        &self.bytes[off..off + len]
    }

    pub fn len(&self) -> usize {
        self.bytes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }
}

fn layout(shape: &LayerShape, schedule: &TileSchedule) -> Vec<usize> {
    // Position in the logical (out, in/g, k, k) tensor of every packed byte.
    let k2 = shape.kernel * shape.kernel;
    let in_g = shape.in_per_group();
    let mut order = Vec::with_capacity(shape.param_count());
    for t in &schedule.tiles {
        for r in 0..t.in_len {
            let icg = t.in_start + r - t.group * in_g;
            for c in 0..t.out_len {
                let oc = t.out_start + c;
                let base = (oc * in_g + icg) * k2;
                order.extend(base..base + k2);
            }
        }
    }
    order
}

fn segments(schedule: &TileSchedule) -> Vec<(usize, usize)> {
    let mut off = 0;
    schedule
        .tiles
        .iter()
        .map(|t| {
            let len = schedule.tile_weights(t);
            let seg = (off, len);
            off += len;
            seg
        })
        .collect()
}

pub fn pack_weights(layer: &ConvLayerSpec, geom: &PeArrayGeometry) -> Result<PackedWeights> {
    if layer.weights.params().bits() > 8 {
        return Err(Error::InvalidConfig(format!(
            "{}: packed weights are bytes, layer is {}-bit",
            layer.name(),
            layer.weights.params().bits()
        )));
    }
    let schedule = tile_layer(&layer.shape, geom)?;
    let values = layer.weights.values();
    let bytes = layout(&layer.shape, &schedule).into_iter().map(|i| values[i] as i8).collect();
    Ok(PackedWeights { bytes, segments: segments(&schedule) })
}

pub fn unpack_weights(
    packed: &PackedWeights,
    shape: &LayerShape,
    geom: &PeArrayGeometry,
    params: QuantParams,
) -> Result<IntTensor> {
    let schedule = tile_layer(shape, geom)?;
    let order = layout(shape, &schedule);
    if order.len() != packed.bytes.len() {
        return Err(Error::GeometryMismatch(format!(
            "{}: {} packed bytes, layout needs {}",
            shape.name,
            packed.bytes.len(),
            order.len()
        )));
    }
    let mut values = vec![0i32; order.len()];
    for (&i, &b) in order.iter().zip(&packed.bytes) {
        values[i] = b as i32;
    }
    IntTensor::new(shape.weight_shape(), values, params)
}
