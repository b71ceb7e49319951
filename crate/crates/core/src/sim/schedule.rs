//! Mapping a convolution onto repeated PE-array invocations.
//!
//! Output channels of one group are split into tiles of at most `core_cols`.
//! The group's input channels are consumed `core_rows` at a time; each chunk
//! is one reuse pass producing a partial sum, and the passes for one output
//! tile run back to back so the group's input maps stay resident until every
//! output tile of the group is done.

use super::geometry::PeArrayGeometry;
use crate::error::Result;
use crate::model::LayerShape;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Tile {
    pub group: usize,
    /// First output channel (absolute) and count, `out_len <= core_cols`.
    pub out_start: usize,
    pub out_len: usize,
    /// First input channel (absolute) and count, `in_len <= core_rows`.
    pub in_start: usize,
    pub in_len: usize,
    /// 1-based reuse pass within the output tile.
    pub pass: usize,
    pub passes: usize,
    pub out_height: usize,
    pub out_width: usize,
}

impl Tile {
    pub fn positions(&self) -> usize {
        self.out_height * self.out_width
    }

    /// Cores doing useful work in this invocation.
    pub fn active_cores(&self) -> usize {
        self.in_len * self.out_len
    }

    pub fn is_last_pass(&self) -> bool {
        self.pass == self.passes
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TileSchedule {
    pub geometry: PeArrayGeometry,
    pub kernel: usize,
    pub tiles: Vec<Tile>,
}

impl TileSchedule {
    pub fn invocations(&self) -> usize {
        self.tiles.len()
    }

    /// Tiles sharing one output tile, in pass order.
    pub fn output_tiles(&self) -> impl Iterator<Item = &[Tile]> {
        self.tiles.chunk_by(|a, b| a.out_start == b.out_start)
    }

    /// Weight bytes consumed by one tile.
    pub fn tile_weights(&self, t: &Tile) -> usize {
        t.active_cores() * self.kernel * self.kernel
    }
}

pub fn tile_layer(layer: &LayerShape, geom: &PeArrayGeometry) -> Result<TileSchedule> {
    geom.check(layer)?;
    let out = layer.output();
    let in_g = layer.in_per_group();
    let out_g = layer.out_per_group();
    let passes = in_g.div_ceil(geom.core_rows);
    let mut tiles = Vec::new();
    for group in 0..layer.groups {
        for o in (0..out_g).step_by(geom.core_cols) {
            for p in 0..passes {
                let i = p * geom.core_rows;
                tiles.push(Tile {
                    group,
                    out_start: group * out_g + o,
                    out_len: geom.core_cols.min(out_g - o),
                    in_start: group * in_g + i,
                    in_len: geom.core_rows.min(in_g - i),
                    pass: p + 1,
                    passes,
                    out_height: out.height,
                    out_width: out.width,
                });
            }
        }
    }
    Ok(TileSchedule { geometry: *geom, kernel: layer.kernel, tiles })
}
