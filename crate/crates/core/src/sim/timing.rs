//! Cycle model.
//!
//! Inside a layer every array invocation (tile) flows through four stages:
//! padding, input, compute and output. Stages of different tiles overlap, so
//! stage `j` of tile `i` starts once stage `j - 1` of the same tile and stage
//! `j` of the previous tile have both finished. Across layers the network is
//! pipelined at image granularity: each layer is a stage that accepts the next
//! image as soon as it is free.
//!
//! The per-stage costs are not published anywhere; they live in
//! [`TimingConfig`] and every one can be overridden.

use serde::{Deserialize, Serialize};

use super::schedule::Tile;
use crate::error::{Error, Result};
use crate::model::LayerShape;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimingConfig {
    pub clock_hz: u64,
    /// Loading one tile's weights into the array before its sweep.
    pub weight_load_cycles: u64,
    /// Adder-tree latency at the end of a sweep.
    pub pe_fill_cycles: u64,
    /// Padding stage, per padded input row.
    pub pad_cycles_per_row: u64,
    /// Line-buffer prefill, per kernel row.
    pub input_cycles_per_row: u64,
    /// Result write-back, per output row.
    pub output_cycles_per_row: u64,
    /// Pooling sweeps all channels in parallel, one position per cycle, plus this.
    pub pool_fill_cycles: u64,
    /// Classifier units take one feature per cycle, plus this.
    pub fc_fill_cycles: u64,
}

impl Default for TimingConfig {
    fn default() -> Self {
        Self {
            clock_hz: 100_000_000,
            weight_load_cycles: 9,
            pe_fill_cycles: 2,
            pad_cycles_per_row: 1,
            input_cycles_per_row: 1,
            output_cycles_per_row: 1,
            pool_fill_cycles: 2,
            fc_fill_cycles: 2,
        }
    }
}

impl TimingConfig {
    pub const KEYS: [&'static str; 8] = [
        "clock_hz",
        "weight_load_cycles",
        "pe_fill_cycles",
        "pad_cycles_per_row",
        "input_cycles_per_row",
        "output_cycles_per_row",
        "pool_fill_cycles",
        "fc_fill_cycles",
    ];

    /// Overrides one field by name.
    pub fn set(&mut self, key: &str, value: u64) -> Result<()> {
        let slot = match key {
            "clock_hz" => &mut self.clock_hz,
            "weight_load_cycles" => &mut self.weight_load_cycles,
            "pe_fill_cycles" => &mut self.pe_fill_cycles,
            "pad_cycles_per_row" => &mut self.pad_cycles_per_row,
            "input_cycles_per_row" => &mut self.input_cycles_per_row,
            "output_cycles_per_row" => &mut self.output_cycles_per_row,
            "pool_fill_cycles" => &mut self.pool_fill_cycles,
            "fc_fill_cycles" => &mut self.fc_fill_cycles,
            _ => return Err(Error::InvalidConfig(format!("unknown timing key {key:?}"))),
        };
        *slot = value;
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        if self.clock_hz == 0 {
            return Err(Error::InvalidConfig("clock frequency must be positive".into()));
        }
        Ok(())
    }

    /// Cycles of one PE-array sweep: one window per core per clock.
    pub fn sweep_cycles(&self, positions: usize) -> u64 {
        positions as u64 + self.weight_load_cycles + self.pe_fill_cycles
    }

    /// Costs of `[padding, input, compute, output]` for one tile.
    pub fn tile_costs(&self, layer: &LayerShape, tile: &Tile) -> [u64; 4] {
        let padded_rows = (layer.input.height + 2 * layer.padding) as u64;
        [
            padded_rows * self.pad_cycles_per_row,
            layer.kernel as u64 * self.input_cycles_per_row,
            self.sweep_cycles(tile.positions()),
            tile.out_height as u64 * self.output_cycles_per_row,
        ]
    }

    pub fn pool_cycles(&self, area: usize) -> u64 {
        area as u64 + self.pool_fill_cycles
    }

    pub fn fc_cycles(&self, features: usize, classes: usize, units: usize) -> u64 {
        classes.div_ceil(units.max(1)) as u64 * features as u64 + self.fc_fill_cycles
    }
}

/// Start and end cycle of each of a tile's four stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TileTiming {
    pub start: [u64; 4],
    pub end: [u64; 4],
}

/// Event schedule of tiles through the four-stage intra-layer pipeline,
/// starting at cycle `origin`.
#[allow(clippy::needless_range_loop)]
pub fn schedule_stages(costs: &[[u64; 4]], origin: u64) -> Vec<TileTiming> {
    let mut out: Vec<TileTiming> = Vec::with_capacity(costs.len());
    for (i, c) in costs.iter().enumerate() {
        let mut t = TileTiming::default();
        for j in 0..4 {
            let after_prev_stage = if j == 0 { origin } else { t.end[j - 1] };
            let after_prev_tile = if i == 0 { origin } else { out[i - 1].end[j] };
            t.start[j] = after_prev_stage.max(after_prev_tile);
            t.end[j] = t.start[j] + c[j];
        }
        out.push(t);
    }
    out
}

/// When each image enters and leaves each pipeline stage.
pub fn schedule_images(stage_cycles: &[u64], images: usize) -> Vec<Vec<(u64, u64)>> {
    let mut out: Vec<Vec<(u64, u64)>> = Vec::with_capacity(images);
    for i in 0..images {
        let mut row: Vec<(u64, u64)> = Vec::with_capacity(stage_cycles.len());
        for (s, &c) in stage_cycles.iter().enumerate() {
            let ready = if s == 0 { 0 } else { row[s - 1].1 };
            let free = if i == 0 { 0 } else { out[i - 1][s].1 };
            let start = ready.max(free);
            row.push((start, start + c));
        }
        out.push(row);
    }
    out
}
