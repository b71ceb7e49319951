//! One convolution layer on its PE array: tiling, the four-stage tile
//! pipeline, partial-sum accumulation and the output epilogue.

use super::bram::{Access, BankId, Bram, BramEvent, DataKind, DEFAULT_BRAM_BITS};
use super::geometry::PeArrayGeometry;
use super::pe::{accumulate_group, run_pe_array};
use super::schedule::{tile_layer, Tile, TileSchedule};
use super::timing::{schedule_stages, TileTiming, TimingConfig};
use crate::error::{Error, Result};
use crate::io::{pack_weights, PackedWeights};
use crate::model::{ConvLayerSpec, LayerShape};
use crate::tensor::{pad2d, AccumulatorMap, FeatureInput, Map3, SpikeMap};

/// Width of a stored partial or accumulator value.
pub const ACC_BITS: u64 = 32;
/// Bias plus threshold stored next to each output channel's weights.
pub const CHANNEL_CONST_BITS: u64 = 64;

/// What happens to a finished accumulator.
#[derive(Debug, Clone, Copy)]
pub enum Epilogue<'a> {
    /// Fire against the layer threshold.
    Fire,
    /// Add a residual in the layer's accumulator scale, then fire.
    /// `element_bits` is the stored width of the residual values.
    Merge { residual: &'a AccumulatorMap, element_bits: u32 },
    /// Keep the accumulators; used by shortcut convolutions.
    Hold,
}

impl Epilogue<'_> {
    pub fn output_bits(&self) -> u64 {
        match self {
            Epilogue::Hold => ACC_BITS,
            _ => 1,
        }
    }

    fn residual_bits(&self) -> u64 {
        match self {
            Epilogue::Merge { element_bits, .. } => *element_bits as u64,
            _ => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerOutput {
    Spikes(SpikeMap),
    Accumulators(AccumulatorMap),
}

impl LayerOutput {
    pub fn spikes(&self) -> Option<&SpikeMap> {
        match self {
            LayerOutput::Spikes(s) => Some(s),
            LayerOutput::Accumulators(_) => None,
        }
    }

    pub fn accumulators(&self) -> Option<&AccumulatorMap> {
        match self {
            LayerOutput::Accumulators(a) => Some(a),
            LayerOutput::Spikes(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerRun {
    pub output: LayerOutput,
    /// From the first padding cycle to the last output write.
    pub cycles: u64,
    pub invocations: usize,
    pub timings: Vec<TileTiming>,
}

/// BRAM traffic of one tile, in bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TileTraffic {
    pub input_read: u64,
    pub weight_read: u64,
    /// Running sum read back by passes after the first.
    pub partial_running_read: u64,
    /// Final sum read by the output stage.
    pub partial_final_read: u64,
    pub partial_write: u64,
    pub residual_read: u64,
    pub output_write: u64,
}

impl TileTraffic {
    pub fn reads(&self) -> u64 {
        self.input_read + self.weight_read + self.partial_running_read + self.partial_final_read + self.residual_read
    }

    pub fn writes(&self) -> u64 {
        self.partial_write + self.output_write
    }
}

/// Traffic of one tile. Multi-pass tiles accumulate in a partial-sum buffer:
/// each pass after the first reads the running sum back, and the output
/// stage reads the final sum. Single-pass tiles bypass the buffer.
pub fn tile_traffic(
    layer: &LayerShape,
    tile: &Tile,
    input_bits: u64,
    weight_bits: u64,
    output_bits: u64,
    residual_bits: u64,
) -> TileTraffic {
    let plane = (tile.out_len * tile.positions()) as u64;
    let mut t = TileTraffic {
        input_read: (tile.in_len * layer.input.area()) as u64 * input_bits,
        weight_read: (tile.active_cores() * layer.kernel * layer.kernel) as u64 * weight_bits,
        ..Default::default()
    };
    if tile.pass == 1 {
        t.weight_read += tile.out_len as u64 * CHANNEL_CONST_BITS;
    }
    if tile.passes > 1 {
        t.partial_write = plane * ACC_BITS;
        if tile.pass > 1 {
            t.partial_running_read = plane * ACC_BITS;
        }
        if tile.is_last_pass() {
            t.partial_final_read = plane * ACC_BITS;
        }
    }
    if tile.is_last_pass() {
        t.residual_read = plane * residual_bits;
        t.output_write = plane * output_bits;
    }
    t
}

/// Cycles the layer occupies its array, independent of the data.
pub fn layer_cycles(layer: &LayerShape, geom: &PeArrayGeometry, timing: &TimingConfig) -> Result<u64> {
    let schedule = tile_layer(layer, geom)?;
    let costs: Vec<[u64; 4]> = schedule.tiles.iter().map(|t| timing.tile_costs(layer, t)).collect();
    Ok(schedule_stages(&costs, 0).last().map_or(0, |t| t.end[3]))
}

/// Bits of partial-sum buffer a layer needs: one output tile, double buffered.
pub fn partial_buffer_bits(layer: &LayerShape, geom: &PeArrayGeometry) -> u64 {
    if layer.in_per_group().div_ceil(geom.core_rows.max(1)) <= 1 {
        return 0;
    }
    2 * (geom.core_cols.min(layer.out_per_group()) * layer.output().area()) as u64 * ACC_BITS
}

/// BRAM banks one layer touches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerPorts {
    pub weights: BankId,
    pub input: BankId,
    pub output: BankId,
    /// `None` for single-pass layers.
    pub partials: Option<BankId>,
    pub residual: Option<BankId>,
}

/// Where a layer runs: its banks, the image it works on, its pipeline stage
/// and the cycle it starts.
pub struct LayerContext<'b> {
    pub bram: &'b mut Bram,
    pub ports: LayerPorts,
    pub image: usize,
    pub stage: usize,
    pub origin: u64,
}

impl LayerContext<'_> {
    #[allow(clippy::too_many_arguments)]
    fn access(
        &mut self,
        cycle: u64,
        bank: BankId,
        access: Access,
        kind: DataKind,
        channels: (usize, usize),
        bits: u64,
    ) -> Result<()> {
        if bits == 0 {
            return Ok(());
        }
        self.bram.record(BramEvent { cycle, image: self.image, stage: self.stage, bank, access, kind, channels, bits })
    }
}

fn check_inputs<X: FeatureInput>(
    layer: &ConvLayerSpec,
    schedule: &TileSchedule,
    packed: &PackedWeights,
    input: &X,
    epilogue: &Epilogue<'_>,
) -> Result<()> {
    if input.exponent() != layer.input_exponent() {
        return Err(Error::ScaleMismatch { left: input.exponent(), right: layer.input_exponent() });
    }
    if packed.segments.len() != schedule.tiles.len() {
        return Err(Error::GeometryMismatch(format!(
            "{}: {} weight segments for {} tiles",
            layer.name(),
            packed.segments.len(),
            schedule.tiles.len()
        )));
    }
    if let Epilogue::Merge { residual, .. } = epilogue {
        if residual.shape() != layer.shape.output() {
            return Err(Error::ShapeMismatch(format!(
                "{}: residual {} for output {}",
                layer.name(),
                residual.shape(),
                layer.shape.output()
            )));
        }
        if residual.exponent() != layer.acc_exponent {
            return Err(Error::ScaleMismatch { left: residual.exponent(), right: layer.acc_exponent });
        }
    }
    Ok(())
}

/// Runs one layer with pre-packed weights, logging its BRAM traffic.
pub fn execute_layer<X: FeatureInput>(
    layer: &ConvLayerSpec,
    geom: &PeArrayGeometry,
    packed: &PackedWeights,
    input: &X,
    epilogue: Epilogue<'_>,
    timing: &TimingConfig,
    ctx: &mut LayerContext<'_>,
) -> Result<LayerRun> {
    let shape = &layer.shape;
    let schedule = tile_layer(shape, geom)?;
    check_inputs(layer, &schedule, packed, input, &epilogue)?;
    let x = input.feature_map()?;
    if x.shape() != shape.input {
        return Err(Error::ShapeMismatch(format!("{} expects input {}, got {}", shape.name, shape.input, x.shape())));
    }
    let padded = pad2d(&x, shape.padding);
    let costs: Vec<[u64; 4]> = schedule.tiles.iter().map(|t| timing.tile_costs(shape, t)).collect();
    let timings = schedule_stages(&costs, ctx.origin);

    let out_shape = shape.output();
    let out_bits = epilogue.output_bits();
    let mut acc_out = Map3::<i64>::zeros(out_shape);
    let mut partials = Vec::new();
    let in_bits = input.element_bits() as u64;
    let w_bits = layer.weights.params().bits() as u64;
    for (i, (tile, tt)) in schedule.tiles.iter().zip(&timings).enumerate() {
        let traffic = tile_traffic(shape, tile, in_bits, w_bits, out_bits, epilogue.residual_bits());
        let outs = (tile.out_start, tile.out_start + tile.out_len);
        let ports = ctx.ports;
        ctx.access(tt.start[1], ports.input, Access::Read, DataKind::Features, (tile.in_start, tile.in_start + tile.in_len), traffic.input_read)?;
        ctx.access(tt.start[2], ports.weights, Access::Read, DataKind::Weights, outs, traffic.weight_read)?;

        let run = run_pe_array(tile, packed.segment(i), &padded, geom, shape.stride, timing)?;
        partials.push(run.partial);

        if let Some(psum) = ports.partials {
            ctx.access(tt.start[2], psum, Access::Read, DataKind::Partials, outs, traffic.partial_running_read)?;
            ctx.access(tt.end[2], psum, Access::Write, DataKind::Partials, outs, traffic.partial_write)?;
            ctx.access(tt.start[3], psum, Access::Read, DataKind::Partials, outs, traffic.partial_final_read)?;
        } else if traffic.partial_write > 0 {
            return Err(Error::GeometryMismatch(format!("{}: multi-pass layer without a partial-sum bank", shape.name)));
        }
        if !tile.is_last_pass() {
            continue;
        }
        let sum = accumulate_group(&partials)?;
        partials.clear();
        for c in 0..tile.out_len {
            let oc = tile.out_start + c;
            let bias = layer.bias[oc] as i64;
            let dst = acc_out.plane_mut(oc);
            dst.iter_mut().zip(sum.plane(c)).for_each(|(d, &s)| *d = s + bias);
        }
        if let Epilogue::Merge { residual, .. } = &epilogue {
            let bank = ports.residual.ok_or_else(|| Error::InvalidConfig(format!("{}: no residual bank", shape.name)))?;
            ctx.access(tt.start[3], bank, Access::Read, DataKind::Features, outs, traffic.residual_read)?;
            for oc in outs.0..outs.1 {
                let dst = acc_out.plane_mut(oc);
                dst.iter_mut().zip(residual.as_map().plane(oc)).for_each(|(d, &r)| *d += r);
            }
        }
        ctx.access(tt.end[3], ports.output, Access::Write, DataKind::Features, outs, traffic.output_write)?;
    }

    let output = match epilogue {
        Epilogue::Hold => LayerOutput::Accumulators(AccumulatorMap::new(acc_out, layer.acc_exponent)),
        _ => {
            let th = layer.threshold_q as i64;
            LayerOutput::Spikes(SpikeMap::new(acc_out.map(|v| (v > th) as u8))?)
        }
    };
    let cycles = timings.last().map_or(0, |t| t.end[3]) - ctx.origin;
    Ok(LayerRun { output, cycles, invocations: schedule.tiles.len(), timings })
}

/// Bank sizes of a layer run on its own: input, weights, partials, output
/// and residual.
fn standalone_banks(layer: &ConvLayerSpec, geom: &PeArrayGeometry, input_bits: u64, epilogue: &Epilogue<'_>) -> [u64; 5] {
    let s = &layer.shape;
    [
        s.input.len() as u64 * input_bits,
        s.param_count() as u64 * layer.weights.params().bits() as u64 + s.out_channels as u64 * CHANNEL_CONST_BITS,
        partial_buffer_bits(s, geom),
        s.output().len() as u64 * epilogue.output_bits(),
        s.output().len() as u64 * epilogue.residual_bits(),
    ]
}

/// Runs one layer in isolation on a fresh BRAM of `capacity_bits`, with
/// tracing on. Fails with `CapacityExceeded` if the layer's buffers do not fit.
pub fn simulate_layer<X: FeatureInput>(
    layer: &ConvLayerSpec,
    geom: &PeArrayGeometry,
    input: &X,
    epilogue: Epilogue<'_>,
    timing: &TimingConfig,
    capacity_bits: u64,
) -> Result<(LayerRun, Bram)> {
    let packed = pack_weights(layer, geom)?;
    let in_bits = input.element_bits() as u64;
    let [input_b, weights_b, psum_b, out_b, res_b] = standalone_banks(layer, geom, in_bits, &epilogue);
    let mut bram = Bram::new(capacity_bits).with_trace(true);
    let ports = LayerPorts {
        input: bram.allocate("input", input_b, 2)?,
        weights: bram.allocate("weights", weights_b, 1)?,
        partials: if psum_b > 0 { Some(bram.allocate("partials", psum_b, 2)?) } else { None },
        output: bram.allocate("output", out_b, 1)?,
        residual: if res_b > 0 { Some(bram.allocate("residual", res_b, 1)?) } else { None },
    };
    let channels = layer.shape.in_channels;
    bram.record(BramEvent {
        cycle: 0,
        image: 0,
        stage: 0,
        bank: ports.input,
        access: Access::Write,
        kind: DataKind::Features,
        channels: (0, channels),
        bits: input_b,
    })?;
    if let Some(bank) = ports.residual {
        let c = layer.shape.out_channels;
        bram.record(BramEvent { cycle: 0, image: 0, stage: 0, bank, access: Access::Write, kind: DataKind::Features, channels: (0, c), bits: res_b })?;
    }
    let mut ctx = LayerContext { bram: &mut bram, ports, image: 0, stage: 0, origin: 0 };
    let run = execute_layer(layer, geom, &packed, input, epilogue, timing, &mut ctx)?;
    Ok((run, bram))
}

/// [`simulate_layer`] with the default BRAM budget.
pub fn simulate_layer_default<X: FeatureInput>(
    layer: &ConvLayerSpec,
    geom: &PeArrayGeometry,
    input: &X,
    epilogue: Epilogue<'_>,
) -> Result<(LayerRun, Bram)> {
    simulate_layer(layer, geom, input, epilogue, &TimingConfig::default(), DEFAULT_BRAM_BITS)
}
