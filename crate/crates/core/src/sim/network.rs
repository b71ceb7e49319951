//! The whole accelerator: layer pipeline, BRAM plan and per-image execution.

use serde::Serialize;

use super::bram::{Access, BankId, Bram, BramEvent, DataKind, DEFAULT_BRAM_BITS};
use super::geometry::ArrayPlan;
use super::layer::{execute_layer, layer_cycles, partial_buffer_bits, Epilogue, LayerContext, LayerPorts, ACC_BITS, CHANNEL_CONST_BITS};
use super::timing::TimingConfig;
use crate::engine::{InferenceResult, PooledFeature};
use crate::error::{Error, Result};
use crate::io::{pack_weights, PackedWeights};
use crate::model::{LayerRole, NetworkGraph, QuantizedModel};
use crate::sim::PeArrayGeometry;
use crate::tensor::{AccumulatorMap, IntTensor, SpikeMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum StageKind {
    Conv,
    Pool,
    Classifier,
}

/// One stage of the image-level pipeline. Convolutions listed together run
/// side by side on different arrays.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PipelineStage {
    pub name: String,
    pub kind: StageKind,
    /// Indices into the graph's layers.
    pub layers: Vec<usize>,
    pub cycles: u64,
}

/// Stored width of a pooled spike count over `area` positions.
pub fn count_bits(area: usize) -> u64 {
    (u64::BITS - (area as u64).leading_zeros()) as u64
}

/// Pipeline stages of a graph: the encoder, then per block the first
/// convolution beside the shortcut and the second with the residual add,
/// then pooling and the classifier.
pub fn pipeline_stages(graph: &NetworkGraph, plan: &ArrayPlan, timing: &TimingConfig) -> Result<Vec<PipelineStage>> {
    let conv_stage = |name: &str, layers: Vec<usize>| -> Result<PipelineStage> {
        let mut cycles = 0;
        for &l in &layers {
            let shape = &graph.layers[l];
            cycles = cycles.max(layer_cycles(shape, &plan.for_role(shape.role), timing)?);
        }
        Ok(PipelineStage { name: name.to_string(), kind: StageKind::Conv, layers, cycles })
    };
    let enc = graph.encoder().ok_or_else(|| Error::InvalidConfig("graph has no encoding layer".into()))?;
    let fc_index = graph.layers.len() - 1;
    let fc = graph.fc().ok_or_else(|| Error::InvalidConfig("graph has no classifier".into()))?;
    let pooled = graph.pooled_shape().ok_or_else(|| Error::InvalidConfig("graph has no residual blocks".into()))?;

    let mut stages = vec![conv_stage(&enc.name, vec![0])?];
    for b in &graph.blocks {
        let mut first = vec![b.conv_a];
        first.extend(b.shortcut);
        stages.push(conv_stage(&graph.layers[b.conv_a].name, first)?);
        stages.push(conv_stage(&graph.layers[b.conv_b].name, vec![b.conv_b])?);
    }
    stages.push(PipelineStage {
        name: "pool".into(),
        kind: StageKind::Pool,
        layers: vec![],
        cycles: timing.pool_cycles(pooled.area()),
    });
    stages.push(PipelineStage {
        name: fc.name.clone(),
        kind: StageKind::Classifier,
        layers: vec![fc_index],
        cycles: timing.fc_cycles(fc.in_channels, fc.out_channels, plan.fc_units),
    });
    Ok(stages)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageReport {
    pub name: String,
    pub cycles: u64,
    /// Busy fraction of the stage at the steady-state rate.
    pub utilization: f64,
}

/// Latency and throughput of the image-level pipeline.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineReport {
    pub clock_hz: u64,
    pub images: usize,
    pub stages: Vec<StageReport>,
    /// Cycles from an image entering the first stage to its scores.
    pub latency_cycles: u64,
    /// Cycles between successive images in steady state.
    pub initiation_interval: u64,
    /// Cycles to finish all `images`.
    pub total_cycles: u64,
}

impl PipelineReport {
    pub fn latency_seconds(&self) -> f64 {
        self.latency_cycles as f64 / self.clock_hz as f64
    }

    /// Steady-state images per second.
    pub fn fps(&self) -> f64 {
        self.clock_hz as f64 / self.initiation_interval as f64
    }

    /// Images per second with one image in flight at a time.
    pub fn unpipelined_fps(&self) -> f64 {
        self.clock_hz as f64 / self.latency_cycles as f64
    }

    pub fn bottleneck(&self) -> Option<&StageReport> {
        self.stages.iter().max_by_key(|s| s.cycles)
    }
}

pub fn pipeline_report(stages: &[PipelineStage], clock_hz: u64, images: usize) -> PipelineReport {
    let latency_cycles: u64 = stages.iter().map(|s| s.cycles).sum();
    let initiation_interval = stages.iter().map(|s| s.cycles).max().unwrap_or(0);
    let total_cycles = latency_cycles + images.saturating_sub(1) as u64 * initiation_interval;
    PipelineReport {
        clock_hz,
        images,
        stages: stages
            .iter()
            .map(|s| StageReport {
                name: s.name.clone(),
                cycles: s.cycles,
                utilization: if initiation_interval == 0 { 0.0 } else { s.cycles as f64 / initiation_interval as f64 },
            })
            .collect(),
        latency_cycles,
        initiation_interval,
        total_cycles,
    }
}

/// Pipeline timing of `images` back-to-back images.
pub fn simulate_pipeline(graph: &NetworkGraph, plan: &ArrayPlan, timing: &TimingConfig, images: usize) -> Result<PipelineReport> {
    timing.validate()?;
    Ok(pipeline_report(&pipeline_stages(graph, plan, timing)?, timing.clock_hz, images))
}

/// One BRAM bank of the memory plan.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BankSpec {
    pub name: String,
    pub bits: u64,
    pub ports: u32,
    #[serde(skip)]
    pub kind: DataKind,
}

/// Output maps read by a later block's residual add stay live for one more
/// image, so they get a third buffer.
fn output_depth(graph: &NetworkGraph, layer: usize) -> u64 {
    let feeds_block = layer == 0 || graph.blocks.iter().any(|b| b.conv_b == layer);
    if feeds_block {
        3
    } else {
        2
    }
}

/// Bit width of a layer's stored output.
fn output_bits(role: LayerRole) -> u64 {
    if role == LayerRole::Shortcut {
        ACC_BITS
    } else {
        1
    }
}

/// Every bank the accelerator allocates, in allocation order: the input
/// image, then per convolution its weights, partial sums and output, then
/// pooled counts, classifier weights and scores.
pub fn memory_plan(graph: &NetworkGraph, plan: &ArrayPlan, weight_bits: u32, input_bits: u32) -> Vec<BankSpec> {
    let bank = |name: String, bits: u64, ports: u32, kind| BankSpec { name, bits, ports, kind };
    let mut banks = vec![bank("input".into(), 2 * graph.input.len() as u64 * input_bits as u64, 2, DataKind::Features)];
    for (i, l) in graph.layers.iter().enumerate().filter(|(_, l)| l.is_conv()) {
        let geom = plan.for_role(l.role);
        banks.push(bank(
            format!("{}.weights", l.name),
            l.param_count() as u64 * weight_bits as u64 + l.out_channels as u64 * CHANNEL_CONST_BITS,
            1,
            DataKind::Weights,
        ));
        let psum = partial_buffer_bits(l, &geom);
        if psum > 0 {
            banks.push(bank(format!("{}.partials", l.name), psum, 2, DataKind::Partials));
        }
        banks.push(bank(
            format!("{}.out", l.name),
            output_depth(graph, i) * l.output().len() as u64 * output_bits(l.role),
            2,
            DataKind::Features,
        ));
    }
    if let (Some(fc), Some(pooled)) = (graph.fc(), graph.pooled_shape()) {
        banks.push(bank("pool".into(), 2 * pooled.channels as u64 * count_bits(pooled.area()), 2, DataKind::Features));
        banks.push(bank(
            format!("{}.weights", fc.name),
            fc.param_count() as u64 * weight_bits as u64 + fc.out_channels as u64 * ACC_BITS,
            1,
            DataKind::Weights,
        ));
        banks.push(bank("scores".into(), 2 * fc.out_channels as u64 * ACC_BITS, 1, DataKind::Features));
    }
    banks
}

/// Activations the accelerator produced for one image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimBlock {
    pub mid: SpikeMap,
    pub out: SpikeMap,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimTrace {
    pub image: usize,
    pub encoded: SpikeMap,
    pub blocks: Vec<SimBlock>,
    pub pooled: Vec<PooledFeature>,
    pub result: InferenceResult,
    /// `(start, end)` cycle of each pipeline stage for this image.
    pub stage_windows: Vec<(u64, u64)>,
}

#[derive(Debug, Clone, Copy)]
struct Banks {
    input: BankId,
    pool: BankId,
    fc_weights: BankId,
    scores: BankId,
}

/// Functional and cycle-level model of the accelerator running a quantized
/// network. Images are fed one after another; each enters the pipeline as
/// soon as the first stage is free.
pub struct Simulator<'m> {
    model: &'m QuantizedModel,
    timing: TimingConfig,
    geoms: Vec<PeArrayGeometry>,
    packed: Vec<PackedWeights>,
    ports: Vec<LayerPorts>,
    banks: Banks,
    bram: Bram,
    stages: Vec<PipelineStage>,
    free_at: Vec<u64>,
    images: usize,
}

impl<'m> Simulator<'m> {
    pub fn new(model: &'m QuantizedModel, timing: TimingConfig) -> Result<Self> {
        Self::with_capacity(model, timing, DEFAULT_BRAM_BITS)
    }

    /// Fails with `CapacityExceeded` if the memory plan does not fit.
    pub fn with_capacity(model: &'m QuantizedModel, timing: TimingConfig, capacity_bits: u64) -> Result<Self> {
        timing.validate()?;
        let graph = &model.graph;
        let plan = &model.arrays;
        let weight_bits = model.convs.iter().map(|c| c.weights.params().bits()).max().unwrap_or(8);
        let mut bram = Bram::new(capacity_bits);
        for bank in memory_plan(graph, plan, weight_bits, model.input_params.bits()) {
            bram.allocate(bank.name, bank.bits, bank.ports)?;
        }
        let find = |name: String| bram.find(&name).ok_or_else(|| Error::InvalidConfig(format!("no bank {name}")));

        let mut geoms = Vec::new();
        let mut packed = Vec::new();
        let mut ports = Vec::new();
        for (i, conv) in model.convs.iter().enumerate() {
            let geom = plan.for_role(conv.shape.role);
            packed.push(pack_weights(conv, &geom)?);
            geoms.push(geom);
            let block_of_a = graph.blocks.iter().find(|b| b.conv_a == i || b.shortcut == Some(i));
            let block_of_b = graph.blocks.iter().find(|b| b.conv_b == i);
            let block_input = |conv_a: usize| -> Result<BankId> {
                match graph.blocks.iter().position(|b| b.conv_a == conv_a) {
                    Some(0) | None => find(format!("{}.out", graph.layers[0].name)),
                    Some(k) => find(format!("{}.out", graph.layers[graph.blocks[k - 1].conv_b].name)),
                }
            };
            let input = if i == 0 {
                find("input".into())?
            } else if let Some(b) = block_of_a {
                block_input(b.conv_a)?
            } else if let Some(b) = block_of_b {
                find(format!("{}.out", graph.layers[b.conv_a].name))?
            } else {
                return Err(Error::InvalidConfig(format!("{} is not part of any block", conv.name())));
            };
            let residual = match block_of_b {
                Some(b) => Some(match b.shortcut {
                    Some(s) => find(format!("{}.out", graph.layers[s].name))?,
                    None => block_input(b.conv_a)?,
                }),
                None => None,
            };
            ports.push(LayerPorts {
                weights: find(format!("{}.weights", conv.name()))?,
                input,
                output: find(format!("{}.out", conv.name()))?,
                partials: bram.find(&format!("{}.partials", conv.name())),
                residual,
            });
        }
        let banks = Banks {
            input: find("input".into())?,
            pool: find("pool".into())?,
            fc_weights: find(format!("{}.weights", model.fc.shape.name))?,
            scores: find("scores".into())?,
        };
        let stages = pipeline_stages(graph, plan, &timing)?;
        let free_at = vec![0; stages.len()];
        Ok(Self { model, timing, geoms, packed, ports, banks, bram, stages, free_at, images: 0 })
    }

    /// Records every BRAM access, not only the counters.
    pub fn with_trace(mut self, on: bool) -> Self {
        self.bram = self.bram.with_trace(on);
        self
    }

    pub fn bram(&self) -> &Bram {
        &self.bram
    }

    /// Drops recorded events; counters and allocations are kept.
    pub fn clear_trace(&mut self) {
        self.bram.clear_events();
    }

    pub fn stages(&self) -> &[PipelineStage] {
        &self.stages
    }

    pub fn images(&self) -> usize {
        self.images
    }

    /// Cycle at which the last image simulated so far left the pipeline.
    pub fn elapsed_cycles(&self) -> u64 {
        self.free_at.last().copied().unwrap_or(0)
    }

    pub fn report(&self) -> PipelineReport {
        pipeline_report(&self.stages, self.timing.clock_hz, self.images.max(1))
    }

    pub fn run_pixels(&mut self, pixels: &[u8]) -> Result<SimTrace> {
        let image = self.model.quantize_pixels(pixels)?;
        self.run_image(&image)
    }

    pub fn run_image(&mut self, image: &IntTensor) -> Result<SimTrace> {
        let model = self.model;
        let graph = &model.graph;
        let index = self.images;
        let mut windows = Vec::with_capacity(self.stages.len());
        let mut ready = self.free_at[0];
        let mut window = |s: usize, ready: u64, cycles: u64, free_at: &mut [u64]| {
            let start = ready.max(free_at[s]);
            free_at[s] = start + cycles;
            windows.push((start, start + cycles));
            start
        };

        let in_bits = graph.input.len() as u64 * image.params().bits() as u64;
        let start = window(0, ready, self.stages[0].cycles, &mut self.free_at);
        self.bram.record(BramEvent {
            cycle: start,
            image: index,
            stage: 0,
            bank: self.banks.input,
            access: Access::Write,
            kind: DataKind::Features,
            channels: (0, graph.input.channels),
            bits: in_bits,
        })?;
        let enc = self.conv(0, 0, start, image, Epilogue::Fire)?;
        let encoded = enc.spikes().cloned().ok_or_else(|| Error::InvalidConfig("encoder must fire".into()))?;
        ready = start + self.stages[0].cycles;

        let mut x = encoded.clone();
        let mut blocks = Vec::with_capacity(graph.blocks.len());
        for (bi, b) in graph.blocks.iter().enumerate() {
            let sa = 1 + 2 * bi;
            let start = window(sa, ready, self.stages[sa].cycles, &mut self.free_at);
            let mid = self.conv(b.conv_a, sa, start, &x, Epilogue::Fire)?;
            let mid = mid.spikes().cloned().ok_or_else(|| Error::InvalidConfig("main layer must fire".into()))?;
            let conv_b = model.conv(b.conv_b);
            let (side, side_bits) = match b.shortcut {
                Some(s) => {
                    let out = self.conv(s, sa, start, &x, Epilogue::Hold)?;
                    let acc = out.accumulators().cloned().ok_or_else(|| Error::InvalidConfig("shortcut must hold".into()))?;
                    (acc, ACC_BITS as u32)
                }
                None => (AccumulatorMap::from_spikes(&x, conv_b.acc_exponent)?, 1),
            };
            ready = start + self.stages[sa].cycles;

            let sb = sa + 1;
            let start = window(sb, ready, self.stages[sb].cycles, &mut self.free_at);
            let out = self.conv(b.conv_b, sb, start, &mid, Epilogue::Merge { residual: &side, element_bits: side_bits })?;
            let out = out.spikes().cloned().ok_or_else(|| Error::InvalidConfig("main layer must fire".into()))?;
            ready = start + self.stages[sb].cycles;
            blocks.push(SimBlock { mid, out: out.clone() });
            x = out;
        }

        let sp = self.stages.len() - 2;
        let start = window(sp, ready, self.stages[sp].cycles, &mut self.free_at);
        let end = start + self.stages[sp].cycles;
        let pooled = self.pool(&x, sp, start, end)?;
        ready = end;

        let sf = sp + 1;
        let start = window(sf, ready, self.stages[sf].cycles, &mut self.free_at);
        let result = self.classify(&pooled, sf, start, start + self.stages[sf].cycles)?;

        self.images += 1;
        Ok(SimTrace { image: index, encoded, blocks, pooled, result, stage_windows: windows })
    }

    fn conv<X: crate::tensor::FeatureInput>(
        &mut self,
        layer: usize,
        stage: usize,
        origin: u64,
        input: &X,
        epilogue: Epilogue<'_>,
    ) -> Result<super::layer::LayerOutput> {
        let mut ctx = LayerContext { bram: &mut self.bram, ports: self.ports[layer], image: self.images, stage, origin };
        let run = execute_layer(
            self.model.conv(layer),
            &self.geoms[layer],
            &self.packed[layer],
            input,
            epilogue,
            &self.timing,
            &mut ctx,
        )?;
        debug_assert!(run.cycles <= self.stages[stage].cycles);
        Ok(run.output)
    }

    fn feature_event(&mut self, cycle: u64, stage: usize, bank: BankId, access: Access, channels: usize, bits: u64) -> Result<()> {
        self.bram.record(BramEvent {
            cycle,
            image: self.images,
            stage,
            bank,
            access,
            kind: DataKind::Features,
            channels: (0, channels),
            bits,
        })
    }

    /// Per-channel spike counters, one position per cycle.
    fn pool(&mut self, x: &SpikeMap, stage: usize, start: u64, end: u64) -> Result<Vec<PooledFeature>> {
        let s = x.shape();
        let last = self.model.graph.blocks.last().map(|b| b.conv_b).unwrap_or(0);
        let src = self.ports[last].output;
        self.feature_event(start, stage, src, Access::Read, s.channels, s.len() as u64)?;
        let mut sums = vec![0u32; s.channels];
        for pos in 0..s.area() {
            for (c, sum) in sums.iter_mut().enumerate() {
                *sum += x.as_map().plane(c)[pos] as u32;
            }
        }
        let pool = self.banks.pool;
        self.feature_event(end, stage, pool, Access::Write, s.channels, s.channels as u64 * count_bits(s.area()))?;
        Ok(sums.into_iter().map(|sum| PooledFeature { sum, area: s.area() as u32 }).collect())
    }

    /// Classifier on `fc_units` multiply-accumulate units, each taking one
    /// class per round and one feature per cycle.
    fn classify(&mut self, pooled: &[PooledFeature], stage: usize, start: u64, end: u64) -> Result<InferenceResult> {
        let fc = &self.model.fc;
        if pooled.len() != fc.features() {
            return Err(Error::ShapeMismatch(format!("classifier expects {} features, got {}", fc.features(), pooled.len())));
        }
        let area = pooled.first().map_or(0, |p| p.area as usize);
        let pool = self.banks.pool;
        self.feature_event(start, stage, pool, Access::Read, pooled.len(), pooled.len() as u64 * count_bits(area))?;
        let fc_bits = fc.shape.param_count() as u64 * fc.weights.params().bits() as u64 + fc.classes() as u64 * ACC_BITS;
        self.bram.record(BramEvent {
            cycle: start,
            image: self.images,
            stage,
            bank: self.banks.fc_weights,
            access: Access::Read,
            kind: DataKind::Weights,
            channels: (0, fc.classes()),
            bits: fc_bits,
        })?;
        let units = self.model.arrays.fc_units.max(1);
        let mut scores = vec![0i64; fc.classes()];
        for round in 0..fc.classes().div_ceil(units) {
            for unit in 0..units {
                let class = round * units + unit;
                if class >= fc.classes() {
                    break;
                }
                let mut acc = fc.bias[class] as i64;
                for (w, p) in fc.row(class).iter().zip(pooled) {
                    acc += *w as i64 * p.sum as i64;
                }
                scores[class] = acc;
            }
        }
        let bank = self.banks.scores;
        self.feature_event(end, stage, bank, Access::Write, fc.classes(), fc.classes() as u64 * ACC_BITS)?;
        Ok(InferenceResult::from_scores(scores))
    }
}
