use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use rsnn::engine::{self, InferenceResult};
use rsnn::io::{load_cifar10, read_model, synthetic_batch, write_model, Cifar10Set};
use rsnn::model::{
    build_resnet10, conv_param_count, count_params, quantization_summary, quantize_model, NetworkConfig,
    QuantizationSummary, QuantizedModel, RealModel,
};
use rsnn::sim::{check_causality, resource_report, simulate_pipeline, ArrayPlan, EnergyModel, FunctionalSummary,
    SimulationReport, Simulator, DEFAULT_BRAM_BITS};
use rsnn::tensor::IntTensor;

use crate::config::RunConfig;
use crate::{Cli, CliError, Command, ModelFlags, NetFlags, TimingFlags};

fn data_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

fn to_toml<T: Serialize>(v: &T) -> Result<String, CliError> {
    toml::to_string(v).map_err(|e| CliError::Data(format!("report serialization: {e}")))
}

struct Ctx {
    cfg: RunConfig,
    table: bool,
}

impl Ctx {
    fn apply_net(&mut self, net: &NetFlags) -> Result<(), CliError> {
        if let Some(g) = net.groups {
            self.cfg.groups = g;
        }
        if let Some(b) = net.bits {
            self.cfg.bits = b;
        }
        if let Some(s) = net.seed {
            self.cfg.seed = s;
        }
        self.cfg.validate()
    }

    fn apply_timing(&mut self, t: &TimingFlags) -> Result<(), CliError> {
        for kv in &t.timing {
            self.cfg.set_timing(kv)?;
        }
        if let Some(c) = t.clock {
            self.cfg.clock_hz = c;
        }
        self.cfg.validate()
    }

    fn network(&self) -> NetworkConfig {
        NetworkConfig::with_groups(self.cfg.groups)
    }

    /// The model file if one is named, else a seeded random model.
    fn model(&mut self, flags: &ModelFlags) -> Result<QuantizedModel, CliError> {
        self.apply_net(&flags.net)?;
        match flags.model.as_ref().or(self.cfg.model.as_ref()) {
            Some(p) => read_model(p).map_err(|e| data_err(p, e)),
            None => Ok(QuantizedModel::random(&self.network(), self.cfg.seed, self.cfg.bits)?),
        }
    }

    fn dataset(&self, data: Option<&Path>) -> Result<Option<Cifar10Set>, CliError> {
        match data.or(self.cfg.data.as_deref()) {
            Some(p) => load_cifar10(p).map(Some).map_err(|e| data_err(p, e)),
            None => Ok(None),
        }
    }
}

pub fn dispatch(cli: Cli) -> Result<(), CliError> {
    let mut cfg = RunConfig::resolve(cli.config.as_deref())?;
    cfg.validate()?;
    if cli.output.is_some() {
        cfg.output = cli.output.clone();
    }
    let mut ctx = Ctx { cfg, table: cli.table };
    let text = match &cli.command {
        Command::ParamCount { groups, include_bias } => param_count(&mut ctx, *groups, *include_bias)?,
        Command::MakeRandomModel { net, out, real } => make_random_model(&mut ctx, net, out, real.as_deref())?,
        Command::Fuse { input, out } => fuse(input, out)?,
        Command::Quantize { input, out, bits } => quantize(&mut ctx, input, out, *bits)?,
        Command::Infer { model, data, limit } => infer(&mut ctx, model, data.as_deref(), *limit)?,
        Command::Simulate { model, timing, data, images } => simulate(&mut ctx, model, timing, data.as_deref(), *images)?,
        Command::Report { model, timing, images } => report(&mut ctx, model, timing, *images)?,
    };
    match &ctx.cfg.output {
        Some(p) => std::fs::write(p, text).map_err(|e| data_err(p, e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct LayerCount {
    name: String,
    role: &'static str,
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    groups: usize,
    params: usize,
    ungrouped_params: usize,
}

#[derive(Serialize)]
struct ParamReport {
    schema: &'static str,
    groups: usize,
    include_bias: bool,
    total: usize,
    ungrouped_total: usize,
    trainable_layers: usize,
    layers: Vec<LayerCount>,
}

fn param_count(ctx: &mut Ctx, groups: Option<usize>, include_bias: bool) -> Result<String, CliError> {
    ctx.apply_net(&NetFlags { groups, ..Default::default() })?;
    let graph = build_resnet10(&ctx.network())?;
    let bias = |c: usize| if include_bias { c } else { 0 };
    let mut layers = Vec::new();
    for l in &graph.layers {
        layers.push(LayerCount {
            name: l.name.clone(),
            role: l.role.as_str(),
            in_channels: l.in_channels,
            out_channels: l.out_channels,
            kernel: l.kernel,
            groups: l.groups,
            params: l.param_count() + bias(l.out_channels),
            ungrouped_params: conv_param_count(l.in_channels, l.out_channels, 1, l.kernel)? + bias(l.out_channels),
        });
    }
    let r = ParamReport {
        schema: "rsnn-params/1",
        groups: ctx.cfg.groups,
        include_bias,
        total: count_params(&graph, include_bias),
        ungrouped_total: layers.iter().map(|l| l.ungrouped_params).sum(),
        trainable_layers: graph.trainable_layer_count(),
        layers,
    };
    if !ctx.table {
        return to_toml(&r);
    }
    let mut s = String::new();
    let _ = writeln!(s, "{:<10} {:<16} {:>8} {:>6} {:>7} {:>12} {:>12}", "layer", "role", "in->out", "kernel", "groups", "params", "ungrouped");
    for l in &r.layers {
        let io = format!("{}->{}", l.in_channels, l.out_channels);
        let _ = writeln!(s, "{:<10} {:<16} {:>8} {:>6} {:>7} {:>12} {:>12}", l.name, l.role, io, l.kernel, l.groups, l.params, l.ungrouped_params);
    }
    let _ = writeln!(s, "{:<10} {:<16} {:>8} {:>6} {:>7} {:>12} {:>12}", "total", "", "", "", r.groups, r.total, r.ungrouped_total);
    Ok(s)
}

#[derive(Serialize)]
struct MadeModel {
    schema: &'static str,
    seed: u64,
    groups: usize,
    bits: u32,
    params: usize,
    model: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    real: Option<String>,
}

fn make_random_model(ctx: &mut Ctx, net: &NetFlags, out: &Path, real: Option<&Path>) -> Result<String, CliError> {
    ctx.apply_net(net)?;
    let cfg = ctx.network();
    let raw = RealModel::random(&cfg, ctx.cfg.seed)?;
    let model = quantize_model(&raw.fuse()?, ctx.cfg.bits, ArrayPlan::default())?;
    write_model(out, &model).map_err(|e| data_err(out, e))?;
    if let Some(p) = real {
        std::fs::write(p, raw.to_json()).map_err(|e| data_err(p, e))?;
    }
    to_toml(&MadeModel {
        schema: "rsnn-model-summary/1",
        seed: ctx.cfg.seed,
        groups: ctx.cfg.groups,
        bits: ctx.cfg.bits,
        params: count_params(&model.graph, false),
        model: out.display().to_string(),
        real: real.map(|p| p.display().to_string()),
    })
}

fn read_real(path: &Path) -> Result<RealModel, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| data_err(path, e))?;
    RealModel::from_json(&text).map_err(|e| data_err(path, e))
}

#[derive(Serialize)]
struct FuseReport {
    schema: &'static str,
    layers: usize,
    was_fused: bool,
}

fn fuse(input: &Path, out: &Path) -> Result<String, CliError> {
    let real = read_real(input)?;
    let fused = real.fuse().map_err(|e| data_err(input, e))?;
    std::fs::write(out, fused.to_json()).map_err(|e| data_err(out, e))?;
    to_toml(&FuseReport { schema: "rsnn-fuse/1", layers: fused.convs.len(), was_fused: real.is_fused() })
}

#[derive(Serialize)]
struct QuantizeReport {
    schema: &'static str,
    bits: u32,
    layers: Vec<QuantizationSummary>,
}

fn quantize(ctx: &mut Ctx, input: &Path, out: &Path, bits: Option<u32>) -> Result<String, CliError> {
    ctx.apply_net(&NetFlags { bits, ..Default::default() })?;
    let real = read_real(input)?;
    if !real.is_fused() {
        return Err(CliError::Data(format!("{}: model still carries batch norm; run `fuse` first", input.display())));
    }
    let model = quantize_model(&real, ctx.cfg.bits, ArrayPlan::default()).map_err(|e| data_err(input, e))?;
    write_model(out, &model).map_err(|e| data_err(out, e))?;
    to_toml(&QuantizeReport { schema: "rsnn-quantize/1", bits: ctx.cfg.bits, layers: quantization_summary(&real, &model) })
}

/// Images to run: the dataset (first `limit`) or `count` random images.
fn images(
    model: &QuantizedModel,
    set: Option<Cifar10Set>,
    limit: Option<usize>,
    seed: u64,
) -> Result<(Vec<IntTensor>, Option<Vec<u8>>), CliError> {
    match set {
        Some(set) => {
            let n = limit.unwrap_or(set.len()).min(set.len());
            let recs = &set.records[..n];
            let imgs = recs.iter().map(|r| model.quantize_pixels(&r.pixels)).collect::<Result<_, _>>()?;
            Ok((imgs, Some(recs.iter().map(|r| r.label).collect())))
        }
        None => {
            let n = limit.unwrap_or(1);
            let len = model.graph.input.len();
            let batch = synthetic_batch(n, seed);
            let imgs = batch
                .records
                .iter()
                .map(|r| model.quantize_pixels(&r.pixels[..len.min(r.pixels.len())]))
                .collect::<Result<_, _>>()?;
            Ok((imgs, None))
        }
    }
}

#[derive(Serialize)]
struct InferReport {
    schema: &'static str,
    images: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    correct: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    accuracy: Option<f64>,
    labels: Vec<usize>,
}

fn correct(results: &[InferenceResult], truth: Option<&[u8]>) -> Option<usize> {
    truth.map(|t| results.iter().zip(t).filter(|(r, &l)| r.label == l as usize).count())
}

fn infer(ctx: &mut Ctx, flags: &ModelFlags, data: Option<&Path>, limit: Option<usize>) -> Result<String, CliError> {
    let model = ctx.model(flags)?;
    let set = ctx.dataset(data)?;
    let (imgs, truth) = images(&model, set, limit, ctx.cfg.seed)?;
    let results = engine::infer_batch(&model, &imgs)?;
    let correct = correct(&results, truth.as_deref());
    let r = InferReport {
        schema: "rsnn-infer/1",
        images: results.len(),
        correct,
        accuracy: correct.map(|c| if results.is_empty() { 0.0 } else { c as f64 / results.len() as f64 }),
        labels: results.iter().map(|r| r.label).collect(),
    };
    if !ctx.table {
        return to_toml(&r);
    }
    let mut s = String::new();
    for (i, l) in r.labels.iter().enumerate() {
        let _ = writeln!(s, "{i:>6} {l}");
    }
    if let (Some(c), Some(a)) = (r.correct, r.accuracy) {
        let _ = writeln!(s, "accuracy {c}/{} = {:.4}", r.images, a);
    }
    Ok(s)
}

fn render(ctx: &Ctx, r: &SimulationReport) -> Result<String, CliError> {
    if !ctx.table {
        return r.to_toml().map_err(CliError::from);
    }
    let p = &r.pipeline;
    let mut s = String::new();
    let _ = writeln!(s, "{:<12} {:>10} {:>8}", "stage", "cycles", "util");
    for st in &r.stages {
        let _ = writeln!(s, "{:<12} {:>10} {:>8.3}", st.name, st.cycles, st.utilization);
    }
    let _ = writeln!(s, "latency {} cycles ({:.3} ms), II {} cycles, {:.1} fps pipelined, {:.1} fps one at a time",
        p.latency_cycles, p.latency_ms, p.initiation_interval, p.fps, p.unpipelined_fps);
    let res = &r.resources;
    let _ = writeln!(s, "multipliers {}, gated adders {}, weights {} bits, on-chip {} of {} bits",
        res.multiplier_units, res.gated_units, res.weight_bits, res.onchip_bits, res.capacity_bits);
    if let Some(f) = &r.functional {
        let _ = writeln!(s, "simulated {} images: {} labels and {} score vectors match the reference", f.images, f.matching_labels, f.matching_scores);
    }
    Ok(s)
}

fn resources(model: &QuantizedModel) -> Result<rsnn::sim::ResourceReport, CliError> {
    let bits = model.convs.iter().map(|c| c.weights.params().bits()).max().unwrap_or(8);
    Ok(resource_report(&model.graph, &model.arrays, bits, model.input_params.bits(), &EnergyModel::default(), DEFAULT_BRAM_BITS)?)
}

fn simulate(
    ctx: &mut Ctx,
    flags: &ModelFlags,
    timing: &TimingFlags,
    data: Option<&Path>,
    count: Option<usize>,
) -> Result<String, CliError> {
    let model = ctx.model(flags)?;
    ctx.apply_timing(timing)?;
    let set = ctx.dataset(data)?;
    let (imgs, truth) = images(&model, set, count, ctx.cfg.seed)?;
    let golden = engine::infer_batch(&model, &imgs)?;
    let mut sim = Simulator::new(&model, ctx.cfg.timing())?.with_trace(true);
    let mut simulated = Vec::with_capacity(imgs.len());
    let mut violations = 0;
    for img in &imgs {
        simulated.push(sim.run_image(img)?.result);
        violations += check_causality(sim.bram().events()).len();
        sim.clear_trace();
    }
    let functional = FunctionalSummary {
        images: imgs.len(),
        matching_labels: simulated.iter().zip(&golden).filter(|(a, b)| a.label == b.label).count(),
        matching_scores: simulated.iter().zip(&golden).filter(|(a, b)| a == b).count(),
        correct: correct(&simulated, truth.as_deref()),
        causality_violations: violations,
    };
    let pipeline = simulate_pipeline(&model.graph, &model.arrays, &ctx.cfg.timing(), imgs.len().max(1))?;
    let r = SimulationReport::new(&pipeline, resources(&model)?, Some(functional));
    let text = render(ctx, &r)?;
    if r.functional.as_ref().is_some_and(|f| f.matching_scores != f.images || f.causality_violations > 0) {
        return Err(CliError::Data(format!("simulation disagrees with the reference engine\n{text}")));
    }
    Ok(text)
}

fn report(ctx: &mut Ctx, flags: &ModelFlags, timing: &TimingFlags, images: usize) -> Result<String, CliError> {
    let model = ctx.model(flags)?;
    ctx.apply_timing(timing)?;
    let pipeline = simulate_pipeline(&model.graph, &model.arrays, &ctx.cfg.timing(), images.max(1))?;
    render(ctx, &SimulationReport::new(&pipeline, resources(&model)?, None))
}
