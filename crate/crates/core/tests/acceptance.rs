//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Runs without a trained model; every network is seeded random.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rsnn::engine::{self, conv2d_grouped, residual_add};
use rsnn::io::{load_model, pack_weights, save_model, synthetic_batch, unpack_weights, Cifar10Set, RECORD_BYTES};
use rsnn::model::{
    bn_forward, build_resnet10, conv_param_count, count_params, fuse_bn, threshold_activate, BnParams, ConvLayerSpec,
    LayerRole, LayerShape, NetworkConfig, QuantizedModel,
};
use rsnn::sim::*;
use rsnn::tensor::{compute_scale, quantize, AccumulatorMap, IntTensor, QuantParams, RealTensor, Shape3, SpikeMap};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn runner(cases: u32) -> TestRunner {
    let config = Config { cases, failure_persistence: None, ..Config::default() };
    TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha))
}

#[allow(clippy::too_many_arguments)]
fn shape(cin: usize, cout: usize, groups: usize, k: usize, stride: usize, pad: usize, h: usize, w: usize) -> LayerShape {
    LayerShape {
        name: format!("c{cin}x{cout}g{groups}k{k}s{stride}"),
        role: if k == 1 { LayerRole::Shortcut } else { LayerRole::Main },
        in_channels: cin,
        out_channels: cout,
        kernel: k,
        stride,
        padding: pad,
        groups,
        input: Shape3::new(cin, h, w),
    }
}

fn random_layer(s: LayerShape, w_exp: i32, x_exp: i32, rng: &mut ChaCha8Rng) -> ConvLayerSpec {
    let n: usize = s.weight_shape().iter().product();
    let values = (0..n).map(|_| if rng.random_bool(0.2) { 0 } else { rng.random_range(-128..=127) }).collect();
    let weights = IntTensor::new(s.weight_shape(), values, QuantParams::new(8, w_exp).unwrap()).unwrap();
    let bias = (0..s.out_channels).map(|_| rng.random_range(-2000..=2000)).collect();
    let theta = rng.random_range(-500..=500);
    ConvLayerSpec::new(s, weights, bias, w_exp + x_exp, theta).unwrap()
}

fn random_spikes(s: Shape3, density: f64, rng: &mut ChaCha8Rng) -> SpikeMap {
    SpikeMap::from_fn(s, |_, _, _| rng.random_bool(density))
}

fn random_ints(s: Shape3, exp: i32, rng: &mut ChaCha8Rng) -> IntTensor {
    let values = (0..s.len()).map(|_| rng.random_range(-128..=127)).collect();
    IntTensor::new(vec![s.channels, s.height, s.width], values, QuantParams::new(8, exp).unwrap()).unwrap()
}

/// Six nested loops over raw values, bounds-checked instead of padded.
fn naive_conv(x: &[i64], s: &LayerShape, w: &[i32], bias: &[i32]) -> Vec<i64> {
    let o = s.output();
    let (h, wd, k) = (s.input.height as isize, s.input.width as isize, s.kernel);
    let (ig, og) = (s.in_per_group(), s.out_per_group());
    let mut out = vec![0i64; o.len()];
    for oc in 0..s.out_channels {
        for oy in 0..o.height {
            for ox in 0..o.width {
                let mut acc = bias[oc] as i64;
                for icg in 0..ig {
                    let ic = (oc / og) * ig + icg;
                    for ky in 0..k {
                        for kx in 0..k {
                            let y = (oy * s.stride + ky) as isize - s.padding as isize;
                            let xx = (ox * s.stride + kx) as isize - s.padding as isize;
                            if y < 0 || xx < 0 || y >= h || xx >= wd {
                                continue;
                            }
                            let xv = x[(ic * h as usize + y as usize) * wd as usize + xx as usize];
                            acc += w[((oc * ig + icg) * k + ky) * k + kx] as i64 * xv;
                        }
                    }
                }
                out[(oc * o.height + oy) * o.width + ox] = acc;
            }
        }
    }
    out
}

/// Real-valued grouped convolution, same loop structure as [`naive_conv`].
fn real_conv(x: &[f64], s: &LayerShape, w: &[f64], bias: &[f64]) -> Vec<f64> {
    let o = s.output();
    let (h, wd, k) = (s.input.height as isize, s.input.width as isize, s.kernel);
    let (ig, og) = (s.in_per_group(), s.out_per_group());
    let mut out = vec![0f64; o.len()];
    for oc in 0..s.out_channels {
        for oy in 0..o.height {
            for ox in 0..o.width {
                let mut acc = bias[oc];
                for icg in 0..ig {
                    let ic = (oc / og) * ig + icg;
                    for ky in 0..k {
                        for kx in 0..k {
                            let y = (oy * s.stride + ky) as isize - s.padding as isize;
                            let xx = (ox * s.stride + kx) as isize - s.padding as isize;
                            if y < 0 || xx < 0 || y >= h || xx >= wd {
                                continue;
                            }
                            acc += w[((oc * ig + icg) * k + ky) * k + kx] * x[(ic * h as usize + y as usize) * wd as usize + xx as usize];
                        }
                    }
                }
                out[(oc * o.height + oy) * o.width + ox] = acc;
            }
        }
    }
    out
}

fn parameter_count() -> Outcome {
    let graph = build_resnet10(&NetworkConfig::default()).map_err(|e| e.to_string())?;
    let total = count_params(&graph, false);
    let rel = (total as f64 - 690_000.0).abs() / 690_000.0;
    ensure(rel < 0.05, || format!("{total} weights, {:.2}% from 0.69M", rel * 100.0))?;
    let grouped = conv_param_count(128, 128, 4, 3).unwrap();
    let dense = conv_param_count(128, 128, 1, 3).unwrap();
    ensure(grouped * 4 == dense, || format!("grouped {grouped} vs dense {dense}"))?;
    Ok(format!("{total} weights ({:+.2}% vs 0.69M); 128->128 3x3: {grouped} = {dense}/4", (total as f64 / 690_000.0 - 1.0) * 100.0))
}

fn bn_fusion() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xb4);
    let mut worst = 0f64;
    let (layers, inputs) = (100, 100);
    for _ in 0..layers {
        let g = [1, 2, 4][rng.random_range(0..3)];
        let k = [1, 3][rng.random_range(0..2)];
        let s = shape(
            g * rng.random_range(1..=4),
            g * rng.random_range(1..=4),
            g,
            k,
            rng.random_range(1..=2),
            rng.random_range(0..=k / 2),
            rng.random_range(3..=6),
            rng.random_range(3..=6),
        );
        let n: usize = s.weight_shape().iter().product();
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..s.out_channels).map(|_| rng.random_range(-0.5..0.5)).collect();
        let bn: Vec<BnParams> = (0..s.out_channels)
            .map(|_| {
                BnParams::new(
                    rng.random_range(0.5..2.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(0.01..4.0),
                    1e-5,
                )
                .unwrap()
            })
            .collect();
        let per_out = n / s.out_channels;
        let (mut fw, mut fb) = (Vec::new(), Vec::new());
        for (o, p) in bn.iter().enumerate() {
            let (c, d) = fuse_bn(&w[o * per_out..(o + 1) * per_out], b[o], p);
            fw.extend(c);
            fb.push(d);
        }
        let area = s.output().area();
        for _ in 0..inputs {
            let x: Vec<f64> = (0..s.input.len()).map(|_| rng.random_range(-2.0..2.0)).collect();
            let y = real_conv(&x, &s, &w, &b);
            let reference: Vec<f64> = y
                .chunks(area)
                .zip(&bn)
                .flat_map(|(plane, p)| bn_forward(&RealTensor::new(vec![area], plane.to_vec()).unwrap(), p).into_values())
                .collect();
            let fused = real_conv(&x, &s, &fw, &fb);
            let scale = reference.iter().fold(0f64, |m, v| m.max(v.abs()));
            let err = reference.iter().zip(&fused).fold(0f64, |m, (a, b)| m.max((a - b).abs()));
            let rel = if scale > 0.0 { err / scale } else { err };
            worst = worst.max(rel);
        }
    }
    ensure(worst < 1e-10, || format!("max relative error {worst:.3e}"))?;
    Ok(format!("{layers} layers x {inputs} inputs, max relative error {worst:.2e}"))
}

fn quantization() -> Outcome {
    let cases = 10_000;
    let strategy = (2u32..=16, prop::collection::vec(-1.0f64..1.0, 1..64), -30i32..30, 0i32..3);
    runner(cases)
        .run(&strategy, |(bits, mantissas, e, shrink)| {
            let values: Vec<f64> = mantissas.iter().map(|m| m * 2f64.powi(e)).collect();
            let r_max = values.iter().fold(0f64, |m, v| m.max(v.abs()));
            if r_max == 0.0 {
                return Ok(());
            }
            let natural = compute_scale(r_max, bits).unwrap();
            let s = natural.scale();
            prop_assert_eq!(s.to_bits() & ((1u64 << 52) - 1), 0, "scale {} is not a power of two", s);
            prop_assert_eq!(s, 2f64.powi(natural.exponent()));
            let limit = 2f64.powi(bits as i32 - 1);
            prop_assert!(r_max * s <= limit && limit < 2.0 * r_max * s);
            // A coarser-than-natural scale forces some values into the clamp.
            let params = QuantParams::new(bits, natural.exponent() + shrink).unwrap();
            let s = params.scale();
            let t = RealTensor::new(vec![values.len()], values.clone()).unwrap();
            let q = quantize(&t, params).unwrap();
            let (qmin, qmax) = (-(1i32 << (bits - 1)), (1i32 << (bits - 1)) - 1);
            for (&r, &qv) in values.iter().zip(q.values()) {
                prop_assert!(qmin <= qv && qv <= qmax);
                if r.abs() < (limit - 0.5) / s {
                    prop_assert!((qv as f64 / s - r).abs() <= 0.5 / s, "r={} q={} S={}", r, qv, s);
                } else {
                    prop_assert_eq!(qv, if r > 0.0 { qmax } else { qmin });
                }
            }
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok(format!("{cases} property cases"))
}

fn golden_conv() -> Outcome {
    let cases = 1000;
    let strategy = (
        prop::sample::select(vec![1usize, 2, 4]),
        1usize..=16,
        1usize..=16,
        prop::sample::select(vec![1usize, 3]),
        1usize..=2,
        any::<bool>(),
        3usize..=8,
        3usize..=8,
        any::<bool>(),
        any::<u64>(),
    );
    let seen = std::cell::RefCell::new(std::collections::BTreeSet::new());
    runner(cases)
        .run(&strategy, |(g, cin, cout, k, stride, pad, h, w, spiking, seed)| {
            let (cin, cout) = ((cin / g).max(1) * g, (cout / g).max(1) * g);
            let pad = if pad { k / 2 } else { 0 };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x_exp = if spiking { 0 } else { rng.random_range(-8..=8) };
            let l = random_layer(shape(cin, cout, g, k, stride, pad, h, w), rng.random_range(-10..=4), x_exp, &mut rng);
            let (got, x): (_, Vec<i64>) = if spiking {
                let x = random_spikes(l.shape.input, 0.4, &mut rng);
                (conv2d_grouped(&x, &l).unwrap(), x.as_map().data().iter().map(|&v| v as i64).collect())
            } else {
                let x = random_ints(l.shape.input, x_exp, &mut rng);
                (conv2d_grouped(&x, &l).unwrap(), x.values().iter().map(|&v| v as i64).collect())
            };
            let want = naive_conv(&x, &l.shape, l.weights.values(), &l.bias);
            prop_assert_eq!(got.shape(), l.shape.output());
            prop_assert_eq!(got.as_map().data(), &want[..]);
            prop_assert_eq!(got.exponent(), l.acc_exponent);
            seen.borrow_mut().insert((g, stride));
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    let seen = seen.into_inner();
    ensure(seen.len() == 6, || format!("only covered (g, stride) in {seen:?}"))?;
    Ok(format!("{cases} random instances, all 6 (g, stride) combinations, bit-exact"))
}

fn fidelity_default_layers() -> Result<usize, String> {
    let m = QuantizedModel::random(&NetworkConfig::default(), 11, 8).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let image = m.quantize_pixels(&synthetic_batch(1, 9).records[0].pixels).unwrap();
    let enc = m.encoder();
    let (run, _) = simulate_layer_default(enc, &m.arrays.encoding, &image, Epilogue::Fire).map_err(|e| e.to_string())?;
    let want = threshold_activate(&conv2d_grouped(&image, enc).unwrap(), enc.threshold_q as i64);
    ensure(run.output.spikes() == Some(&want), || enc.name().to_string())?;
    let mut checked = 1;
    for b in &m.graph.blocks {
        let a = m.conv(b.conv_a);
        let x = random_spikes(a.shape.input, 0.3, &mut rng);
        let (run, _) = simulate_layer_default(a, &m.arrays.main, &x, Epilogue::Fire).map_err(|e| e.to_string())?;
        let want = threshold_activate(&conv2d_grouped(&x, a).unwrap(), a.threshold_q as i64);
        ensure(run.output.spikes() == Some(&want), || a.name().to_string())?;
        let side = match b.shortcut {
            Some(s) => {
                let sc = m.conv(s);
                let (run, _) = simulate_layer_default(sc, &m.arrays.shortcut, &x, Epilogue::Hold).map_err(|e| e.to_string())?;
                let want = conv2d_grouped(&x, sc).unwrap();
                ensure(run.output.accumulators() == Some(&want), || sc.name().to_string())?;
                checked += 1;
                want
            }
            None => AccumulatorMap::from_spikes(&x, m.conv(b.conv_b).acc_exponent).unwrap(),
        };
        let cb = m.conv(b.conv_b);
        let mid = random_spikes(cb.shape.input, 0.3, &mut rng);
        let epi = Epilogue::Merge { residual: &side, element_bits: 32 };
        let (run, bram) = simulate_layer_default(cb, &m.arrays.main, &mid, epi).map_err(|e| e.to_string())?;
        let merged = residual_add(&conv2d_grouped(&mid, cb).unwrap(), &side).unwrap();
        ensure(run.output.spikes() == Some(&threshold_activate(&merged, cb.threshold_q as i64)), || cb.name().to_string())?;
        ensure(check_causality(bram.events()).is_empty(), || format!("{}: causality", cb.name()))?;
        checked += 2;
    }
    Ok(checked)
}

fn fidelity_network(images: usize) -> Result<usize, String> {
    let m = QuantizedModel::random(&NetworkConfig::default(), 23, 8).map_err(|e| e.to_string())?;
    let mut sim = Simulator::new(&m, TimingConfig::default()).map_err(|e| e.to_string())?.with_trace(true);
    let mut spikes = 0;
    for (i, r) in synthetic_batch(images, 77).records.iter().enumerate() {
        let image = m.quantize_pixels(&r.pixels).unwrap();
        let golden = engine::run(&m, &image).map_err(|e| e.to_string())?;
        let t = sim.run_image(&image).map_err(|e| e.to_string())?;
        ensure(t.encoded == golden.encoded, || format!("image {i}: encoder"))?;
        for (j, (a, b)) in t.blocks.iter().zip(&golden.blocks).enumerate() {
            ensure(a.mid == b.mid && a.out == b.out, || format!("image {i}: block {j}"))?;
        }
        ensure(t.pooled == golden.pooled && t.result == golden.result, || format!("image {i}: classifier"))?;
        spikes += t.encoded.count_ones();
        let violations = check_causality(sim.bram().events());
        ensure(violations.is_empty(), || format!("image {i}: {}", violations[0]))?;
        sim.clear_trace();
    }
    ensure(spikes > 0, || "encoder never fired".into())?;
    Ok(images)
}

/// Every small layer over every small array: tiles cover each
/// (output channel, input channel, position) triple once, and the simulated
/// layer equals the golden convolution.
fn fidelity_exhaustive() -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut layers = 0;
    for g in [1, 2, 4] {
        for ig in 1..=3 {
            for og in 1..=3 {
                for k in [1, 3] {
                    for stride in [1, 2] {
                        for rows in [1, 2, 3, 8] {
                            for cols in [1, 2, 3, 8] {
                                for gated in [false, true] {
                                    let s = shape(g * ig, g * og, g, k, stride, k / 2, 5, 4);
                                    let geom = PeArrayGeometry::new(rows, cols, k * k, !gated);
                                    exhaustive_case(s, geom, &mut rng)?;
                                    layers += 1;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(layers)
}

fn exhaustive_case(s: LayerShape, geom: PeArrayGeometry, rng: &mut ChaCha8Rng) -> Result<(), String> {
    let sched = tile_layer(&s, &geom).map_err(|e| e.to_string())?;
    let area = s.output().area();
    let mut hits = vec![0usize; s.out_channels * s.in_per_group() * area];
    for t in &sched.tiles {
        ensure(t.positions() == area, || format!("{}: tile covers {} of {area} positions", s.name, t.positions()))?;
        for oc in t.out_start..t.out_start + t.out_len {
            for ic in t.in_start..t.in_start + t.in_len {
                ensure(ic / s.in_per_group() == oc / s.out_per_group(), || format!("{}: cross-group tile", s.name))?;
                let icg = ic % s.in_per_group();
                for p in 0..area {
                    hits[(oc * s.in_per_group() + icg) * area + p] += 1;
                }
            }
        }
    }
    ensure(hits.iter().all(|&h| h == 1), || format!("{} on {geom}: coverage {:?}", s.name, hits))?;
    let spiking = !geom.uses_multipliers;
    let x_exp = if spiking { 0 } else { -7 };
    let l = random_layer(s, -6, x_exp, rng);
    let timing = TimingConfig::default();
    let (run, want) = if spiking {
        let x = random_spikes(l.shape.input, 0.5, rng);
        (simulate_layer(&l, &geom, &x, Epilogue::Hold, &timing, DEFAULT_BRAM_BITS), conv2d_grouped(&x, &l))
    } else {
        let x = random_ints(l.shape.input, x_exp, rng);
        (simulate_layer(&l, &geom, &x, Epilogue::Hold, &timing, DEFAULT_BRAM_BITS), conv2d_grouped(&x, &l))
    };
    let (run, bram) = run.map_err(|e| format!("{} on {geom}: {e}", l.name()))?;
    ensure(run.output.accumulators() == Some(&want.unwrap()), || format!("{} on {geom}: mismatch", l.name()))?;
    ensure(run.invocations == sched.invocations(), || format!("{} on {geom}: invocations", l.name()))?;
    ensure(check_causality(bram.events()).is_empty(), || format!("{} on {geom}: causality", l.name()))
}

fn simulator_fidelity() -> Outcome {
    let layers = fidelity_default_layers()?;
    let images = fidelity_network(100)?;
    let small = fidelity_exhaustive()?;
    Ok(format!("{layers} default layers, {images} full-network images, {small} small layer/array pairs"))
}

fn timing_model() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for case in 0..1000 {
        let n = rng.random_range(1..=12);
        let stages: Vec<PipelineStage> = (0..n)
            .map(|i| PipelineStage {
                name: format!("s{i}"),
                kind: StageKind::Conv,
                layers: vec![],
                cycles: rng.random_range(1..=100_000),
            })
            .collect();
        let clock = rng.random_range(1_000_000..=1_000_000_000u64);
        let images = rng.random_range(1..=20);
        let r = pipeline_report(&stages, clock, images);
        let cycles: Vec<u64> = stages.iter().map(|s| s.cycles).collect();
        let sum: u64 = cycles.iter().sum();
        let max = *cycles.iter().max().unwrap();
        ensure(r.latency_cycles == sum, || format!("case {case}: latency {} != {sum}", r.latency_cycles))?;
        ensure(r.initiation_interval == max, || format!("case {case}: II {} != {max}", r.initiation_interval))?;
        ensure(r.total_cycles == sum + (images as u64 - 1) * max, || format!("case {case}: total"))?;
        let sched = schedule_images(&cycles, images);
        ensure(sched.last().and_then(|row| row.last()).map(|w| w.1) == Some(r.total_cycles), || format!("case {case}: schedule end"))?;
        let product = r.fps() * r.initiation_interval as f64;
        ensure((product - clock as f64).abs() <= clock as f64 * f64::EPSILON, || format!("case {case}: fps*II = {product}"))?;
    }

    let m = QuantizedModel::random(&NetworkConfig::default(), 1, 8).map_err(|e| e.to_string())?;
    let timing = TimingConfig::default();
    ensure(timing.clock_hz == 100_000_000, || "default clock".into())?;
    let r = simulate_pipeline(&m.graph, &m.arrays, &timing, 1).map_err(|e| e.to_string())?;
    let mut sim = Simulator::new(&m, timing).map_err(|e| e.to_string())?;
    let t = sim.run_pixels(&synthetic_batch(1, 0).records[0].pixels).map_err(|e| e.to_string())?;
    let simulated = t.stage_windows.last().map(|w| w.1).unwrap_or(0) - t.stage_windows.first().map(|w| w.0).unwrap_or(0);
    ensure(simulated == r.latency_cycles, || format!("simulated latency {simulated} != report {}", r.latency_cycles))?;
    let ratio = r.latency_cycles as f64 / 398_000.0;
    ensure((0.5..=2.0).contains(&ratio), || format!("latency {} cycles, {ratio:.2}x of 398000", r.latency_cycles))?;
    Ok(format!(
        "1000 random pipelines exact; default latency {} cycles = {:.3} ms ({ratio:.2}x of 398000), II {}, {:.1} fps",
        r.latency_cycles,
        r.latency_seconds() * 1e3,
        r.initiation_interval,
        r.fps()
    ))
}

fn resource_model() -> Outcome {
    let plan = ArrayPlan::default();
    let enc = plan.encoding;
    ensure(enc.uses_multipliers && enc.pe_count() == 1728, || format!("encoding array {enc}"))?;
    let graph = build_resnet10(&NetworkConfig::default()).map_err(|e| e.to_string())?;
    let r = default_resource_report(&graph, &plan).map_err(|e| e.to_string())?;
    let expected = (enc.pe_count() + plan.shortcut.pe_count() + plan.fc_units) as u64;
    ensure(r.multiplier_units == expected, || format!("{} multipliers, expected {expected}", r.multiplier_units))?;
    ensure(r.capacity_bits == 6745 * 36 * 1024 / 10, || format!("capacity {}", r.capacity_bits))?;
    let mbit = r.weight_bits as f64 / 1e6;
    ensure((mbit - 5.6).abs() / 5.6 < 0.05, || format!("weights {mbit:.3} Mbit"))?;
    ensure(r.weight_bits <= r.capacity_bits && r.fits(), || format!("on-chip {} of {} bits", r.onchip_bits, r.capacity_bits))?;
    Ok(format!(
        "encoding 1728 multipliers ({} total); weights {mbit:.3} Mbit; all buffers {:.2} of {:.2} Mbit",
        r.multiplier_units,
        r.onchip_bits as f64 / 1e6,
        r.capacity_bits as f64 / 1e6
    ))
}

fn io_round_trips() -> Outcome {
    let mut models = 0;
    let small = NetworkConfig { stem_channels: 16, stage_channels: vec![16, 32], input_size: 8, ..Default::default() };
    for (cfg, seed, bits) in [(NetworkConfig::default(), 0, 8), (small.clone(), 1, 8), (small.clone(), 2, 4), (small, 3, 2)] {
        let m = QuantizedModel::random(&cfg, seed, bits).map_err(|e| e.to_string())?;
        let bytes = save_model(&m).map_err(|e| e.to_string())?;
        let back = load_model(&bytes).map_err(|e| e.to_string())?;
        ensure(back == m, || format!("model seed {seed} bits {bits} changed on reload"))?;
        ensure(save_model(&back).unwrap() == bytes, || "re-save differs".into())?;
        for c in &m.convs {
            let geom = m.arrays.for_role(c.shape.role);
            let packed = pack_weights(c, &geom).map_err(|e| e.to_string())?;
            let w = unpack_weights(&packed, &c.shape, &geom, c.weights.params()).map_err(|e| e.to_string())?;
            ensure(w == c.weights, || format!("{}: pack/unpack", c.name()))?;
        }
        models += 1;
    }
    let batch = synthetic_batch(5, 3);
    let bytes = batch.to_bytes();
    let parsed = Cifar10Set::parse(&bytes).map_err(|e| e.to_string())?;
    ensure(parsed == batch && parsed.len() == 5, || "synthetic batch changed on parse".into())?;
    let bad = [0, 1, RECORD_BYTES - 1, RECORD_BYTES + 1, 5 * RECORD_BYTES - 1];
    for n in bad {
        ensure(Cifar10Set::parse(&bytes[..n.min(bytes.len())]).is_err(), || format!("accepted {n} bytes"))?;
    }
    Ok(format!("{models} models saved, reloaded and repacked; CIFAR parser rejects {} malformed lengths", bad.len()))
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("parameter count", parameter_count),
        ("batch-norm fusion", bn_fusion),
        ("quantization", quantization),
        ("golden convolution", golden_conv),
        ("simulator fidelity", simulator_fidelity),
        ("timing model", timing_model),
        ("resource model", resource_model),
        ("model and dataset I/O", io_round_trips),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let start = Instant::now();
        let outcome = match catch_unwind(AssertUnwindSafe(f)) {
            Ok(r) => r,
            Err(p) => Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into())),
        };
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {name:<22} {detail} [{secs:.1}s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name:<22} {detail} [{secs:.1}s]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
