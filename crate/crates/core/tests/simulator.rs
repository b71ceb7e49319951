use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rsnn::engine::{self, conv2d_grouped, residual_add};
use rsnn::io::synthetic_batch;
use rsnn::model::{threshold_activate, LayerRole, LayerShape, NetworkConfig, NetworkGraph, QuantizedModel};
use rsnn::sim::*;
use rsnn::tensor::{pad2d, AccumulatorMap, Map3, Shape3, SpikeMap};
use rsnn::Error;

fn small_config() -> NetworkConfig {
    NetworkConfig { stem_channels: 16, stage_channels: vec![16, 32], input_size: 8, ..Default::default() }
}

/// Random pixels sized for [`small_config`].
fn small_images(n: usize, seed: u64) -> Vec<Vec<u8>> {
    synthetic_batch(n, seed).records.into_iter().map(|r| r.pixels[..3 * 8 * 8].to_vec()).collect()
}

fn random_spikes(shape: Shape3, density: f64, rng: &mut ChaCha8Rng) -> SpikeMap {
    SpikeMap::from_fn(shape, |_, _, _| rng.random_bool(density))
}

fn padded_ints(s: &SpikeMap, p: usize) -> Map3<i32> {
    pad2d(&s.as_map().map(|v| v as i32), p)
}

#[test]
fn every_default_layer_matches_reference() {
    let m = QuantizedModel::random(&NetworkConfig::default(), 11, 8).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let pixels = synthetic_batch(1, 9).records.remove(0).pixels;
    let image = m.quantize_pixels(&pixels).unwrap();
    let enc = m.encoder();
    let (run, _) = simulate_layer_default(enc, &m.arrays.encoding, &image, Epilogue::Fire).unwrap();
    let want = threshold_activate(&conv2d_grouped(&image, enc).unwrap(), enc.threshold_q as i64);
    assert_eq!(run.output.spikes(), Some(&want));

    for b in &m.graph.blocks {
        let a = m.conv(b.conv_a);
        let x = random_spikes(a.shape.input, 0.3, &mut rng);
        let (run, _) = simulate_layer_default(a, &m.arrays.main, &x, Epilogue::Fire).unwrap();
        let want = threshold_activate(&conv2d_grouped(&x, a).unwrap(), a.threshold_q as i64);
        assert_eq!(run.output.spikes(), Some(&want), "{}", a.name());

        let conv_b = m.conv(b.conv_b);
        let mid = random_spikes(conv_b.shape.input, 0.3, &mut rng);
        let side = match b.shortcut {
            Some(s) => {
                let sc = m.conv(s);
                let (run, _) = simulate_layer_default(sc, &m.arrays.shortcut, &x, Epilogue::Hold).unwrap();
                let want = conv2d_grouped(&x, sc).unwrap();
                assert_eq!(run.output.accumulators(), Some(&want), "{}", sc.name());
                want
            }
            None => AccumulatorMap::from_spikes(&x, conv_b.acc_exponent).unwrap(),
        };
        let epi = Epilogue::Merge { residual: &side, element_bits: 32 };
        let (run, bram) = simulate_layer_default(conv_b, &m.arrays.main, &mid, epi).unwrap();
        let merged = residual_add(&conv2d_grouped(&mid, conv_b).unwrap(), &side).unwrap();
        let want = threshold_activate(&merged, conv_b.threshold_q as i64);
        assert_eq!(run.output.spikes(), Some(&want), "{}", conv_b.name());
        assert!(check_causality(bram.events()).is_empty());
    }
}

#[test]
fn default_main_layer_tiling_and_cycles() {
    let m = QuantizedModel::random(&NetworkConfig::default(), 1, 8).unwrap();
    let l = &m.conv(1).shape;
    let timing = TimingConfig::default();
    let s = tile_layer(l, &m.arrays.main).unwrap();
    assert_eq!(s.invocations(), 64);
    assert!(s.tiles.iter().all(|t| t.positions() == 1024));
    let cycles = layer_cycles(l, &m.arrays.main, &timing).unwrap();
    // Compute-bound: 64 sweeps of 1024 positions plus per-sweep overhead,
    // with the other stages of the first and last tile exposed.
    let sweep = 1024 + timing.weight_load_cycles + timing.pe_fill_cycles;
    assert_eq!(cycles, 34 + 3 + 64 * sweep + 32);
    assert!((65_536..65_536 * 11 / 10).contains(&cycles));
}

#[test]
fn zero_input_gives_zero_partials_at_full_cost() {
    let geom = PeArrayGeometry::MAIN;
    let tile = Tile { group: 0, out_start: 0, out_len: 8, in_start: 0, in_len: 8, pass: 1, passes: 1, out_height: 32, out_width: 32 };
    let x = padded_ints(&SpikeMap::zeros(Shape3::new(8, 32, 32)), 1);
    let w = vec![5i8; 8 * 8 * 9];
    let timing = TimingConfig::default();
    let r = run_pe_array(&tile, &w, &x, &geom, 1, &timing).unwrap();
    assert!(r.partial.data().iter().all(|&v| v == 0));
    assert_eq!(r.cycles, 1024 + timing.weight_load_cycles + timing.pe_fill_cycles);
}

#[test]
fn single_spike_places_the_flipped_kernel() {
    let geom = PeArrayGeometry::new(1, 1, 9, false);
    let tile = Tile { group: 0, out_start: 0, out_len: 1, in_start: 0, in_len: 1, pass: 1, passes: 1, out_height: 5, out_width: 5 };
    let x = SpikeMap::from_fn(Shape3::new(1, 5, 5), |_, y, x| (y, x) == (2, 2));
    let w: Vec<i8> = (1..=9).collect();
    let r = run_pe_array(&tile, &w, &padded_ints(&x, 1), &geom, 1, &TimingConfig::default()).unwrap();
    for oy in 0..5 {
        for ox in 0..5 {
            let (dy, dx) = (2 + 1 - oy as isize, 2 + 1 - ox as isize);
            let want = if (0..3).contains(&dy) && (0..3).contains(&dx) { w[(dy * 3 + dx) as usize] as i64 } else { 0 };
            assert_eq!(r.partial.get(0, oy, ox), want, "({oy}, {ox})");
        }
    }
}

fn toy_layer(out: usize) -> rsnn::model::ConvLayerSpec {
    use rsnn::tensor::{IntTensor, QuantParams};
    let shape = LayerShape {
        name: "toy".into(),
        role: LayerRole::Main,
        in_channels: 1,
        out_channels: out,
        kernel: 3,
        stride: 1,
        padding: 1,
        groups: 1,
        input: Shape3::new(1, 4, 4),
    };
    let p = QuantParams::new(8, 0).unwrap();
    let weights = IntTensor::new(shape.weight_shape(), vec![1; out * 9], p).unwrap();
    rsnn::model::ConvLayerSpec::new(shape, weights, vec![0; out], 0, 2).unwrap()
}

#[test]
fn toy_layer_hand_schedule() {
    // Defaults: pad 6 rows, input 3 rows, compute 16 + 9 + 2, output 4 rows.
    // One tile:  [0,6) [6,9) [9,36) [36,40)
    // Two tiles on a one-column array, second tile:
    //            [6,12) [12,15) [36,63) [63,67)
    let x = SpikeMap::from_fn(Shape3::new(1, 4, 4), |_, y, x| (y + x) % 2 == 0);
    let timing = TimingConfig::default();
    let geom = PeArrayGeometry::new(1, 1, 9, false);
    let (one, _) = simulate_layer(&toy_layer(1), &geom, &x, Epilogue::Fire, &timing, DEFAULT_BRAM_BITS).unwrap();
    assert_eq!(one.cycles, 40);
    assert_eq!(one.timings[0].start, [0, 6, 9, 36]);
    let (two, bram) = simulate_layer(&toy_layer(2), &geom, &x, Epilogue::Fire, &timing, DEFAULT_BRAM_BITS).unwrap();
    assert_eq!(two.timings[1].start, [6, 12, 36, 63]);
    assert_eq!(two.cycles, 67);
    assert_eq!(two.invocations, 2);
    assert!(check_causality(bram.events()).is_empty());
    // A 3x3 window of ones over a checkerboard: the center pixel fires.
    let s = two.output.spikes().unwrap();
    assert!(s.get(0, 1, 1) && !s.get(0, 0, 0));
}

#[test]
fn layer_that_does_not_fit_is_rejected() {
    let x = SpikeMap::zeros(Shape3::new(1, 4, 4));
    let geom = PeArrayGeometry::new(1, 1, 9, false);
    let r = simulate_layer(&toy_layer(1), &geom, &x, Epilogue::Fire, &TimingConfig::default(), 64);
    assert!(matches!(r, Err(Error::CapacityExceeded { .. })));
    let m = QuantizedModel::random(&NetworkConfig::default(), 1, 8).unwrap();
    assert!(matches!(
        Simulator::with_capacity(&m, TimingConfig::default(), 4_000_000),
        Err(Error::CapacityExceeded { .. })
    ));
}

#[test]
fn network_matches_reference_and_is_causal() {
    let m = QuantizedModel::random(&small_config(), 21, 8).unwrap();
    let mut sim = Simulator::new(&m, TimingConfig::default()).unwrap().with_trace(true);
    for px in small_images(6, 5) {
        let image = m.quantize_pixels(&px).unwrap();
        let golden = engine::run(&m, &image).unwrap();
        let t = sim.run_image(&image).unwrap();
        assert_eq!(t.encoded, golden.encoded);
        for (a, b) in t.blocks.iter().zip(&golden.blocks) {
            assert_eq!((&a.mid, &a.out), (&b.mid, &b.out));
        }
        assert_eq!(t.pooled, golden.pooled);
        assert_eq!(t.result, golden.result);
    }
    assert_eq!(check_causality(sim.bram().events()), Vec::<String>::new());
    let rep = sim.report();
    assert_eq!(sim.elapsed_cycles(), rep.latency_cycles + 5 * rep.initiation_interval);
}

#[test]
fn traffic_matches_static_report() {
    let m = QuantizedModel::random(&small_config(), 2, 8).unwrap();
    let mut sim = Simulator::new(&m, TimingConfig::default()).unwrap();
    for px in small_images(2, 1) {
        sim.run_pixels(&px).unwrap();
    }
    let rep = resource_report(&m.graph, &m.arrays, 8, 8, &EnergyModel::default(), DEFAULT_BRAM_BITS).unwrap();
    assert_eq!(sim.bram().bits_read(), 2 * rep.bits_read);
    assert_eq!(sim.bram().bits_written(), 2 * rep.bits_written);
    assert_eq!(sim.bram().allocated_bits(), rep.onchip_bits);
}

#[test]
fn simulation_is_deterministic() {
    let m = QuantizedModel::random(&small_config(), 3, 8).unwrap();
    let data = small_images(3, 3);
    let run = || {
        let mut sim = Simulator::new(&m, TimingConfig::default()).unwrap().with_trace(true);
        let traces: Vec<_> = data.iter().map(|px| sim.run_pixels(px).unwrap()).collect();
        (traces, sim.bram().events().to_vec())
    };
    assert_eq!(run(), run());
}

#[test]
fn stage_windows_follow_the_pipeline() {
    let m = QuantizedModel::random(&small_config(), 4, 8).unwrap();
    let timing = TimingConfig::default();
    let mut sim = Simulator::new(&m, timing).unwrap();
    let traces: Vec<_> = small_images(4, 2).iter().map(|px| sim.run_pixels(px).unwrap()).collect();
    let cycles: Vec<u64> = sim.stages().iter().map(|s| s.cycles).collect();
    let expect = schedule_images(&cycles, 4);
    for (t, e) in traces.iter().zip(&expect) {
        assert_eq!(&t.stage_windows, e);
    }
}

#[test]
fn pipeline_algebra() {
    let stage = |name: &str, cycles| PipelineStage { name: name.into(), kind: StageKind::Conv, layers: vec![], cycles };
    let one = pipeline_report(&[stage("a", 700)], 100_000_000, 1);
    assert_eq!(one.latency_cycles, one.initiation_interval);
    let two = pipeline_report(&[stage("a", 300), stage("b", 500)], 100_000_000, 4);
    assert_eq!((two.latency_cycles, two.initiation_interval), (800, 500));
    assert_eq!(two.total_cycles, 800 + 3 * 500);
    assert_eq!(two.fps() * two.initiation_interval as f64, 1e8);
    assert_eq!(two.bottleneck().unwrap().name, "b");
}

#[test]
fn default_network_latency() {
    let g = rsnn::model::build_resnet10(&NetworkConfig::default()).unwrap();
    let rep = simulate_pipeline(&g, &ArrayPlan::default(), &TimingConfig::default(), 1).unwrap();
    assert_eq!(rep.stages.len(), 11);
    assert!(rep.latency_cycles >= 199_000 && rep.latency_cycles <= 796_000, "{}", rep.latency_cycles);
    let slower = TimingConfig { weight_load_cycles: 100, ..TimingConfig::default() };
    let rep2 = simulate_pipeline(&g, &ArrayPlan::default(), &slower, 1).unwrap();
    assert!(rep2.latency_cycles > rep.latency_cycles);
}

#[test]
fn default_resources() {
    let g = rsnn::model::build_resnet10(&NetworkConfig::default()).unwrap();
    let r = default_resource_report(&g, &ArrayPlan::default()).unwrap();
    assert_eq!(r.multiplier_units, 1728 + 512 + 10);
    assert_eq!(r.gated_units, 576);
    assert_eq!(r.weight_bits, 702_336 * 8);
    assert!(r.fits());
    assert!(r.mac_ops > 0 && r.gated_add_ops > r.mac_ops);
}

#[test]
fn empty_graph_reports_nothing() {
    let r = default_resource_report(&NetworkGraph::default(), &ArrayPlan::default()).unwrap();
    assert_eq!((r.multiplier_units, r.gated_units, r.weight_bits, r.onchip_bits), (0, 0, 0, 0));
    assert_eq!((r.mac_ops, r.gated_add_ops, r.bits_read, r.bits_written), (0, 0, 0, 0));
    assert_eq!(r.energy, 0.0);
}

#[test]
fn report_is_toml() {
    let m = QuantizedModel::random(&small_config(), 4, 8).unwrap();
    let p = simulate_pipeline(&m.graph, &m.arrays, &TimingConfig::default(), 10).unwrap();
    let r = default_resource_report(&m.graph, &m.arrays).unwrap();
    let text = SimulationReport::new(&p, r, None).to_toml().unwrap();
    let v: toml::Table = text.parse().unwrap();
    assert_eq!(v["schema"].as_str(), Some(REPORT_SCHEMA));
    assert_eq!(v["pipeline"]["latency_cycles"].as_integer(), Some(p.latency_cycles as i64));
}
