//! Static resource and energy estimate of the accelerator.

use serde::{Deserialize, Serialize};

use super::bram::DEFAULT_BRAM_BITS;
use super::geometry::ArrayPlan;
use super::layer::{tile_traffic, ACC_BITS};
use super::network::{count_bits, memory_plan};
use super::schedule::tile_layer;
use crate::error::{Error, Result};
use crate::model::{LayerRole, NetworkGraph};

/// Relative energy of one operation of each kind. Only ratios matter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergyModel {
    pub mac: f64,
    pub gated_add: f64,
    pub bram_bit: f64,
}

impl Default for EnergyModel {
    fn default() -> Self {
        Self { mac: 1.0, gated_add: 0.1, bram_bit: 0.005 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerResources {
    pub name: String,
    pub role: LayerRole,
    /// Array the layer runs on, as `rows x cols x pes`.
    pub array: String,
    pub invocations: usize,
    pub mac_ops: u64,
    pub gated_add_ops: u64,
    pub weight_bits: u64,
    pub bits_read: u64,
    pub bits_written: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResourceReport {
    /// Multiplier-class units: encoding and shortcut PEs plus classifier units.
    /// Layers sharing an array count it once.
    pub multiplier_units: u64,
    /// Spike-gated adder PEs.
    pub gated_units: u64,
    /// Weights alone, without biases or thresholds.
    pub weight_bits: u64,
    /// Every bank of the memory plan.
    pub onchip_bits: u64,
    pub capacity_bits: u64,
    pub mac_ops: u64,
    pub gated_add_ops: u64,
    /// BRAM traffic of one image.
    pub bits_read: u64,
    pub bits_written: u64,
    /// Energy of one image in [`EnergyModel`] units.
    pub energy: f64,
    pub layers: Vec<LayerResources>,
}

impl ResourceReport {
    pub fn fits(&self) -> bool {
        self.onchip_bits <= self.capacity_bits
    }
}

/// Resource report of an empty graph: every count zero.
fn empty(capacity_bits: u64) -> ResourceReport {
    ResourceReport {
        multiplier_units: 0,
        gated_units: 0,
        weight_bits: 0,
        onchip_bits: 0,
        capacity_bits,
        mac_ops: 0,
        gated_add_ops: 0,
        bits_read: 0,
        bits_written: 0,
        energy: 0.0,
        layers: Vec::new(),
    }
}

/// Counts units, storage, operations and BRAM traffic for one image. Each
/// array is counted once however many layers share it. Operation counts are
/// dense: every PE of every active core fires once per output position.
pub fn resource_report(
    graph: &NetworkGraph,
    plan: &ArrayPlan,
    weight_bits: u32,
    input_bits: u32,
    energy: &EnergyModel,
    capacity_bits: u64,
) -> Result<ResourceReport> {
    let mut r = empty(capacity_bits);
    if graph.layers.is_empty() {
        return Ok(r);
    }
    let mut used: Vec<LayerRole> = Vec::new();
    let residual_bits = |i: usize| -> u64 {
        match graph.blocks.iter().find(|b| b.conv_b == i) {
            Some(b) if b.shortcut.is_some() => ACC_BITS,
            Some(_) => 1,
            None => 0,
        }
    };
    let wb = weight_bits as u64;
    for (i, l) in graph.layers.iter().enumerate() {
        if !used.contains(&l.role) {
            used.push(l.role);
            let g = plan.for_role(l.role);
            if g.uses_multipliers {
                r.multiplier_units += g.pe_count() as u64;
            } else {
                r.gated_units += g.pe_count() as u64;
            }
        }
        let mut lr = LayerResources {
            name: l.name.clone(),
            role: l.role,
            array: plan.for_role(l.role).to_string(),
            invocations: 0,
            mac_ops: 0,
            gated_add_ops: 0,
            weight_bits: l.param_count() as u64 * wb,
            bits_read: 0,
            bits_written: 0,
        };
        if l.role == LayerRole::FullyConnected {
            let pooled = graph.pooled_shape().ok_or_else(|| Error::InvalidConfig("classifier without blocks".into()))?;
            let counts = l.in_channels as u64 * count_bits(pooled.area());
            let last = graph.blocks.last().map(|b| b.conv_b).unwrap_or(0);
            lr.invocations = l.out_channels.div_ceil(plan.fc_units.max(1));
            lr.mac_ops = l.param_count() as u64;
            // Pooling reads the last spike map and writes counts; the
            // classifier reads counts and weights and writes scores.
            lr.bits_read = graph.layers[last].output().len() as u64 + counts + lr.weight_bits + l.out_channels as u64 * ACC_BITS;
            lr.bits_written = counts + l.out_channels as u64 * ACC_BITS;
        } else {
            let geom = plan.for_role(l.role);
            let schedule = tile_layer(l, &geom)?;
            let in_bits = if l.role == LayerRole::Encoding { input_bits as u64 } else { 1 };
            let out_bits = if l.role == LayerRole::Shortcut { ACC_BITS } else { 1 };
            for t in &schedule.tiles {
                let ops = (t.positions() * t.active_cores() * geom.pes_per_core) as u64;
                if geom.uses_multipliers {
                    lr.mac_ops += ops;
                } else {
                    lr.gated_add_ops += ops;
                }
                let tr = tile_traffic(l, t, in_bits, wb, out_bits, residual_bits(i));
                lr.bits_read += tr.reads();
                lr.bits_written += tr.writes();
            }
            lr.invocations = schedule.invocations();
            if l.role == LayerRole::Encoding {
                lr.bits_written += graph.input.len() as u64 * input_bits as u64;
            }
        }
        r.weight_bits += lr.weight_bits;
        r.mac_ops += lr.mac_ops;
        r.gated_add_ops += lr.gated_add_ops;
        r.bits_read += lr.bits_read;
        r.bits_written += lr.bits_written;
        r.layers.push(lr);
    }
    r.onchip_bits = memory_plan(graph, plan, weight_bits, input_bits).iter().map(|b| b.bits).sum();
    r.energy = r.mac_ops as f64 * energy.mac
        + r.gated_add_ops as f64 * energy.gated_add
        + (r.bits_read + r.bits_written) as f64 * energy.bram_bit;
    Ok(r)
}

/// [`resource_report`] with 8-bit weights and pixels, default energy weights
/// and the default BRAM budget.
pub fn default_resource_report(graph: &NetworkGraph, plan: &ArrayPlan) -> Result<ResourceReport> {
    resource_report(graph, plan, 8, 8, &EnergyModel::default(), DEFAULT_BRAM_BITS)
}
