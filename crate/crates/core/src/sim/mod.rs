//! Cycle-level model of the pipelined PE-array accelerator.

mod bram;
mod geometry;
mod layer;
mod network;
mod pe;
mod report;
mod resources;
mod schedule;
mod timing;

pub use bram::{check_causality, Access, BankId, Bram, BramBank, BramEvent, DataKind, BRAM_BLOCK_BITS, DEFAULT_BRAM_BITS};
pub use geometry::{ArrayPlan, PeArrayGeometry};
pub use layer::{
    execute_layer, layer_cycles, partial_buffer_bits, simulate_layer, simulate_layer_default, tile_traffic, Epilogue,
    LayerContext, LayerOutput, LayerPorts, LayerRun, TileTraffic, ACC_BITS, CHANNEL_CONST_BITS,
};
pub use network::{
    count_bits, memory_plan, pipeline_report, pipeline_stages, simulate_pipeline, BankSpec, PipelineReport,
    PipelineStage, SimBlock, SimTrace, Simulator, StageKind, StageReport,
};
pub use pe::{accumulate_group, run_pe_array, PeRun};
pub use report::{FunctionalSummary, PipelineSummary, SimulationReport, REPORT_SCHEMA};
pub use resources::{default_resource_report, resource_report, EnergyModel, LayerResources, ResourceReport};
pub use schedule::{tile_layer, Tile, TileSchedule};
pub use timing::{schedule_images, schedule_stages, TileTiming, TimingConfig};
