//! Machine-readable summary of a simulation, rendered as TOML.

use serde::Serialize;

use super::network::PipelineReport;
use super::resources::ResourceReport;
use crate::error::{Error, Result};

pub const REPORT_SCHEMA: &str = "rsnn-report/1";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineSummary {
    pub clock_hz: u64,
    pub images: usize,
    pub latency_cycles: u64,
    pub initiation_interval: u64,
    pub total_cycles: u64,
    pub latency_ms: f64,
    pub fps: f64,
    pub unpipelined_fps: f64,
    pub bottleneck: String,
}

/// Agreement of simulated and reference labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FunctionalSummary {
    pub images: usize,
    pub matching_labels: usize,
    pub matching_scores: usize,
    /// Images whose label equals the dataset label, when labels are known.
    pub correct: Option<usize>,
    pub causality_violations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationReport {
    pub schema: &'static str,
    pub pipeline: PipelineSummary,
    pub stages: Vec<super::network::StageReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub functional: Option<FunctionalSummary>,
    pub resources: ResourceReport,
}

impl SimulationReport {
    pub fn new(pipeline: &PipelineReport, resources: ResourceReport, functional: Option<FunctionalSummary>) -> Self {
        Self {
            schema: REPORT_SCHEMA,
            pipeline: PipelineSummary {
                clock_hz: pipeline.clock_hz,
                images: pipeline.images,
                latency_cycles: pipeline.latency_cycles,
                initiation_interval: pipeline.initiation_interval,
                total_cycles: pipeline.total_cycles,
                latency_ms: pipeline.latency_seconds() * 1e3,
                fps: pipeline.fps(),
                unpipelined_fps: pipeline.unpipelined_fps(),
                bottleneck: pipeline.bottleneck().map(|s| s.name.clone()).unwrap_or_default(),
            },
            stages: pipeline.stages.clone(),
            functional,
            resources,
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(format!("report serialization: {e}")))
    }
}
