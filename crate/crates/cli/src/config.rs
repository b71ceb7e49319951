//! Run configuration: built-in defaults, then an optional TOML file, then
//! command-line flags.
//!
//! ```toml
//! clock_hz = 100000000
//! bits = 8
//! groups = 4
//! seed = 0
//! model = "model.rsnn"
//! data = "test_batch.bin"
//! output = "report.toml"
//!
//! [timing]
//! weight_load_cycles = 9
//! ```

use std::path::{Path, PathBuf};

use serde::Deserialize;

use rsnn::sim::TimingConfig;
use rsnn::tensor::{MAX_BITS, MIN_BITS};

use crate::CliError;

pub const CONFIG_ENV: &str = "RSNN_CONFIG";

/// Overhead keys of [`TimingConfig`]; the clock lives at the top level.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimingOverrides {
    pub weight_load_cycles: Option<u64>,
    pub pe_fill_cycles: Option<u64>,
    pub pad_cycles_per_row: Option<u64>,
    pub input_cycles_per_row: Option<u64>,
    pub output_cycles_per_row: Option<u64>,
    pub pool_fill_cycles: Option<u64>,
    pub fc_fill_cycles: Option<u64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub clock_hz: u64,
    pub bits: u32,
    pub groups: usize,
    pub seed: u64,
    pub timing: TimingOverrides,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: None,
            data: None,
            output: None,
            clock_hz: 100_000_000,
            bits: 8,
            groups: 4,
            seed: 0,
            timing: TimingOverrides::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    /// The file named by `--config`, else by the environment, else defaults.
    pub fn resolve(explicit: Option<&Path>) -> Result<Self, CliError> {
        match explicit {
            Some(p) => Self::load(p),
            None => match std::env::var_os(CONFIG_ENV) {
                Some(p) if !p.is_empty() => Self::load(Path::new(&p)),
                _ => Ok(Self::default()),
            },
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.clock_hz == 0 {
            return Err(CliError::Usage("clock frequency must be positive".into()));
        }
        if !(MIN_BITS..=MAX_BITS).contains(&self.bits) {
            return Err(CliError::Usage(format!("bit width {} outside [{MIN_BITS}, {MAX_BITS}]", self.bits)));
        }
        if self.groups == 0 {
            return Err(CliError::Usage("group count must be positive".into()));
        }
        Ok(())
    }

    pub fn timing(&self) -> TimingConfig {
        let o = &self.timing;
        let d = TimingConfig::default();
        TimingConfig {
            clock_hz: self.clock_hz,
            weight_load_cycles: o.weight_load_cycles.unwrap_or(d.weight_load_cycles),
            pe_fill_cycles: o.pe_fill_cycles.unwrap_or(d.pe_fill_cycles),
            pad_cycles_per_row: o.pad_cycles_per_row.unwrap_or(d.pad_cycles_per_row),
            input_cycles_per_row: o.input_cycles_per_row.unwrap_or(d.input_cycles_per_row),
            output_cycles_per_row: o.output_cycles_per_row.unwrap_or(d.output_cycles_per_row),
            pool_fill_cycles: o.pool_fill_cycles.unwrap_or(d.pool_fill_cycles),
            fc_fill_cycles: o.fc_fill_cycles.unwrap_or(d.fc_fill_cycles),
        }
    }

    /// Applies one `key=value` timing override.
    pub fn set_timing(&mut self, kv: &str) -> Result<(), CliError> {
        let (key, value) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("timing override {kv:?} is not key=value")))?;
        let value: u64 = value
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("timing override {kv:?}: value is not a cycle count")))?;
        let o = &mut self.timing;
        let slot = match key.trim() {
            "clock_hz" => {
                self.clock_hz = value;
                return Ok(());
            }
            "weight_load_cycles" => &mut o.weight_load_cycles,
            "pe_fill_cycles" => &mut o.pe_fill_cycles,
            "pad_cycles_per_row" => &mut o.pad_cycles_per_row,
            "input_cycles_per_row" => &mut o.input_cycles_per_row,
            "output_cycles_per_row" => &mut o.output_cycles_per_row,
            "pool_fill_cycles" => &mut o.pool_fill_cycles,
            "fc_fill_cycles" => &mut o.fc_fill_cycles,
            other => return Err(CliError::Usage(format!("unknown timing key {other:?}"))),
        };
        *slot = Some(value);
        Ok(())
    }
}
