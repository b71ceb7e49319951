use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{LayerRole, LayerShape};

/// Shape of one PE array. Rows run over input channels, columns over output
/// channels; each core holds one PE per kernel tap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PeArrayGeometry {
    pub core_rows: usize,
    pub core_cols: usize,
    pub pes_per_core: usize,
    /// Multiplier-class PEs (DSP); otherwise spike-gated adders.
    pub uses_multipliers: bool,
}

impl PeArrayGeometry {
    /// Pixel-encoding array: 3 input channels by 64 output channels of 3x3 multiplier cores.
    pub const ENCODING: Self = Self { core_rows: 3, core_cols: 64, pes_per_core: 9, uses_multipliers: true };
    /// Main-path array: 8x8 cores of 3x3 spike-gated adders.
    pub const MAIN: Self = Self { core_rows: 8, core_cols: 8, pes_per_core: 9, uses_multipliers: false };
    /// Shortcut array: 64 input by 8 output channels, one multiplier per 1x1 core.
    pub const SHORTCUT: Self = Self { core_rows: 64, core_cols: 8, pes_per_core: 1, uses_multipliers: true };

    pub const fn new(core_rows: usize, core_cols: usize, pes_per_core: usize, uses_multipliers: bool) -> Self {
        Self { core_rows, core_cols, pes_per_core, uses_multipliers }
    }

    pub fn cores(&self) -> usize {
        self.core_rows * self.core_cols
    }

    pub fn pe_count(&self) -> usize {
        self.cores() * self.pes_per_core
    }

    pub fn check(&self, layer: &LayerShape) -> Result<()> {
        if self.core_rows == 0 || self.core_cols == 0 {
            return Err(Error::GeometryMismatch(format!("{}: array has no cores", layer.name)));
        }
        if self.pes_per_core != layer.kernel * layer.kernel {
            return Err(Error::GeometryMismatch(format!(
                "{}: {} PEs per core cannot evaluate a {}x{} kernel",
                layer.name, self.pes_per_core, layer.kernel, layer.kernel
            )));
        }
        Ok(())
    }
}

impl std::fmt::Display for PeArrayGeometry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.core_rows, self.core_cols, self.pes_per_core)
    }
}

/// Array geometry per layer role, plus the classifier's multiplier count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArrayPlan {
    pub encoding: PeArrayGeometry,
    pub main: PeArrayGeometry,
    pub shortcut: PeArrayGeometry,
    /// Multiply-accumulate units in the classifier, one class each.
    pub fc_units: usize,
}

impl Default for ArrayPlan {
    fn default() -> Self {
        Self {
            encoding: PeArrayGeometry::ENCODING,
            main: PeArrayGeometry::MAIN,
            shortcut: PeArrayGeometry::SHORTCUT,
            fc_units: 10,
        }
    }
}

impl ArrayPlan {
    pub fn for_role(&self, role: LayerRole) -> PeArrayGeometry {
        match role {
            LayerRole::Encoding => self.encoding,
            LayerRole::Main => self.main,
            LayerRole::Shortcut => self.shortcut,
            LayerRole::FullyConnected => PeArrayGeometry::new(1, self.fc_units, 1, true),
        }
    }
}
