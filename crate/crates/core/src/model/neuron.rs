//! Leaky integrate-and-fire dynamics and the single-timestep threshold.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{AccumulatorMap, Map3, SpikeMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResetMode {
    #[default]
    ToZero,
    Subtract,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LifParams {
    pub tau: f64,
    pub resistance: f64,
    pub threshold: f64,
    pub dt: f64,
    pub reset: ResetMode,
}

impl LifParams {
    pub fn new(tau: f64, resistance: f64, threshold: f64, dt: f64, reset: ResetMode) -> Result<Self> {
        let p = Self { tau, resistance, threshold, dt, reset };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.dt > 0.0) {
            return Err(Error::InvalidConfig("tau and dt must be positive".into()));
        }
        if self.dt > self.tau {
            return Err(Error::InvalidConfig(format!(
                "dt = {} exceeds tau = {}; explicit update is unstable",
                self.dt, self.tau
            )));
        }
        Ok(())
    }
}

impl Default for LifParams {
    /// `dt = tau`, unit gain and threshold: the single-timestep configuration.
    fn default() -> Self {
        Self { tau: 1.0, resistance: 1.0, threshold: 1.0, dt: 1.0, reset: ResetMode::ToZero }
    }
}

/// One explicit Euler step of `tau dU/dt = -U + R I`, followed by the strict
/// threshold test and reset.
pub fn lif_step(u: f64, input: f64, p: &LifParams) -> (f64, bool) {
    let pre = u + (p.dt / p.tau) * (-u + p.resistance * input);
    if pre > p.threshold {
        let next = match p.reset {
            ResetMode::ToZero => 0.0,
            ResetMode::Subtract => pre - p.threshold,
        };
        (next, true)
    } else {
        (pre, false)
    }
}

/// Runs a neuron from rest over an input current sequence, returning the spike train.
pub fn lif_run(inputs: &[f64], p: &LifParams) -> Vec<bool> {
    let mut u = 0.0;
    inputs
        .iter()
        .map(|&i| {
            let (next, spike) = lif_step(u, i, p);
            u = next;
            spike
        })
        .collect()
}

/// Stateless firing: `acc > threshold`, elementwise.
pub fn threshold_activate(acc: &AccumulatorMap, threshold_q: i64) -> SpikeMap {
    let bits: Map3<u8> = acc.as_map().map(|v| (v > threshold_q) as u8);
    SpikeMap::new(bits).expect("comparison yields 0 or 1")
}
