//! On-chip block RAM: banks carved out of a fixed bit budget, access
//! counters and an optional event trace.

use std::collections::HashMap;

use crate::error::{Error, Result};

/// 36 Kbit blocks.
pub const BRAM_BLOCK_BITS: u64 = 36 * 1024;

/// 674.5 blocks of 36 Kbit.
pub const DEFAULT_BRAM_BITS: u64 = 6745 * BRAM_BLOCK_BITS / 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BankId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Access {
    Read,
    Write,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DataKind {
    Weights,
    Features,
    Partials,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BramEvent {
    pub cycle: u64,
    pub image: usize,
    /// Pipeline stage issuing the access.
    pub stage: usize,
    pub bank: BankId,
    pub access: Access,
    pub kind: DataKind,
    /// Channel range `[start, end)` touched.
    pub channels: (usize, usize),
    pub bits: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BramBank {
    pub name: String,
    pub capacity_bits: u64,
    pub ports: u32,
    pub reads: u64,
    pub writes: u64,
    pub bits_read: u64,
    pub bits_written: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bram {
    capacity_bits: u64,
    banks: Vec<BramBank>,
    events: Vec<BramEvent>,
    tracing: bool,
}

impl Default for Bram {
    fn default() -> Self {
        Self::new(DEFAULT_BRAM_BITS)
    }
}

impl Bram {
    pub fn new(capacity_bits: u64) -> Self {
        Self { capacity_bits, banks: Vec::new(), events: Vec::new(), tracing: false }
    }

    /// Keeps every access in [`Bram::events`], not just the counters.
    pub fn with_trace(mut self, on: bool) -> Self {
        self.tracing = on;
        self
    }

    pub fn capacity_bits(&self) -> u64 {
        self.capacity_bits
    }

    pub fn allocated_bits(&self) -> u64 {
        self.banks.iter().map(|b| b.capacity_bits).sum()
    }

    pub fn allocate(&mut self, name: impl Into<String>, bits: u64, ports: u32) -> Result<BankId> {
        let required = self.allocated_bits() + bits;
        if required > self.capacity_bits {
            return Err(Error::CapacityExceeded { required, capacity: self.capacity_bits });
        }
        self.banks.push(BramBank {
            name: name.into(),
            capacity_bits: bits,
            ports,
            reads: 0,
            writes: 0,
            bits_read: 0,
            bits_written: 0,
        });
        Ok(BankId(self.banks.len() - 1))
    }

    pub fn bank(&self, id: BankId) -> &BramBank {
        &self.banks[id.0]
    }

    pub fn banks(&self) -> &[BramBank] {
        &self.banks
    }

    pub fn find(&self, name: &str) -> Option<BankId> {
        self.banks.iter().position(|b| b.name == name).map(BankId)
    }

    pub fn events(&self) -> &[BramEvent] {
        &self.events
    }

    pub fn clear_events(&mut self) {
        self.events.clear();
    }

    pub fn record(&mut self, e: BramEvent) -> Result<()> {
        let bank = &mut self.banks[e.bank.0];
        if e.bits > bank.capacity_bits {
            return Err(Error::CapacityExceeded { required: e.bits, capacity: bank.capacity_bits });
        }
        match e.access {
            Access::Read => {
                bank.reads += 1;
                bank.bits_read += e.bits;
            }
            Access::Write => {
                bank.writes += 1;
                bank.bits_written += e.bits;
            }
        }
        if self.tracing {
            self.events.push(e);
        }
        Ok(())
    }

    pub fn bits_read(&self) -> u64 {
        self.banks.iter().map(|b| b.bits_read).sum()
    }

    pub fn bits_written(&self) -> u64 {
        self.banks.iter().map(|b| b.bits_written).sum()
    }
}

/// Checks that every feature or partial-sum read is preceded, for the same
/// image and bank, by writes covering all the channels it reads. Weights are
/// preloaded and exempt. Returns one message per violating read.
pub fn check_causality(events: &[BramEvent]) -> Vec<String> {
    type Writes = Vec<(u64, (usize, usize))>;
    let mut writes: HashMap<(BankId, usize), Writes> = HashMap::new();
    for e in events.iter().filter(|e| e.access == Access::Write) {
        writes.entry((e.bank, e.image)).or_default().push((e.cycle, e.channels));
    }
    let mut problems = Vec::new();
    for e in events.iter().filter(|e| e.access == Access::Read && e.kind != DataKind::Weights) {
        let ws = writes.get(&(e.bank, e.image)).map(Vec::as_slice).unwrap_or(&[]);
        for c in e.channels.0..e.channels.1 {
            let ok = ws.iter().any(|&(cycle, (lo, hi))| cycle <= e.cycle && lo <= c && c < hi);
            if !ok {
                problems.push(format!(
                    "image {} stage {} reads channel {c} of bank {} at cycle {} before it is written",
                    e.image, e.stage, e.bank.0, e.cycle
                ));
                break;
            }
        }
    }
    problems
}
