//! CIFAR-10 binary batches: each record is one label byte followed by 3072
//! pixel bytes, 1024 red then 1024 green then 1024 blue, rows top to bottom.

use std::path::Path;

use crate::error::{Error, Result};

pub const IMAGE_BYTES: usize = 3 * 32 * 32;
pub const RECORD_BYTES: usize = 1 + IMAGE_BYTES;
pub const CLASSES: u8 = 10;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CifarRecord {
    pub label: u8,
    /// Channel-planar `3 x 32 x 32`.
    pub pixels: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Cifar10Set {
    pub records: Vec<CifarRecord>,
}

impl Cifar10Set {
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        if bytes.is_empty() || !bytes.len().is_multiple_of(RECORD_BYTES) {
            return Err(Error::CorruptFile(format!(
                "{} bytes is not a whole number of {RECORD_BYTES}-byte records",
                bytes.len()
            )));
        }
        let records = bytes
            .chunks_exact(RECORD_BYTES)
            .enumerate()
            .map(|(record, r)| {
                if r[0] >= CLASSES {
                    return Err(Error::BadLabel { record, label: r[0] });
                }
                Ok(CifarRecord { label: r[0], pixels: r[1..].to_vec() })
            })
            .collect::<Result<_>>()?;
        Ok(Self { records })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.records.len() * RECORD_BYTES);
        for r in &self.records {
            out.push(r.label);
            out.extend_from_slice(&r.pixels);
        }
        out
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Seeded batch of uniformly random pixels and labels.
pub fn synthetic_batch(n: usize, seed: u64) -> Cifar10Set {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let records = (0..n)
        .map(|_| {
            let label = rng.random_range(0..CLASSES);
            let mut pixels = vec![0u8; IMAGE_BYTES];
            rng.fill(pixels.as_mut_slice());
            CifarRecord { label, pixels }
        })
        .collect();
    Cifar10Set { records }
}

pub fn load_cifar10(path: impl AsRef<Path>) -> Result<Cifar10Set> {
    Cifar10Set::parse(&std::fs::read(path)?)
}
