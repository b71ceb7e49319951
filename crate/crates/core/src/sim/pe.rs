//! One invocation of a PE array.
//!
//! Core `(r, c)` holds the `k x k` kernel connecting input channel
//! `in_start + r` to output channel `out_start + c`. Every clock the array
//! takes one output position: each row reads its input window once and
//! broadcasts it along the row, each core reduces its taps in an adder tree,
//! and each column sums its cores into one partial sum.

use super::geometry::PeArrayGeometry;
use super::schedule::Tile;
use super::timing::TimingConfig;
use crate::error::{Error, Result};
use crate::tensor::{Map3, Shape3};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PeRun {
    /// `(out_len, out_height, out_width)` partial sums of this pass.
    pub partial: Map3<i64>,
    pub cycles: u64,
}

/// Runs `tile` over an already padded input.
///
/// `weights` is the tile's packed segment. Arrays without multipliers only
/// accept binary inputs and gate each weight by its spike.
pub fn run_pe_array(
    tile: &Tile,
    weights: &[i8],
    padded: &Map3<i32>,
    geom: &PeArrayGeometry,
    stride: usize,
    timing: &TimingConfig,
) -> Result<PeRun> {
    let k2 = geom.pes_per_core;
    let k = (k2 as f64).sqrt() as usize;
    if tile.in_len > geom.core_rows || tile.out_len > geom.core_cols {
        return Err(Error::GeometryMismatch(format!(
            "tile of {}x{} cores on a {geom} array",
            tile.in_len, tile.out_len
        )));
    }
    if weights.len() != tile.active_cores() * k2 {
        return Err(Error::GeometryMismatch(format!(
            "{} weights for {} cores of {k2} PEs",
            weights.len(),
            tile.active_cores()
        )));
    }
    let ps = padded.shape();
    if tile.positions() == 0 {
        return Err(Error::ShapeMismatch(format!("tile {tile:?} has no output positions")));
    }
    if tile.in_start + tile.in_len > ps.channels
        || (tile.out_height - 1) * stride + k > ps.height
        || (tile.out_width - 1) * stride + k > ps.width
    {
        return Err(Error::ShapeMismatch(format!("input {ps} too small for tile {tile:?}")));
    }
    if !geom.uses_multipliers {
        let binary = (tile.in_start..tile.in_start + tile.in_len)
            .all(|c| padded.plane(c).iter().all(|&v| v == 0 || v == 1));
        if !binary {
            return Err(Error::GeometryMismatch(format!("{geom} array needs spike inputs")));
        }
    }

    let shape = Shape3::new(tile.out_len, tile.out_height, tile.out_width);
    let mut partial = Map3::<i64>::zeros(shape);
    let mut window = vec![0i32; tile.in_len * k2];
    let mut sums = vec![0i64; tile.out_len];
    for oy in 0..tile.out_height {
        for ox in 0..tile.out_width {
            for r in 0..tile.in_len {
                let w = &mut window[r * k2..(r + 1) * k2];
                for ky in 0..k {
                    let row = padded.index(tile.in_start + r, oy * stride + ky, ox * stride);
                    w[ky * k..(ky + 1) * k].copy_from_slice(&padded.data()[row..row + k]);
                }
            }
            sums.iter_mut().for_each(|s| *s = 0);
            for r in 0..tile.in_len {
                let x = &window[r * k2..(r + 1) * k2];
                let row = &weights[r * tile.out_len * k2..(r + 1) * tile.out_len * k2];
                for (c, core) in row.chunks_exact(k2).enumerate() {
                    let tree: i32 = if geom.uses_multipliers {
                        core.iter().zip(x).map(|(&w, &v)| w as i32 * v).sum()
                    } else {
                        core.iter().zip(x).map(|(&w, &v)| w as i32 & -v).sum()
                    };
                    sums[c] += tree as i64;
                }
            }
            for (c, &s) in sums.iter().enumerate() {
                partial.set(c, oy, ox, s);
            }
        }
    }
    Ok(PeRun { partial, cycles: timing.sweep_cycles(tile.positions()) })
}

/// Sums the partial maps of every reuse pass of one output tile.
pub fn accumulate_group(partials: &[Map3<i64>]) -> Result<Map3<i64>> {
    let (first, rest) = partials
        .split_first()
        .ok_or_else(|| Error::ShapeMismatch("no partial sums to accumulate".into()))?;
    let mut acc = first.clone();
    for p in rest {
        if p.shape() != acc.shape() {
            return Err(Error::ShapeMismatch(format!("partial sums {} and {}", acc.shape(), p.shape())));
        }
        acc.data_mut().iter_mut().zip(p.data()).for_each(|(a, b)| *a += b);
    }
    Ok(acc)
}
