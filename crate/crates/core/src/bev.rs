//! Bird's-eye-view statistical projection.
//!
//! A 3 m x 3 m window centered on the robot is split into 60 x 60 cells of
//! 5 cm. Each occupied cell stores six z statistics; empty cells are zero.
//! Rows index the forward (x) axis, columns the left (y) axis.

use crate::error::{Error, Result};
use crate::sensor::PointCloud;

pub const CHANNELS: usize = 6;
pub const CELLS: usize = 60;
pub const RESOLUTION: f64 = 0.05;
pub const HALF_EXTENT: f64 = 1.5;
const CELLS_PER_METER: f64 = 20.0;

pub const CH_MAX: usize = 0;
pub const CH_MIN: usize = 1;
pub const CH_MEAN: usize = 2;
pub const CH_RANGE: usize = 3;
pub const CH_STD: usize = 4;
pub const CH_DENSITY: usize = 5;

const MAGIC: &[u8; 4] = b"BEVG";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct BevGrid {
    /// Channel-major, then row-major: `data[(ch * CELLS + row) * CELLS + col]`.
    data: Vec<f64>,
    occupancy: Vec<bool>,
}

impl Default for BevGrid {
    fn default() -> Self {
        Self::empty()
    }
}

impl BevGrid {
    pub fn empty() -> Self {
        Self {
            data: vec![0.0; CHANNELS * CELLS * CELLS],
            occupancy: vec![false; CELLS * CELLS],
        }
    }

    #[inline]
    pub fn get(&self, ch: usize, row: usize, col: usize) -> f64 {
        self.data[(ch * CELLS + row) * CELLS + col]
    }

    #[inline]
    fn set(&mut self, ch: usize, row: usize, col: usize, v: f64) {
        self.data[(ch * CELLS + row) * CELLS + col] = v;
    }

    #[inline]
    pub fn occupied(&self, row: usize, col: usize) -> bool {
        self.occupancy[row * CELLS + col]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn channel(&self, ch: usize) -> &[f64] {
        &self.data[ch * CELLS * CELLS..(ch + 1) * CELLS * CELLS]
    }

    pub fn occupancy(&self) -> &[bool] {
        &self.occupancy
    }

    pub fn occupied_count(&self) -> usize {
        self.occupancy.iter().filter(|o| **o).count()
    }

    /// Robot-frame center of a cell.
    pub fn cell_center(row: usize, col: usize) -> (f64, f64) {
        (
            -HALF_EXTENT + (row as f64 + 0.5) * RESOLUTION,
            -HALF_EXTENT + (col as f64 + 0.5) * RESOLUTION,
        )
    }

    /// Little-endian binary encoding (`BEVG` v1, f32 payload).
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(24 + self.data.len() * 4 + self.occupancy.len());
        out.extend_from_slice(MAGIC);
        for v in [VERSION, CHANNELS as u32, CELLS as u32, CELLS as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(RESOLUTION as f32).to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        out.extend(self.occupancy.iter().map(|o| *o as u8));
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Format(format!("BEV grid: {m}"));
        if bytes.len() < 24 || &bytes[..4] != MAGIC {
            return Err(bad("missing BEVG magic"));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        if u32_at(4) != VERSION {
            return Err(bad(&format!("unsupported version {}", u32_at(4))));
        }
        let (c, h, w) = (u32_at(8) as usize, u32_at(12) as usize, u32_at(16) as usize);
        if (c, h, w) != (CHANNELS, CELLS, CELLS) {
            return Err(bad(&format!("unexpected shape {c}x{h}x{w}")));
        }
        let res = f32::from_le_bytes(bytes[20..24].try_into().unwrap());
        if res != RESOLUTION as f32 {
            return Err(bad(&format!("unexpected resolution {res}")));
        }
        let n = c * h * w;
        let expected = 24 + 4 * n + h * w;
        if bytes.len() != expected {
            return Err(bad(&format!("expected {expected} bytes, found {}", bytes.len())));
        }
        let data = bytes[24..24 + 4 * n]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect();
        let occupancy = bytes[24 + 4 * n..]
            .iter()
            .map(|b| match b {
                0 => Ok(false),
                1 => Ok(true),
                _ => Err(bad("occupancy bytes must be 0 or 1")),
            })
            .collect::<Result<_>>()?;
        Ok(Self { data, occupancy })
    }
}

/// Maps a robot-frame point to its `(row, col)` cell, or `None` outside the
/// half-open window `[-1.5, 1.5)^2`.
pub fn cell_index(x: f64, y: f64) -> Option<(usize, usize)> {
    let idx = |v: f64| {
        if !(-HALF_EXTENT..HALF_EXTENT).contains(&v) {
            return None;
        }
        let i = ((v + HALF_EXTENT) * CELLS_PER_METER).floor();
        (i >= 0.0 && i < CELLS as f64).then_some(i as usize)
    };
    Some((idx(x)?, idx(y)?))
}

/// Projects a robot-centric cloud into the six-channel grid.
///
/// Per-cell values are gathered and sorted before reduction, so the result
/// does not depend on point order.
pub fn project(cloud: &PointCloud) -> Result<BevGrid> {
    if !cloud.is_finite() {
        return Err(Error::Input("point cloud contains non-finite coordinates".into()));
    }
    let mut members: Vec<(u32, f64)> = cloud
        .points
        .iter()
        .filter_map(|p| cell_index(p[0], p[1]).map(|(r, c)| ((r * CELLS + c) as u32, p[2])))
        .collect();
    members.sort_unstable_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));

    let mut grid = BevGrid::empty();
    let mut counts = vec![0usize; CELLS * CELLS];
    for run in members.chunk_by(|a, b| a.0 == b.0) {
        let cell = run[0].0 as usize;
        let (row, col) = (cell / CELLS, cell % CELLS);
        let n = run.len() as f64;
        let lo = run[0].1;
        let hi = run[run.len() - 1].1;
        // offsets from the minimum keep identical values exact
        let mean = (lo + run.iter().map(|m| m.1 - lo).sum::<f64>() / n).clamp(lo, hi);
        let var = run.iter().map(|m| (m.1 - mean) * (m.1 - mean)).sum::<f64>() / n;
        grid.set(CH_MAX, row, col, hi);
        grid.set(CH_MIN, row, col, lo);
        grid.set(CH_MEAN, row, col, mean);
        grid.set(CH_RANGE, row, col, hi - lo);
        grid.set(CH_STD, row, col, var.sqrt());
        grid.occupancy[cell] = true;
        counts[cell] = run.len();
    }
    let max_count = counts.iter().copied().max().unwrap_or(0);
    if max_count > 0 {
        for (cell, &c) in counts.iter().enumerate() {
            if c > 0 {
                grid.set(CH_DENSITY, cell / CELLS, cell % CELLS, c as f64 / max_count as f64);
            }
        }
    }
    Ok(grid)
}
