//! Partitions of a time interval whose breakpoints lie on a host grid, and
//! nested ("increasing") sequences of them.

use std::sync::Arc;

use crate::error::{invalid, Error, Result};
use crate::paths::{same_grid, TimeGrid};

/// Breakpoints `t_0 < t_1 < ... < t_N` of a partition, stored as indices into
/// the host grid. The first breakpoint is always the grid start.
#[derive(Debug, Clone)]
pub struct Partition {
    grid: Arc<TimeGrid>,
    idx: Vec<usize>,
}

impl PartialEq for Partition {
    fn eq(&self, other: &Self) -> bool {
        same_grid(&self.grid, &other.grid) && self.idx == other.idx
    }
}

impl Partition {
    pub fn new(grid: Arc<TimeGrid>, idx: Vec<usize>) -> Result<Self> {
        if idx.len() < 2 {
            return Err(invalid("a partition needs at least two breakpoints"));
        }
        if idx[0] != 0 {
            return Err(invalid("a partition must start at the first grid point"));
        }
        if idx.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("partition breakpoints must be strictly increasing"));
        }
        if *idx.last().unwrap() >= grid.len() {
            return Err(invalid("partition breakpoint lies outside the grid"));
        }
        Ok(Self { grid, idx })
    }

    /// Every grid point is a breakpoint.
    pub fn full(grid: Arc<TimeGrid>) -> Self {
        let idx = (0..grid.len()).collect();
        Self { grid, idx }
    }

    pub fn from_times(grid: Arc<TimeGrid>, times: &[f64]) -> Result<Self> {
        let idx = times
            .iter()
            .map(|&t| grid.index_of(t))
            .collect::<Result<Vec<_>>>()?;
        Self::new(grid, idx)
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn grid_arc(&self) -> &Arc<TimeGrid> {
        &self.grid
    }

    pub fn indices(&self) -> &[usize] {
        &self.idx
    }

    pub fn breakpoints(&self) -> Vec<f64> {
        self.idx.iter().map(|&i| self.grid.time(i)).collect()
    }

    pub fn end_index(&self) -> usize {
        *self.idx.last().unwrap()
    }

    pub fn end(&self) -> f64 {
        self.grid.time(self.end_index())
    }

    /// Whether the partition covers the whole host grid.
    pub fn is_complete(&self) -> bool {
        self.end_index() == self.grid.len() - 1
    }

    pub fn num_intervals(&self) -> usize {
        self.idx.len() - 1
    }

    /// Consecutive `(start, end)` grid-index pairs.
    pub fn intervals(&self) -> impl ExactSizeIterator<Item = (usize, usize)> + '_ {
        self.idx.windows(2).map(|w| (w[0], w[1]))
    }

    pub fn mesh(&self) -> f64 {
        self.intervals()
            .map(|(a, b)| self.grid.time(b) - self.grid.time(a))
            .fold(0.0, f64::max)
    }

    /// `{[u, v ∧ t] : [u, v] ∈ π, u < t}`, a partition of `[start, t]`.
    /// Returns `None` when `t` is the grid start (no intervals remain).
    pub fn truncate(&self, t: f64) -> Result<Option<Partition>> {
        let t_idx = self.grid.index_of(t)?;
        self.truncate_at(t_idx)
    }

    pub fn truncate_at(&self, t_idx: usize) -> Result<Option<Partition>> {
        if t_idx > self.end_index() {
            return Err(invalid(format!(
                "cannot truncate a partition of [.., {}] at {}",
                self.end(),
                self.grid.time(t_idx.min(self.grid.len() - 1))
            )));
        }
        if t_idx == 0 {
            return Ok(None);
        }
        let mut idx: Vec<usize> = self
            .idx
            .iter()
            .copied()
            .take_while(|&u| u < t_idx)
            .collect();
        idx.push(t_idx);
        Ok(Some(Partition {
            grid: self.grid.clone(),
            idx,
        }))
    }

    /// Largest breakpoint `<= s`.
    pub fn locate_left(&self, s: f64) -> Result<f64> {
        let k = self.locate_left_position(s)?;
        Ok(self.grid.time(self.idx[k]))
    }

    /// Position (in the breakpoint list) of the largest breakpoint `<= s`.
    pub fn locate_left_position(&self, s: f64) -> Result<usize> {
        let start = self.grid.start();
        if !(s >= start && s <= self.end()) {
            return Err(invalid(format!(
                "time {s} lies outside [{start}, {}]",
                self.end()
            )));
        }
        let k = self.idx.partition_point(|&i| self.grid.time(i) <= s);
        Ok(k - 1)
    }

    /// Whether every breakpoint of `self` is a breakpoint of `finer`.
    pub fn is_refined_by(&self, finer: &Partition) -> bool {
        if !same_grid(&self.grid, &finer.grid) || self.end_index() != finer.end_index() {
            return false;
        }
        let mut j = 0;
        for &i in &self.idx {
            while j < finer.idx.len() && finer.idx[j] < i {
                j += 1;
            }
            if j == finer.idx.len() || finer.idx[j] != i {
                return false;
            }
        }
        true
    }
}

/// Mesh of a partition: the longest interval.
pub fn mesh(p: &Partition) -> f64 {
    p.mesh()
}

/// A nested sequence of partitions with strictly decreasing mesh.
#[derive(Debug, Clone)]
pub struct PartitionSequence {
    grid: Arc<TimeGrid>,
    levels: Vec<Partition>,
}

impl PartitionSequence {
    /// Validates nestedness and strictly decreasing mesh.
    pub fn new(levels: Vec<Partition>) -> Result<Self> {
        let first = levels
            .first()
            .ok_or_else(|| invalid("a partition sequence needs at least one level"))?;
        let grid = first.grid.clone();
        for (n, w) in levels.windows(2).enumerate() {
            if !same_grid(&grid, &w[1].grid) {
                return Err(Error::GridMismatch);
            }
            if !w[0].is_refined_by(&w[1]) {
                return Err(invalid(format!(
                    "level {} is not refined by level {}",
                    n,
                    n + 1
                )));
            }
            if !(w[1].mesh() < w[0].mesh()) {
                return Err(invalid(format!(
                    "mesh does not decrease from level {} to {}",
                    n,
                    n + 1
                )));
            }
        }
        Ok(Self { grid, levels })
    }

    /// Dyadic levels `0..=max_level` on a grid of `2^L + 1` uniform points:
    /// level `n` has breakpoints `start + k T 2^{-n}`.
    pub fn dyadic(grid: Arc<TimeGrid>, max_level: usize) -> Result<Self> {
        let log2 = grid.dyadic_log2().ok_or_else(|| {
            invalid(format!(
                "dyadic partitions need a uniform grid of 2^L + 1 points, got {} points",
                grid.len()
            ))
        })? as usize;
        if max_level > log2 {
            return Err(invalid(format!(
                "max level {max_level} exceeds the grid resolution 2^-{log2}"
            )));
        }
        let levels = (0..=max_level)
            .map(|n| {
                let step = 1usize << (log2 - n);
                Partition {
                    grid: grid.clone(),
                    idx: (0..=(1usize << n)).map(|k| k * step).collect(),
                }
            })
            .collect();
        Ok(Self { grid, levels })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn grid_arc(&self) -> &Arc<TimeGrid> {
        &self.grid
    }

    pub fn levels(&self) -> &[Partition] {
        &self.levels
    }

    pub fn level(&self, n: usize) -> &Partition {
        &self.levels[n]
    }

    pub fn get(&self, n: usize) -> Result<&Partition> {
        self.levels.get(n).ok_or_else(|| {
            invalid(format!(
                "level {n} not in sequence of {} levels",
                self.len()
            ))
        })
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn finest(&self) -> &Partition {
        self.levels.last().unwrap()
    }

    pub fn finest_level(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn is_nested(&self) -> bool {
        self.levels.windows(2).all(|w| w[0].is_refined_by(&w[1]))
    }
}

/// Dyadic sequence `0..=max_level` on a `2^L + 1` point grid.
pub fn dyadic_sequence(grid: Arc<TimeGrid>, max_level: usize) -> Result<PartitionSequence> {
    PartitionSequence::dyadic(grid, max_level)
}
