//! Time grids, sampled paths and the generators used throughout the crate.
//!
//! A [`SampledPath`] is the only representation of a path: its values on a
//! finite [`TimeGrid`], understood as the piecewise-linear interpolant between
//! grid points.

use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Error, Result};
use crate::partitions::Partition;

/// Strictly increasing time points `t_0 < t_1 < ... < t_{n-1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    points: Vec<f64>,
}

impl TimeGrid {
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.len() < 2 {
            return Err(invalid("a time grid needs at least two points"));
        }
        if points.iter().any(|t| !t.is_finite()) {
            return Err(Error::NumericDomain("grid point is not finite".into()));
        }
        if let Some(w) = points.windows(2).position(|w| w[1] <= w[0]) {
            return Err(invalid(format!(
                "grid points must be strictly increasing (index {} -> {})",
                w,
                w + 1
            )));
        }
        Ok(Self { points })
    }

    /// `n` equally spaced points from `0` to `horizon`.
    pub fn uniform(horizon: f64, n: usize) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(invalid(format!("horizon must be positive, got {horizon}")));
        }
        Self::uniform_on(0.0, horizon, n)
    }

    /// `n` equally spaced points from `start` to `end`.
    pub fn uniform_on(start: f64, end: f64, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(invalid(format!(
                "a uniform grid needs n >= 2 points, got {n}"
            )));
        }
        if !(end > start) || !start.is_finite() || !end.is_finite() {
            return Err(invalid(format!("empty time interval [{start}, {end}]")));
        }
        let span = end - start;
        let last = (n - 1) as f64;
        let mut points: Vec<f64> = (0..n).map(|i| start + span * (i as f64) / last).collect();
        points[n - 1] = end;
        Self::new(points)
    }

    /// Uniform grid with `2^log2 + 1` points on `[start, end]`.
    pub fn dyadic(start: f64, end: f64, log2: u32) -> Result<Self> {
        if log2 > 30 {
            return Err(invalid(format!("grid exponent {log2} too large")));
        }
        Self::uniform_on(start, end, (1usize << log2) + 1)
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn start(&self) -> f64 {
        self.points[0]
    }

    pub fn end(&self) -> f64 {
        self.points[self.points.len() - 1]
    }

    pub fn horizon(&self) -> f64 {
        self.end() - self.start()
    }

    pub fn time(&self, i: usize) -> f64 {
        self.points[i]
    }

    pub fn mesh(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(0.0, f64::max)
    }

    /// Index of the grid point equal to `t`, up to a rounding slack of a
    /// billionth of the local spacing.
    pub fn index_of(&self, t: f64) -> Result<usize> {
        if !t.is_finite() {
            return Err(Error::NotOnGrid { time: t });
        }
        let pos = self.points.partition_point(|&p| p < t);
        let spacing = |i: usize| {
            let lo = i.saturating_sub(1);
            let hi = (i + 1).min(self.len() - 1);
            (self.points[hi] - self.points[lo]).abs()
        };
        for cand in [pos.saturating_sub(1), pos.min(self.len() - 1)] {
            if (self.points[cand] - t).abs() <= 1e-9 * spacing(cand) {
                return Ok(cand);
            }
        }
        Err(Error::NotOnGrid { time: t })
    }

    pub fn is_uniform(&self) -> bool {
        let h = self.horizon() / (self.len() - 1) as f64;
        self.points
            .windows(2)
            .all(|w| ((w[1] - w[0]) - h).abs() <= 1e-9 * h)
    }

    /// `Some(L)` when the grid is uniform with exactly `2^L + 1` points.
    pub fn dyadic_log2(&self) -> Option<u32> {
        let intervals = self.len() - 1;
        if intervals.is_power_of_two() && self.is_uniform() {
            Some(intervals.trailing_zeros())
        } else {
            None
        }
    }
}

pub(crate) fn same_grid(a: &Arc<TimeGrid>, b: &Arc<TimeGrid>) -> bool {
    Arc::ptr_eq(a, b) || a.points == b.points
}

/// `n` equally spaced points on `[0, horizon]`.
pub fn make_uniform_grid(horizon: f64, n: usize) -> Result<TimeGrid> {
    TimeGrid::uniform(horizon, n)
}

/// Increment `X_{s,t} = X_t - X_s` between two grid times.
#[derive(Debug, Clone, PartialEq)]
pub struct PathIncrement {
    pub s: f64,
    pub t: f64,
    pub delta: Vec<f64>,
}

/// Values of a `d`-dimensional path on a time grid, stored row-major
/// (`values[i * d + c]` is component `c` at grid index `i`).
#[derive(Debug, Clone)]
pub struct SampledPath {
    grid: Arc<TimeGrid>,
    dim: usize,
    values: Vec<f64>,
}

impl PartialEq for SampledPath {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim && same_grid(&self.grid, &other.grid) && self.values == other.values
    }
}

impl SampledPath {
    pub fn new(grid: Arc<TimeGrid>, dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("path dimension must be at least 1"));
        }
        if values.len() != grid.len() * dim {
            return Err(Error::DimensionMismatch {
                expected: grid.len() * dim,
                found: values.len(),
            });
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NumericDomain(format!(
                "path value at grid index {} is not finite",
                k / dim
            )));
        }
        Ok(Self { grid, dim, values })
    }

    pub fn scalar(grid: Arc<TimeGrid>, values: Vec<f64>) -> Result<Self> {
        Self::new(grid, 1, values)
    }

    /// Evaluates `f(t, out)` at every grid point.
    pub fn from_fn<F>(grid: Arc<TimeGrid>, dim: usize, mut f: F) -> Result<Self>
    where
        F: FnMut(f64, &mut [f64]),
    {
        let mut values = vec![0.0; grid.len() * dim];
        for (i, chunk) in values.chunks_mut(dim.max(1)).enumerate() {
            f(grid.time(i), chunk);
        }
        Self::new(grid, dim, values)
    }

    pub fn scalar_fn<F: Fn(f64) -> f64>(grid: Arc<TimeGrid>, f: F) -> Result<Self> {
        let values = grid.points().iter().map(|&t| f(t)).collect();
        Self::scalar(grid, values)
    }

    /// Stacks scalar paths on a common grid into one vector path.
    pub fn stack(components: &[SampledPath]) -> Result<Self> {
        let first = components
            .first()
            .ok_or_else(|| invalid("cannot stack an empty list of paths"))?;
        let mut dim = 0;
        for c in components {
            if !same_grid(&first.grid, &c.grid) {
                return Err(Error::GridMismatch);
            }
            dim += c.dim;
        }
        let n = first.len();
        let mut values = Vec::with_capacity(n * dim);
        for i in 0..n {
            for c in components {
                values.extend_from_slice(c.value(i));
            }
        }
        Self::new(first.grid.clone(), dim, values)
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn grid_arc(&self) -> &Arc<TimeGrid> {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    #[inline]
    pub fn value(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn at(&self, i: usize, component: usize) -> f64 {
        self.values[i * self.dim + component]
    }

    pub fn first(&self) -> &[f64] {
        self.value(0)
    }

    pub fn last(&self) -> &[f64] {
        self.value(self.len() - 1)
    }

    pub fn component(&self, c: usize) -> Result<SampledPath> {
        if c >= self.dim {
            return Err(invalid(format!(
                "component {c} out of range for a {}-dimensional path",
                self.dim
            )));
        }
        let values = (0..self.len()).map(|i| self.at(i, c)).collect();
        Self::scalar(self.grid.clone(), values)
    }

    pub fn increment(&self, i: usize, j: usize) -> PathIncrement {
        let delta = self
            .value(j)
            .iter()
            .zip(self.value(i))
            .map(|(b, a)| b - a)
            .collect();
        PathIncrement {
            s: self.grid.time(i),
            t: self.grid.time(j),
            delta,
        }
    }

    #[inline]
    pub(crate) fn increment_into(&self, i: usize, j: usize, out: &mut [f64]) {
        let a = self.value(i);
        let b = self.value(j);
        for c in 0..self.dim {
            out[c] = b[c] - a[c];
        }
    }

    /// Values on the breakpoints of `partition`, carried on a new grid made
    /// of those breakpoints.
    pub fn restrict(&self, partition: &Partition) -> Result<SampledPath> {
        if !same_grid(&self.grid, partition.grid_arc()) {
            return Err(Error::GridMismatch);
        }
        let grid = Arc::new(TimeGrid::new(partition.breakpoints())?);
        let mut values = Vec::with_capacity(partition.indices().len() * self.dim);
        for &i in partition.indices() {
            values.extend_from_slice(self.value(i));
        }
        Self::new(grid, self.dim, values)
    }

    /// `a * self + b * other`, pointwise.
    pub fn linear_combination(&self, a: f64, other: &SampledPath, b: f64) -> Result<SampledPath> {
        if !same_grid(&self.grid, &other.grid) {
            return Err(Error::GridMismatch);
        }
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: other.dim,
            });
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(x, y)| a * x + b * y)
            .collect();
        Self::new(self.grid.clone(), self.dim, values)
    }

    pub fn scaled(&self, a: f64) -> Result<SampledPath> {
        Self::new(
            self.grid.clone(),
            self.dim,
            self.values.iter().map(|v| a * v).collect(),
        )
    }

    /// CSV dump: header `t,x1,...,xd`, one row per grid point, 17 significant
    /// digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(self.to_csv_string().as_bytes())
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("t");
        for c in 1..=self.dim {
            let _ = write!(out, ",x{c}");
        }
        out.push('\n');
        for i in 0..self.len() {
            let _ = write!(out, "{:.16e}", self.grid.time(i));
            for v in self.value(i) {
                let _ = write!(out, ",{v:.16e}");
            }
            out.push('\n');
        }
        out
    }

    pub fn read_csv<R: BufRead>(reader: R) -> Result<SampledPath> {
        let mut lines = reader.lines();
        let header = lines
            .next()
            .ok_or_else(|| invalid("empty CSV input"))?
            .map_err(|e| invalid(e.to_string()))?;
        let cols: Vec<&str> = header.trim().split(',').collect();
        if cols.len() < 2 || cols[0] != "t" {
            return Err(invalid("CSV header must be `t,x1,...,xd`"));
        }
        for (c, name) in cols[1..].iter().enumerate() {
            if *name != format!("x{}", c + 1) {
                return Err(invalid(format!("unexpected CSV column `{name}`")));
            }
        }
        let dim = cols.len() - 1;
        let mut times = Vec::new();
        let mut values = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let line = line.map_err(|e| invalid(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.trim().split(',').collect();
            if fields.len() != dim + 1 {
                return Err(invalid(format!(
                    "CSV line {}: expected {} fields, found {}",
                    lineno + 2,
                    dim + 1,
                    fields.len()
                )));
            }
            let parse = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| invalid(format!("CSV line {}: bad number `{s}`", lineno + 2)))
            };
            times.push(parse(fields[0])?);
            for f in &fields[1..] {
                values.push(parse(f)?);
            }
        }
        let grid = Arc::new(TimeGrid::new(times)?);
        SampledPath::new(grid, dim, values)
    }
}

/// Brownian sample path started at zero.
///
/// The Gaussian increment over `[t_{i-1}, t_i]` is drawn from a ChaCha stream
/// keyed by `(seed, i)`, so every increment can be generated independently of
/// the others and the result does not depend on generation order.
pub fn sample_brownian(seed: u64, grid: Arc<TimeGrid>, dim: usize) -> Result<SampledPath> {
    if dim == 0 {
        return Err(invalid("Brownian dimension must be at least 1"));
    }
    let n = grid.len();
    let mut values = vec![0.0; n * dim];
    for i in 1..n {
        let sd = (grid.time(i) - grid.time(i - 1)).sqrt();
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        for c in 0..dim {
            let z: f64 = StandardNormal.sample(&mut rng);
            values[i * dim + c] = values[(i - 1) * dim + c] + sd * z;
        }
    }
    SampledPath::new(grid, dim, values)
}

/// `sin(pi * x)` with exact reduction of `x` modulo 2.
fn sin_pi(x: f64) -> f64 {
    let r = x.rem_euclid(2.0);
    // r in [0, 2): fold onto [-1/2, 1/2] using sin(pi r) symmetries.
    let (r, sign) = if r > 1.0 { (r - 1.0, -1.0) } else { (r, 1.0) };
    let r = if r > 0.5 { 1.0 - r } else { r };
    sign * (std::f64::consts::PI * r).sin()
}

fn cos_pi(x: f64) -> f64 {
    sin_pi(x + 0.5)
}

/// The truncated lacunary Fourier pair on `[-1, 1]`:
/// `X^1 = sum_k 2^{-alpha k} sin(2^k pi t)`, `X^2 = sum_k 2^{-alpha k} cos(2^k pi t)`
/// for `k = 1..=m`. Its Lévy area is `-2 pi sum_k 2^{(1 - 2 alpha) k}`.
pub fn lacunary_pair(alpha: f64, m: u32, grid: Arc<TimeGrid>) -> Result<SampledPath> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(invalid(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if m == 0 {
        return Err(invalid("truncation level m must be at least 1"));
    }
    if m > 60 {
        return Err(invalid(format!(
            "truncation level m = {m} exceeds the supported 60"
        )));
    }
    if (grid.start() + 1.0).abs() > 1e-12 || (grid.end() - 1.0).abs() > 1e-12 {
        return Err(invalid(format!(
            "lacunary pair needs a grid spanning [-1, 1], got [{}, {}]",
            grid.start(),
            grid.end()
        )));
    }
    SampledPath::from_fn(grid, 2, |t, out| {
        let (mut s, mut c) = (0.0, 0.0);
        // smallest coefficients first
        for k in (1..=m).rev() {
            let a = (-alpha * k as f64).exp2();
            let phase = t * (k as f64).exp2();
            s += a * sin_pi(phase);
            c += a * cos_pi(phase);
        }
        out[0] = s;
        out[1] = c;
    })
}

/// Predicted Lévy area `-2 pi sum_{k=1}^m 2^{(1 - 2 alpha) k}` of the
/// truncated lacunary pair.
pub fn lacunary_levy_area(alpha: f64, m: u32) -> f64 {
    let s: f64 = (1..=m)
        .map(|k| ((1.0 - 2.0 * alpha) * k as f64).exp2())
        .sum();
    -2.0 * std::f64::consts::PI * s
}

type Scalar = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A scalar map together with its first two derivatives.
#[derive(Clone)]
pub struct ScalarMap {
    f: Scalar,
    df: Scalar,
    d2f: Scalar,
}

impl std::fmt::Debug for ScalarMap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("ScalarMap")
    }
}

impl ScalarMap {
    pub fn new<F, G, H>(f: F, df: G, d2f: H) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
        G: Fn(f64) -> f64 + Send + Sync + 'static,
        H: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Self {
            f: Arc::new(f),
            df: Arc::new(df),
            d2f: Arc::new(d2f),
        }
    }

    pub fn identity() -> Self {
        Self::new(|x| x, |_| 1.0, |_| 0.0)
    }

    pub fn constant(c: f64) -> Self {
        Self::new(move |_| c, |_| 0.0, |_| 0.0)
    }

    pub fn square() -> Self {
        Self::new(|x| x * x, |x| 2.0 * x, |_| 2.0)
    }

    pub fn sin() -> Self {
        Self::new(f64::sin, f64::cos, |x| -x.sin())
    }

    pub fn value(&self, x: f64) -> f64 {
        (self.f)(x)
    }

    pub fn derivative(&self, x: f64) -> f64 {
        (self.df)(x)
    }

    pub fn second_derivative(&self, x: f64) -> f64 {
        (self.d2f)(x)
    }
}

/// Pointwise image `f(X_t)` of a scalar path.
pub fn compose(f: &ScalarMap, x: &SampledPath) -> Result<SampledPath> {
    map_scalar(x, |v| f.value(v))
}

/// Pointwise image `f'(X_t)`.
pub fn compose_derivative(f: &ScalarMap, x: &SampledPath) -> Result<SampledPath> {
    map_scalar(x, |v| f.derivative(v))
}

fn map_scalar(x: &SampledPath, f: impl Fn(f64) -> f64) -> Result<SampledPath> {
    if x.dim() != 1 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            found: x.dim(),
        });
    }
    let values: Vec<f64> = x.values().iter().map(|&v| f(v)).collect();
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NumericDomain(format!(
            "composed value at t = {} is not finite",
            x.grid().time(i)
        )));
    }
    SampledPath::scalar(x.grid_arc().clone(), values)
}

/// The stopped piecewise-linear approximation `X^{n,t}`.
///
/// For `s < t` the result interpolates `X` linearly between the nodes of the
/// level truncated at `t` (its breakpoints below `t`, then `t` itself); for
/// `s >= t` it is frozen at `X_t`. When `t` is a breakpoint of the level this
/// is exactly the interpolant along the level stopped at `t`.
pub fn stopped_linear_approximation(
    x: &SampledPath,
    level: &Partition,
    t: f64,
) -> Result<SampledPath> {
    let t_idx = x.grid().index_of(t)?;
    stopped_linear_approximation_at(x, level, t_idx)
}

pub fn stopped_linear_approximation_at(
    x: &SampledPath,
    level: &Partition,
    t_idx: usize,
) -> Result<SampledPath> {
    if !same_grid(x.grid_arc(), level.grid_arc()) {
        return Err(Error::GridMismatch);
    }
    if t_idx >= x.len() {
        return Err(invalid(format!("grid index {t_idx} out of range")));
    }
    if t_idx > level.end_index() {
        return Err(invalid("stopping time lies beyond the partition"));
    }
    let dim = x.dim();
    let grid = x.grid();
    let mut values = Vec::with_capacity(x.values().len());
    let nodes: Vec<usize> = level
        .indices()
        .iter()
        .copied()
        .take_while(|&i| i < t_idx)
        .chain(std::iter::once(t_idx))
        .collect();
    let mut seg = 0;
    for i in 0..x.len() {
        if i >= t_idx {
            values.extend_from_slice(x.value(t_idx));
            continue;
        }
        while nodes[seg + 1] <= i {
            seg += 1;
        }
        let (a, b) = (nodes[seg], nodes[seg + 1]);
        if i == a {
            values.extend_from_slice(x.value(a));
            continue;
        }
        let w = (grid.time(i) - grid.time(a)) / (grid.time(b) - grid.time(a));
        for c in 0..dim {
            let xa = x.at(a, c);
            values.push(xa + w * (x.at(b, c) - xa));
        }
    }
    SampledPath::new(x.grid_arc().clone(), dim, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn grid(n: usize) -> Arc<TimeGrid> {
        Arc::new(TimeGrid::uniform(1.0, n).unwrap())
    }

    #[test]
    fn uniform_grid_examples() {
        assert_eq!(
            make_uniform_grid(1.0, 3).unwrap().points(),
            &[0.0, 0.5, 1.0]
        );
        let g = make_uniform_grid(2.0 * PI, 5).unwrap();
        let expected = [0.0, PI / 2.0, PI, 1.5 * PI, 2.0 * PI];
        for (a, b) in g.points().iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
        let fine = make_uniform_grid(1.0, (1 << 14) + 1).unwrap();
        assert_eq!(fine.mesh(), 2f64.powi(-14));
        assert_eq!(fine.dyadic_log2(), Some(14));
    }

    #[test]
    fn uniform_grid_rejects_bad_input() {
        assert!(matches!(
            make_uniform_grid(1.0, 1),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            make_uniform_grid(0.0, 4),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            make_uniform_grid(-1.0, 4),
            Err(Error::InvalidArgument(_))
        ));
        assert!(TimeGrid::new(vec![0.0, 0.5, 0.5, 1.0]).is_err());
    }

    #[test]
    fn index_lookup() {
        let g = TimeGrid::uniform(1.0, 11).unwrap();
        assert_eq!(g.index_of(0.3).unwrap(), 3);
        assert_eq!(g.index_of(1.0).unwrap(), 10);
        assert!(matches!(g.index_of(0.35), Err(Error::NotOnGrid { .. })));
    }

    #[test]
    fn brownian_is_deterministic_and_starts_at_zero() {
        let g = grid(257);
        let a = sample_brownian(7, g.clone(), 3).unwrap();
        let b = sample_brownian(7, g.clone(), 3).unwrap();
        assert_eq!(a.values(), b.values());
        assert_eq!(a.first(), &[0.0, 0.0, 0.0]);
        let c = sample_brownian(8, g, 3).unwrap();
        assert_ne!(a.values(), c.values());
    }

    #[test]
    fn brownian_increments_are_independent_of_grid_extent() {
        // keyed by (seed, index): a longer grid with the same spacing agrees on the common prefix
        let short = sample_brownian(3, Arc::new(TimeGrid::uniform(1.0, 65).unwrap()), 2).unwrap();
        let long = sample_brownian(3, Arc::new(TimeGrid::uniform(2.0, 129).unwrap()), 2).unwrap();
        assert_eq!(short.values(), &long.values()[..short.values().len()]);
    }

    #[test]
    fn lacunary_examples() {
        let g = Arc::new(TimeGrid::uniform_on(-1.0, 1.0, 9).unwrap());
        let x = lacunary_pair(0.5, 1, g.clone()).unwrap();
        let zero = g.index_of(0.0).unwrap();
        assert_eq!(x.value(zero)[0], 0.0);
        assert!((x.value(zero)[1] - 2f64.powf(-0.5)).abs() < 1e-15);

        let x = lacunary_pair(0.5, 2, g.clone()).unwrap();
        let q = g.index_of(0.25).unwrap();
        assert!((x.at(q, 0) - 2f64.powf(-0.5)).abs() < 1e-15);
        assert!((x.at(q, 1) + 0.5).abs() < 1e-15);
    }

    #[test]
    fn lacunary_parity() {
        let g = Arc::new(TimeGrid::uniform_on(-1.0, 1.0, 1025).unwrap());
        let x = lacunary_pair(0.3, 9, g.clone()).unwrap();
        let n = g.len();
        for i in 0..n {
            let j = n - 1 - i;
            assert_eq!(x.at(i, 0), -x.at(j, 0));
            assert_eq!(x.at(i, 1), x.at(j, 1));
        }
    }

    #[test]
    fn lacunary_requires_symmetric_grid() {
        let g = grid(9);
        assert!(matches!(
            lacunary_pair(0.5, 3, g),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn compose_examples() {
        let g = grid(11);
        let x = SampledPath::scalar_fn(g.clone(), |t| t).unwrap();
        assert_eq!(compose(&ScalarMap::identity(), &x).unwrap(), x);
        let c = compose(&ScalarMap::constant(2.5), &x).unwrap();
        assert!(c.values().iter().all(|&v| v == 2.5));
        let sq = compose(&ScalarMap::square(), &x).unwrap();
        for (i, &t) in g.points().iter().enumerate() {
            assert_eq!(sq.at(i, 0), t * t);
        }
        let blow = ScalarMap::new(|x: f64| 1.0 / x, |x| -1.0 / (x * x), |x| 2.0 / (x * x * x));
        assert!(matches!(compose(&blow, &x), Err(Error::NumericDomain(_))));
    }

    #[test]
    fn stopped_approximation_examples() {
        let g = grid(17);
        let x = sample_brownian(1, g.clone(), 1).unwrap();
        let level = Partition::new(g.clone(), vec![0, 4, 8, 12, 16]).unwrap();

        let at_end = stopped_linear_approximation(&x, &level, 1.0).unwrap();
        for (k, &i) in level.indices().iter().enumerate() {
            assert_eq!(at_end.at(i, 0), x.at(i, 0));
            if k + 1 < level.indices().len() {
                let j = level.indices()[k + 1];
                let mid = (i + j) / 2;
                let expect = 0.5 * (x.at(i, 0) + x.at(j, 0));
                assert!((at_end.at(mid, 0) - expect).abs() < 1e-15);
            }
        }

        let at_zero = stopped_linear_approximation(&x, &level, 0.0).unwrap();
        assert!(at_zero.values().iter().all(|&v| v == x.at(0, 0)));

        let id = SampledPath::scalar_fn(g.clone(), |t| t).unwrap();
        for &t in &[0.25, 0.375, 0.8125] {
            let y = stopped_linear_approximation(&id, &level, t).unwrap();
            for (i, &s) in g.points().iter().enumerate() {
                assert!((y.at(i, 0) - s.min(t)).abs() < 1e-15);
            }
        }
        assert!(matches!(
            stopped_linear_approximation(&x, &level, 0.3),
            Err(Error::NotOnGrid { .. })
        ));
    }

    #[test]
    fn csv_dump_and_read_back() {
        let g = grid(5);
        let x = sample_brownian(11, g, 2).unwrap();
        let text = x.to_csv_string();
        assert!(text.starts_with("t,x1,x2\n"));
        assert_eq!(text.lines().count(), 6);
        let back = SampledPath::read_csv(text.as_bytes()).unwrap();
        assert_eq!(back.values(), x.values());
        assert_eq!(back.grid().points(), x.grid().points());
    }

    #[test]
    fn restrict_to_partition() {
        let g = grid(9);
        let x = SampledPath::scalar_fn(g.clone(), |t| 3.0 * t).unwrap();
        let p = Partition::new(g, vec![0, 2, 8]).unwrap();
        let r = x.restrict(&p).unwrap();
        assert_eq!(r.grid().points(), &[0.0, 0.25, 1.0]);
        assert_eq!(r.values(), &[0.0, 0.75, 3.0]);
    }
}
