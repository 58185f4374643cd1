//! Controlled-path decompositions `Y_{s,t} = Y'_s X_{s,t} + R_{s,t}`.

use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::partitions::PartitionSequence;
use crate::paths::{same_grid, SampledPath, TimeGrid};
use crate::sum::norm;
use crate::variation::{increments, p_variation_total, TwoParamField};

/// A `rows x cols` matrix at every grid point, stored as a path in
/// `R^{rows*cols}` (row-major per point).
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixPath {
    rows: usize,
    cols: usize,
    path: SampledPath,
}

impl MatrixPath {
    pub fn new(grid: Arc<TimeGrid>, rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(invalid("matrix path needs positive dimensions"));
        }
        Ok(Self {
            rows,
            cols,
            path: SampledPath::new(grid, rows * cols, values)?,
        })
    }

    /// The same matrix at every grid point.
    pub fn constant(grid: Arc<TimeGrid>, rows: usize, cols: usize, matrix: &[f64]) -> Result<Self> {
        if matrix.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                found: matrix.len(),
            });
        }
        let values = matrix.repeat(grid.len());
        Self::new(grid, rows, cols, values)
    }

    pub fn identity(grid: Arc<TimeGrid>, d: usize) -> Result<Self> {
        let mut m = vec![0.0; d * d];
        for i in 0..d {
            m[i * d + i] = 1.0;
        }
        Self::constant(grid, d, d, &m)
    }

    pub fn zeros(grid: Arc<TimeGrid>, rows: usize, cols: usize) -> Result<Self> {
        Self::constant(grid, rows, cols, &vec![0.0; rows * cols])
    }

    /// A scalar path read as a `1 x 1` matrix path.
    pub fn from_scalar(path: SampledPath) -> Result<Self> {
        if path.dim() != 1 {
            return Err(Error::DimensionMismatch {
                expected: 1,
                found: path.dim(),
            });
        }
        Ok(Self {
            rows: 1,
            cols: 1,
            path,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn grid_arc(&self) -> &Arc<TimeGrid> {
        self.path.grid_arc()
    }

    pub fn len(&self) -> usize {
        self.path.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Row-major matrix at grid index `i`.
    pub fn at(&self, i: usize) -> &[f64] {
        self.path.value(i)
    }

    pub fn entry(&self, i: usize, r: usize, c: usize) -> f64 {
        self.path.at(i, r * self.cols + c)
    }

    /// The flattened path; its increments carry the Frobenius norm.
    pub fn as_path(&self) -> &SampledPath {
        &self.path
    }

    pub fn scaled(&self, a: f64) -> Result<Self> {
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            path: self.path.scaled(a)?,
        })
    }
}

/// The remainder field `R(s,t) = Y_{s,t} - Y'_s X_{s,t}`.
#[derive(Debug, Clone, Copy)]
pub struct Remainder<'a> {
    x: &'a SampledPath,
    y: &'a SampledPath,
    y_prime: &'a MatrixPath,
}

impl TwoParamField for Remainder<'_> {
    fn grid(&self) -> &Arc<TimeGrid> {
        self.x.grid_arc()
    }

    fn dim(&self) -> usize {
        self.y.dim()
    }

    fn eval_into(&self, i: usize, j: usize, out: &mut [f64]) {
        let (dx, dy) = (self.x.dim(), self.y.dim());
        let m = self.y_prime.at(i);
        let (xi, xj) = (self.x.value(i), self.x.value(j));
        let (yi, yj) = (self.y.value(i), self.y.value(j));
        for r in 0..dy {
            let mut lin = 0.0;
            for c in 0..dx {
                lin += m[r * dx + c] * (xj[c] - xi[c]);
            }
            out[r] = (yj[r] - yi[r]) - lin;
        }
    }

    fn magnitude(&self, i: usize, j: usize) -> f64 {
        if self.x.dim() == 1 && self.y.dim() == 1 {
            let m = self.y_prime.at(i)[0];
            ((self.y.at(j, 0) - self.y.at(i, 0)) - m * (self.x.at(j, 0) - self.x.at(i, 0))).abs()
        } else {
            let mut buf = vec![0.0; self.y.dim()];
            self.eval_into(i, j, &mut buf);
            norm(&buf)
        }
    }
}

fn check_compatible(x: &SampledPath, y: &SampledPath, y_prime: &MatrixPath) -> Result<()> {
    if !same_grid(x.grid_arc(), y.grid_arc()) || !same_grid(x.grid_arc(), y_prime.grid_arc()) {
        return Err(Error::GridMismatch);
    }
    if y_prime.rows() != y.dim() {
        return Err(Error::DimensionMismatch {
            expected: y.dim(),
            found: y_prime.rows(),
        });
    }
    if y_prime.cols() != x.dim() {
        return Err(Error::DimensionMismatch {
            expected: x.dim(),
            found: y_prime.cols(),
        });
    }
    Ok(())
}

/// Remainder of `y` with respect to `x` and the derivative `y_prime`
/// (a `dim(y) x dim(x)` matrix path).
pub fn remainder<'a>(
    x: &'a SampledPath,
    y: &'a SampledPath,
    y_prime: &'a MatrixPath,
) -> Result<Remainder<'a>> {
    check_compatible(x, y, y_prime)?;
    Ok(Remainder { x, y, y_prime })
}

/// `1/r = 1/p + 1/q`.
pub fn remainder_exponent(p: f64, q: f64) -> f64 {
    1.0 / (1.0 / p + 1.0 / q)
}

/// `theta = 2/p + 1/q`.
pub fn theta(p: f64, q: f64) -> f64 {
    2.0 / p + 1.0 / q
}

/// A path `y`, its reference `x` and a candidate derivative.
#[derive(Debug, Clone)]
pub struct ControlledDecomposition {
    pub x: SampledPath,
    pub y: SampledPath,
    pub y_prime: MatrixPath,
    pub p: f64,
    pub q: f64,
    pub r: f64,
}

impl ControlledDecomposition {
    pub fn new(
        x: SampledPath,
        y: SampledPath,
        y_prime: MatrixPath,
        p: f64,
        q: f64,
    ) -> Result<Self> {
        check_compatible(&x, &y, &y_prime)?;
        if !(p >= 1.0 && q >= 1.0) || !p.is_finite() || !q.is_finite() {
            return Err(invalid(format!(
                "exponents must be finite and >= 1, got p = {p}, q = {q}"
            )));
        }
        let r = remainder_exponent(p, q);
        if r < 1.0 {
            return Err(invalid(format!(
                "remainder exponent r = {r} < 1 for p = {p}, q = {q}; the r-variation norm needs r >= 1"
            )));
        }
        Ok(Self {
            x,
            y,
            y_prime,
            p,
            q,
            r,
        })
    }

    pub fn remainder(&self) -> Remainder<'_> {
        Remainder {
            x: &self.x,
            y: &self.y,
            y_prime: &self.y_prime,
        }
    }

    pub fn theta(&self) -> f64 {
        theta(self.p, self.q)
    }

    pub fn is_admissible(&self) -> bool {
        self.theta() > 1.0
    }

    pub fn report(&self) -> Result<ControlReport> {
        let remainder_r_norm = p_variation_total(&self.remainder(), self.r)?;
        let y_prime_q_norm = p_variation_total(&increments(self.y_prime.as_path()), self.q)?;
        let theta = self.theta();
        Ok(ControlReport {
            remainder_r_norm,
            y_prime_q_norm,
            admissible: theta > 1.0,
            theta,
            p: self.p,
            q: self.q,
            r: self.r,
        })
    }
}

/// Norms of a controlled decomposition. Every norm is finite on a finite grid;
/// the numbers are meant to be compared across refinement levels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlReport {
    pub remainder_r_norm: f64,
    /// q-variation of the derivative path (Frobenius norm of increments).
    pub y_prime_q_norm: f64,
    pub admissible: bool,
    pub theta: f64,
    pub p: f64,
    pub q: f64,
    pub r: f64,
}

pub fn check_controlled(
    x: &SampledPath,
    y: &SampledPath,
    y_prime: &MatrixPath,
    p: f64,
    q: f64,
) -> Result<ControlReport> {
    ControlledDecomposition::new(x.clone(), y.clone(), y_prime.clone(), p, q)?.report()
}

/// Regularisation of the derivative fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Ridge {
    /// `factor * max |X increment|^2` over the window.
    Relative(f64),
    Absolute(f64),
}

impl Default for Ridge {
    fn default() -> Self {
        Ridge::Relative(1e-12)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    /// Half-width of the window in grid steps.
    pub window: usize,
    pub ridge: Ridge,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            window: 8,
            ridge: Ridge::default(),
        }
    }
}

/// Local least-squares estimate of `Y'` for scalar `x`, `y`: at each grid
/// index `i`, `c = sum dX dY / (sum dX^2 + ridge)` over the increments from
/// `t_i` to the grid points within `window` steps on either side.
pub fn fit_gubinelli_derivative(
    x: &SampledPath,
    y: &SampledPath,
    options: FitOptions,
) -> Result<SampledPath> {
    if x.dim() != 1 || y.dim() != 1 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            found: if x.dim() != 1 { x.dim() } else { y.dim() },
        });
    }
    if !same_grid(x.grid_arc(), y.grid_arc()) {
        return Err(Error::GridMismatch);
    }
    if options.window < 2 {
        return Err(invalid(format!(
            "fit window must be at least 2, got {}",
            options.window
        )));
    }
    let n = x.len();
    let w = options.window;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let (x0, y0) = (x.at(i, 0), y.at(i, 0));
        let (mut sxy, mut sxx, mut max_sq) = (0.0, 0.0, 0.0f64);
        for j in i.saturating_sub(w)..=(i + w).min(n - 1) {
            if j == i {
                continue;
            }
            let dx = x.at(j, 0) - x0;
            let dy = y.at(j, 0) - y0;
            sxy += dx * dy;
            sxx += dx * dx;
            max_sq = max_sq.max(dx * dx);
        }
        let ridge = match options.ridge {
            Ridge::Relative(f) => f * max_sq,
            Ridge::Absolute(v) => v,
        };
        let denom = sxx + ridge;
        if !(denom > 0.0) {
            return Err(Error::SingularFit { index: i });
        }
        out.push(sxy / denom);
    }
    SampledPath::scalar(x.grid_arc().clone(), out)
}

/// Which component of a pair plays the role of the controlled path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// `X^j` controlled by `X^i`.
    JByI,
    /// `X^i` controlled by `X^j`.
    IByJ,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::JByI => "j_by_i",
            Direction::IByJ => "i_by_j",
        }
    }
}

impl std::fmt::Display for Direction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "j_by_i" | "forward" => Ok(Direction::JByI),
            "i_by_j" | "backward" => Ok(Direction::IByJ),
            other => Err(invalid(format!("unknown direction `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairReport {
    pub i: usize,
    pub j: usize,
    pub direction: Direction,
    pub report: ControlReport,
}

/// Fits a scalar derivative for every pair `i < j` of components in the
/// chosen direction and reports the resulting norms.
pub fn check_self_controlled<D>(
    x: &SampledPath,
    p: f64,
    q: f64,
    fit: FitOptions,
    choose: D,
) -> Result<Vec<PairReport>>
where
    D: Fn(usize, usize) -> Direction + Sync,
{
    let d = x.dim();
    if d < 2 {
        return Err(invalid("self-control checks need a path of dimension >= 2"));
    }
    let components = (0..d).map(|c| x.component(c)).collect::<Result<Vec<_>>>()?;
    let pairs: Vec<(usize, usize)> = (0..d)
        .flat_map(|i| (i + 1..d).map(move |j| (i, j)))
        .collect();
    pairs
        .into_par_iter()
        .map(|(i, j)| {
            let direction = choose(i, j);
            let (reference, controlled) = match direction {
                Direction::JByI => (&components[i], &components[j]),
                Direction::IByJ => (&components[j], &components[i]),
            };
            let derivative = fit_gubinelli_derivative(reference, controlled, fit)?;
            let report = check_controlled(
                reference,
                controlled,
                &MatrixPath::from_scalar(derivative)?,
                p,
                q,
            )?;
            Ok(PairReport {
                i,
                j,
                direction,
                report,
            })
        })
        .collect()
}

/// Self-control reports of `x` restricted to each requested level of `seq`.
pub fn self_control_across_levels<D>(
    x: &SampledPath,
    seq: &PartitionSequence,
    levels: std::ops::RangeInclusive<usize>,
    p: f64,
    q: f64,
    fit: FitOptions,
    choose: D,
) -> Result<Vec<(usize, Vec<PairReport>)>>
where
    D: Fn(usize, usize) -> Direction + Sync,
{
    levels
        .map(|n| {
            let coarse = x.restrict(seq.get(n)?)?;
            Ok((n, check_self_controlled(&coarse, p, q, fit, &choose)?))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityReport {
    pub similar: bool,
    /// Largest entrywise deviation `max_t max_{a,b} |((X'_t)^{-T} - Y'_t)_{ab}|`.
    pub max_deviation: f64,
    pub worst_time: f64,
}

/// Checks `((X'_t)^*)^{-1} = Y'_t` at every grid time.
pub fn check_similar(
    x_prime: &MatrixPath,
    y_prime: &MatrixPath,
    tol: f64,
) -> Result<SimilarityReport> {
    if !same_grid(x_prime.grid_arc(), y_prime.grid_arc()) {
        return Err(Error::GridMismatch);
    }
    let d = x_prime.rows();
    if x_prime.cols() != d || y_prime.rows() != d || y_prime.cols() != d {
        return Err(invalid("similarity needs square derivatives of equal size"));
    }
    let grid = x_prime.grid_arc();
    let mut max_deviation = 0.0f64;
    let mut worst_time = grid.start();
    for i in 0..x_prime.len() {
        let m = DMatrix::from_row_slice(d, d, x_prime.at(i));
        let inv_t = m
            .try_inverse()
            .ok_or(Error::NonInvertible { time: grid.time(i) })?
            .transpose();
        let target = DMatrix::from_row_slice(d, d, y_prime.at(i));
        let dev = (inv_t - target).amax();
        if !dev.is_finite() {
            return Err(Error::NonInvertible { time: grid.time(i) });
        }
        if dev > max_deviation {
            max_deviation = dev;
            worst_time = grid.time(i);
        }
    }
    Ok(SimilarityReport {
        similar: max_deviation <= tol,
        max_deviation,
        worst_time,
    })
}
