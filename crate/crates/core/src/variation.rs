//! p-variation of two-parameter fields, control functions and a Hölder
//! exponent diagnostic.
//!
//! Every supremum over partitions is taken over partitions whose breakpoints
//! are grid points. For increments of a piecewise-linear path this is the
//! exact p-variation of the interpolant; for other fields it is the value on
//! the grid.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Error, Result};
use crate::paths::{same_grid, SampledPath, TimeGrid};
use crate::sum::norm;

/// A function of grid-interval endpoints `(s, t)`, `s <= t`, vanishing on the
/// diagonal. Indices refer to points of [`TwoParamField::grid`].
pub trait TwoParamField: Sync {
    fn grid(&self) -> &Arc<TimeGrid>;

    fn dim(&self) -> usize;

    fn eval_into(&self, i: usize, j: usize, out: &mut [f64]);

    /// Euclidean norm of the field value.
    fn magnitude(&self, i: usize, j: usize) -> f64 {
        let mut buf = [0.0; 16];
        if self.dim() <= buf.len() {
            let out = &mut buf[..self.dim()];
            self.eval_into(i, j, out);
            norm(out)
        } else {
            let mut out = vec![0.0; self.dim()];
            self.eval_into(i, j, &mut out);
            norm(&out)
        }
    }

    fn eval(&self, i: usize, j: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.eval_into(i, j, &mut out);
        out
    }
}

/// The increment field `(s, t) -> X_t - X_s` of a path.
#[derive(Debug, Clone, Copy)]
pub struct Increments<'a> {
    path: &'a SampledPath,
}

pub fn increments(path: &SampledPath) -> Increments<'_> {
    Increments { path }
}

impl TwoParamField for Increments<'_> {
    fn grid(&self) -> &Arc<TimeGrid> {
        self.path.grid_arc()
    }

    fn dim(&self) -> usize {
        self.path.dim()
    }

    fn eval_into(&self, i: usize, j: usize, out: &mut [f64]) {
        self.path.increment_into(i, j, out);
    }

    fn magnitude(&self, i: usize, j: usize) -> f64 {
        if self.path.dim() == 1 {
            (self.path.at(j, 0) - self.path.at(i, 0)).abs()
        } else {
            let (a, b) = (self.path.value(i), self.path.value(j));
            a.iter()
                .zip(b)
                .map(|(x, y)| (y - x) * (y - x))
                .sum::<f64>()
                .sqrt()
        }
    }
}

type IndexFn = Box<dyn Fn(usize, usize, &mut [f64]) + Send + Sync>;

/// A field given by a closure over grid indices.
pub struct FnField {
    grid: Arc<TimeGrid>,
    dim: usize,
    f: IndexFn,
}

impl FnField {
    pub fn from_indices<F>(grid: Arc<TimeGrid>, dim: usize, f: F) -> Self
    where
        F: Fn(usize, usize, &mut [f64]) + Send + Sync + 'static,
    {
        Self {
            grid,
            dim,
            f: Box::new(f),
        }
    }

    /// Scalar field given as a function of the interval endpoints in time.
    pub fn scalar_from_times<F>(grid: Arc<TimeGrid>, f: F) -> Self
    where
        F: Fn(f64, f64) -> f64 + Send + Sync + 'static,
    {
        let g = grid.clone();
        Self::from_indices(grid, 1, move |i, j, out| out[0] = f(g.time(i), g.time(j)))
    }
}

impl TwoParamField for FnField {
    fn grid(&self) -> &Arc<TimeGrid> {
        &self.grid
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn eval_into(&self, i: usize, j: usize, out: &mut [f64]) {
        (self.f)(i, j, out)
    }
}

fn check_exponent(p: f64) -> Result<()> {
    if !(p >= 1.0) || !p.is_finite() {
        return Err(invalid(format!("variation exponent must be >= 1, got {p}")));
    }
    Ok(())
}

#[inline]
fn power(x: f64, p: f64) -> f64 {
    if p == 1.0 {
        x
    } else if p == 2.0 {
        x * x
    } else {
        x.powf(p)
    }
}

/// `max over grid partitions of [i0, i1] of sum |f(u, v)|^p` by dynamic
/// programming over the right endpoint. With `band = Some(w)` the last
/// breakpoint before `j` is searched only among the `w` preceding grid points.
fn variation_power_sum<F: TwoParamField + ?Sized>(
    f: &F,
    p: f64,
    i0: usize,
    i1: usize,
    band: Option<usize>,
) -> f64 {
    let len = i1 - i0 + 1;
    let mut best = vec![0.0f64; len];
    for j in 1..len {
        let lo = match band {
            Some(w) => j.saturating_sub(w),
            None => 0,
        };
        let mut v = f64::NEG_INFINITY;
        for (k, &bk) in best.iter().enumerate().take(j).skip(lo) {
            let cand = bk + power(f.magnitude(i0 + k, i0 + j), p);
            if cand > v {
                v = cand;
            }
        }
        best[j] = v;
    }
    best[len - 1]
}

fn check_range<F: TwoParamField + ?Sized>(f: &F, i: usize, j: usize) -> Result<()> {
    if i > j || j >= f.grid().len() {
        return Err(invalid(format!("invalid grid interval [{i}, {j}]")));
    }
    Ok(())
}

/// p-variation of `f` over `[s, t]` (both grid times).
pub fn p_variation<F: TwoParamField + ?Sized>(f: &F, p: f64, s: f64, t: f64) -> Result<f64> {
    let i = f.grid().index_of(s)?;
    let j = f.grid().index_of(t)?;
    p_variation_between(f, p, i, j)
}

/// p-variation of `f` over the grid-index interval `[i, j]`.
pub fn p_variation_between<F: TwoParamField + ?Sized>(
    f: &F,
    p: f64,
    i: usize,
    j: usize,
) -> Result<f64> {
    check_exponent(p)?;
    check_range(f, i, j)?;
    if i == j {
        return Ok(0.0);
    }
    Ok(variation_power_sum(f, p, i, j, None).powf(1.0 / p))
}

/// p-variation over the whole grid.
pub fn p_variation_total<F: TwoParamField + ?Sized>(f: &F, p: f64) -> Result<f64> {
    p_variation_between(f, p, 0, f.grid().len() - 1)
}

/// Result of a possibly banded variation computation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VariationEstimate {
    pub value: f64,
    /// `false` when a band restricted the search; the value is then a lower
    /// bound of the grid p-variation.
    pub exact: bool,
}

/// p-variation with the partition lookback limited to `band` grid steps.
pub fn p_variation_banded<F: TwoParamField + ?Sized>(
    f: &F,
    p: f64,
    i: usize,
    j: usize,
    band: usize,
) -> Result<VariationEstimate> {
    check_exponent(p)?;
    check_range(f, i, j)?;
    if band == 0 {
        return Err(invalid("band width must be positive"));
    }
    if i == j {
        return Ok(VariationEstimate {
            value: 0.0,
            exact: true,
        });
    }
    let exact = band >= j - i;
    let value = variation_power_sum(f, p, i, j, Some(band)).powf(1.0 / p);
    Ok(VariationEstimate { value, exact })
}

type TimeFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

#[derive(Clone)]
enum Repr {
    Dense(Arc<Vec<f64>>),
    Times(TimeFn),
    Sum(Vec<ControlFunction>),
}

/// A nonnegative superadditive function `omega(s, t)` on grid pairs, zero on
/// the diagonal.
#[derive(Clone)]
pub struct ControlFunction {
    grid: Arc<TimeGrid>,
    repr: Repr,
}

impl std::fmt::Debug for ControlFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let kind = match &self.repr {
            Repr::Dense(_) => "dense",
            Repr::Times(_) => "closure",
            Repr::Sum(_) => "sum",
        };
        f.debug_struct("ControlFunction")
            .field("points", &self.grid.len())
            .field("repr", &kind)
            .finish()
    }
}

/// Largest grid for which a dense control table is built.
pub const MAX_DENSE_CONTROL_POINTS: usize = 2049;

/// Exhaustive superadditivity checks up to this many grid points, sampling
/// beyond.
pub const EXHAUSTIVE_TRIPLE_LIMIT: usize = 64;

/// Random triples drawn when the grid is too large for exhaustive checks.
pub const SAMPLED_TRIPLES: usize = 100_000;

/// Relative slack for superadditivity checks.
pub const SUPERADDITIVITY_TOL: f64 = 1e-9;

impl ControlFunction {
    /// Control given by a closure of the interval endpoints, e.g. `t - s`.
    pub fn from_fn<F>(grid: Arc<TimeGrid>, f: F) -> Self
    where
        F: Fn(f64, f64) -> f64 + Send + Sync + 'static,
    {
        Self {
            grid,
            repr: Repr::Times(Arc::new(f)),
        }
    }

    /// The control `omega(s, t) = t - s`.
    pub fn elapsed_time(grid: Arc<TimeGrid>) -> Self {
        Self::from_fn(grid, |s, t| t - s)
    }

    /// Dense table with `table[i * n + j] = omega(t_i, t_j)` for `i <= j`.
    pub fn dense(grid: Arc<TimeGrid>, table: Vec<f64>) -> Result<Self> {
        let n = grid.len();
        if table.len() != n * n {
            return Err(Error::DimensionMismatch {
                expected: n * n,
                found: table.len(),
            });
        }
        for i in 0..n {
            if table[i * n + i] != 0.0 {
                return Err(invalid("control function must vanish on the diagonal"));
            }
            for j in i..n {
                let w = table[i * n + j];
                if !(w >= 0.0) || !w.is_finite() {
                    return Err(invalid(format!(
                        "control value {w} at ({i}, {j}) is not a finite nonnegative number"
                    )));
                }
            }
        }
        Ok(Self {
            grid,
            repr: Repr::Dense(Arc::new(table)),
        })
    }

    pub fn zero(grid: Arc<TimeGrid>) -> Self {
        Self::from_fn(grid, |_, _| 0.0)
    }

    pub fn grid(&self) -> &Arc<TimeGrid> {
        &self.grid
    }

    /// `omega(t_i, t_j)`, `i <= j`.
    pub fn omega(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return 0.0;
        }
        match &self.repr {
            Repr::Dense(table) => table[i * self.grid.len() + j],
            Repr::Times(f) => f(self.grid.time(i), self.grid.time(j)),
            Repr::Sum(parts) => parts.iter().map(|c| c.omega(i, j)).sum(),
        }
    }

    pub fn omega_at(&self, s: f64, t: f64) -> Result<f64> {
        let i = self.grid.index_of(s)?;
        let j = self.grid.index_of(t)?;
        if i > j {
            return Err(invalid(format!("omega needs s <= t, got ({s}, {t})")));
        }
        Ok(self.omega(i, j))
    }

    /// Checks `omega(s,u) + omega(u,t) <= omega(s,t)` (with relative slack
    /// [`SUPERADDITIVITY_TOL`]) on every grid triple when the grid has at most
    /// [`EXHAUSTIVE_TRIPLE_LIMIT`] points, otherwise on [`SAMPLED_TRIPLES`]
    /// random triples drawn from a fixed seed.
    pub fn check_superadditive(&self) -> SuperadditivityReport {
        let n = self.grid.len();
        let mut report = SuperadditivityReport::default();
        let mut visit = |s: usize, u: usize, t: usize| {
            let lhs = self.omega(s, u) + self.omega(u, t);
            let rhs = self.omega(s, t);
            let excess = lhs - rhs - SUPERADDITIVITY_TOL * rhs;
            report.triples_checked += 1;
            if excess > report.worst_excess {
                report.worst_excess = excess;
                report.violation = Some((s, u, t));
            }
        };
        if n <= EXHAUSTIVE_TRIPLE_LIMIT {
            report.exhaustive = true;
            for s in 0..n {
                for u in s..n {
                    for t in u..n {
                        visit(s, u, t);
                    }
                }
            }
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_c0de);
            for _ in 0..SAMPLED_TRIPLES {
                let mut tri = [
                    rng.random_range(0..n),
                    rng.random_range(0..n),
                    rng.random_range(0..n),
                ];
                tri.sort_unstable();
                visit(tri[0], tri[1], tri[2]);
            }
        }
        report
    }
}

/// Outcome of a superadditivity scan.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SuperadditivityReport {
    pub triples_checked: usize,
    pub exhaustive: bool,
    /// Largest excess of `omega(s,u) + omega(u,t)` over the slackened
    /// `omega(s,t)`; nonpositive when the check passes.
    pub worst_excess: f64,
    pub violation: Option<(usize, usize, usize)>,
}

impl SuperadditivityReport {
    pub fn holds(&self) -> bool {
        self.violation.is_none()
    }
}

/// `omega(s, t) = ||f||_{p, [s,t]}^p` for every grid pair, tabulated densely.
pub fn control_from_field<F: TwoParamField + ?Sized>(f: &F, p: f64) -> Result<ControlFunction> {
    check_exponent(p)?;
    let grid = f.grid().clone();
    let n = grid.len();
    if n > MAX_DENSE_CONTROL_POINTS {
        return Err(invalid(format!(
            "dense control tables are limited to {MAX_DENSE_CONTROL_POINTS} grid points, got {n}"
        )));
    }
    let mut table = vec![0.0; n * n];
    let mut best = vec![0.0f64; n];
    for s in 0..n {
        best[s] = 0.0;
        for j in s + 1..n {
            let mut v = f64::NEG_INFINITY;
            for (k, &bk) in best.iter().enumerate().take(j).skip(s) {
                let cand = bk + power(f.magnitude(k, j), p);
                if cand > v {
                    v = cand;
                }
            }
            best[j] = v;
            table[s * n + j] = v;
        }
    }
    ControlFunction::dense(grid, table)
}

/// The control `omega(s, t) = ||X||_{p, [s,t]}^p`; it dominates `|X_{s,t}|^p`.
pub fn control_from_pvariation(x: &SampledPath, p: f64) -> Result<ControlFunction> {
    control_from_field(&increments(x), p)
}

/// Pointwise sum of controls on a common grid.
pub fn sum_controls(controls: &[ControlFunction]) -> Result<ControlFunction> {
    let first = controls
        .first()
        .ok_or_else(|| invalid("cannot sum an empty list of controls"))?;
    if controls.iter().any(|c| !same_grid(&first.grid, &c.grid)) {
        return Err(Error::GridMismatch);
    }
    Ok(ControlFunction {
        grid: first.grid.clone(),
        repr: Repr::Sum(controls.to_vec()),
    })
}

/// Regression of log max-increment against log scale.
#[derive(Debug, Clone, PartialEq)]
pub struct HolderEstimate {
    pub exponent: f64,
    /// Root-mean-square residual of the log2-log2 fit.
    pub residual: f64,
    /// `(scale, max increment at that scale)` per dyadic level used.
    pub scales: Vec<(f64, f64)>,
}

/// Least-squares slope of `log max_s |X_{s, s+h}|` against `log h` over the
/// dyadic scales `h = T 2^{-n}`, `n` in `levels.0..=levels.1`.
pub fn holder_estimate(x: &SampledPath, levels: (u32, u32)) -> Result<HolderEstimate> {
    let log2 = x
        .grid()
        .dyadic_log2()
        .ok_or_else(|| invalid("Hölder estimation needs a uniform grid of 2^L + 1 points"))?;
    let (lo, hi) = levels;
    if lo >= hi || hi > log2 {
        return Err(invalid(format!(
            "scale range {lo}..={hi} must be increasing and within 0..={log2}"
        )));
    }
    let inc = increments(x);
    let n = x.len();
    let mut scales = Vec::new();
    for level in lo..=hi {
        let lag = 1usize << (log2 - level);
        let max = (0..n - lag)
            .map(|i| inc.magnitude(i, i + lag))
            .fold(0.0, f64::max);
        if !(max > 0.0) {
            return Err(Error::UndefinedExponent);
        }
        scales.push((x.grid().horizon() * (-(level as f64)).exp2(), max));
    }
    let pts: Vec<(f64, f64)> = scales.iter().map(|&(h, m)| (h.log2(), m.log2())).collect();
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual = (pts
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum::<f64>()
        / k)
        .sqrt();
    Ok(HolderEstimate {
        exponent: slope,
        residual,
        scales,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::paths::{lacunary_pair, sample_brownian};

    fn unit(n: usize) -> Arc<TimeGrid> {
        Arc::new(TimeGrid::uniform(1.0, n).unwrap())
    }

    /// Brute force over every subset of interior grid points.
    fn brute_force<F: TwoParamField>(f: &F, p: f64) -> f64 {
        let n = f.grid().len();
        let interior = n - 2;
        let mut best = 0.0f64;
        for mask in 0u32..(1 << interior) {
            let mut pts = vec![0];
            pts.extend((0..interior).filter(|b| mask >> b & 1 == 1).map(|b| b + 1));
            pts.push(n - 1);
            let s: f64 = pts
                .windows(2)
                .map(|w| f.magnitude(w[0], w[1]).powf(p))
                .sum();
            best = best.max(s);
        }
        best.powf(1.0 / p)
    }

    #[test]
    fn monotone_path_total_rise() {
        let x = SampledPath::scalar_fn(unit(33), |t| t).unwrap();
        let v = p_variation(&increments(&x), 1.0, 0.0, 1.0).unwrap();
        assert!((v - 1.0).abs() < 1e-14);
    }

    #[test]
    fn zigzag_forced_refinement() {
        let x = SampledPath::scalar(unit(3), vec![0.0, 1.0, 0.0]).unwrap();
        let v = p_variation(&increments(&x), 2.0, 0.0, 1.0).unwrap();
        assert!((v - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn twelve_point_brute_force() {
        let x = sample_brownian(12, unit(12), 1).unwrap();
        let dp = p_variation_total(&increments(&x), 2.0).unwrap();
        let bf = brute_force(&increments(&x), 2.0);
        assert!((dp - bf).abs() <= 1e-12 * bf);
    }

    #[test]
    fn exponent_below_one_is_rejected() {
        let x = SampledPath::scalar_fn(unit(5), |t| t).unwrap();
        assert!(matches!(
            p_variation(&increments(&x), 0.5, 0.0, 1.0),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn banded_is_lower_bound() {
        let x = sample_brownian(4, unit(200), 1).unwrap();
        let inc = increments(&x);
        let full = p_variation_between(&inc, 2.5, 0, 199).unwrap();
        let banded = p_variation_banded(&inc, 2.5, 0, 199, 5).unwrap();
        assert!(!banded.exact);
        assert!(banded.value <= full + 1e-12);
        let wide = p_variation_banded(&inc, 2.5, 0, 199, 500).unwrap();
        assert!(wide.exact);
        assert!((wide.value - full).abs() < 1e-12);
    }

    #[test]
    fn control_examples() {
        let g = unit(17);
        let x = SampledPath::scalar_fn(g.clone(), |t| t).unwrap();
        let w = control_from_pvariation(&x, 1.0).unwrap();
        for i in 0..17 {
            assert_eq!(w.omega(i, i), 0.0);
            for j in i..17 {
                assert!((w.omega(i, j) - (g.time(j) - g.time(i))).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn pvariation_control_is_superadditive_and_dominates() {
        let x = sample_brownian(9, unit(64), 2).unwrap();
        let w = control_from_pvariation(&x, 2.5).unwrap();
        let report = w.check_superadditive();
        assert!(report.exhaustive);
        assert!(report.holds(), "{report:?}");
        let inc = increments(&x);
        for i in 0..64 {
            for j in i..64 {
                assert!(inc.magnitude(i, j).powf(2.5) <= w.omega(i, j) * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn sampled_superadditivity_on_larger_grid() {
        let x = sample_brownian(2, unit(300), 1).unwrap();
        let w = control_from_pvariation(&x, 3.0).unwrap();
        let report = w.check_superadditive();
        assert!(!report.exhaustive);
        assert_eq!(report.triples_checked, SAMPLED_TRIPLES);
        assert!(report.holds());
    }

    #[test]
    fn detects_non_superadditive_function() {
        let w = ControlFunction::from_fn(unit(10), |s, t| (t - s).sqrt());
        assert!(!w.check_superadditive().holds());
    }

    #[test]
    fn sum_examples() {
        let g = unit(20);
        let w = ControlFunction::elapsed_time(g.clone());
        let plus_zero = sum_controls(&[w.clone(), ControlFunction::zero(g.clone())]).unwrap();
        let doubled = sum_controls(&[w.clone(), w.clone()]).unwrap();
        for i in 0..20 {
            for j in i..20 {
                assert_eq!(plus_zero.omega(i, j), w.omega(i, j));
                assert_eq!(doubled.omega(i, j), 2.0 * w.omega(i, j));
            }
        }
        let x = sample_brownian(5, g.clone(), 1).unwrap();
        let v = control_from_pvariation(&x, 2.0).unwrap();
        let s = sum_controls(&[v, w]).unwrap();
        assert!(s.check_superadditive().holds());
        let other = ControlFunction::elapsed_time(unit(21));
        assert!(matches!(
            sum_controls(&[s, other]),
            Err(Error::GridMismatch)
        ));
    }

    #[test]
    fn holder_of_linear_path() {
        let g = Arc::new(TimeGrid::dyadic(0.0, 1.0, 12).unwrap());
        let x = SampledPath::scalar_fn(g, |t| t).unwrap();
        let h = holder_estimate(&x, (2, 10)).unwrap();
        assert!((h.exponent - 1.0).abs() < 0.01);
    }

    #[test]
    fn holder_of_constant_path_is_undefined() {
        let g = Arc::new(TimeGrid::dyadic(0.0, 1.0, 6).unwrap());
        let x = SampledPath::scalar_fn(g, |_| 4.0).unwrap();
        assert_eq!(holder_estimate(&x, (1, 5)), Err(Error::UndefinedExponent));
    }

    #[test]
    fn holder_of_lacunary_component() {
        let g = Arc::new(TimeGrid::dyadic(-1.0, 1.0, 14).unwrap());
        let x = lacunary_pair(0.5, 12, g).unwrap().component(0).unwrap();
        // fine scales that still resolve the top frequency 2^12 (h >= 2^-12)
        let h = holder_estimate(&x, (8, 13)).unwrap();
        assert!(
            (0.45..=0.55).contains(&h.exponent),
            "estimated exponent {}",
            h.exponent
        );
    }
}
