//! Change-of-variable formulas as residual computations: the Stratonovich
//! chain rule, the pathwise Itô formula along a partition sequence, and the
//! functional Itô formula for functionals with measure-valued derivatives.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::integration::{quadratic_variation, riemann_gamma};
use crate::partitions::{Partition, PartitionSequence};
use crate::paths::{same_grid, SampledPath, TimeGrid};
use crate::sum::CompensatedSum;

type FieldFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
/// Atoms by grid index and per-cell `(left, right)` densities.
type Weighted = (Vec<(usize, f64)>, Vec<(f64, f64)>);
type VecFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// `F: R^d -> R` with gradient and Hessian (row-major `d x d`).
#[derive(Clone)]
pub struct SmoothField {
    dim: usize,
    f: FieldFn,
    grad: VecFn,
    hess: VecFn,
    holder_alpha: f64,
}

impl std::fmt::Debug for SmoothField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SmoothField")
            .field("dim", &self.dim)
            .field("holder_alpha", &self.holder_alpha)
            .finish()
    }
}

const FD_STEP: f64 = 1e-6;
const FD_TOL: f64 = 1e-5;
const FD_POINTS: usize = 8;

impl SmoothField {
    /// Builds the field and spot-checks `grad` and `hess` against central
    /// differences at a few seeded random points of `[-1, 1]^d`.
    pub fn new<F, G, H>(dim: usize, f: F, grad: G, hess: H, holder_alpha: f64) -> Result<Self>
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
        G: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
        H: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    {
        if dim == 0 {
            return Err(invalid("field dimension must be at least 1"));
        }
        if !(holder_alpha > 0.0 && holder_alpha <= 1.0) {
            return Err(invalid(format!(
                "Hölder exponent must lie in (0, 1], got {holder_alpha}"
            )));
        }
        let field = Self {
            dim,
            f: Arc::new(f),
            grad: Arc::new(grad),
            hess: Arc::new(hess),
            holder_alpha,
        };
        field.spot_check()?;
        Ok(field)
    }

    fn spot_check(&self) -> Result<()> {
        let d = self.dim;
        let mut rng = ChaCha8Rng::seed_from_u64(0xf1e1d);
        let (mut g, mut gp, mut gm, mut h) =
            (vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d * d]);
        for _ in 0..FD_POINTS {
            let x: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            self.gradient(&x, &mut g);
            self.hessian(&x, &mut h);
            let mut xp = x.clone();
            for k in 0..d {
                xp[k] = x[k] + FD_STEP;
                let fp = self.value(&xp);
                self.gradient(&xp, &mut gp);
                xp[k] = x[k] - FD_STEP;
                let fm = self.value(&xp);
                self.gradient(&xp, &mut gm);
                xp[k] = x[k];
                let fd = (fp - fm) / (2.0 * FD_STEP);
                if (fd - g[k]).abs() > FD_TOL * g[k].abs().max(1.0) {
                    return Err(invalid(format!(
                        "gradient component {k} disagrees with finite differences at {x:?}: {} vs {fd}",
                        g[k]
                    )));
                }
                for r in 0..d {
                    let fd = (gp[r] - gm[r]) / (2.0 * FD_STEP);
                    let an = h[r * d + k];
                    if (fd - an).abs() > FD_TOL * an.abs().max(1.0) {
                        return Err(invalid(format!(
                            "Hessian entry ({r}, {k}) disagrees with finite differences at {x:?}: {an} vs {fd}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// `F(x) = <c, x>`.
    pub fn linear(c: Vec<f64>) -> Result<Self> {
        let d = c.len();
        let c2 = c.clone();
        Self::new(
            d,
            move |x| x.iter().zip(&c).map(|(a, b)| a * b).sum(),
            move |_, g| g.copy_from_slice(&c2),
            |_, h| h.fill(0.0),
            1.0,
        )
    }

    /// `F(x) = <x, A x>` for symmetric `A` (row-major).
    pub fn quadratic_form(a: Vec<f64>) -> Result<Self> {
        let d = (a.len() as f64).sqrt() as usize;
        if d * d != a.len() || d == 0 {
            return Err(invalid("quadratic form needs a square matrix"));
        }
        for i in 0..d {
            for j in 0..i {
                if a[i * d + j] != a[j * d + i] {
                    return Err(invalid("quadratic form matrix must be symmetric"));
                }
            }
        }
        let (a1, a2, a3) = (a.clone(), a.clone(), a);
        Self::new(
            d,
            move |x| {
                let mut s = 0.0;
                for i in 0..d {
                    for j in 0..d {
                        s += x[i] * a1[i * d + j] * x[j];
                    }
                }
                s
            },
            move |x, g| {
                for i in 0..d {
                    g[i] = 2.0 * (0..d).map(|j| a2[i * d + j] * x[j]).sum::<f64>();
                }
            },
            move |_, h| {
                for (e, v) in h.iter_mut().zip(&a3) {
                    *e = 2.0 * v;
                }
            },
            1.0,
        )
    }

    /// `F(x) = |x|^2 / 2`.
    pub fn half_norm_squared(d: usize) -> Result<Self> {
        Self::new(
            d,
            |x| 0.5 * x.iter().map(|v| v * v).sum::<f64>(),
            |x, g| g.copy_from_slice(x),
            move |_, h| {
                h.fill(0.0);
                for i in 0..d {
                    h[i * d + i] = 1.0;
                }
            },
            1.0,
        )
    }

    /// Scalar `F(x) = c x^k`.
    pub fn monomial(c: f64, k: u32) -> Result<Self> {
        let kf = k as f64;
        let pw = move |x: f64, e: i32| if e < 0 { 0.0 } else { x.powi(e) };
        Self::new(
            1,
            move |x| c * pw(x[0], k as i32),
            move |x, g| g[0] = c * kf * pw(x[0], k as i32 - 1),
            move |x, h| h[0] = c * kf * (kf - 1.0) * pw(x[0], k as i32 - 2),
            1.0,
        )
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn holder_alpha(&self) -> f64 {
        self.holder_alpha
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }

    pub fn gradient(&self, x: &[f64], out: &mut [f64]) {
        (self.grad)(x, out)
    }

    pub fn hessian(&self, x: &[f64], out: &mut [f64]) {
        (self.hess)(x, out)
    }

    fn check_path(&self, x: &SampledPath) -> Result<()> {
        if x.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: x.dim(),
            });
        }
        Ok(())
    }

    /// `t -> grad F(X_t)`.
    pub fn gradient_path(&self, x: &SampledPath) -> Result<SampledPath> {
        self.check_path(x)?;
        let d = self.dim;
        let mut values = vec![0.0; x.len() * d];
        for i in 0..x.len() {
            self.gradient(x.value(i), &mut values[i * d..(i + 1) * d]);
        }
        SampledPath::new(x.grid_arc().clone(), d, values)
    }

    fn hessian_path(&self, x: &SampledPath) -> Result<SampledPath> {
        let d = self.dim;
        let mut values = vec![0.0; x.len() * d * d];
        for i in 0..x.len() {
            self.hessian(x.value(i), &mut values[i * d * d..(i + 1) * d * d]);
        }
        SampledPath::new(x.grid_arc().clone(), d * d, values)
    }
}

/// Residual of a change-of-variable formula at one partition level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelResidual {
    pub level: usize,
    pub residual: f64,
}

fn check_levels(seq: &PartitionSequence, levels: &std::ops::RangeInclusive<usize>) -> Result<()> {
    if levels.is_empty() || *levels.end() >= seq.len() {
        return Err(invalid(format!(
            "levels {}..={} not within the sequence's 0..={}",
            levels.start(),
            levels.end(),
            seq.len() - 1
        )));
    }
    Ok(())
}

/// `|sum <grad F(X_s) + (grad F(X_t) - grad F(X_s))/2, X_{s,t}> - (F(X_T) - F(X_0))|`
/// per level.
pub fn chain_rule_residual(
    f: &SmoothField,
    x: &SampledPath,
    seq: &PartitionSequence,
    levels: std::ops::RangeInclusive<usize>,
) -> Result<Vec<LevelResidual>> {
    check_levels(seq, &levels)?;
    let grad = f.gradient_path(x)?;
    let target = f.value(x.last()) - f.value(x.first());
    levels
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&n| {
            let s = riemann_gamma(&grad, x, seq.level(n), 0.5)?;
            Ok(LevelResidual {
                level: n,
                residual: (s - target).abs(),
            })
        })
        .collect()
}

/// `|F(X_T) - F(X_0) - gamma-sum(grad F(X), X) + (2 gamma - 1)/2 sum_{ij} sum D2_ij F(X_s) [X^i,X^j]^n_{s,t}|`
/// per level, with the brackets taken along `seq`.
pub fn follmer_ito_residual(
    f: &SmoothField,
    x: &SampledPath,
    seq: &PartitionSequence,
    levels: std::ops::RangeInclusive<usize>,
    gamma: f64,
) -> Result<Vec<LevelResidual>> {
    check_levels(seq, &levels)?;
    let grad = f.gradient_path(x)?;
    let hess = f.hessian_path(x)?;
    let qv = quadratic_variation(x, seq)?;
    let d = f.dim();
    let target = f.value(x.last()) - f.value(x.first());
    levels
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&n| {
            let pi = seq.level(n);
            let first = riemann_gamma(&grad, x, pi, gamma)?;
            let mut second = CompensatedSum::new();
            for (a, b) in pi.intervals() {
                let h = hess.value(a);
                let mut s = 0.0;
                for i in 0..d {
                    for j in 0..d {
                        s += h[i * d + j] * (qv.value(n, b, i, j) - qv.value(n, a, i, j));
                    }
                }
                second.add(s);
            }
            let residual = target - first + 0.5 * (2.0 * gamma - 1.0) * second.value();
            Ok(LevelResidual {
                level: n,
                residual: residual.abs(),
            })
        })
        .collect()
}

/// Ramp weight of interval `k` of `pi` at time `s`: 0 before `t_k`,
/// `(s - t_k)/(t_{k+1} - t_k)` on the interval, 1 after.
pub fn eta_weight(pi: &Partition, k: usize, s: f64) -> Result<f64> {
    if k >= pi.num_intervals() {
        return Err(invalid(format!(
            "interval {k} out of range for {} intervals",
            pi.num_intervals()
        )));
    }
    let g = pi.grid();
    let (a, b) = (g.time(pi.indices()[k]), g.time(pi.indices()[k + 1]));
    Ok(ramp(a, b, s))
}

#[inline]
fn ramp(a: f64, b: f64, s: f64) -> f64 {
    if s <= a {
        0.0
    } else if s >= b {
        1.0
    } else {
        (s - a) / (b - a)
    }
}

/// A finite signed measure on the grid interval: point masses at grid points
/// plus an absolutely continuous part whose density on each grid cell is
/// linear between a left and a right value (constant when the two agree).
///
/// Densities pair with test functions given by nodal values through the
/// trapezoid rule on each cell.
#[derive(Debug, Clone, PartialEq)]
pub struct SignedMeasure1D {
    grid: Arc<TimeGrid>,
    atoms: Vec<(usize, f64)>,
    /// `(left, right)` density per cell; empty when absent.
    density: Vec<(f64, f64)>,
}

impl SignedMeasure1D {
    /// Atoms given as `(time, weight)` with grid times; `density` per cell.
    pub fn new(
        grid: Arc<TimeGrid>,
        atoms: &[(f64, f64)],
        density: Option<Vec<f64>>,
    ) -> Result<Self> {
        let atoms = atoms
            .iter()
            .map(|&(t, w)| {
                if !w.is_finite() {
                    return Err(Error::NumericDomain(format!(
                        "atom weight at {t} is not finite"
                    )));
                }
                Ok((grid.index_of(t)?, w))
            })
            .collect::<Result<Vec<_>>>()?;
        let density = match density {
            None => Vec::new(),
            Some(d) => {
                if d.len() != grid.len() - 1 {
                    return Err(Error::DimensionMismatch {
                        expected: grid.len() - 1,
                        found: d.len(),
                    });
                }
                if d.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NumericDomain("density value is not finite".into()));
                }
                d.into_iter().map(|v| (v, v)).collect()
            }
        };
        Ok(Self {
            grid,
            atoms,
            density,
        })
    }

    pub fn zero(grid: Arc<TimeGrid>) -> Self {
        Self {
            grid,
            atoms: Vec::new(),
            density: Vec::new(),
        }
    }

    pub fn dirac(grid: Arc<TimeGrid>, t: f64, weight: f64) -> Result<Self> {
        Self::new(grid, &[(t, weight)], None)
    }

    /// Lebesgue measure on the grid interval.
    pub fn lebesgue(grid: Arc<TimeGrid>) -> Self {
        let n = grid.len() - 1;
        Self {
            grid,
            atoms: Vec::new(),
            density: vec![(1.0, 1.0); n],
        }
    }

    pub fn grid(&self) -> &Arc<TimeGrid> {
        &self.grid
    }

    /// Atoms as `(grid index, weight)`.
    pub fn atoms(&self) -> &[(usize, f64)] {
        &self.atoms
    }

    pub fn has_density(&self) -> bool {
        !self.density.is_empty()
    }

    /// `<mu, f>` for a test function given by its values at the grid points.
    pub fn pair(&self, test: &[f64]) -> Result<f64> {
        if test.len() != self.grid.len() {
            return Err(Error::DimensionMismatch {
                expected: self.grid.len(),
                found: test.len(),
            });
        }
        let mut acc = CompensatedSum::new();
        for &(i, w) in &self.atoms {
            acc.add(w * test[i]);
        }
        for (c, &(l, r)) in self.density.iter().enumerate() {
            let h = self.grid.time(c + 1) - self.grid.time(c);
            acc.add(0.5 * h * (l * test[c] + r * test[c + 1]));
        }
        finite(acc.value())
    }

    /// `mu([t_i, T])`.
    pub fn mass_from(&self, i: usize) -> f64 {
        let mut acc = CompensatedSum::new();
        for &(a, w) in &self.atoms {
            if a >= i {
                acc.add(w);
            }
        }
        for c in i..self.density.len() {
            let (l, r) = self.density[c];
            acc.add(0.5 * (self.grid.time(c + 1) - self.grid.time(c)) * (l + r));
        }
        acc.value()
    }

    pub fn total_mass(&self) -> f64 {
        self.mass_from(0)
    }

    pub fn total_variation(&self) -> f64 {
        let atoms: f64 = self.atoms.iter().map(|a| a.1.abs()).sum();
        let dens: f64 = self
            .density
            .iter()
            .enumerate()
            .map(|(c, &(l, r))| {
                let h = self.grid.time(c + 1) - self.grid.time(c);
                // |linear| integrated exactly
                if l * r >= 0.0 {
                    0.5 * h * (l.abs() + r.abs())
                } else {
                    0.5 * h * (l * l + r * r) / (l.abs() + r.abs())
                }
            })
            .sum();
        atoms + dens
    }
}

fn finite(v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NumericDomain("measure pairing is not finite".into()))
    }
}

/// A measure on the square: a density concentrated on the diagonal
/// (left/right values per cell, as in [`SignedMeasure1D`]) plus point masses
/// at grid pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct SecondOrderMeasure {
    grid: Arc<TimeGrid>,
    diagonal: Vec<(f64, f64)>,
    atoms: Vec<(usize, usize, f64)>,
}

impl SecondOrderMeasure {
    pub fn zero(grid: Arc<TimeGrid>) -> Self {
        Self {
            grid,
            diagonal: Vec::new(),
            atoms: Vec::new(),
        }
    }

    /// Atoms given as `(time, time, weight)`.
    pub fn new(
        grid: Arc<TimeGrid>,
        diagonal: Option<Vec<f64>>,
        atoms: &[(f64, f64, f64)],
    ) -> Result<Self> {
        let diagonal = match diagonal {
            None => Vec::new(),
            Some(d) if d.len() == grid.len() - 1 => d.into_iter().map(|v| (v, v)).collect(),
            Some(d) => {
                return Err(Error::DimensionMismatch {
                    expected: grid.len() - 1,
                    found: d.len(),
                })
            }
        };
        let atoms = atoms
            .iter()
            .map(|&(s, t, w)| Ok((grid.index_of(s)?, grid.index_of(t)?, w)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            grid,
            diagonal,
            atoms,
        })
    }

    /// `<nu, f ⊗ g>` for nodal test functions `f`, `g`.
    pub fn pair(&self, f: &[f64], g: &[f64]) -> Result<f64> {
        let n = self.grid.len();
        if f.len() != n || g.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: f.len().min(g.len()),
            });
        }
        let mut acc = CompensatedSum::new();
        for &(a, b, w) in &self.atoms {
            acc.add(w * f[a] * g[b]);
        }
        for (c, &(l, r)) in self.diagonal.iter().enumerate() {
            let h = self.grid.time(c + 1) - self.grid.time(c);
            acc.add(0.5 * h * (l * f[c] * g[c] + r * f[c + 1] * g[c + 1]));
        }
        finite(acc.value())
    }
}

/// A functional `F(t, X^t)` of the path stopped at `t`, with its derivatives
/// represented as measures.
///
/// Implementations must read `x` only at grid indices `<= t_idx`; values after
/// `t_idx` are those of the stopped path `X_{s ∧ t}`.
pub trait PathFunctional: Sync {
    fn grid(&self) -> &Arc<TimeGrid>;

    fn dim(&self) -> usize;

    fn eval(&self, t_idx: usize, x: &SampledPath) -> Result<f64>;

    /// Explicit time derivative; zero unless overridden.
    fn time_derivative(&self, _t_idx: usize, _x: &SampledPath) -> Result<f64> {
        Ok(0.0)
    }

    /// `D_i F` for each component `i`.
    fn d1(&self, t_idx: usize, x: &SampledPath) -> Result<Vec<SignedMeasure1D>>;

    /// `D^2_{ij} F`, indexed `i * d + j`.
    fn d2(&self, t_idx: usize, x: &SampledPath) -> Result<Vec<SecondOrderMeasure>>;

    /// `<D_i F, test>` per component, for a nodal `test` vanishing at grid
    /// indices `<= from`.
    fn pair_d1(
        &self,
        t_idx: usize,
        x: &SampledPath,
        test: &[f64],
        _from: usize,
    ) -> Result<Vec<f64>> {
        self.d1(t_idx, x)?.iter().map(|m| m.pair(test)).collect()
    }

    /// `<D^2_{ij} F, test ⊗ test>`, indexed `i * d + j`, with `test` as in
    /// [`PathFunctional::pair_d1`].
    fn pair_d2(
        &self,
        t_idx: usize,
        x: &SampledPath,
        test: &[f64],
        _from: usize,
    ) -> Result<Vec<f64>> {
        self.d2(t_idx, x)?
            .iter()
            .map(|m| m.pair(test, test))
            .collect()
    }
}

type SpaceTimeFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// `g(s, x)` with `d/dx g` and `d^2/dx^2 g`.
#[derive(Clone)]
pub struct SpaceTimeMap {
    g: SpaceTimeFn,
    dg: SpaceTimeFn,
    d2g: SpaceTimeFn,
}

impl std::fmt::Debug for SpaceTimeMap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("SpaceTimeMap")
    }
}

impl SpaceTimeMap {
    pub fn new<G, D, H>(g: G, dg: D, d2g: H) -> Self
    where
        G: Fn(f64, f64) -> f64 + Send + Sync + 'static,
        D: Fn(f64, f64) -> f64 + Send + Sync + 'static,
        H: Fn(f64, f64) -> f64 + Send + Sync + 'static,
    {
        Self {
            g: Arc::new(g),
            dg: Arc::new(dg),
            d2g: Arc::new(d2g),
        }
    }

    /// `g(s, x) = x`.
    pub fn identity() -> Self {
        Self::new(|_, x| x, |_, _| 1.0, |_, _| 0.0)
    }

    /// `g(s, x) = x^2 / 2`.
    pub fn half_square() -> Self {
        Self::new(|_, x| 0.5 * x * x, |_, x| x, |_, _| 1.0)
    }

    pub fn constant(c: f64) -> Self {
        Self::new(move |_, _| c, |_, _| 0.0, |_, _| 0.0)
    }
}

/// `F(X) = int g(s, X_s) mu(ds)` for scalar paths, with the absolutely
/// continuous part of `mu` integrated by the trapezoid rule on grid cells.
#[derive(Debug, Clone)]
pub struct IntegralFunctional {
    g: SpaceTimeMap,
    mu: SignedMeasure1D,
}

pub fn integral_functional(g: SpaceTimeMap, mu: SignedMeasure1D) -> IntegralFunctional {
    IntegralFunctional { g, mu }
}

impl IntegralFunctional {
    fn check(&self, t_idx: usize, x: &SampledPath) -> Result<()> {
        if x.dim() != 1 {
            return Err(Error::DimensionMismatch {
                expected: 1,
                found: x.dim(),
            });
        }
        if !same_grid(x.grid_arc(), &self.mu.grid) {
            return Err(Error::GridMismatch);
        }
        if t_idx >= x.len() {
            return Err(invalid(format!("grid index {t_idx} out of range")));
        }
        Ok(())
    }

    /// Pushes `h(s, X_{s∧t})` weighted by `mu` into per-node atoms and
    /// per-cell densities.
    fn weighted(&self, t_idx: usize, x: &SampledPath, h: &SpaceTimeFn) -> Weighted {
        let grid = &self.mu.grid;
        let at = |i: usize| h(grid.time(i), x.at(i.min(t_idx), 0));
        let atoms = self.mu.atoms.iter().map(|&(i, w)| (i, w * at(i))).collect();
        let density = self
            .mu
            .density
            .iter()
            .enumerate()
            .map(|(c, &(l, r))| (l * at(c), r * at(c + 1)))
            .collect();
        (atoms, density)
    }
}

impl IntegralFunctional {
    /// `int h(s, X_{s∧t}) f(s) g(s) mu(ds)` over `[t_from, T]` (with `g = 1`
    /// when absent), without materialising the measure.
    fn pair_weighted(
        &self,
        t_idx: usize,
        x: &SampledPath,
        h: &SpaceTimeFn,
        f: &[f64],
        g: Option<&[f64]>,
        from: usize,
    ) -> Result<f64> {
        let grid = &self.mu.grid;
        if f.len() != grid.len() {
            return Err(Error::DimensionMismatch {
                expected: grid.len(),
                found: f.len(),
            });
        }
        let test = |i: usize| f[i] * g.map_or(1.0, |g| g[i]);
        let node = |i: usize| h(grid.time(i), x.at(i.min(t_idx), 0)) * test(i);
        let mut acc = CompensatedSum::new();
        for &(i, w) in &self.mu.atoms {
            if i >= from {
                acc.add(w * node(i));
            }
        }
        if !self.mu.density.is_empty() {
            let mut left = node(from);
            for c in from..self.mu.density.len() {
                let right = node(c + 1);
                let (l, r) = self.mu.density[c];
                acc.add(0.5 * (grid.time(c + 1) - grid.time(c)) * (l * left + r * right));
                left = right;
            }
        }
        finite(acc.value())
    }
}

impl PathFunctional for IntegralFunctional {
    fn grid(&self) -> &Arc<TimeGrid> {
        &self.mu.grid
    }

    fn dim(&self) -> usize {
        1
    }

    fn eval(&self, t_idx: usize, x: &SampledPath) -> Result<f64> {
        self.check(t_idx, x)?;
        let (atoms, density) = self.weighted(t_idx, x, &self.g.g);
        let m = SignedMeasure1D {
            grid: self.mu.grid.clone(),
            atoms,
            density,
        };
        finite(m.total_mass())
    }

    fn d1(&self, t_idx: usize, x: &SampledPath) -> Result<Vec<SignedMeasure1D>> {
        self.check(t_idx, x)?;
        let (atoms, density) = self.weighted(t_idx, x, &self.g.dg);
        Ok(vec![SignedMeasure1D {
            grid: self.mu.grid.clone(),
            atoms,
            density,
        }])
    }

    fn pair_d1(
        &self,
        t_idx: usize,
        x: &SampledPath,
        test: &[f64],
        from: usize,
    ) -> Result<Vec<f64>> {
        self.check(t_idx, x)?;
        Ok(vec![
            self.pair_weighted(t_idx, x, &self.g.dg, test, None, from)?
        ])
    }

    fn pair_d2(
        &self,
        t_idx: usize,
        x: &SampledPath,
        test: &[f64],
        from: usize,
    ) -> Result<Vec<f64>> {
        self.check(t_idx, x)?;
        Ok(vec![self.pair_weighted(
            t_idx,
            x,
            &self.g.d2g,
            test,
            Some(test),
            from,
        )?])
    }

    fn d2(&self, t_idx: usize, x: &SampledPath) -> Result<Vec<SecondOrderMeasure>> {
        self.check(t_idx, x)?;
        let (atoms, diagonal) = self.weighted(t_idx, x, &self.g.d2g);
        Ok(vec![SecondOrderMeasure {
            grid: self.mu.grid.clone(),
            diagonal,
            atoms: atoms.into_iter().map(|(i, w)| (i, i, w)).collect(),
        }])
    }
}

/// Right-hand side and residual of the functional Itô formula at one level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FunctionalItoRow {
    pub level: usize,
    /// `F(t, X^t)`.
    pub lhs: f64,
    pub rhs: f64,
    pub residual: f64,
}

/// Evaluates, along the level truncated at `t`,
/// `F(0,X^0) + sum dF/dt(t_k, X^{n,t_k}) (t_{k+1}-t_k)
///  + sum_i <D_i F(t_k, X^{n,t_k}), eta_k> X^i_{t_k,t_{k+1}}
///  + 1/2 sum_{ij} <D2_ij F(t_k, X^{n,t_k}), eta_k ⊗ eta_k> [X^i,X^j]^n_{t_k,t_{k+1}}`
/// and compares it with `F(t, X^t)`. `X^{n,t_k}` is the piecewise-linear
/// approximation stopped at `t_k` and `eta_k` the ramp weight of the interval.
pub fn functional_ito_residual<F: PathFunctional + ?Sized>(
    f: &F,
    x: &SampledPath,
    seq: &PartitionSequence,
    levels: std::ops::RangeInclusive<usize>,
    t: f64,
) -> Result<Vec<FunctionalItoRow>> {
    check_levels(seq, &levels)?;
    if !same_grid(x.grid_arc(), seq.grid_arc()) || !same_grid(x.grid_arc(), f.grid()) {
        return Err(Error::GridMismatch);
    }
    if x.dim() != f.dim() {
        return Err(Error::DimensionMismatch {
            expected: f.dim(),
            found: x.dim(),
        });
    }
    let t_idx = x.grid().index_of(t)?;
    let lhs = f.eval(t_idx, x)?;
    let start = f.eval(0, x)?;
    levels
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&n| {
            let rhs = match seq.level(n).truncate_at(t_idx)? {
                None => start,
                Some(pi) => start + ito_terms(f, x, &pi)?,
            };
            Ok(FunctionalItoRow {
                level: n,
                lhs,
                rhs,
                residual: (lhs - rhs).abs(),
            })
        })
        .collect()
}

/// Sum of the increments of the right-hand side over `pi`. The stopped
/// approximation is advanced interval by interval through
/// `X^{n,t_{k+1}} = X^{n,t_k} + eta_k X_{t_k,t_{k+1}}`, touching only grid
/// points after `t_k`.
fn ito_terms<F: PathFunctional + ?Sized>(f: &F, x: &SampledPath, pi: &Partition) -> Result<f64> {
    let grid = x.grid();
    let d = x.dim();
    let n = x.len();
    let mut approx = SampledPath::new(x.grid_arc().clone(), d, x.first().repeat(n))?;
    let mut eta = vec![0.0; n];
    let mut inc = vec![0.0; d];
    let mut acc = CompensatedSum::new();
    let mut prev = 0;
    for (a, b) in pi.intervals() {
        eta[prev..=a].fill(0.0);
        let (ta, tb) = (grid.time(a), grid.time(b));
        for (i, e) in eta.iter_mut().enumerate().skip(a + 1) {
            *e = if i < b {
                (grid.time(i) - ta) / (tb - ta)
            } else {
                1.0
            };
        }
        x.increment_into(a, b, &mut inc);
        let mut term = f.time_derivative(a, &approx)? * (tb - ta);
        let first = f.pair_d1(a, &approx, &eta, a)?;
        for i in 0..d {
            term += first[i] * inc[i];
        }
        let second = f.pair_d2(a, &approx, &eta, a)?;
        for i in 0..d {
            for j in 0..d {
                term += 0.5 * second[i * d + j] * inc[i] * inc[j];
            }
        }
        acc.add(finite(term)?);
        let vals = approx.values_mut();
        for i in a + 1..n {
            for c in 0..d {
                vals[i * d + c] += eta[i] * inc[c];
            }
        }
        prev = a;
    }
    finite(acc.value())
}
