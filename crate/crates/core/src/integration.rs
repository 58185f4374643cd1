//! Riemann-sum integrals along partitions, the Lévy area, sewing, and
//! quadratic (co)variation along partition sequences.
//!
//! Every sum runs in ascending time with compensated summation, so results
//! are reproducible bit for bit regardless of how levels are scheduled.

use std::ops::RangeInclusive;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::control::ControlledDecomposition;
use crate::error::{invalid, Error, Result};
use crate::partitions::{Partition, PartitionSequence};
use crate::paths::{same_grid, SampledPath, TimeGrid};
use crate::sum::{dot, norm, CompensatedSum};
use crate::variation::{ControlFunction, TwoParamField, EXHAUSTIVE_TRIPLE_LIMIT, SAMPLED_TRIPLES};

/// Number of trailing levels over which the Cauchy gap is taken.
pub const CAUCHY_LEVELS: usize = 4;

/// Values of a refinement scheme level by level.
#[derive(Debug, Clone, PartialEq)]
pub struct RiemannResult {
    pub levels: Vec<usize>,
    pub meshes: Vec<f64>,
    pub values: Vec<f64>,
    /// Finest-level value.
    pub limit: f64,
    /// Richardson estimate from the two finest levels, when requested.
    pub extrapolated: Option<f64>,
    /// Largest successive difference among the last [`CAUCHY_LEVELS`]
    /// values; zero when only one level is present.
    pub cauchy_gap: f64,
}

impl RiemannResult {
    pub fn new(levels: Vec<usize>, meshes: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if values.is_empty() || levels.len() != values.len() || meshes.len() != values.len() {
            return Err(invalid(
                "refinement table needs one mesh and value per level",
            ));
        }
        if meshes.windows(2).any(|w| !(w[1] < w[0])) {
            return Err(invalid("meshes must decrease strictly across levels"));
        }
        let start = values.len().saturating_sub(CAUCHY_LEVELS);
        let cauchy_gap = values[start..]
            .windows(2)
            .map(|w| (w[1] - w[0]).abs())
            .fold(0.0, f64::max);
        Ok(Self {
            limit: *values.last().unwrap(),
            levels,
            meshes,
            values,
            extrapolated: None,
            cauchy_gap,
        })
    }

    /// `|v_n - v_{n-1}|` for every consecutive pair of levels.
    pub fn successive_gaps(&self) -> Vec<f64> {
        self.values
            .windows(2)
            .map(|w| (w[1] - w[0]).abs())
            .collect()
    }

    /// Richardson step assuming errors shrink by `ratio` per level.
    pub fn with_richardson(mut self, ratio: f64) -> Self {
        if self.values.len() >= 2 && ratio != 1.0 {
            let n = self.values.len();
            let (a, b) = (self.values[n - 2], self.values[n - 1]);
            self.extrapolated = Some((b - ratio * a) / (1.0 - ratio));
        }
        self
    }
}

/// Rule choosing the evaluation point `s'` of `[s, t]` among grid points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Selector {
    #[default]
    Left,
    Right,
    /// Grid point nearest to the midpoint time, the left one on ties.
    Mid,
}

impl Selector {
    pub fn pick(self, grid: &TimeGrid, a: usize, b: usize) -> usize {
        match self {
            Selector::Left => a,
            Selector::Right => b,
            Selector::Mid => {
                let m = 0.5 * (grid.time(a) + grid.time(b));
                let k = a + grid.points()[a..=b].partition_point(|&t| t < m);
                let k = k.min(b);
                if k > a && (m - grid.time(k - 1)) <= (grid.time(k) - m) {
                    k - 1
                } else {
                    k
                }
            }
        }
    }
}

impl std::str::FromStr for Selector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "left" => Ok(Selector::Left),
            "right" => Ok(Selector::Right),
            "mid" => Ok(Selector::Mid),
            other => Err(invalid(format!(
                "unknown selector `{other}` (expected left, right or mid)"
            ))),
        }
    }
}

fn check_pair(y: &SampledPath, x: &SampledPath, pi: &Partition) -> Result<()> {
    if !same_grid(y.grid_arc(), x.grid_arc()) || !same_grid(x.grid_arc(), pi.grid_arc()) {
        return Err(Error::GridMismatch);
    }
    if y.dim() != x.dim() {
        return Err(Error::DimensionMismatch {
            expected: x.dim(),
            found: y.dim(),
        });
    }
    Ok(())
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(invalid(format!("gamma must lie in [0, 1], got {gamma}")));
    }
    Ok(())
}

#[inline]
fn incr_dot(y: &SampledPath, ya: usize, x: &SampledPath, a: usize, b: usize) -> f64 {
    let (xa, xb, yv) = (x.value(a), x.value(b), y.value(ya));
    let mut s = 0.0;
    for c in 0..x.dim() {
        s += yv[c] * (xb[c] - xa[c]);
    }
    s
}

#[inline]
fn incr_incr(y: &SampledPath, x: &SampledPath, a: usize, b: usize) -> f64 {
    let (xa, xb, ya, yb) = (x.value(a), x.value(b), y.value(a), y.value(b));
    let mut s = 0.0;
    for c in 0..x.dim() {
        s += (yb[c] - ya[c]) * (xb[c] - xa[c]);
    }
    s
}

/// `sum over [s,t] in pi of <Y_s + gamma Y_{s,t}, X_{s,t}>`.
pub fn riemann_gamma(y: &SampledPath, x: &SampledPath, pi: &Partition, gamma: f64) -> Result<f64> {
    check_pair(y, x, pi)?;
    check_gamma(gamma)?;
    let mut acc = CompensatedSum::new();
    for (a, b) in pi.intervals() {
        acc.add(incr_dot(y, a, x, a, b) + gamma * incr_incr(y, x, a, b));
    }
    Ok(acc.value())
}

/// `sum over [s,t] in pi of <Y_{s'}, X_{s,t}>` with `s'` chosen by `selector`.
pub fn riemann_point(
    y: &SampledPath,
    x: &SampledPath,
    pi: &Partition,
    selector: Selector,
) -> Result<f64> {
    check_pair(y, x, pi)?;
    let grid = x.grid();
    let mut acc = CompensatedSum::new();
    for (a, b) in pi.intervals() {
        acc.add(incr_dot(y, selector.pick(grid, a, b), x, a, b));
    }
    Ok(acc.value())
}

/// `sum over [s,t] in pi of <Y_{s,t}, X_{s,t}>`.
pub fn increment_pairing(y: &SampledPath, x: &SampledPath, pi: &Partition) -> Result<f64> {
    check_pair(y, x, pi)?;
    Ok(pi
        .intervals()
        .map(|(a, b)| incr_incr(y, x, a, b))
        .collect::<CompensatedSum>()
        .value())
}

/// Symmetric and antisymmetric parts `(S, A)` of the gamma sum:
/// `S = sum <Y_s + g Y_{s,t}, X_{s,t}> + <X_s + g X_{s,t}, Y_{s,t}>` and `A` the
/// same with a minus sign, so that `S/2 + A/2` is the gamma sum.
pub fn sym_antisym(
    y: &SampledPath,
    x: &SampledPath,
    pi: &Partition,
    gamma: f64,
) -> Result<(f64, f64)> {
    check_pair(y, x, pi)?;
    check_gamma(gamma)?;
    let mut s = CompensatedSum::new();
    let mut a = CompensatedSum::new();
    for (u, v) in pi.intervals() {
        let cross = gamma * incr_incr(y, x, u, v);
        let yx = incr_dot(y, u, x, u, v) + cross;
        let xy = incr_dot(x, u, y, u, v) + cross;
        s.add(yx + xy);
        a.add(yx - xy);
    }
    Ok((s.value(), a.value()))
}

fn check_area_dim(x: &SampledPath) -> Result<()> {
    if x.dim() < 2 {
        return Err(invalid(format!(
            "Lévy area needs dimension >= 2, got {}",
            x.dim()
        )));
    }
    Ok(())
}

/// Left-point Lévy area matrix `L^{ij} = sum X^i_s X^j_{s,t} - X^j_s X^i_{s,t}`.
pub fn levy_area(x: &SampledPath, pi: &Partition) -> Result<DMatrix<f64>> {
    levy_area_with(x, pi, Selector::Left)
}

/// Lévy area with the evaluation point chosen by `selector`.
pub fn levy_area_with(x: &SampledPath, pi: &Partition, selector: Selector) -> Result<DMatrix<f64>> {
    check_area_dim(x)?;
    if !same_grid(x.grid_arc(), pi.grid_arc()) {
        return Err(Error::GridMismatch);
    }
    let d = x.dim();
    let grid = x.grid();
    let mut acc = vec![CompensatedSum::new(); d * d];
    for (a, b) in pi.intervals() {
        let e = x.value(selector.pick(grid, a, b));
        let (xa, xb) = (x.value(a), x.value(b));
        for i in 0..d {
            for j in i + 1..d {
                acc[i * d + j].add(e[i] * (xb[j] - xa[j]) - e[j] * (xb[i] - xa[i]));
            }
        }
    }
    let mut m = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in i + 1..d {
            let v = acc[i * d + j].value();
            m[(i, j)] = v;
            m[(j, i)] = -v;
        }
    }
    Ok(m)
}

fn check_levels(seq: &PartitionSequence, levels: &RangeInclusive<usize>) -> Result<()> {
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

/// Lévy areas level by level.
#[derive(Debug, Clone, PartialEq)]
pub struct LevyAreaSequence {
    pub levels: Vec<usize>,
    pub meshes: Vec<f64>,
    pub areas: Vec<DMatrix<f64>>,
}

impl LevyAreaSequence {
    pub fn entry(&self, i: usize, j: usize) -> Result<RiemannResult> {
        let d = self.areas[0].nrows();
        if i >= d || j >= d {
            return Err(invalid(format!(
                "area entry ({i}, {j}) out of range for dimension {d}"
            )));
        }
        RiemannResult::new(
            self.levels.clone(),
            self.meshes.clone(),
            self.areas.iter().map(|m| m[(i, j)]).collect(),
        )
    }
}

pub fn levy_area_sequence(
    x: &SampledPath,
    seq: &PartitionSequence,
    levels: RangeInclusive<usize>,
    selector: Selector,
) -> Result<LevyAreaSequence> {
    check_levels(seq, &levels)?;
    let lv: Vec<usize> = levels.collect();
    let areas = lv
        .par_iter()
        .map(|&n| levy_area_with(x, seq.level(n), selector))
        .collect::<Result<Vec<_>>>()?;
    Ok(LevyAreaSequence {
        meshes: lv.iter().map(|&n| seq.level(n).mesh()).collect(),
        levels: lv,
        areas,
    })
}

/// Gamma sums level by level.
pub fn integrate_sequence(
    y: &SampledPath,
    x: &SampledPath,
    seq: &PartitionSequence,
    levels: RangeInclusive<usize>,
    gamma: f64,
) -> Result<RiemannResult> {
    check_levels(seq, &levels)?;
    per_level(seq, levels, |pi| riemann_gamma(y, x, pi, gamma))
}

/// Selector sums level by level.
pub fn integrate_sequence_point(
    y: &SampledPath,
    x: &SampledPath,
    seq: &PartitionSequence,
    levels: RangeInclusive<usize>,
    selector: Selector,
) -> Result<RiemannResult> {
    check_levels(seq, &levels)?;
    per_level(seq, levels, |pi| riemann_point(y, x, pi, selector))
}

fn per_level<F>(
    seq: &PartitionSequence,
    levels: RangeInclusive<usize>,
    f: F,
) -> Result<RiemannResult>
where
    F: Fn(&Partition) -> Result<f64> + Sync,
{
    let lv: Vec<usize> = levels.collect();
    let values = lv
        .par_iter()
        .map(|&n| f(seq.level(n)))
        .collect::<Result<Vec<_>>>()?;
    RiemannResult::new(
        lv.clone(),
        lv.iter().map(|&n| seq.level(n).mesh()).collect(),
        values,
    )
}

/// Coherence of a field: worst `|dXi(s,u,t)| / (K omega(s,t)^theta)` seen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoherenceReport {
    pub triples_checked: usize,
    pub exhaustive: bool,
    pub worst_ratio: f64,
}

/// The certified bound checked on coarse pairs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CertificateReport {
    /// Level whose breakpoint pairs were checked.
    pub level: usize,
    pub pairs_checked: usize,
    /// Worst `|Phi(t) - Phi(s) - Xi(s,t)| / (C omega(s,t)^theta)`.
    pub worst_ratio: f64,
    pub holds: bool,
}

/// Finest level at which the certified bound is checked on all pairs.
pub const CERTIFICATE_LEVEL: usize = 6;

#[derive(Debug, Clone)]
pub struct SewingResult {
    /// `Phi` on the grid, built from the finest level; `Phi(start) = 0`.
    pub phi: SampledPath,
    /// Richardson combination of the two finest levels with ratio
    /// `2^{1 - theta}`; `None` with a single level.
    pub extrapolated_phi: Option<SampledPath>,
    pub theta: f64,
    pub k: f64,
    /// `C(theta) = K (1 - 2^{1-theta})^{-1}`.
    pub constant: f64,
    /// `Phi(T)` level by level.
    pub totals: Vec<RiemannResult>,
    pub coherence: CoherenceReport,
    pub certificate: CertificateReport,
    omega: ControlFunction,
}

impl SewingResult {
    /// `C(theta) omega(s, t)^theta` for grid indices `i <= j`.
    pub fn certified_bound(&self, i: usize, j: usize) -> f64 {
        self.constant * self.omega.omega(i, j).powf(self.theta)
    }
}

/// `K (1 - 2^{1-theta})^{-1}`.
pub fn sewing_constant(theta: f64, k: f64) -> f64 {
    k / (1.0 - (1.0 - theta).exp2())
}

fn coherence_check<F: TwoParamField + ?Sized>(
    xi: &F,
    omega: &ControlFunction,
    theta: f64,
    k: f64,
) -> Result<CoherenceReport> {
    let n = xi.grid().len();
    let d = xi.dim();
    let (mut st, mut su, mut ut, mut delta) =
        (vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]);
    let mut report = CoherenceReport {
        triples_checked: 0,
        exhaustive: n <= EXHAUSTIVE_TRIPLE_LIMIT,
        worst_ratio: 0.0,
    };
    let mut visit = |s: usize, u: usize, t: usize| -> Result<()> {
        xi.eval_into(s, t, &mut st);
        xi.eval_into(s, u, &mut su);
        xi.eval_into(u, t, &mut ut);
        for c in 0..d {
            delta[c] = st[c] - su[c] - ut[c];
        }
        let defect = norm(&delta);
        let bound = k * omega.omega(s, t).powf(theta);
        let slack = 4.0 * f64::EPSILON * (norm(&st) + norm(&su) + norm(&ut));
        let ratio = if bound > 0.0 {
            defect / bound
        } else if defect > slack {
            f64::INFINITY
        } else {
            0.0
        };
        report.triples_checked += 1;
        report.worst_ratio = report.worst_ratio.max(ratio);
        if defect > bound + slack {
            let g = xi.grid();
            return Err(Error::PremiseFailed {
                s: g.time(s),
                u: g.time(u),
                t: g.time(t),
                ratio,
            });
        }
        Ok(())
    };
    if report.exhaustive {
        for s in 0..n {
            for u in s..n {
                for t in u..n {
                    visit(s, u, t)?;
                }
            }
        }
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(0x005e_716e);
        for _ in 0..SAMPLED_TRIPLES {
            let mut tri = [
                rng.random_range(0..n),
                rng.random_range(0..n),
                rng.random_range(0..n),
            ];
            tri.sort_unstable();
            visit(tri[0], tri[1], tri[2])?;
        }
    }
    Ok(report)
}

/// `Phi` sewn along one level: cumulative sums of `Xi` over the level's
/// intervals at breakpoints, `Phi(u) + Xi(u, g)` at grid points `g` between a
/// breakpoint `u` and the next.
fn sewn_values<F: TwoParamField + ?Sized>(xi: &F, level: &Partition) -> Vec<f64> {
    let d = xi.dim();
    let n = xi.grid().len();
    let mut out = vec![0.0; n * d];
    let mut acc = vec![CompensatedSum::new(); d];
    let mut buf = vec![0.0; d];
    let mut base = vec![0.0; d];
    for (a, b) in level.intervals() {
        for c in 0..d {
            base[c] = acc[c].value();
        }
        for g in a + 1..b {
            xi.eval_into(a, g, &mut buf);
            for c in 0..d {
                out[g * d + c] = base[c] + buf[c];
            }
        }
        xi.eval_into(a, b, &mut buf);
        for c in 0..d {
            acc[c].add(buf[c]);
            out[b * d + c] = acc[c].value();
        }
    }
    out
}

/// Sews a field `Xi` whose coherence defect satisfies
/// `|Xi(s,t) - Xi(s,u) - Xi(u,t)| <= K omega(s,t)^theta`.
///
/// The premise is verified on grid triples first (every triple on grids of at
/// most 64 points, otherwise 10^5 seeded random triples); a violation aborts
/// with [`Error::PremiseFailed`] naming the triple.
pub fn sewing_integral<F: TwoParamField + ?Sized>(
    xi: &F,
    omega: &ControlFunction,
    theta: f64,
    k: f64,
    seq: &PartitionSequence,
) -> Result<SewingResult> {
    if !(theta > 1.0) || !theta.is_finite() {
        return Err(invalid(format!("theta must exceed 1, got {theta}")));
    }
    if !(k >= 0.0) || !k.is_finite() {
        return Err(invalid(format!(
            "K must be a finite nonnegative number, got {k}"
        )));
    }
    let grid = xi.grid().clone();
    if !same_grid(&grid, omega.grid()) || !same_grid(&grid, seq.grid_arc()) {
        return Err(Error::GridMismatch);
    }
    if !seq.finest().is_complete() {
        return Err(invalid("partition sequence must cover the whole grid"));
    }
    let coherence = coherence_check(xi, omega, theta, k)?;
    let d = xi.dim();
    let constant = sewing_constant(theta, k);
    let ratio = (1.0 - theta).exp2();

    let finest = seq.finest_level();
    let phi_vals = sewn_values(xi, seq.finest());
    let phi = SampledPath::new(grid.clone(), d, phi_vals.clone())?;
    let extrapolated_phi = if finest >= 1 {
        let prev = sewn_values(xi, seq.level(finest - 1));
        let vals = phi_vals
            .iter()
            .zip(&prev)
            .map(|(b, a)| (b - ratio * a) / (1.0 - ratio))
            .collect();
        Some(SampledPath::new(grid.clone(), d, vals)?)
    } else {
        None
    };

    let lv: Vec<usize> = (0..seq.len()).collect();
    let per_level_totals: Vec<Vec<f64>> = lv
        .par_iter()
        .map(|&n| {
            let mut acc = vec![CompensatedSum::new(); d];
            let mut buf = vec![0.0; d];
            for (a, b) in seq.level(n).intervals() {
                xi.eval_into(a, b, &mut buf);
                for c in 0..d {
                    acc[c].add(buf[c]);
                }
            }
            acc.iter().map(|s| s.value()).collect()
        })
        .collect();
    let meshes: Vec<f64> = lv.iter().map(|&n| seq.level(n).mesh()).collect();
    let totals = (0..d)
        .map(|c| {
            RiemannResult::new(
                lv.clone(),
                meshes.clone(),
                per_level_totals.iter().map(|v| v[c]).collect(),
            )
            .map(|r| r.with_richardson(ratio))
        })
        .collect::<Result<Vec<_>>>()?;

    let cert_level = finest.min(CERTIFICATE_LEVEL);
    let pts = seq.level(cert_level).indices();
    let mut certificate = CertificateReport {
        level: cert_level,
        pairs_checked: 0,
        worst_ratio: 0.0,
        holds: true,
    };
    let mut buf = vec![0.0; d];
    let mut diff = vec![0.0; d];
    for (p, &a) in pts.iter().enumerate() {
        for &b in &pts[p + 1..] {
            xi.eval_into(a, b, &mut buf);
            let mut scale = 0.0;
            for c in 0..d {
                let (pa, pb) = (phi.at(a, c), phi.at(b, c));
                diff[c] = pb - pa - buf[c];
                scale += pa.abs() + pb.abs() + buf[c].abs();
            }
            let lhs = norm(&diff);
            let bound = constant * omega.omega(a, b).powf(theta);
            let slack = 64.0 * f64::EPSILON * scale;
            let r = if bound > 0.0 {
                lhs / bound
            } else if lhs > slack {
                f64::INFINITY
            } else {
                0.0
            };
            certificate.pairs_checked += 1;
            certificate.worst_ratio = certificate.worst_ratio.max(r);
            if lhs > bound + slack {
                certificate.holds = false;
            }
        }
    }

    Ok(SewingResult {
        phi,
        extrapolated_phi,
        theta,
        k,
        constant,
        totals,
        coherence,
        certificate,
        omega: omega.clone(),
    })
}

/// Brackets `[X^i, X^j]^n_t` for every level of a partition sequence.
#[derive(Debug, Clone)]
pub struct QuadraticVariation {
    seq: PartitionSequence,
    dim: usize,
    /// Per level, a path in `R^{d*d}` holding the bracket matrix at each grid
    /// time.
    per_level: Vec<SampledPath>,
}

/// `[X^i, X^j]^n_t = sum over [u,v] in pi_n of X^i_{u∧t, v∧t} X^j_{u∧t, v∧t}`
/// on every grid time `t` and every level `n`.
pub fn quadratic_variation(x: &SampledPath, seq: &PartitionSequence) -> Result<QuadraticVariation> {
    if !same_grid(x.grid_arc(), seq.grid_arc()) {
        return Err(Error::GridMismatch);
    }
    let d = x.dim();
    let per_level = seq
        .levels()
        .par_iter()
        .map(|level| bracket_path(x, level))
        .collect::<Result<Vec<_>>>()?;
    Ok(QuadraticVariation {
        seq: seq.clone(),
        dim: d,
        per_level,
    })
}

fn bracket_path(x: &SampledPath, level: &Partition) -> Result<SampledPath> {
    let d = x.dim();
    let n = x.len();
    let dd = d * d;
    let mut out = vec![0.0; n * dd];
    let mut acc = vec![CompensatedSum::new(); dd];
    let mut inc = vec![0.0; d];
    let mut base = vec![0.0; dd];
    for (a, b) in level.intervals() {
        for e in 0..dd {
            base[e] = acc[e].value();
        }
        for g in a + 1..=b {
            x.increment_into(a, g, &mut inc);
            if g < b {
                for i in 0..d {
                    for j in 0..d {
                        out[g * dd + i * d + j] = base[i * d + j] + inc[i] * inc[j];
                    }
                }
            } else {
                for i in 0..d {
                    for j in 0..d {
                        acc[i * d + j].add(inc[i] * inc[j]);
                        out[g * dd + i * d + j] = acc[i * d + j].value();
                    }
                }
            }
        }
    }
    // frozen beyond the end of an incomplete level
    let last = level.end_index();
    for g in last + 1..n {
        out.copy_within(last * dd..(last + 1) * dd, g * dd);
    }
    SampledPath::new(x.grid_arc().clone(), dd, out)
}

impl QuadraticVariation {
    pub fn sequence(&self) -> &PartitionSequence {
        &self.seq
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_levels(&self) -> usize {
        self.per_level.len()
    }

    fn check_entry(&self, level: usize, i: usize, j: usize) -> Result<()> {
        if level >= self.per_level.len() {
            return Err(invalid(format!("level {level} not computed")));
        }
        if i >= self.dim || j >= self.dim {
            return Err(invalid(format!(
                "bracket ({i}, {j}) out of range for dimension {}",
                self.dim
            )));
        }
        Ok(())
    }

    /// `t -> [X^i, X^j]^n_t` on the grid.
    pub fn bracket_at_level(&self, level: usize, i: usize, j: usize) -> Result<SampledPath> {
        self.check_entry(level, i, j)?;
        self.per_level[level].component(i * self.dim + j)
    }

    /// The finest-level bracket.
    pub fn bracket(&self, i: usize, j: usize) -> Result<SampledPath> {
        self.bracket_at_level(self.per_level.len() - 1, i, j)
    }

    /// `[X^i, X^j]^n` at grid index `g`.
    pub fn value(&self, level: usize, g: usize, i: usize, j: usize) -> f64 {
        self.per_level[level].at(g, i * self.dim + j)
    }

    /// `sup_t |[X^i,X^j]^n_t - [X^i,X^j]^{n-1}_t|` for `n = 1, 2, ...`.
    pub fn uniform_gaps(&self, i: usize, j: usize) -> Result<Vec<f64>> {
        self.check_entry(0, i, j)?;
        let e = i * self.dim + j;
        Ok(self
            .per_level
            .windows(2)
            .map(|w| {
                (0..w[0].len())
                    .map(|g| (w[1].at(g, e) - w[0].at(g, e)).abs())
                    .fold(0.0, f64::max)
            })
            .collect())
    }
}

/// `direct = sum <X_{s,t}, Y_{s,t}>` over the level and
/// `via_bracket = sum_{i,j} sum Y'_s(i,j) ([X^i,X^j]^n_t - [X^i,X^j]^n_s)`.
pub fn quadratic_covariation(
    dec: &ControlledDecomposition,
    qv: &QuadraticVariation,
    level: usize,
) -> Result<(f64, f64)> {
    let x = &dec.x;
    let y = &dec.y;
    if !same_grid(x.grid_arc(), qv.seq.grid_arc()) {
        return Err(Error::GridMismatch);
    }
    if y.dim() != x.dim() || qv.dim != x.dim() {
        return Err(Error::DimensionMismatch {
            expected: x.dim(),
            found: y.dim(),
        });
    }
    let pi = qv.seq.get(level)?;
    let direct = increment_pairing(y, x, pi)?;
    let via = via_bracket_sum(dec, qv, level)?;
    Ok((direct, via))
}

fn via_bracket_sum(
    dec: &ControlledDecomposition,
    qv: &QuadraticVariation,
    level: usize,
) -> Result<f64> {
    let d = qv.dim;
    let pi = qv.seq.get(level)?;
    let bracket = &qv.per_level[level];
    let mut acc = CompensatedSum::new();
    for (a, b) in pi.intervals() {
        let m = dec.y_prime.at(a);
        let (ba, bb) = (bracket.value(a), bracket.value(b));
        let mut s = 0.0;
        for e in 0..d * d {
            s += m[e] * (bb[e] - ba[e]);
        }
        acc.add(s);
    }
    Ok(acc.value())
}

/// One level of the gamma identity check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaIdentityRow {
    pub level: usize,
    pub riemann: f64,
    pub stratonovich: f64,
    pub via_bracket: f64,
    /// `riemann - (stratonovich + (2 gamma - 1)/2 via_bracket)`.
    pub residual: f64,
}

/// Compares the gamma sums with the Stratonovich value plus the bracket
/// correction. The Stratonovich value is `(<Y_T,X_T> - <Y_0,X_0>)/2 + A/2`
/// with `A` the antisymmetric sum on the finest level of `qv`'s sequence.
pub fn gamma_integral_identity(
    dec: &ControlledDecomposition,
    qv: &QuadraticVariation,
    levels: RangeInclusive<usize>,
    gamma: f64,
) -> Result<Vec<GammaIdentityRow>> {
    check_gamma(gamma)?;
    check_levels(&qv.seq, &levels)?;
    let (x, y) = (&dec.x, &dec.y);
    let (_, a) = sym_antisym(y, x, qv.seq.finest(), 0.5)?;
    let stratonovich = 0.5 * (dot(y.last(), x.last()) - dot(y.first(), x.first())) + 0.5 * a;
    levels
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&n| {
            let riemann = riemann_gamma(y, x, qv.seq.level(n), gamma)?;
            let via_bracket = via_bracket_sum(dec, qv, n)?;
            Ok(GammaIdentityRow {
                level: n,
                riemann,
                stratonovich,
                via_bracket,
                residual: riemann - (stratonovich + 0.5 * (2.0 * gamma - 1.0) * via_bracket),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct StratonovichResult {
    /// Midpoint-weighted (`gamma = 1/2`) sums level by level.
    pub sums: RiemannResult,
    /// Per level, `|sum - ((<Y_T,X_T> - <Y_0,X_0>)/2 + A_n/2)|`; rounding only.
    pub split_defects: Vec<f64>,
    /// Antisymmetric sums `A_n` level by level.
    pub antisymmetric: Vec<f64>,
}

pub fn stratonovich(
    y: &SampledPath,
    x: &SampledPath,
    seq: &PartitionSequence,
    levels: RangeInclusive<usize>,
) -> Result<StratonovichResult> {
    check_levels(seq, &levels)?;
    let lv: Vec<usize> = levels.collect();
    let rows = lv
        .par_iter()
        .map(|&n| {
            let pi = seq.level(n);
            let v = riemann_gamma(y, x, pi, 0.5)?;
            let (_, a) = sym_antisym(y, x, pi, 0.5)?;
            Ok((v, a))
        })
        .collect::<Result<Vec<_>>>()?;
    let boundary = 0.5 * (dot(y.last(), x.last()) - dot(y.first(), x.first()));
    Ok(StratonovichResult {
        sums: RiemannResult::new(
            lv.clone(),
            lv.iter().map(|&n| seq.level(n).mesh()).collect(),
            rows.iter().map(|r| r.0).collect(),
        )?,
        split_defects: rows
            .iter()
            .map(|(v, a)| (v - (boundary + 0.5 * a)).abs())
            .collect(),
        antisymmetric: rows.iter().map(|r| r.1).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::MatrixPath;
    use crate::partitions::dyadic_sequence;
    use crate::paths::{lacunary_levy_area, lacunary_pair, sample_brownian};
    use crate::variation::FnField;
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn dyadic(log2: u32) -> Arc<TimeGrid> {
        Arc::new(TimeGrid::dyadic(0.0, 1.0, log2).unwrap())
    }

    #[test]
    fn constant_integrand_telescopes() {
        let g = dyadic(8);
        let x = sample_brownian(1, g.clone(), 1).unwrap();
        let y = SampledPath::scalar_fn(g.clone(), |_| 2.5).unwrap();
        let seq = dyadic_sequence(g, 8).unwrap();
        let target = 2.5 * (x.last()[0] - x.first()[0]);
        for n in [0, 3, 8] {
            for gamma in [0.0, 0.3, 1.0] {
                let v = riemann_gamma(&y, &x, seq.level(n), gamma).unwrap();
                assert!((v - target).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn left_sum_of_identity() {
        for n in [4usize, 10, 33] {
            let g = Arc::new(TimeGrid::uniform(1.0, n + 1).unwrap());
            let x = SampledPath::scalar_fn(g.clone(), |t| t).unwrap();
            let v = riemann_gamma(&x, &x, &Partition::full(g), 0.0).unwrap();
            let expect = (1.0 - 1.0 / n as f64) / 2.0;
            assert!((v - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn gamma_out_of_range() {
        let g = dyadic(2);
        let x = SampledPath::scalar_fn(g.clone(), |t| t).unwrap();
        assert!(matches!(
            riemann_gamma(&x, &x, &Partition::full(g), 1.5),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn selectors_match_gamma_endpoints() {
        let g = dyadic(7);
        let x = sample_brownian(2, g.clone(), 2).unwrap();
        let y = sample_brownian(3, g.clone(), 2).unwrap();
        let pi = dyadic_sequence(g, 5).unwrap().level(5).clone();
        let l = riemann_point(&y, &x, &pi, Selector::Left).unwrap();
        let r = riemann_point(&y, &x, &pi, Selector::Right).unwrap();
        assert!((l - riemann_gamma(&y, &x, &pi, 0.0).unwrap()).abs() < 1e-13);
        assert!((r - riemann_gamma(&y, &x, &pi, 1.0).unwrap()).abs() < 1e-13);
        let d = r - l - increment_pairing(&y, &x, &pi).unwrap();
        assert!(d.abs() < 1e-13);
    }

    #[test]
    fn mid_selector_picks_nearest() {
        let g = TimeGrid::uniform(1.0, 11).unwrap();
        assert_eq!(Selector::Mid.pick(&g, 0, 4), 2);
        assert_eq!(Selector::Mid.pick(&g, 0, 3), 1);
        assert_eq!(Selector::Mid.pick(&g, 2, 3), 2);
        assert_eq!(Selector::Mid.pick(&g, 5, 5), 5);
    }

    #[test]
    fn midpoint_minus_left_is_half_bracket() {
        let g = dyadic(14);
        let x = sample_brownian(5, g.clone(), 1).unwrap();
        let seq = dyadic_sequence(g, 14).unwrap();
        let pi = seq.level(12);
        let mid = riemann_point(&x, &x, pi, Selector::Mid).unwrap();
        let left = riemann_point(&x, &x, pi, Selector::Left).unwrap();
        let qv = quadratic_variation(&x, &seq).unwrap();
        let half = 0.5 * qv.bracket(0, 0).unwrap().last()[0];
        assert!(
            ((mid - left) - half).abs() <= 0.05 * half,
            "{} vs {half}",
            mid - left
        );
    }

    #[test]
    fn split_examples() {
        let g = dyadic(9);
        let x = sample_brownian(7, g.clone(), 3).unwrap();
        let y = sample_brownian(8, g.clone(), 3).unwrap();
        let pi = dyadic_sequence(g, 9).unwrap().level(9).clone();
        let (_, a) = sym_antisym(&x, &x, &pi, 0.3).unwrap();
        assert_eq!(a, 0.0);
        let (s_half, _) = sym_antisym(&y, &x, &pi, 0.5).unwrap();
        let tele = dot(y.last(), x.last()) - dot(y.first(), x.first());
        assert!((s_half - tele).abs() < 1e-12);
        let pair = increment_pairing(&y, &x, &pi).unwrap();
        for gamma in [0.0, 0.2, 0.9] {
            let (s, a_g) = sym_antisym(&y, &x, &pi, gamma).unwrap();
            assert!((s - s_half - (2.0 * gamma - 1.0) * pair).abs() < 1e-12);
            let v = riemann_gamma(&y, &x, &pi, gamma).unwrap();
            assert!((0.5 * s + 0.5 * a_g - v).abs() < 1e-12);
        }
    }

    #[test]
    fn circle_area() {
        let g = Arc::new(TimeGrid::dyadic(0.0, 2.0 * PI, 14).unwrap());
        let x = SampledPath::from_fn(g.clone(), 2, |t, out| {
            out[0] = t.cos();
            out[1] = t.sin();
        })
        .unwrap();
        let l = levy_area(&x, &Partition::full(g)).unwrap();
        assert!((l[(0, 1)] - 2.0 * PI).abs() < 1e-3);
        assert_eq!(l[(1, 0)], -l[(0, 1)]);
        assert_eq!(l[(0, 0)], 0.0);
    }

    #[test]
    fn equal_components_have_no_area() {
        let g = dyadic(8);
        let b = sample_brownian(3, g.clone(), 1).unwrap();
        let x = SampledPath::stack(&[b.clone(), b]).unwrap();
        let l = levy_area(&x, &Partition::full(g)).unwrap();
        assert_eq!(l[(0, 1)], 0.0);
        assert!(levy_area(&x.component(0).unwrap(), &Partition::full(dyadic(8))).is_err());
    }

    #[test]
    fn proportional_components_have_no_area_at_any_level() {
        let g = dyadic(10);
        let b = sample_brownian(9, g.clone(), 1).unwrap();
        let x = SampledPath::stack(&[b.clone(), b.scaled(2.0).unwrap()]).unwrap();
        let seq = dyadic_sequence(g, 10).unwrap();
        let areas = levy_area_sequence(&x, &seq, 0..=10, Selector::Left).unwrap();
        for a in &areas.areas {
            assert!(a[(0, 1)].abs() < 1e-14);
        }
    }

    #[test]
    fn lacunary_area_small_m() {
        let g = Arc::new(TimeGrid::dyadic(-1.0, 1.0, 14).unwrap());
        let x = lacunary_pair(0.5, 3, g.clone()).unwrap();
        let l = levy_area(&x, &Partition::full(g)).unwrap()[(0, 1)];
        let predicted = lacunary_levy_area(0.5, 3);
        assert!((predicted + 6.0 * PI).abs() < 1e-12);
        assert!(
            ((l - predicted) / predicted).abs() < 0.01,
            "{l} vs {predicted}"
        );
    }

    #[test]
    fn smooth_pair_selectors_agree() {
        let g = dyadic(14);
        let x = SampledPath::from_fn(g.clone(), 2, |t, out| {
            out[0] = (2.0 * t).sin();
            out[1] = t * t + t.cos();
        })
        .unwrap();
        let seq = dyadic_sequence(g, 14).unwrap();
        let left = levy_area_sequence(&x, &seq, 10..=14, Selector::Left).unwrap();
        let mid = levy_area_sequence(&x, &seq, 10..=13, Selector::Mid).unwrap();
        let l = left.entry(0, 1).unwrap();
        let m = mid.entry(0, 1).unwrap();
        // left-point error is O(mesh); mid-point error O(mesh^2)
        let left_lim = l.clone().with_richardson(0.5).extrapolated.unwrap();
        assert!(
            (left_lim - m.limit).abs() < 1e-6,
            "{left_lim} vs {}",
            m.limit
        );
        assert!(l.successive_gaps().windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn identity_stratonovich_is_exact() {
        let g = dyadic(10);
        let x = SampledPath::scalar_fn(g.clone(), |t| t).unwrap();
        let seq = dyadic_sequence(g, 10).unwrap();
        let res = stratonovich(&x, &x, &seq, 0..=10).unwrap();
        assert!(res.sums.values.iter().all(|v| (v - 0.5).abs() < 1e-15));
        assert!(res.split_defects.iter().all(|d| *d < 1e-15));
    }

    #[test]
    fn riemann_result_bookkeeping() {
        let r = RiemannResult::new(
            vec![1, 2, 3, 4, 5],
            vec![0.5, 0.25, 0.125, 0.0625, 0.03125],
            vec![1.0, 0.5, 0.75, 0.7, 0.72],
        )
        .unwrap();
        assert_eq!(r.limit, 0.72);
        assert!((r.cauchy_gap - 0.25).abs() < 1e-15);
        assert!(RiemannResult::new(vec![1, 2], vec![0.5, 0.5], vec![1.0, 1.0]).is_err());
        let exact = RiemannResult::new(vec![1, 2], vec![0.5, 0.25], vec![0.5 - 0.25, 0.5 - 0.125])
            .unwrap()
            .with_richardson(0.5);
        assert_eq!(exact.extrapolated, Some(0.5));
    }

    #[test]
    fn additive_field_sews_exactly() {
        let g = dyadic(5);
        let h = |t: f64| (3.0 * t).sin() + t;
        let xi = FnField::scalar_from_times(g.clone(), move |s, t| h(t) - h(s));
        let omega = ControlFunction::elapsed_time(g.clone());
        let seq = dyadic_sequence(g.clone(), 5).unwrap();
        let res = sewing_integral(&xi, &omega, 1.5, 0.1, &seq).unwrap();
        assert!(res.coherence.exhaustive);
        assert!(res.coherence.worst_ratio < 1e-12);
        for (i, &t) in g.points().iter().enumerate() {
            assert!((res.phi.at(i, 0) - (h(t) - h(0.0))).abs() < 1e-14);
        }
        assert!(res.certificate.holds);
    }

    #[test]
    fn young_integral_of_identity() {
        let g = dyadic(10);
        let xi = FnField::scalar_from_times(g.clone(), |s, t| s * (t - s));
        let omega = ControlFunction::elapsed_time(g.clone());
        let seq = dyadic_sequence(g, 10).unwrap();
        let res = sewing_integral(&xi, &omega, 2.0, 1.0, &seq).unwrap();
        assert_eq!(res.constant, 2.0);
        let totals = &res.totals[0];
        for (k, v) in totals.values.iter().enumerate() {
            let h = (-(k as f64)).exp2();
            assert!((v - (0.5 - 0.5 * h)).abs() < 1e-14);
        }
        assert!((totals.extrapolated.unwrap() - 0.5).abs() < 1e-14);
        assert!(res.certificate.holds);
        assert!(res.certificate.worst_ratio <= 0.25 + 1e-12);
    }

    #[test]
    fn incoherent_field_is_rejected() {
        let g = dyadic(4);
        let xi = FnField::scalar_from_times(g.clone(), |s, t| (t - s).sqrt());
        let omega = ControlFunction::elapsed_time(g.clone());
        let seq = dyadic_sequence(g, 4).unwrap();
        match sewing_integral(&xi, &omega, 2.0, 1.0, &seq) {
            Err(Error::PremiseFailed { ratio, .. }) => assert!(ratio > 1.0),
            other => panic!("{other:?}"),
        }
        let seq2 = dyadic_sequence(dyadic(4), 4).unwrap();
        let xi2 = FnField::scalar_from_times(dyadic(4), |s, t| t - s);
        let om2 = ControlFunction::elapsed_time(dyadic(4));
        assert!(matches!(
            sewing_integral(&xi2, &om2, 1.0, 1.0, &seq2),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn bracket_of_linear_path() {
        let g = dyadic(10);
        let x = SampledPath::scalar_fn(g.clone(), |t| t).unwrap();
        let seq = dyadic_sequence(g, 10).unwrap();
        let qv = quadratic_variation(&x, &seq).unwrap();
        for n in 0..=10 {
            let b = qv.bracket_at_level(n, 0, 0).unwrap();
            assert!((b.last()[0] - (-(n as f64)).exp2()).abs() < 1e-15);
        }
    }

    #[test]
    fn bracket_matches_truncated_partition_formula() {
        let g = dyadic(6);
        let x = sample_brownian(2, g.clone(), 2).unwrap();
        let seq = dyadic_sequence(g.clone(), 6).unwrap();
        let qv = quadratic_variation(&x, &seq).unwrap();
        for n in [1, 3, 6] {
            for t_idx in [0, 5, 17, 32, 64] {
                let direct: f64 = match seq.level(n).truncate_at(t_idx).unwrap() {
                    None => 0.0,
                    Some(p) => p
                        .intervals()
                        .map(|(a, b)| (x.at(b, 0) - x.at(a, 0)) * (x.at(b, 1) - x.at(a, 1)))
                        .sum(),
                };
                assert!((qv.value(n, t_idx, 0, 1) - direct).abs() < 1e-13);
                assert_eq!(qv.value(n, t_idx, 0, 1), qv.value(n, t_idx, 1, 0));
            }
        }
    }

    #[test]
    fn covariation_with_identity_derivative() {
        let g = dyadic(10);
        let x = sample_brownian(4, g.clone(), 2).unwrap();
        let seq = dyadic_sequence(g.clone(), 10).unwrap();
        let qv = quadratic_variation(&x, &seq).unwrap();
        let dec = ControlledDecomposition::new(
            x.clone(),
            x.clone(),
            MatrixPath::identity(g, 2).unwrap(),
            2.5,
            2.5,
        )
        .unwrap();
        for n in [2, 7, 10] {
            let (direct, via) = quadratic_covariation(&dec, &qv, n).unwrap();
            let diag: f64 = (0..2).map(|i| qv.value(n, x.len() - 1, i, i)).sum();
            assert!((direct - diag).abs() < 1e-12);
            assert!((direct - via).abs() < 1e-12);
        }
    }

    #[test]
    fn gamma_half_residual_is_area_error() {
        let g = dyadic(10);
        let x = sample_brownian(3, g.clone(), 2).unwrap();
        let y = SampledPath::from_fn(g.clone(), 2, |t, out| {
            out[0] = t;
            out[1] = t * t;
        })
        .unwrap();
        let seq = dyadic_sequence(g.clone(), 10).unwrap();
        let qv = quadratic_variation(&x, &seq).unwrap();
        let dec = ControlledDecomposition::new(
            x.clone(),
            y.clone(),
            MatrixPath::zeros(g, 2, 2).unwrap(),
            2.5,
            2.5,
        )
        .unwrap();
        let rows = gamma_integral_identity(&dec, &qv, 4..=10, 0.5).unwrap();
        let (_, a_fin) = sym_antisym(&y, &x, seq.finest(), 0.5).unwrap();
        for row in rows {
            let (_, a_n) = sym_antisym(&y, &x, seq.level(row.level), 0.5).unwrap();
            assert!((row.residual - 0.5 * (a_n - a_fin)).abs() < 1e-12);
        }
    }
}
