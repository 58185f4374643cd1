//! Experiment runner behind the `pathwise` binary. Every command turns a
//! validated [`ExperimentConfig`] into a CSV table.

pub mod config;
pub mod error;

use std::fmt::Write as _;
use std::sync::Arc;

use pathwise::control::{self_control_across_levels, Direction, FitOptions};
use pathwise::functional::{
    follmer_ito_residual, functional_ito_residual, integral_functional, SignedMeasure1D,
    SmoothField, SpaceTimeMap,
};
use pathwise::integration::{
    integrate_sequence, levy_area_sequence, quadratic_variation, sewing_integral,
};
use pathwise::paths::{compose, lacunary_levy_area, lacunary_pair, sample_brownian, ScalarMap};
use pathwise::variation::{
    control_from_pvariation, increments, p_variation_total, ControlFunction, FnField,
};
use pathwise::{dyadic_sequence, PartitionSequence, SampledPath, TimeGrid};

pub use config::{Command, ExperimentConfig, Settings};
pub use error::{CliError, Origin};

/// Accumulates CSV rows; floats use the shortest round-trip representation.
struct Table {
    out: String,
}

impl Table {
    fn new(header: &[&str]) -> Self {
        let mut out = header.join(",");
        out.push('\n');
        Self { out }
    }

    fn row(&mut self, cells: &[Cell]) {
        let line: Vec<String> = cells.iter().map(Cell::render).collect();
        let _ = writeln!(self.out, "{}", line.join(","));
    }
}

enum Cell {
    Int(u64),
    Float(f64),
    Text(&'static str),
    Bool(bool),
    Empty,
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Float(v) => format!("{v:?}"),
            Cell::Text(s) => s.to_string(),
            Cell::Bool(b) => b.to_string(),
            Cell::Empty => String::new(),
        }
    }
}

use Cell::{Bool, Empty, Float, Int, Text};

fn grid(cfg: &ExperimentConfig) -> Result<Arc<TimeGrid>, CliError> {
    let (a, b) = cfg.path.interval();
    Ok(Arc::new(TimeGrid::dyadic(a, b, cfg.grid_log2)?))
}

fn map(name: config::MapName) -> ScalarMap {
    match name {
        config::MapName::Identity => ScalarMap::identity(),
        config::MapName::Square => ScalarMap::square(),
        config::MapName::Sin => ScalarMap::sin(),
    }
}

fn build_path(cfg: &ExperimentConfig, g: &Arc<TimeGrid>) -> Result<SampledPath, CliError> {
    use config::{PathSpec, Smooth};
    use std::f64::consts::TAU;
    let path = match cfg.path {
        PathSpec::Brownian { dim } => sample_brownian(cfg.seed, g.clone(), dim)?,
        PathSpec::Lacunary { alpha, m } => lacunary_pair(alpha, m, g.clone())?,
        PathSpec::Smooth(Smooth::Linear) => SampledPath::scalar_fn(g.clone(), |t| t)?,
        PathSpec::Smooth(Smooth::Square) => SampledPath::scalar_fn(g.clone(), |t| t * t)?,
        PathSpec::Smooth(Smooth::Sine) => SampledPath::scalar_fn(g.clone(), |t| (TAU * t).sin())?,
        PathSpec::Smooth(Smooth::Circle) => SampledPath::from_fn(g.clone(), 2, |t, out| {
            out[0] = (TAU * t).cos();
            out[1] = (TAU * t).sin();
        })?,
        PathSpec::Composed(name) => {
            let b = sample_brownian(cfg.seed, g.clone(), 1)?;
            let fb = compose(&map(name), &b)?;
            SampledPath::stack(&[b, fb])?
        }
    };
    Ok(path)
}

fn setup(
    cfg: &ExperimentConfig,
) -> Result<(Arc<TimeGrid>, SampledPath, PartitionSequence), CliError> {
    let g = grid(cfg)?;
    let x = build_path(cfg, &g)?;
    let seq = dyadic_sequence(g.clone(), cfg.grid_log2 as usize)?;
    Ok((g, x, seq))
}

fn smooth_field(spec: config::FunctionalSpec, dim: usize) -> Result<SmoothField, CliError> {
    match spec {
        config::FunctionalSpec::Power(k) => Ok(SmoothField::monomial(1.0, k)?),
        config::FunctionalSpec::HalfNorm => Ok(SmoothField::half_norm_squared(dim)?),
        config::FunctionalSpec::Integral { .. } => unreachable!("rejected during validation"),
    }
}

/// Runs the experiment and returns the CSV text.
pub fn run(cfg: &ExperimentConfig) -> Result<String, CliError> {
    let (g, x, seq) = setup(cfg)?;
    let levels = cfg.levels.clone();
    let table = match cfg.command {
        Command::Levy => {
            let seq_res = levy_area_sequence(&x, &seq, levels, cfg.selector)?;
            let predicted = match cfg.path {
                config::PathSpec::Lacunary { alpha, m } => Some(lacunary_levy_area(alpha, m)),
                _ => None,
            };
            let mut t = Table::new(&["level", "mesh", "area_12", "predicted", "rel_err"]);
            let area = seq_res.entry(0, 1)?;
            for ((&n, &mesh), &v) in area.levels.iter().zip(&area.meshes).zip(&area.values) {
                let (p, e) = match predicted {
                    Some(p) => (Float(p), Float(((v - p) / p).abs())),
                    None => (Empty, Empty),
                };
                t.row(&[Int(n as u64), Float(mesh), Float(v), p, e]);
            }
            t
        }
        Command::Integrate => {
            let y = if x.dim() == 1 {
                compose(&map(cfg.integrand), &x)?
            } else {
                x.clone()
            };
            let r = integrate_sequence(&y, &x, &seq, levels, cfg.gamma)?;
            let mut t = Table::new(&["level", "mesh", "value"]);
            for ((&n, &mesh), &v) in r.levels.iter().zip(&r.meshes).zip(&r.values) {
                t.row(&[Int(n as u64), Float(mesh), Float(v)]);
            }
            t
        }
        Command::Variation => {
            let mut t = Table::new(&["level", "points", "p", "variation"]);
            for n in levels {
                let coarse = x.restrict(seq.get(n)?)?;
                let v = p_variation_total(&increments(&coarse), cfg.p)?;
                t.row(&[
                    Int(n as u64),
                    Int(coarse.len() as u64),
                    Float(cfg.p),
                    Float(v),
                ]);
            }
            t
        }
        Command::ControlCheck => {
            let rows = self_control_across_levels(
                &x,
                &seq,
                levels,
                cfg.p,
                cfg.q,
                FitOptions::default(),
                |_, _| Direction::JByI,
            )?;
            let mut t = Table::new(&[
                "level",
                "i",
                "j",
                "direction",
                "remainder_r_norm",
                "y_prime_q_norm",
                "theta",
                "admissible",
            ]);
            for (n, reports) in rows {
                for r in reports {
                    t.row(&[
                        Int(n as u64),
                        Int(r.i as u64),
                        Int(r.j as u64),
                        Text(r.direction.as_str()),
                        Float(r.report.remainder_r_norm),
                        Float(r.report.y_prime_q_norm),
                        Float(r.report.theta),
                        Bool(r.report.admissible),
                    ]);
                }
            }
            t
        }
        Command::Qv => {
            let qv = quadratic_variation(&x, &seq)?;
            let last = x.len() - 1;
            let mut t = Table::new(&[
                "level",
                "mesh",
                "component",
                "bracket_end",
                "sup_abs_minus_elapsed",
            ]);
            for n in levels {
                for c in 0..x.dim() {
                    let sup = (0..x.len())
                        .map(|i| (qv.value(n, i, c, c) - (g.time(i) - g.start())).abs())
                        .fold(0.0, f64::max);
                    t.row(&[
                        Int(n as u64),
                        Float(seq.level(n).mesh()),
                        Int(c as u64),
                        Float(qv.value(n, last, c, c)),
                        Float(sup),
                    ]);
                }
            }
            t
        }
        Command::ItoCheck => {
            let f = smooth_field(cfg.functional, x.dim())?;
            let rows = follmer_ito_residual(&f, &x, &seq, levels, cfg.gamma)?;
            let mut t = Table::new(&["level", "mesh", "residual"]);
            for r in rows {
                t.row(&[
                    Int(r.level as u64),
                    Float(seq.level(r.level).mesh()),
                    Float(r.residual),
                ]);
            }
            t
        }
        Command::FunctionalIto => {
            let config::FunctionalSpec::Integral { g: integrand, mu } = cfg.functional else {
                unreachable!("rejected during validation")
            };
            let gmap = match integrand {
                config::Integrand::Identity => SpaceTimeMap::identity(),
                config::Integrand::HalfSquare => SpaceTimeMap::half_square(),
            };
            let measure = match mu {
                config::MeasureSpec::Lebesgue => SignedMeasure1D::lebesgue(g.clone()),
                config::MeasureSpec::Terminal => SignedMeasure1D::dirac(g.clone(), g.end(), 1.0)?,
            };
            let f = integral_functional(gmap, measure);
            let rows = functional_ito_residual(&f, &x, &seq, levels, cfg.t)?;
            let mut t = Table::new(&["level", "mesh", "lhs", "rhs", "residual"]);
            for r in rows {
                t.row(&[
                    Int(r.level as u64),
                    Float(seq.level(r.level).mesh()),
                    Float(r.lhs),
                    Float(r.rhs),
                    Float(r.residual),
                ]);
            }
            t
        }
        Command::Sewing => {
            // Xi(s, t) = X_s (X_t - X_s), the germ of the integral of X against itself
            let xv = x.clone();
            let xi = FnField::from_indices(g.clone(), 1, move |i, j, out: &mut [f64]| {
                out[0] = xv.at(i, 0) * (xv.at(j, 0) - xv.at(i, 0))
            });
            let omega = match cfg.omega {
                config::OmegaSpec::Elapsed => ControlFunction::elapsed_time(g.clone()),
                config::OmegaSpec::PVariation => control_from_pvariation(&x, cfg.p)?,
            };
            let res = sewing_integral(&xi, &omega, cfg.theta, cfg.k, &seq)?;
            let totals = &res.totals[0];
            let mut t = Table::new(&[
                "level",
                "mesh",
                "phi_end",
                "phi_end_extrapolated",
                "certificate_ratio",
                "certificate_holds",
            ]);
            for ((&n, &mesh), &v) in totals.levels.iter().zip(&totals.meshes).zip(&totals.values) {
                if !levels.contains(&n) {
                    continue;
                }
                t.row(&[
                    Int(n as u64),
                    Float(mesh),
                    Float(v),
                    totals.extrapolated.map_or(Empty, Float),
                    Float(res.certificate.worst_ratio),
                    Bool(res.certificate.holds),
                ]);
            }
            t
        }
    };
    Ok(table.out)
}
