//! Experiment configuration: raw key-value settings from flags and from a
//! config file, merged (flags win) and validated into [`ExperimentConfig`].

use std::collections::BTreeMap;
use std::fmt;
use std::ops::RangeInclusive;
use std::path::PathBuf;
use std::str::FromStr;

use pathwise::integration::Selector;

use crate::error::{CliError, Origin};

/// Every key a setting may use, spelled like its long flag.
pub const KEYS: &[&str] = &[
    "command",
    "seed",
    "grid-log2",
    "levels",
    "path",
    "functional",
    "gamma",
    "out",
    "alpha",
    "m",
    "p",
    "q",
    "t",
    "theta",
    "k",
    "selector",
    "omega",
    "integrand",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Levy,
    Integrate,
    Variation,
    ControlCheck,
    Qv,
    ItoCheck,
    FunctionalIto,
    Sewing,
}

impl Command {
    pub fn as_str(self) -> &'static str {
        match self {
            Command::Levy => "levy",
            Command::Integrate => "integrate",
            Command::Variation => "variation",
            Command::ControlCheck => "control-check",
            Command::Qv => "qv",
            Command::ItoCheck => "ito-check",
            Command::FunctionalIto => "functional-ito",
            Command::Sewing => "sewing",
        }
    }

    fn all() -> [Command; 8] {
        use Command::*;
        [
            Levy,
            Integrate,
            Variation,
            ControlCheck,
            Qv,
            ItoCheck,
            FunctionalIto,
            Sewing,
        ]
    }
}

impl FromStr for Command {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Command::all()
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown command `{s}`"))
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Deterministic smooth paths on `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Smooth {
    /// `t`
    Linear,
    /// `t^2`
    Square,
    /// `sin(2 pi t)`
    Sine,
    /// `(cos 2 pi t, sin 2 pi t)`
    Circle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MapName {
    Identity,
    Square,
    Sin,
}

impl FromStr for MapName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "identity" => Ok(MapName::Identity),
            "square" => Ok(MapName::Square),
            "sin" => Ok(MapName::Sin),
            _ => Err(format!(
                "unknown map `{s}` (expected identity, square or sin)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PathSpec {
    Brownian {
        dim: usize,
    },
    Lacunary {
        alpha: f64,
        m: u32,
    },
    Smooth(Smooth),
    /// `(B, f(B))` for a scalar Brownian sample `B`.
    Composed(MapName),
}

impl PathSpec {
    /// Lacunary paths live on `[-1, 1]`, the rest on `[0, 1]`.
    pub fn interval(&self) -> (f64, f64) {
        match self {
            PathSpec::Lacunary { .. } => (-1.0, 1.0),
            _ => (0.0, 1.0),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            PathSpec::Brownian { dim } => *dim,
            PathSpec::Lacunary { .. } | PathSpec::Composed(_) => 2,
            PathSpec::Smooth(Smooth::Circle) => 2,
            PathSpec::Smooth(_) => 1,
        }
    }
}

/// `brownian[:d]`, `lacunary[:alpha,m]`, `smooth:<t|t2|sin|circle>`, `composed:<map>`.
/// A bare `lacunary` takes `alpha` and `m` from the defaults passed in.
fn parse_path(s: &str, alpha: f64, m: u32) -> Result<PathSpec, String> {
    let (head, arg) = match s.split_once(':') {
        Some((h, a)) => (h, Some(a)),
        None => (s, None),
    };
    match (head, arg) {
        ("brownian", None) => Ok(PathSpec::Brownian { dim: 1 }),
        ("brownian", Some(d)) => {
            let dim: usize = d.parse().map_err(|_| format!("bad Brownian dimension `{d}`"))?;
            if dim == 0 || dim > 16 {
                return Err(format!("Brownian dimension must be in 1..=16, got {dim}"));
            }
            Ok(PathSpec::Brownian { dim })
        }
        ("lacunary", None) => lacunary(alpha, m),
        ("lacunary", Some(a)) => {
            let (al, mm) = a
                .split_once(',')
                .ok_or_else(|| format!("expected `lacunary:alpha,m`, got `{s}`"))?;
            let alpha = al.trim().parse().map_err(|_| format!("bad alpha `{al}`"))?;
            let m = mm.trim().parse().map_err(|_| format!("bad m `{mm}`"))?;
            lacunary(alpha, m)
        }
        ("smooth", Some(name)) => Ok(PathSpec::Smooth(match name {
            "t" => Smooth::Linear,
            "t2" => Smooth::Square,
            "sin" => Smooth::Sine,
            "circle" => Smooth::Circle,
            _ => return Err(format!("unknown smooth path `{name}` (expected t, t2, sin or circle)")),
        })),
        ("composed", Some(name)) => Ok(PathSpec::Composed(name.parse()?)),
        _ => Err(format!(
            "unknown path `{s}` (expected brownian[:d], lacunary[:alpha,m], smooth:<name> or composed:<map>)"
        )),
    }
}

fn lacunary(alpha: f64, m: u32) -> Result<PathSpec, String> {
    check_alpha(alpha)?;
    check_m(m)?;
    Ok(PathSpec::Lacunary { alpha, m })
}

fn check_alpha(alpha: f64) -> Result<(), String> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(format!("alpha must lie in (0, 1), got {alpha}"))
    }
}

fn check_m(m: u32) -> Result<(), String> {
    if (1..=60).contains(&m) {
        Ok(())
    } else {
        Err(format!("m must lie in 1..=60, got {m}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Integrand {
    Identity,
    HalfSquare,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeasureSpec {
    Lebesgue,
    /// Unit point mass at the end of the grid.
    Terminal,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FunctionalSpec {
    /// `x^k` on scalar paths.
    Power(u32),
    /// `|x|^2 / 2`.
    HalfNorm,
    /// `int g(s, X_s) mu(ds)`.
    Integral { g: Integrand, mu: MeasureSpec },
}

/// `power:k`, `half-norm`, `integral:<identity|half-square>[:<lebesgue|terminal>]`.
fn parse_functional(s: &str) -> Result<FunctionalSpec, String> {
    let parts: Vec<&str> = s.split(':').collect();
    match parts.as_slice() {
        ["power", k] => {
            let k: u32 = k.parse().map_err(|_| format!("bad power `{k}`"))?;
            if !(1..=8).contains(&k) {
                return Err(format!("power must lie in 1..=8, got {k}"));
            }
            Ok(FunctionalSpec::Power(k))
        }
        ["half-norm"] => Ok(FunctionalSpec::HalfNorm),
        ["integral", g, rest @ ..] => {
            let g = match *g {
                "identity" => Integrand::Identity,
                "half-square" => Integrand::HalfSquare,
                _ => {
                    return Err(format!(
                        "unknown integrand `{g}` (expected identity or half-square)"
                    ))
                }
            };
            let mu = match rest {
                [] | ["lebesgue"] => MeasureSpec::Lebesgue,
                ["terminal"] => MeasureSpec::Terminal,
                _ => {
                    return Err(format!(
                        "unknown measure in `{s}` (expected lebesgue or terminal)"
                    ))
                }
            };
            Ok(FunctionalSpec::Integral { g, mu })
        }
        _ => Err(format!(
            "unknown functional `{s}` (expected power:k, half-norm or integral:<g>[:<measure>])"
        )),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OmegaSpec {
    Elapsed,
    PVariation,
}

/// `a..b`, inclusive on both ends, or a single level `n`.
fn parse_levels(s: &str) -> Result<RangeInclusive<usize>, String> {
    let bad = || format!("expected `a..b` or a single level, got `{s}`");
    let (a, b) = match s.split_once("..") {
        Some((a, b)) => (a.trim(), b.trim().trim_start_matches('=')),
        None => (s.trim(), s.trim()),
    };
    let a: usize = a.parse().map_err(|_| bad())?;
    let b: usize = b.parse().map_err(|_| bad())?;
    if a > b {
        return Err(format!("empty level range `{s}`"));
    }
    Ok(a..=b)
}

/// One raw setting and where it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct RawValue {
    pub value: String,
    pub origin: Origin,
}

/// Unvalidated settings keyed by flag name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Settings {
    entries: BTreeMap<String, RawValue>,
}

impl Settings {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(
        &mut self,
        key: &str,
        value: impl Into<String>,
        origin: Origin,
    ) -> Result<(), CliError> {
        if !KEYS.contains(&key) {
            return Err(CliError::validation(origin, key, "unknown setting"));
        }
        self.entries.insert(
            key.to_string(),
            RawValue {
                value: value.into(),
                origin,
            },
        );
        Ok(())
    }

    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse_file(text: &str) -> Result<Self, CliError> {
        let mut s = Settings::new();
        for (n, line) in text.lines().enumerate() {
            let origin = Origin::Line(n + 1);
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::validation(origin.clone(), line, "expected `key = value`")
            })?;
            let key = key.trim().trim_start_matches("--").replace('_', "-");
            if s.entries.contains_key(&key) {
                return Err(CliError::validation(origin, &key, "set more than once"));
            }
            s.insert(&key, value.trim(), origin)?;
        }
        Ok(s)
    }

    /// Entries of `over` replace those of `self`.
    pub fn overlay(mut self, over: Settings) -> Self {
        self.entries.extend(over.entries);
        self
    }

    pub fn get(&self, key: &str) -> Option<&RawValue> {
        self.entries.get(key)
    }

    fn parse<T>(
        &self,
        key: &str,
        default: T,
        f: impl Fn(&str) -> Result<T, String>,
    ) -> Result<T, CliError> {
        match self.get(key) {
            None => Ok(default),
            Some(raw) => {
                f(&raw.value).map_err(|m| CliError::validation(raw.origin.clone(), key, m))
            }
        }
    }

    fn number<T: FromStr>(&self, key: &str, default: T) -> Result<T, CliError> {
        self.parse(key, default, |v| {
            v.parse()
                .map_err(|_| format!("`{v}` is not a valid number"))
        })
    }

    fn fail(&self, key: &str, msg: impl Into<String>) -> CliError {
        let origin = self
            .get(key)
            .map(|r| r.origin.clone())
            .unwrap_or(Origin::Default);
        CliError::validation(origin, key, msg)
    }
}

/// A validated experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub command: Command,
    pub seed: u64,
    pub grid_log2: u32,
    pub levels: RangeInclusive<usize>,
    pub path: PathSpec,
    pub functional: FunctionalSpec,
    pub gamma: f64,
    pub out: Option<PathBuf>,
    pub p: f64,
    pub q: f64,
    /// Stopping time for `functional-ito`.
    pub t: f64,
    pub theta: f64,
    pub k: f64,
    pub selector: Selector,
    pub omega: OmegaSpec,
    /// Map applied to a scalar path to form the integrand of `integrate`.
    pub integrand: MapName,
}

pub const MAX_GRID_LOG2: u32 = 24;

impl ExperimentConfig {
    pub fn from_settings(s: &Settings) -> Result<Self, CliError> {
        let command = match s.get("command") {
            Some(raw) => raw
                .value
                .parse()
                .map_err(|m: String| CliError::validation(raw.origin.clone(), "command", m))?,
            None => {
                return Err(CliError::validation(
                    Origin::Default,
                    "command",
                    "no command given; pass a subcommand or set `command` in the config file",
                ))
            }
        };

        let grid_log2: u32 =
            s.number("grid-log2", if command == Command::Levy { 16 } else { 12 })?;
        if !(1..=MAX_GRID_LOG2).contains(&grid_log2) {
            return Err(s.fail(
                "grid-log2",
                format!("must lie in 1..={MAX_GRID_LOG2}, got {grid_log2}"),
            ));
        }
        let g = grid_log2 as usize;
        let default_levels = if command == Command::Levy {
            g..=g
        } else {
            1..=g
        };
        let levels = s.parse("levels", default_levels, parse_levels)?;
        if *levels.start() < 1 || *levels.end() > g {
            return Err(s.fail(
                "levels",
                format!("{}..{} is not within 1..{g}", levels.start(), levels.end()),
            ));
        }

        let alpha: f64 = s.number("alpha", 0.5)?;
        let m: u32 = s.number("m", 4)?;
        if s.get("alpha").is_some() {
            check_alpha(alpha).map_err(|e| s.fail("alpha", e))?;
        }
        if s.get("m").is_some() {
            check_m(m).map_err(|e| s.fail("m", e))?;
        }
        let default_path = match command {
            Command::Levy => PathSpec::Lacunary { alpha, m },
            Command::ControlCheck => PathSpec::Composed(MapName::Sin),
            Command::Sewing => PathSpec::Smooth(Smooth::Linear),
            _ => PathSpec::Brownian { dim: 1 },
        };
        let path = s.parse("path", default_path, |v| parse_path(v, alpha, m))?;

        let default_functional = match command {
            Command::FunctionalIto => FunctionalSpec::Integral {
                g: Integrand::HalfSquare,
                mu: MeasureSpec::Lebesgue,
            },
            _ => FunctionalSpec::Power(3),
        };
        let functional = s.parse("functional", default_functional, parse_functional)?;

        let gamma: f64 = s.number("gamma", 0.0)?;
        if !(0.0..=1.0).contains(&gamma) {
            return Err(s.fail("gamma", format!("must lie in [0, 1], got {gamma}")));
        }
        let p: f64 = s.number("p", 2.5)?;
        let q: f64 = s.number("q", p)?;
        for (key, v) in [("p", p), ("q", q)] {
            if !(v >= 1.0 && v.is_finite()) {
                return Err(s.fail(key, format!("must be a finite exponent >= 1, got {v}")));
            }
        }
        let (start, end) = path.interval();
        let t: f64 = s.number("t", end)?;
        if !(start..=end).contains(&t) {
            return Err(s.fail("t", format!("must lie in [{start}, {end}], got {t}")));
        }
        let theta: f64 = s.number("theta", 2.0)?;
        if !(theta > 1.0 && theta.is_finite()) {
            return Err(s.fail("theta", format!("must exceed 1, got {theta}")));
        }
        let k: f64 = s.number("k", 1.0)?;
        if !(k >= 0.0 && k.is_finite()) {
            return Err(s.fail("k", format!("must be finite and nonnegative, got {k}")));
        }
        let selector = s.parse("selector", Selector::Left, |v| {
            v.parse().map_err(|e: pathwise::Error| e.to_string())
        })?;
        let omega = s.parse("omega", OmegaSpec::Elapsed, |v| match v {
            "time" => Ok(OmegaSpec::Elapsed),
            "pvar" => Ok(OmegaSpec::PVariation),
            _ => Err(format!("unknown control `{v}` (expected time or pvar)")),
        })?;
        let integrand = s.parse("integrand", MapName::Identity, |v| v.parse())?;
        let seed: u64 = s.number("seed", 0)?;
        let out = s.get("out").map(|r| PathBuf::from(&r.value));

        let cfg = ExperimentConfig {
            command,
            seed,
            grid_log2,
            levels,
            path,
            functional,
            gamma,
            out,
            p,
            q,
            t,
            theta,
            k,
            selector,
            omega,
            integrand,
        };
        cfg.check_shapes(s)?;
        Ok(cfg)
    }

    /// Dimension requirements of each command.
    fn check_shapes(&self, s: &Settings) -> Result<(), CliError> {
        let d = self.path.dim();
        match self.command {
            Command::Levy | Command::ControlCheck if d < 2 => Err(s.fail(
                "path",
                format!("{} needs a path of dimension >= 2", self.command),
            )),
            Command::FunctionalIto | Command::Sewing if d != 1 => {
                Err(s.fail("path", format!("{} needs a scalar path", self.command)))
            }
            Command::FunctionalIto
                if !matches!(self.functional, FunctionalSpec::Integral { .. }) =>
            {
                Err(s.fail("functional", "functional-ito needs an integral functional"))
            }
            Command::ItoCheck if matches!(self.functional, FunctionalSpec::Integral { .. }) => {
                Err(s.fail("functional", "ito-check needs power:k or half-norm"))
            }
            Command::ItoCheck if matches!(self.functional, FunctionalSpec::Power(_)) && d != 1 => {
                Err(s.fail("functional", "power:k applies to scalar paths only"))
            }
            Command::Integrate if self.integrand != MapName::Identity && d != 1 => {
                Err(s.fail("integrand", "a mapped integrand needs a scalar path"))
            }
            _ => Ok(()),
        }
    }
}
