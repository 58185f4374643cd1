use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pathwise_cli::{run, CliError, ExperimentConfig, Origin, Settings};

/// Pathwise integration experiments on sampled paths; results are CSV.
#[derive(Parser)]
#[command(name = "pathwise", version)]
struct Cli {
    /// Key-value config file (`key = value` per line); flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Option<Sub>,
}

#[derive(Subcommand)]
enum Sub {
    /// Lévy area along dyadic levels.
    Levy(Flags),
    /// Gamma-Riemann sums of a path against itself or a mapped copy.
    Integrate(Flags),
    /// p-variation of the path restricted to each level.
    Variation(Flags),
    /// Fitted controlled-path remainders between components.
    ControlCheck(Flags),
    /// Quadratic variation brackets.
    Qv(Flags),
    /// Residual of the pathwise Itô formula.
    ItoCheck(Flags),
    /// Residual of the functional Itô formula for integral functionals.
    FunctionalIto(Flags),
    /// Sewing of X_s (X_t - X_s) with its certificate.
    Sewing(Flags),
}

/// Values are kept as text and validated together with the config file.
#[derive(Args, Default)]
struct Flags {
    #[arg(long)]
    seed: Option<String>,
    #[arg(long = "grid-log2")]
    grid_log2: Option<String>,
    /// Inclusive level range `a..b`.
    #[arg(long)]
    levels: Option<String>,
    /// brownian[:d] | lacunary[:alpha,m] | smooth:<t|t2|sin|circle> | composed:<identity|square|sin>
    #[arg(long)]
    path: Option<String>,
    /// power:k | half-norm | integral:<identity|half-square>[:<lebesgue|terminal>]
    #[arg(long)]
    functional: Option<String>,
    #[arg(long)]
    gamma: Option<String>,
    /// Output file; standard output when absent.
    #[arg(long)]
    out: Option<String>,
    #[arg(long)]
    alpha: Option<String>,
    #[arg(long)]
    m: Option<String>,
    #[arg(long)]
    p: Option<String>,
    #[arg(long)]
    q: Option<String>,
    /// Stopping time for functional-ito.
    #[arg(long)]
    t: Option<String>,
    #[arg(long)]
    theta: Option<String>,
    #[arg(long)]
    k: Option<String>,
    /// left | right | mid
    #[arg(long)]
    selector: Option<String>,
    /// time | pvar
    #[arg(long)]
    omega: Option<String>,
    /// identity | square | sin
    #[arg(long)]
    integrand: Option<String>,
}

impl Flags {
    fn into_settings(self, command: Option<&str>) -> Result<Settings, CliError> {
        let mut s = Settings::new();
        let pairs = [
            ("command", command.map(str::to_string)),
            ("seed", self.seed),
            ("grid-log2", self.grid_log2),
            ("levels", self.levels),
            ("path", self.path),
            ("functional", self.functional),
            ("gamma", self.gamma),
            ("out", self.out),
            ("alpha", self.alpha),
            ("m", self.m),
            ("p", self.p),
            ("q", self.q),
            ("t", self.t),
            ("theta", self.theta),
            ("k", self.k),
            ("selector", self.selector),
            ("omega", self.omega),
            ("integrand", self.integrand),
        ];
        for (key, value) in pairs {
            if let Some(v) = value {
                s.insert(key, v, Origin::Flag)?;
            }
        }
        Ok(s)
    }
}

fn split(sub: Option<Sub>) -> (Option<&'static str>, Flags) {
    match sub {
        None => (None, Flags::default()),
        Some(Sub::Levy(f)) => (Some("levy"), f),
        Some(Sub::Integrate(f)) => (Some("integrate"), f),
        Some(Sub::Variation(f)) => (Some("variation"), f),
        Some(Sub::ControlCheck(f)) => (Some("control-check"), f),
        Some(Sub::Qv(f)) => (Some("qv"), f),
        Some(Sub::ItoCheck(f)) => (Some("ito-check"), f),
        Some(Sub::FunctionalIto(f)) => (Some("functional-ito"), f),
        Some(Sub::Sewing(f)) => (Some("sewing"), f),
    }
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let file = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
                context: format!("reading {}", path.display()),
                source,
            })?;
            Settings::parse_file(&text)?
        }
        None => Settings::new(),
    };
    let (command, flags) = split(cli.command);
    let settings = file.overlay(flags.into_settings(command)?);
    let cfg = ExperimentConfig::from_settings(&settings)?;
    let csv = run(&cfg)?;
    match &cfg.out {
        Some(path) => std::fs::write(path, csv).map_err(|source| CliError::Io {
            context: format!("writing {}", path.display()),
            source,
        }),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
