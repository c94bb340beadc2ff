//! Command-line front end for the mfsmp toolkit.
//!
//! All numerics live in the `mfsmp` library; this crate parses arguments,
//! orchestrates runs and serializes their results.

pub mod commands;
pub mod example11;
pub mod output;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mfsmp::problem::{load_fixture, Fixture};
use mfsmp::{fixtures, Error};
use std::ffi::OsString;
use std::path::{Path, PathBuf};

pub use example11::{Claim, Example11Summary, OracleRow};

/// Stable process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const USAGE: i32 = 1;
    pub const BLOW_UP: i32 = 2;
    pub const FIRST_ORDER: i32 = 3;
    pub const SECOND_ORDER: i32 = 4;
    pub const SOLVER: i32 = 5;
    pub const ORDERS: i32 = 6;
    pub const EXPANSION: i32 = 7;
}

#[derive(Debug, Parser)]
#[command(
    name = "mfsmp",
    version,
    about = "Mean-field stochastic maximum principle toolkit"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate the particle system under the fixture's candidate control.
    Simulate(CommonArgs),
    /// Solve both adjoints and check the first- and second-order conditions.
    Check(CommonArgs),
    /// Spike-variation order study.
    Orders(OrdersArgs),
    /// Cost expansion audit along a spike-density ladder.
    Expansion(CommonArgs),
    /// Reproduce the singular example with pinned settings.
    Example11(Example11Args),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Doc,
    Both,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Fixture file, or the name of an embedded fixture.
    #[arg(long, default_value = "example11")]
    pub fixture: String,
    #[arg(long)]
    pub particles: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated spike densities, strictly decreasing in (0, 1).
    #[arg(long, allow_hyphen_values = true)]
    pub rho_ladder: Option<String>,
    /// Comma-separated control points; coordinates of one point joined by ':'.
    #[arg(long, allow_hyphen_values = true)]
    pub control_grid: Option<String>,
    /// Absolute tolerance for the singular region (default: 3 standard errors).
    #[arg(long)]
    pub tol_sing: Option<f64>,
    #[arg(long, default_value = "mfsmp-out")]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "both")]
    pub format: Format,
    /// Cap on worker threads.
    #[arg(long, env = "MFSMP_THREADS")]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct OrdersArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Adds `c * d^3` to the second-variation estimate (negative control).
    #[arg(long, hide = true)]
    pub x2_injection: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct Example11Args {
    #[arg(long)]
    pub particles: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, allow_hyphen_values = true)]
    pub rho_ladder: Option<String>,
    #[arg(long, default_value = "mfsmp-out")]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "both")]
    pub format: Format,
    #[arg(long, env = "MFSMP_THREADS")]
    pub threads: Option<usize>,
    /// Reduced-scale run (100 particles) with widened tolerances.
    #[arg(long)]
    pub smoke: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommandKind {
    Simulate,
    Check,
    Orders,
    Expansion,
    Example11,
}

/// Validated settings of one invocation.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub command: CommandKind,
    pub fixture: String,
    pub particles: usize,
    pub steps: usize,
    pub seed: u64,
    pub ladder: Vec<f64>,
    pub control_grid: Option<Vec<Vec<f64>>>,
    pub tol_sing: Option<f64>,
    pub out: PathBuf,
    pub csv: bool,
    pub doc: bool,
    pub x2_injection: Option<f64>,
    pub smoke: bool,
}

pub const DEFAULT_PARTICLES: usize = 10_000;
pub const DEFAULT_STEPS: usize = 100;
pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_LADDER: [f64; 4] = [0.4, 0.2, 0.1, 0.05];
pub const SMOKE_PARTICLES: usize = 100;

/// A failure with the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    pub fn usage(msg: impl Into<String>) -> Self {
        Failure {
            code: exit::USAGE,
            message: msg.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::BlowUp { .. } => exit::BLOW_UP,
            Error::RankDeficient { .. } | Error::IllConditioned { .. } | Error::NonFinite(_) => {
                exit::SOLVER
            }
            _ => exit::USAGE,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::usage(format!("i/o error: {e}"))
    }
}

pub fn parse_ladder(text: &str) -> Result<Vec<f64>, Failure> {
    let ladder = text
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| Failure::usage(format!("bad --rho-ladder `{text}`: {e}")))?;
    validate_ladder(&ladder)?;
    Ok(ladder)
}

fn validate_ladder(ladder: &[f64]) -> Result<(), Failure> {
    if ladder.iter().any(|&r| !(r > 0.0 && r < 1.0)) {
        return Err(Failure::usage("ladder values must lie in (0, 1)"));
    }
    if ladder.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Failure::usage("ladder values must be strictly decreasing"));
    }
    Ok(())
}

pub fn parse_control_grid(text: &str) -> Result<Vec<Vec<f64>>, Failure> {
    text.split(',')
        .map(|point| {
            point
                .split(':')
                .map(|c| c.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| Failure::usage(format!("bad --control-grid `{text}`: {e}")))
        })
        .collect()
}

impl RunConfig {
    fn from_common(command: CommandKind, a: &CommonArgs) -> Result<Self, Failure> {
        let cfg = RunConfig {
            command,
            fixture: a.fixture.clone(),
            particles: a.particles.unwrap_or(DEFAULT_PARTICLES),
            steps: a.steps.unwrap_or(DEFAULT_STEPS),
            seed: a.seed.unwrap_or(DEFAULT_SEED),
            ladder: match &a.rho_ladder {
                Some(t) => parse_ladder(t)?,
                None => DEFAULT_LADDER.to_vec(),
            },
            control_grid: a
                .control_grid
                .as_deref()
                .map(parse_control_grid)
                .transpose()?,
            tol_sing: a.tol_sing,
            out: a.out.clone(),
            csv: a.format != Format::Doc,
            doc: a.format != Format::Csv,
            x2_injection: None,
            smoke: false,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn from_example11(a: &Example11Args) -> Result<Self, Failure> {
        let default_n = if a.smoke {
            SMOKE_PARTICLES
        } else {
            DEFAULT_PARTICLES
        };
        let cfg = RunConfig {
            command: CommandKind::Example11,
            fixture: "example11".into(),
            particles: a.particles.unwrap_or(default_n),
            steps: a.steps.unwrap_or(DEFAULT_STEPS),
            seed: a.seed.unwrap_or(DEFAULT_SEED),
            ladder: match &a.rho_ladder {
                Some(t) => parse_ladder(t)?,
                None => DEFAULT_LADDER.to_vec(),
            },
            control_grid: None,
            tol_sing: None,
            out: a.out.clone(),
            csv: a.format != Format::Doc,
            doc: a.format != Format::Csv,
            x2_injection: None,
            smoke: a.smoke,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), Failure> {
        if self.particles < 2 {
            return Err(Failure::usage("--particles must be at least 2"));
        }
        if self.steps < 2 {
            return Err(Failure::usage("--steps must be at least 2"));
        }
        validate_ladder(&self.ladder)?;
        if let Some(t) = self.tol_sing {
            if !(t >= 0.0 && t.is_finite()) {
                return Err(Failure::usage(
                    "--tol-sing must be a finite nonnegative number",
                ));
            }
        }
        Ok(())
    }

    /// Loads the fixture from a file when the path exists, else by name.
    pub fn load_fixture(&self) -> Result<Fixture, Failure> {
        let path = Path::new(&self.fixture);
        if path.is_file() {
            return Ok(load_fixture(path)?);
        }
        if fixtures::source(&self.fixture).is_some() {
            return Ok(fixtures::load(&self.fixture)?);
        }
        Err(Failure::usage(format!(
            "cannot read fixture `{}` (not a file and not one of: {})",
            self.fixture,
            fixtures::names().collect::<Vec<_>>().join(", ")
        )))
    }
}

fn configure_threads(threads: Option<usize>) -> Result<(), Failure> {
    if let Some(k) = threads {
        if k == 0 {
            return Err(Failure::usage("--threads must be positive"));
        }
        // The global pool can only be built once per process; later calls
        // keep the first setting.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global();
    }
    Ok(())
}

/// Parses `args` (including the program name), runs the command and returns
/// the exit code. Human-readable output goes to `stdout`.
pub fn run<I, T>(args: I, stdout: &mut dyn std::io::Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() {
                exit::USAGE
            } else {
                exit::OK
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli, stdout) {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

fn dispatch(cli: &Cli, stdout: &mut dyn std::io::Write) -> Result<i32, Failure> {
    match &cli.command {
        Command::Simulate(a) => {
            configure_threads(a.threads)?;
            commands::simulate(&RunConfig::from_common(CommandKind::Simulate, a)?, stdout)
        }
        Command::Check(a) => {
            configure_threads(a.threads)?;
            commands::check(&RunConfig::from_common(CommandKind::Check, a)?, stdout)
        }
        Command::Orders(a) => {
            configure_threads(a.common.threads)?;
            let mut cfg = RunConfig::from_common(CommandKind::Orders, &a.common)?;
            cfg.x2_injection = a.x2_injection;
            commands::orders(&cfg, stdout)
        }
        Command::Expansion(a) => {
            configure_threads(a.threads)?;
            commands::expansion(&RunConfig::from_common(CommandKind::Expansion, a)?, stdout)
        }
        Command::Example11(a) => {
            configure_threads(a.threads)?;
            example11::run(&RunConfig::from_example11(a)?, stdout)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ladder_parsing() {
        assert_eq!(parse_ladder("0.4,0.2, 0.1").unwrap(), vec![0.4, 0.2, 0.1]);
        assert!(parse_ladder("0.2,0.4").is_err());
        assert!(parse_ladder("1.0,0.5").is_err());
        assert!(parse_ladder("a").is_err());
    }

    #[test]
    fn control_grid_parsing() {
        assert_eq!(
            parse_control_grid("-1,0,1").unwrap(),
            vec![vec![-1.0], vec![0.0], vec![1.0]]
        );
        assert_eq!(
            parse_control_grid("1:0,0:-1").unwrap(),
            vec![vec![1.0, 0.0], vec![0.0, -1.0]]
        );
        assert!(parse_control_grid("1,,2").is_err());
    }

    #[test]
    fn error_codes() {
        assert_eq!(
            Failure::from(Error::BlowUp {
                step: 1,
                particle: 0
            })
            .code,
            exit::BLOW_UP
        );
        let rank = Error::RankDeficient {
            step: 0,
            rank: 1,
            features: 3,
        };
        assert_eq!(Failure::from(rank).code, exit::SOLVER);
        assert_eq!(Failure::from(Error::Config("x".into())).code, exit::USAGE);
    }

    #[test]
    fn config_validation() {
        let cli = Cli::try_parse_from(["mfsmp", "simulate", "--particles", "1"]).unwrap();
        let Command::Simulate(a) = &cli.command else {
            panic!()
        };
        assert!(RunConfig::from_common(CommandKind::Simulate, a).is_err());
        let cli = Cli::try_parse_from(["mfsmp", "check", "--control-grid", "-1,1"]).unwrap();
        let Command::Check(a) = &cli.command else {
            panic!()
        };
        let cfg = RunConfig::from_common(CommandKind::Check, a).unwrap();
        assert_eq!(cfg.control_grid, Some(vec![vec![-1.0], vec![1.0]]));
        assert!(cfg.csv && cfg.doc);
    }
}
