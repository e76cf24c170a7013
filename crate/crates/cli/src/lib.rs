//! Command-line front end: every subcommand writes CSV files and a
//! `manifest.json` into the output directory.
//!
//! Exit codes: 0 success, 1 invalid input, 2 numerical failure, 3 I/O
//! failure. `FHN_THREADS` sets the worker thread count.

pub mod commands;
pub mod config;
pub mod output;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use pwl_fhn::model::Nullcline;

use config::RunConfig;

/// Failure classes, one per non-zero exit code.
#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    Validation(String),
    Numerical(String),
    Io(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Numerical(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "invalid input: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
            CliError::Io(m) => write!(f, "i/o failure: {m}"),
        }
    }
}

impl From<pwl_fhn::Error> for CliError {
    fn from(e: pwl_fhn::Error) -> Self {
        match e {
            pwl_fhn::Error::Precondition(_) | pwl_fhn::Error::ParallelNullclines(_) => {
                CliError::Validation(e.to_string())
            }
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "pwl-fhn", version, about = "Stochastic piecewise-linear FitzHugh-Nagumo model")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub flags: Flags,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Check the parameter set.
    Validate,
    /// Equilibrium and orbit amplitude against lambda.
    Bifurcation,
    /// Canard proxies against epsilon.
    TwoParam,
    /// Exit density from the funnel point to the second section.
    ExitDist,
    /// Limiting section densities and oscillation fractions.
    Stationary,
    /// Mixed-mode region in the (lambda, D) plane.
    MmoRegion,
    /// Boundary slopes across a parameter sweep.
    Slopes,
    /// One noisy trajectory.
    Simulate,
    /// Analytic against simulated oscillation fractions.
    Compare,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Validate => "validate",
            Command::Bifurcation => "bifurcation",
            Command::TwoParam => "two-param",
            Command::ExitDist => "exit-dist",
            Command::Stationary => "stationary",
            Command::MmoRegion => "mmo-region",
            Command::Slopes => "slopes",
            Command::Simulate => "simulate",
            Command::Compare => "compare",
        }
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub lambda_min: Option<f64>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub lambda_max: Option<f64>,
    #[arg(long, global = true)]
    pub d_min: Option<f64>,
    #[arg(long, global = true)]
    pub d_max: Option<f64>,
    /// Points per grid axis.
    #[arg(long, global = true)]
    pub grid: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub t_end: Option<f64>,
    #[arg(long, global = true)]
    pub dt: Option<f64>,
    #[arg(long, global = true, value_parser = parse_model)]
    pub model: Option<Nullcline>,
    /// Fraction both oscillation sizes must reach in the mixed-mode region.
    #[arg(long, global = true)]
    pub threshold: Option<f64>,
    #[arg(long, global = true)]
    pub include_diffusion: bool,
}

fn parse_model(s: &str) -> Result<Nullcline, String> {
    match s {
        "pwl" => Ok(Nullcline::Pwl),
        "cubic" => Ok(Nullcline::Cubic),
        _ => Err(format!("unknown model {s:?}, expected pwl or cubic")),
    }
}

impl Flags {
    /// Configuration from the file, if any, with the flags applied on top.
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut c = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(o) = &self.out {
            c.out = o.to_string_lossy().into_owned();
        }
        macro_rules! set {
            ($($flag:ident => $field:ident),*) => {
                $(if let Some(v) = self.$flag { c.$field = Some(v); })*
            };
        }
        set!(lambda_min => lambda_min, lambda_max => lambda_max, d_min => d_min, d_max => d_max,
             grid => grid, t_end => t_end);
        if let Some(s) = self.seed {
            c.seed = s;
        }
        if let Some(dt) = self.dt {
            c.dt = dt;
        }
        if let Some(m) = self.model {
            c.model = m;
        }
        if let Some(t) = self.threshold {
            c.threshold = t;
        }
        if self.include_diffusion {
            c.include_diffusion = true;
        }
        Ok(c)
    }
}

fn init_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("FHN_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| CliError::Validation(format!("FHN_THREADS must be a positive integer, got {raw:?}")))?;
    if n == 0 {
        return Err(CliError::Validation("FHN_THREADS must be positive".into()));
    }
    // a second call in the same process keeps the first pool
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Parses `args` (program name first), runs the command and returns the
/// exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let result = init_threads()
        .and_then(|_| cli.flags.resolve())
        .and_then(|cfg| commands::execute(cli.command, &cfg));
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("pwl-fhn {}: {e}", cli.command.name());
            e.code()
        }
    }
}
