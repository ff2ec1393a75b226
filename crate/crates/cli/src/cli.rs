use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use mailbox_core::stationary::Method;

use crate::commands::{self, Outcome};
use crate::config::{Format, RunConfig};
use crate::exit;
use crate::selftest;

#[derive(Debug, Parser)]
#[command(name = "mailbox", version, about = "Simulate the priority inbox and its near-critical limit shape")]
pub struct Cli {
    /// TOML config file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Global seed. Defaults to the config file, then $MAILBOX_SEED.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Significance level for pass/fail verdicts.
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Export one trajectory as JSON lines or CSV.
    Simulate(SimulateArgs),
    /// Sample the stationary queue length and test it against (1-λ)λ^n.
    Stationary(StationaryArgs),
    /// Sample rescaled shapes H^ε_s = ε N^{1-2εs}.
    Shape(ShapeArgs),
    /// Sample the Brownian limit shape, its hull and derivative jumps.
    Limit(LimitArgs),
    /// KS comparison of H^ε_s against the limit H_s.
    Compare(CompareArgs),
    /// Run the acceptance suite; exits 1 if any criterion fails.
    Selftest(SelftestArgs),
    /// Print the effective configuration as TOML.
    Config,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub horizon: Option<f64>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

#[derive(Debug, Args)]
pub struct StationaryArgs {
    /// Comma-separated: exact, forward, backward.
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<Method>>,
    #[arg(long, value_delimiter = ',')]
    pub lambda: Option<Vec<f64>>,
    /// Shorthand for λ = 1 - δ.
    #[arg(long, value_delimiter = ',', conflicts_with = "lambda")]
    pub delta: Option<Vec<f64>>,
    #[arg(short, long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub burn_in: Option<f64>,
    #[arg(long)]
    pub thin: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ShapeArgs {
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    pub s_grid: Option<Vec<f64>>,
    #[arg(short, long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
}

#[derive(Debug, Args)]
pub struct LimitArgs {
    #[arg(long)]
    pub s_min: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    pub s_grid: Option<Vec<f64>>,
    #[arg(short, long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub grid_points: Option<usize>,
    /// Jump-count interval `a:b`; repeatable.
    #[arg(long = "interval", value_parser = parse_interval)]
    pub intervals: Option<Vec<[f64; 2]>>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long, value_delimiter = ',')]
    pub eps: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub s: Option<Vec<f64>>,
    #[arg(short, long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SelftestArgs {
    /// Replace the rates of the geometric-law criterion.
    #[arg(long, value_delimiter = ',')]
    pub geometric_lambda: Option<Vec<f64>>,
    /// Write per-criterion wall times here (kept out of the report so that
    /// it stays byte-identical across runs).
    #[arg(long)]
    pub timings: Option<PathBuf>,
}

fn parse_interval(s: &str) -> std::result::Result<[f64; 2], String> {
    let (a, b) = s.split_once(':').ok_or_else(|| format!("expected a:b, got {s:?}"))?;
    let a: f64 = a.trim().parse().map_err(|e| format!("{a:?}: {e}"))?;
    let b: f64 = b.trim().parse().map_err(|e| format!("{b:?}: {e}"))?;
    Ok([a, b])
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

impl Cli {
    /// Config file (or defaults and $MAILBOX_SEED) with flags applied on top.
    pub fn config(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::load(self.config.as_deref())?;
        set(&mut cfg.seed, self.seed);
        set(&mut cfg.out, self.out.clone());
        set(&mut cfg.alpha, self.alpha);
        match &self.command {
            Command::Simulate(a) => {
                let c = &mut cfg.simulate;
                set(&mut c.lambda, a.lambda);
                set(&mut c.horizon, a.horizon);
                set(&mut c.format, a.format);
            }
            Command::Stationary(a) => {
                let c = &mut cfg.stationary;
                set(&mut c.methods, a.methods.clone());
                set(&mut c.lambdas, a.lambda.clone());
                set(&mut c.lambdas, a.delta.as_ref().map(|d| d.iter().map(|d| 1.0 - d).collect()));
                set(&mut c.n, a.n);
                set(&mut c.tol, a.tol);
                c.burn_in = a.burn_in.or(c.burn_in);
                c.thin = a.thin.or(c.thin);
            }
            Command::Shape(a) => {
                let c = &mut cfg.shape;
                set(&mut c.eps, a.eps);
                set(&mut c.s_grid, a.s_grid.clone());
                set(&mut c.n, a.n);
                set(&mut c.tol, a.tol);
            }
            Command::Limit(a) => {
                let c = &mut cfg.limit;
                set(&mut c.s_min, a.s_min);
                set(&mut c.s_grid, a.s_grid.clone());
                set(&mut c.n, a.n);
                set(&mut c.grid_points, a.grid_points);
                set(&mut c.intervals, a.intervals.clone());
            }
            Command::Compare(a) => {
                let c = &mut cfg.compare;
                set(&mut c.eps, a.eps.clone());
                set(&mut c.s, a.s.clone());
                set(&mut c.n, a.n);
                set(&mut c.tol, a.tol);
            }
            Command::Selftest(a) => {
                set(&mut cfg.selftest.geometric_lambdas, a.geometric_lambda.clone());
            }
            Command::Config => {}
        }
        Ok(cfg)
    }
}

fn dispatch(cli: &Cli) -> Result<Outcome> {
    let cfg = cli.config()?;
    cfg.validate_common()?;
    match &cli.command {
        Command::Simulate(_) => commands::simulate(&cfg),
        Command::Stationary(_) => commands::stationary(&cfg),
        Command::Shape(_) => commands::shape(&cfg),
        Command::Limit(_) => commands::limit(&cfg),
        Command::Compare(_) => commands::compare(&cfg),
        Command::Selftest(a) => selftest::selftest(&cfg, a.timings.as_deref()),
        Command::Config => {
            print!("{}", cfg.to_toml()?);
            Ok(Outcome {
                pass: true,
                files: Vec::new(),
            })
        }
    }
}

/// Runs the parsed command and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    match dispatch(&cli) {
        Ok(outcome) => {
            for f in &outcome.files {
                println!("{}", f.display());
            }
            match (&cli.command, outcome.pass) {
                (Command::Selftest(_), false) => {
                    eprintln!("mailbox: self-test failed");
                    exit::TEST_FAILURE
                }
                _ => exit::SUCCESS,
            }
        }
        Err(e) => {
            eprintln!("mailbox: error: {}", chain(&e));
            exit::PARAMETER_ERROR
        }
    }
}

fn chain(e: &anyhow::Error) -> String {
    e.chain().map(|c| c.to_string()).collect::<Vec<_>>().join(": ")
}
