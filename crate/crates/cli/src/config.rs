//! Run configuration: a TOML file, overridden by the seed environment
//! variable and then by command-line flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use mailbox_core::stationary::{Method, DEFAULT_TOL};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const SEED_ENV: &str = "MAILBOX_SEED";
pub const DEFAULT_SEED: u64 = 1729;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Jsonl,
    Csv,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub alpha: f64,
    pub out: PathBuf,
    pub simulate: SimulateConfig,
    pub stationary: StationaryConfig,
    pub shape: ShapeConfig,
    pub limit: LimitConfig,
    pub compare: CompareConfig,
    pub selftest: SelftestConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    /// Arrival rate; executions run at rate 1.
    pub lambda: f64,
    pub horizon: f64,
    pub format: Format,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StationaryConfig {
    pub methods: Vec<Method>,
    /// Backward samples use `δ = 1 - λ`.
    pub lambdas: Vec<f64>,
    pub n: usize,
    pub tol: f64,
    /// Forward burn-in and spacing; default 10 relaxation times.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub thin: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShapeConfig {
    pub eps: f64,
    pub s_grid: Vec<f64>,
    pub n: usize,
    pub tol: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LimitConfig {
    pub s_min: f64,
    /// Points at which `H_s` and `σ(s)` are written.
    pub s_grid: Vec<f64>,
    pub n: usize,
    pub grid_points: usize,
    /// Intervals `(a, b)` for derivative-jump counts.
    pub intervals: Vec<[f64; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareConfig {
    /// Descending.
    pub eps: Vec<f64>,
    /// Checkpoints shared by every ε and the limit.
    pub s: Vec<f64>,
    pub n: usize,
    pub tol: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelftestConfig {
    /// Rates for the geometric-law criterion.
    pub geometric_lambdas: Vec<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: DEFAULT_SEED,
            alpha: mailbox_core::stats::DEFAULT_ALPHA,
            out: PathBuf::from("out"),
            simulate: SimulateConfig::default(),
            stationary: StationaryConfig::default(),
            shape: ShapeConfig::default(),
            limit: LimitConfig::default(),
            compare: CompareConfig::default(),
            selftest: SelftestConfig::default(),
        }
    }
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            lambda: 0.5,
            horizon: 100.0,
            format: Format::Jsonl,
        }
    }
}

impl Default for StationaryConfig {
    fn default() -> Self {
        Self {
            methods: vec![Method::Exact, Method::Forward, Method::Backward],
            lambdas: vec![0.5],
            n: 10_000,
            tol: DEFAULT_TOL,
            burn_in: None,
            thin: None,
        }
    }
}

impl Default for ShapeConfig {
    fn default() -> Self {
        Self {
            eps: 0.01,
            s_grid: vec![0.25, 0.5, 1.0, 2.0, 4.0],
            n: 1000,
            tol: DEFAULT_TOL,
        }
    }
}

impl Default for LimitConfig {
    fn default() -> Self {
        Self {
            s_min: 0.5,
            s_grid: vec![0.5, 1.0, 2.0, 4.0, 8.0],
            n: 1000,
            grid_points: mailbox_core::limit::DEFAULT_GRID_POINTS,
            intervals: vec![[0.5, 2.0], [1.0, std::f64::consts::E]],
        }
    }
}

impl Default for CompareConfig {
    fn default() -> Self {
        Self {
            eps: vec![0.04, 0.02, 0.01, 0.005],
            s: vec![0.5, 1.0, 2.0],
            n: 10_000,
            tol: DEFAULT_TOL,
        }
    }
}

impl Default for SelftestConfig {
    fn default() -> Self {
        Self {
            geometric_lambdas: vec![0.3, 0.6, 0.9],
        }
    }
}

impl RunConfig {
    /// Defaults, then the seed environment variable, then `path` if given.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let mut cfg = RunConfig::default();
        if let Ok(s) = std::env::var(SEED_ENV) {
            cfg.seed = s
                .trim()
                .parse()
                .with_context(|| format!("{SEED_ENV}={s:?} is not an unsigned integer"))?;
        }
        if let Some(p) = path {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            let mut table: toml::Table = toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
            if !table.contains_key("seed") {
                table.insert("seed".into(), toml::Value::Integer(seed_as_toml(cfg.seed)?));
            }
            cfg = table
                .try_into()
                .with_context(|| format!("parsing {}", p.display()))?;
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        seed_as_toml(self.seed)?;
        Ok(toml::to_string(self)?)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    /// First 16 hex digits of the SHA-256 of the canonical TOML form, with
    /// the output directory left out.
    pub fn hash(&self) -> Result<String> {
        let mut canonical = self.clone();
        canonical.out = PathBuf::new();
        let digest = Sha256::digest(canonical.to_toml()?.as_bytes());
        Ok(hex::encode(&digest[..8]))
    }

    pub fn validate_common(&self) -> Result<()> {
        seed_as_toml(self.seed)?;
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            bail!("alpha = {} outside (0, 1)", self.alpha);
        }
        Ok(())
    }
}

fn seed_as_toml(seed: u64) -> Result<i64> {
    i64::try_from(seed).map_err(|_| anyhow::anyhow!("seed {seed} exceeds {}", i64::MAX))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips() {
        let cfg = RunConfig::default();
        let text = cfg.to_toml().unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn awkward_floats_round_trip() {
        let mut cfg = RunConfig::default();
        cfg.compare.eps = vec![0.1 + 0.2, 1e-300, 5e-324];
        cfg.stationary.burn_in = Some(std::f64::consts::PI);
        let back = RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_files_fill_defaults() {
        let cfg = RunConfig::from_toml("seed = 5\n[shape]\neps = 0.02\n").unwrap();
        assert_eq!(cfg.seed, 5);
        assert_eq!(cfg.shape.eps, 0.02);
        assert_eq!(cfg.shape.n, ShapeConfig::default().n);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_toml("sede = 5\n").is_err());
    }

    #[test]
    fn hash_ignores_output_directory() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.out = PathBuf::from("elsewhere");
        assert_eq!(a.hash().unwrap(), b.hash().unwrap());
        b.seed += 1;
        assert_ne!(a.hash().unwrap(), b.hash().unwrap());
        assert_eq!(a.hash().unwrap().len(), 16);
    }

    #[test]
    fn oversized_seed_rejected() {
        let cfg = RunConfig {
            seed: u64::MAX,
            ..RunConfig::default()
        };
        assert!(cfg.validate_common().is_err());
    }
}
