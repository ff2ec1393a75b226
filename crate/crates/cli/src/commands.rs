//! Subcommands other than the self-test. Each reads its section of the
//! config, writes its files into the output directory and reports whether
//! every statistical check it ran passed.

use std::path::PathBuf;

use anyhow::{bail, ensure, Result};
use mailbox_core::inbox::{evolve_with, EventRecord, InboxState};
use mailbox_core::limit::{derivative_jumps, eval_limit_shape, exp_survival, limit_batch, LimitOptions};
use mailbox_core::point_process::{sample_event_stream, substream, RngStream, Window};
use mailbox_core::shape::{build_shape, delta_grid};
use mailbox_core::stationary::{backward_batch, exact_batch, sample_forward, ForwardOptions, Method};
use mailbox_core::stats::{
    chi_square_counts, chi_square_homogeneity, geometric_pmf, histogram, ks_one_sample, mean, standard_error,
    two_sample_ks, TestReport, DEFAULT_MIN_BIN,
};
use serde::{Deserialize, Serialize};

use crate::config::{Format, RunConfig};
use crate::output::OutputDir;

/// Substream labels; each experiment draws from its own family of streams.
pub(crate) mod label {
    pub const SIMULATE: u32 = 1;
    pub const EXACT: u32 = 2;
    pub const FORWARD: u32 = 3;
    pub const BACKWARD: u32 = 4;
    pub const SHAPE: u32 = 5;
    pub const LIMIT: u32 = 6;
    pub const COMPARE_SHAPE: u32 = 7;
    pub const COMPARE_LIMIT: u32 = 8;
}

#[derive(Clone, Debug, PartialEq)]
pub struct Outcome {
    pub pass: bool,
    pub files: Vec<PathBuf>,
}

/// A test report with the label it is filed under.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledReport {
    pub label: String,
    #[serde(flatten)]
    pub report: TestReport,
}

fn label_report(label: impl Into<String>, report: TestReport, alpha: f64) -> LabeledReport {
    LabeledReport {
        label: label.into(),
        report: report.with_alpha(alpha),
    }
}

pub(crate) fn check_rate(lambda: f64) -> Result<()> {
    if !(lambda.is_finite() && lambda > 0.0) {
        bail!("λ = {lambda} must be positive");
    }
    if lambda >= 1.0 {
        bail!("λ = {lambda} >= 1: the queue length is transient (null recurrent at 1) and has no stationary law");
    }
    Ok(())
}

pub fn simulate(cfg: &RunConfig) -> Result<Outcome> {
    let c = &cfg.simulate;
    ensure!(c.lambda.is_finite() && c.lambda > 0.0, "λ = {} must be positive", c.lambda);
    ensure!(c.horizon.is_finite() && c.horizon >= 0.0, "horizon = {} must be nonnegative", c.horizon);
    let mut records = Vec::new();
    if c.horizon > 0.0 {
        let mut rng = RngStream::new(cfg.seed, substream(label::SIMULATE, 0));
        let stream = sample_event_stream(&mut rng, Window::new(0.0, c.horizon, -c.lambda))?;
        evolve_with(InboxState::new(), stream.events(), |event, executed, state| {
            records.push(EventRecord::new(event, executed, state));
        })?;
    }
    let out = OutputDir::new(cfg, "simulate")?;
    let file = match c.format {
        Format::Jsonl => out.jsonl("trajectory.jsonl", &records)?,
        Format::Csv => out.csv(
            "trajectory.csv",
            &["time", "event_kind", "priority", "queue_size", "top_priority"],
            records.iter().map(|r| (r.time, &r.event_kind, r.priority, r.queue_size, r.top_priority)),
        )?,
    };
    Ok(Outcome {
        pass: true,
        files: vec![file],
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StationaryRow {
    pub method: Method,
    pub sample: usize,
    pub lambda: f64,
    pub count: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StationaryReport {
    pub alpha: f64,
    pub pass: bool,
    pub tests: Vec<LabeledReport>,
}

pub fn stationary(cfg: &RunConfig) -> Result<Outcome> {
    let c = &cfg.stationary;
    ensure!(c.n > 0, "n must be positive");
    ensure!(c.n >= 100, "n = {} too small: the chi-square checks need at least 100 samples", c.n);
    ensure!(!c.methods.is_empty(), "no sampling method selected");
    ensure!(!c.lambdas.is_empty(), "no λ given");
    ensure!(c.tol > 0.0 && c.tol < 1.0, "tol = {} outside (0, 1)", c.tol);
    for &l in &c.lambdas {
        check_rate(l)?;
    }
    let mut methods = c.methods.clone();
    methods.dedup();

    // counts[method][lambda]
    let mut counts: Vec<Vec<Vec<u64>>> = Vec::new();
    for &m in &methods {
        let per_lambda = match m {
            Method::Exact => c
                .lambdas
                .iter()
                .enumerate()
                .map(|(j, &l)| exact_batch(&mut RngStream::new(cfg.seed, substream(label::EXACT, j as u64)), l, c.n))
                .collect::<mailbox_core::Result<Vec<_>>>()?,
            Method::Forward => c
                .lambdas
                .iter()
                .enumerate()
                .map(|(j, &l)| {
                    let mut opts = ForwardOptions::for_lambda(l);
                    opts.burn_in = c.burn_in.unwrap_or(opts.burn_in);
                    opts.thin = c.thin.unwrap_or(opts.thin);
                    sample_forward(&mut RngStream::new(cfg.seed, substream(label::FORWARD, j as u64)), l, opts, c.n)
                })
                .collect::<mailbox_core::Result<Vec<_>>>()?,
            Method::Backward => {
                let mut deltas: Vec<f64> = c.lambdas.iter().map(|l| 1.0 - l).collect();
                deltas.sort_by(f64::total_cmp);
                deltas.dedup();
                let samples = backward_batch(cfg.seed, substream(label::BACKWARD, 0), c.n, &deltas, c.tol)?;
                c.lambdas
                    .iter()
                    .map(|l| {
                        let j = deltas.iter().position(|&d| d == 1.0 - l).expect("grid built from λ");
                        samples.iter().map(|s| s.counts[j]).collect()
                    })
                    .collect()
            }
        };
        counts.push(per_lambda);
    }

    let mut tests = Vec::new();
    for (mi, &m) in methods.iter().enumerate() {
        for (j, &l) in c.lambdas.iter().enumerate() {
            let r = chi_square_counts(&histogram(&counts[mi][j]), geometric_pmf(l), DEFAULT_MIN_BIN, "geometric")?;
            tests.push(label_report(format!("{} vs (1-λ)λ^n, λ = {l}", m.name()), r, cfg.alpha));
        }
    }
    for a in 0..methods.len() {
        for b in a + 1..methods.len() {
            for (j, &l) in c.lambdas.iter().enumerate() {
                let r = chi_square_homogeneity(&histogram(&counts[a][j]), &histogram(&counts[b][j]), DEFAULT_MIN_BIN)?;
                tests.push(label_report(
                    format!("{} vs {}, λ = {l}", methods[a].name(), methods[b].name()),
                    r,
                    cfg.alpha,
                ));
            }
        }
    }
    let pass = tests.iter().all(|t| t.report.pass);

    let out = OutputDir::new(cfg, "stationary")?;
    let rows = methods.iter().enumerate().flat_map(|(mi, &method)| {
        let counts = &counts;
        c.lambdas.iter().enumerate().flat_map(move |(j, &lambda)| {
            counts[mi][j].iter().enumerate().map(move |(sample, &count)| StationaryRow {
                method,
                sample,
                lambda,
                count,
            })
        })
    });
    let samples = out.csv("stationary_samples.csv", &["method", "sample", "lambda", "count"], rows)?;
    let report = out.json(
        "stationary_report.json",
        &StationaryReport {
            alpha: cfg.alpha,
            pass,
            tests,
        },
    )?;
    Ok(Outcome {
        pass,
        files: vec![samples, report],
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeRow {
    pub sample: usize,
    pub s: f64,
    pub value: f64,
}

pub fn shape(cfg: &RunConfig) -> Result<Outcome> {
    let c = &cfg.shape;
    ensure!(c.n > 0, "n must be positive");
    ensure!(c.tol > 0.0 && c.tol < 1.0, "tol = {} outside (0, 1)", c.tol);
    let deltas = delta_grid(c.eps, &c.s_grid)?;
    let samples = backward_batch(cfg.seed, substream(label::SHAPE, 0), c.n, &deltas, c.tol)?;
    let mut rows = Vec::with_capacity(c.n * c.s_grid.len());
    for (i, sample) in samples.iter().enumerate() {
        let sh = build_shape(sample, c.eps, &c.s_grid)?;
        for &s in &c.s_grid {
            rows.push(ShapeRow {
                sample: i,
                s,
                value: sh.eval(s)?,
            });
        }
    }
    let out = OutputDir::new(cfg, "shape")?;
    let file = out.csv("shape.csv", &["sample", "s", "value"], &rows)?;
    Ok(Outcome {
        pass: true,
        files: vec![file],
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HullRow {
    pub sample: usize,
    pub vertex: usize,
    pub t: f64,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub sample: usize,
    pub s: f64,
    pub h: f64,
    pub sigma: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JumpRecord {
    pub seed: u64,
    pub sample: usize,
    pub a: f64,
    pub b: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JumpSummary {
    pub a: f64,
    pub b: f64,
    pub mean: f64,
    pub standard_error: f64,
    /// `log(b/a)`.
    pub expected: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LimitSummary {
    pub horizon: f64,
    pub truncation_bound: f64,
    pub jumps: Vec<JumpSummary>,
}

pub fn limit(cfg: &RunConfig) -> Result<Outcome> {
    let c = &cfg.limit;
    ensure!(c.s_min.is_finite() && c.s_min > 0.0, "s_min = {} must be positive", c.s_min);
    ensure!(c.n > 0, "n must be positive");
    ensure!(c.grid_points > 0, "grid_points must be positive");
    for &s in &c.s_grid {
        ensure!(s >= c.s_min, "s = {s} below s_min = {}", c.s_min);
    }
    for &[a, b] in &c.intervals {
        ensure!(a >= c.s_min, "interval start a = {a} below s_min = {}", c.s_min);
        ensure!(b >= a, "interval ({a}, {b}) is reversed");
    }
    let opts = LimitOptions {
        grid_points: c.grid_points,
        ..LimitOptions::new(c.s_min)
    };
    let samples = limit_batch(cfg.seed, substream(label::LIMIT, 0), c.n, opts)?;

    let mut hull = Vec::new();
    let mut curves = Vec::new();
    let mut jumps = Vec::new();
    for (i, x) in samples.iter().enumerate() {
        for (k, &(t, v)) in x.hull.vertices().iter().enumerate() {
            hull.push(HullRow {
                sample: i,
                vertex: k,
                t,
                value: v,
            });
        }
        for &s in &c.s_grid {
            let (h, sigma) = eval_limit_shape(x, s)?;
            curves.push(CurveRow { sample: i, s, h, sigma });
        }
        for &[a, b] in &c.intervals {
            jumps.push(JumpRecord {
                seed: cfg.seed,
                sample: i,
                a,
                b,
                count: derivative_jumps(x, a, b)?,
            });
        }
    }
    let summary = LimitSummary {
        horizon: samples[0].horizon,
        truncation_bound: samples[0].truncation_bound,
        jumps: c
            .intervals
            .iter()
            .map(|&[a, b]| {
                let k: Vec<f64> = jumps
                    .iter()
                    .filter(|j| j.a == a && j.b == b)
                    .map(|j| j.count as f64)
                    .collect();
                JumpSummary {
                    a,
                    b,
                    mean: mean(&k),
                    standard_error: if k.len() > 1 { standard_error(&k) } else { 0.0 },
                    expected: (b / a).ln(),
                }
            })
            .collect(),
    };

    let out = OutputDir::new(cfg, "limit")?;
    let files = vec![
        out.csv("limit_hull.csv", &["sample", "vertex", "t", "value"], &hull)?,
        out.csv("limit_curves.csv", &["sample", "s", "h", "sigma"], &curves)?,
        out.jsonl("limit_jumps.jsonl", &jumps)?,
        out.json("limit_summary.json", &summary)?,
    ];
    Ok(Outcome { pass: true, files })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonEntry {
    pub eps: f64,
    pub s: f64,
    #[serde(flatten)]
    pub report: TestReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DerivedEntry {
    pub s: f64,
    /// Always "derived": the Exp(2s) marginal is a cross-check oracle.
    pub oracle: String,
    #[serde(flatten)]
    pub report: TestReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub alpha: f64,
    pub pass: bool,
    pub two_sample: Vec<ComparisonEntry>,
    pub limit_marginals: Vec<DerivedEntry>,
}

pub fn compare(cfg: &RunConfig) -> Result<Outcome> {
    let c = &cfg.compare;
    ensure!(!c.eps.is_empty(), "no ε given");
    ensure!(!c.s.is_empty(), "no s checkpoints given");
    ensure!(c.n >= 10, "n = {} too small: KS needs at least 10 samples", c.n);
    ensure!(c.tol > 0.0 && c.tol < 1.0, "tol = {} outside (0, 1)", c.tol);
    ensure!(c.eps.windows(2).all(|w| w[0] > w[1]), "ε list must be strictly descending");
    ensure!(
        c.s.windows(2).all(|w| w[0] < w[1]) && c.s[0] > 0.0,
        "s checkpoints must be positive and strictly increasing"
    );
    let grids = c
        .eps
        .iter()
        .map(|&e| delta_grid(e, &c.s))
        .collect::<mailbox_core::Result<Vec<_>>>()
        .map_err(|e| anyhow::anyhow!("checkpoints do not fit every ε: {e}"))?;

    let limit_samples = limit_batch(
        cfg.seed,
        substream(label::COMPARE_LIMIT, 0),
        c.n,
        LimitOptions::new(c.s[0]),
    )?;
    let limit_at: Vec<Vec<f64>> = c
        .s
        .iter()
        .map(|&s| {
            limit_samples
                .iter()
                .map(|x| eval_limit_shape(x, s).map(|v| v.0))
                .collect::<mailbox_core::Result<Vec<_>>>()
        })
        .collect::<mailbox_core::Result<_>>()?;

    let mut two_sample = Vec::new();
    for (k, (&eps, deltas)) in c.eps.iter().zip(&grids).enumerate() {
        let first = substream(label::COMPARE_SHAPE, (k as u64) << 32);
        let samples = backward_batch(cfg.seed, first, c.n, deltas, c.tol)?;
        for (j, &s) in c.s.iter().enumerate() {
            let h: Vec<f64> = samples.iter().map(|x| eps * x.counts[j] as f64).collect();
            let r = two_sample_ks(&h, &limit_at[j])?.named("H_s (Brownian limit)");
            two_sample.push(ComparisonEntry {
                eps,
                s,
                report: r.with_alpha(cfg.alpha),
            });
        }
    }
    let limit_marginals = c
        .s
        .iter()
        .zip(&limit_at)
        .map(|(&s, h)| {
            let r = ks_one_sample(h, |x| 1.0 - exp_survival(s, x), "Exp(2s)")?;
            Ok(DerivedEntry {
                s,
                oracle: "derived".into(),
                report: r.with_alpha(cfg.alpha),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let pass = two_sample.iter().all(|e| e.report.pass) && limit_marginals.iter().all(|e| e.report.pass);

    let out = OutputDir::new(cfg, "compare")?;
    let file = out.json(
        "compare_report.json",
        &CompareReport {
            alpha: cfg.alpha,
            pass,
            two_sample,
            limit_marginals,
        },
    )?;
    Ok(Outcome {
        pass,
        files: vec![file],
    })
}
