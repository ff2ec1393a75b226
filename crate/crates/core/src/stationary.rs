//! Samplers of the stationary inbox.
//!
//! Three independent routes to the law of the stationary count above a
//! priority floor:
//!
//! * **exact**: inverse-CDF draw from the geometric law `(1-λ)λ^n`;
//! * **forward**: run the inbox from empty, discard a burn-in and record the
//!   queue length at thinned times;
//! * **backward**: evaluate `sup_{t>=0} (F(t) - G^δ(t))` along one backward
//!   event sequence for a whole grid of δ at once, stopping when the chance
//!   that any supremum still improves drops below a tolerance.
//!
//! The reflected-walk identity behind the backward route is exposed as
//! [`reflected_walk_check`] so it can be tested on arbitrary streams.

use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inbox::{evolve_final, InboxState};
use crate::point_process::{EventKind, EventStream, PoissonClock, RngStream};

/// Piecewise-constant integer path with unit jumps, right-continuous.
#[derive(Clone, Debug, PartialEq)]
pub struct LatticePath {
    start_time: f64,
    start: i64,
    jump_times: Vec<f64>,
    values: Vec<i64>,
}

impl LatticePath {
    pub fn new(start_time: f64, start: i64) -> Self {
        Self {
            start_time,
            start,
            jump_times: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn push(&mut self, time: f64, step: i64) -> Result<()> {
        if step.abs() != 1 {
            return Err(Error::logic(format!("lattice step {step} is not ±1")));
        }
        if !(time > self.jump_times.last().copied().unwrap_or(self.start_time)) {
            return Err(Error::logic(format!("jump at {time} out of order")));
        }
        let v = self.last_value() + step;
        self.jump_times.push(time);
        self.values.push(v);
        Ok(())
    }

    pub fn start_value(&self) -> i64 {
        self.start
    }

    pub fn last_value(&self) -> i64 {
        self.values.last().copied().unwrap_or(self.start)
    }

    pub fn jump_times(&self) -> &[f64] {
        &self.jump_times
    }

    pub fn values(&self) -> &[i64] {
        &self.values
    }

    pub fn value_at(&self, t: f64) -> i64 {
        match self.jump_times.partition_point(|&s| s <= t) {
            0 => self.start,
            i => self.values[i - 1],
        }
    }

    /// Minimum over `[start_time, t]`.
    pub fn infimum_until(&self, t: f64) -> i64 {
        let i = self.jump_times.partition_point(|&s| s <= t);
        self.values[..i].iter().copied().fold(self.start, i64::min)
    }

    /// Maximum over the whole path.
    pub fn supremum(&self) -> i64 {
        self.values.iter().copied().fold(self.start, i64::max)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Exact,
    Forward,
    Backward,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Exact => "exact",
            Method::Forward => "forward",
            Method::Backward => "backward",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(Method::Exact),
            "forward" => Ok(Method::Forward),
            "backward" => Ok(Method::Backward),
            other => Err(Error::param(format!("unknown method {other:?}"))),
        }
    }
}

/// Stationary counts `N^{1-δ}` over a δ-grid (δ ascending, so counts are
/// nonincreasing along the grid).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StationarySample {
    pub method: Method,
    pub deltas: Vec<f64>,
    pub counts: Vec<u64>,
    /// Largest probability, over the grid, that the returned count is still
    /// below the true supremum. Zero for the exact method.
    pub truncation_error_bound: f64,
}

impl StationarySample {
    /// Window sizes `λ = 1 - δ` matching `counts`.
    pub fn lambdas(&self) -> Vec<f64> {
        self.deltas.iter().map(|d| 1.0 - d).collect()
    }

    pub fn is_monotone(&self) -> bool {
        self.counts.windows(2).all(|w| w[0] >= w[1])
    }
}

fn check_subcritical(lambda: f64) -> Result<()> {
    if !(0.0..1.0).contains(&lambda) {
        return Err(Error::param(format!(
            "arrival rate {lambda} has no stationary law (need 0 <= λ < 1; the queue is transient or null recurrent otherwise)"
        )));
    }
    Ok(())
}

/// Draws `n` with probability `(1-λ)λ^n`.
pub fn sample_exact_geometric(rng: &mut RngStream, lambda: f64) -> Result<u64> {
    check_subcritical(lambda)?;
    if lambda == 0.0 {
        return Ok(0);
    }
    // P[N >= n] = λ^n, so N = floor(ln U / ln λ) with U uniform on (0, 1].
    let u = 1.0 - rng.uniform();
    Ok((u.ln() / lambda.ln()).floor() as u64)
}

/// Relaxation time `1/(1-√λ)^2` of the queue-length walk.
pub fn relaxation_time(lambda: f64) -> f64 {
    1.0 / (1.0 - lambda.sqrt()).powi(2)
}

/// Multiple of the relaxation time used for the default burn-in and spacing.
pub const FORWARD_RELAXATIONS: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForwardOptions {
    pub burn_in: f64,
    pub thin: f64,
}

impl ForwardOptions {
    pub fn for_lambda(lambda: f64) -> Self {
        let t = FORWARD_RELAXATIONS * relaxation_time(lambda);
        Self {
            burn_in: t,
            thin: t,
        }
    }
}

/// Runs the inbox from empty and records `N^λ` at `burn_in + k·thin`.
pub fn sample_forward(
    rng: &mut RngStream,
    lambda: f64,
    opts: ForwardOptions,
    n_samples: usize,
) -> Result<Vec<u64>> {
    check_subcritical(lambda)?;
    if !(opts.burn_in > 0.0 && opts.thin > 0.0) {
        return Err(Error::param("burn-in and thinning must be positive"));
    }
    if lambda == 0.0 {
        return Ok(vec![0; n_samples]);
    }
    let mut out = Vec::with_capacity(n_samples);
    let mut state = InboxState::new();
    let mut clock = PoissonClock::new(rng, lambda, 0.0)?;
    let mut next_record = opts.burn_in;
    while out.len() < n_samples {
        let event = clock.next().expect("clock is unbounded");
        // The state just before this event is the state on [previous, event.time).
        while event.time > next_record && out.len() < n_samples {
            out.push(state.len() as u64);
            next_record = opts.burn_in + opts.thin * out.len() as f64;
        }
        state.apply(&event.kind)?;
    }
    Ok(out)
}

/// Both sides of `|Y_{s,u}(∅) ∩ [-1+δ, 0]| = E^δ(u) - inf_{s<=t<=u} E^δ(t)`.
///
/// `E^δ(t)` counts executions minus arrivals with priority `>= -1+δ` in
/// `(t, T]`, with `T` the end of the stream's window. The left side runs the
/// inbox from empty over the events in `(s, u]`.
pub fn reflected_walk_check(stream: &EventStream, delta: f64, s: f64, u: f64) -> Result<(i64, i64)> {
    let w = stream.window();
    if !(0.0..=1.0).contains(&delta) {
        return Err(Error::param(format!("δ = {delta} outside [0, 1]")));
    }
    if !(s <= u && s >= w.t_start && u <= w.t_end) {
        return Err(Error::param(format!(
            "[{s}, {u}] is not inside the stream window [{}, {}]",
            w.t_start, w.t_end
        )));
    }
    if w.p_min > -1.0 {
        return Err(Error::param("stream must cover priorities [-1, 0]"));
    }
    let floor = -1.0 + delta;

    let (_, after_s) = stream.split_at(s)?;
    let (between, _) = after_s.split_at(u)?;
    let lhs = evolve_final(&InboxState::new(), &between)?.count_at_least(floor) as i64;

    let counted = |kind: &EventKind| match *kind {
        EventKind::Arrival { priority } => priority >= floor,
        EventKind::Execution => true,
    };
    let start = after_s
        .events()
        .filter(|e| counted(&e.kind))
        .map(|e| match e.kind {
            EventKind::Arrival { .. } => -1,
            EventKind::Execution => 1,
        })
        .sum::<i64>();
    let mut path = LatticePath::new(s, start);
    for e in between.events().filter(|e| counted(&e.kind)) {
        // Passing an event removes it from the window (t, T].
        let step = match e.kind {
            EventKind::Arrival { .. } => 1,
            EventKind::Execution => -1,
        };
        path.push(e.time, step)?;
    }
    let rhs = path.value_at(u) - path.infimum_until(u);
    Ok((lhs, rhs))
}

/// Event-by-event or block-skipping evaluation of the backward suprema.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackwardScheme {
    Stepwise,
    #[default]
    Blocked,
}

pub const DEFAULT_TOL: f64 = 1e-6;

/// Blocks shorter than this are simulated event by event.
const MIN_BLOCK: u64 = 16;

fn validate_grid(deltas: &[f64]) -> Result<()> {
    if deltas.is_empty() {
        return Err(Error::param("δ-grid is empty"));
    }
    if deltas.contains(&0.0) {
        return Err(Error::param(
            "δ = 0 is critical: the count above -1 is infinite and the backward walk has no drift",
        ));
    }
    if deltas.iter().any(|&d| !(d > 0.0 && d <= 1.0)) {
        return Err(Error::param("δ-grid values must lie in (0, 1]"));
    }
    if deltas.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::param("δ-grid must be strictly ascending"));
    }
    Ok(())
}

/// One backward sample of `N^{1-δ}(0) = sup_{t>=0}(F(t) - G^δ(t))` for every δ
/// in the grid, with shared noise across the grid.
///
/// The walk for δ steps +1 on arrivals with priority in `[-1+δ, 0]` and -1 on
/// executions. From a gap `x = M - W + 1` below its running maximum it ever
/// improves with probability `(1-δ)^x`; the run stops once that is below
/// `tol` for every grid point simultaneously.
pub fn sample_backward_shape(rng: &mut RngStream, deltas: &[f64], tol: f64) -> Result<StationarySample> {
    sample_backward_shape_with(rng, deltas, tol, BackwardScheme::default())
}

pub fn sample_backward_shape_with(
    rng: &mut RngStream,
    deltas: &[f64],
    tol: f64,
    scheme: BackwardScheme,
) -> Result<StationarySample> {
    validate_grid(deltas)?;
    if !(tol > 0.0 && tol < 1.0) {
        return Err(Error::param(format!("tolerance {tol} outside (0, 1)")));
    }
    let m = deltas.len();
    // Smallest gap x with (1-δ)^x < tol.
    let needed: Vec<i64> = deltas
        .iter()
        .map(|&d| {
            if d >= 1.0 {
                1
            } else {
                (tol.ln() / (1.0 - d).ln()).floor() as i64 + 1
            }
        })
        .collect();
    let mut walk = vec![0i64; m];
    let mut best = vec![0i64; m];

    let stopped = |walk: &[i64], best: &[i64]| {
        // The smallest δ has the weakest drift; check it last.
        (0..m).rev().all(|j| best[j] - walk[j] + 1 >= needed[j])
    };

    while !stopped(&walk, &best) {
        let gap = (0..m).map(|j| best[j] - walk[j]).min().unwrap_or(0) as u64;
        if scheme == BackwardScheme::Blocked && gap >= MIN_BLOCK {
            // No walk can rise by more than `gap` within `gap` events, so the
            // maxima are untouched and only the endpoint counts matter.
            let k = gap;
            let executions = Binomial::new(k, 0.5).expect("valid").sample(rng);
            let mut above = k - executions;
            let mut floor = 0.0;
            for j in 0..m {
                // Arrivals above 1-δ_{j-1} that are also above 1-δ_j.
                let p = if deltas[j] >= 1.0 {
                    0.0
                } else {
                    (1.0 - deltas[j]) / (1.0 - floor)
                };
                above = Binomial::new(above, p.clamp(0.0, 1.0)).expect("valid").sample(rng);
                floor = deltas[j];
                walk[j] += above as i64 - executions as i64;
            }
        } else {
            let u = rng.uniform();
            if u < 0.5 {
                walk.iter_mut().for_each(|w| *w -= 1);
            } else {
                // Arrival at priority -1 + x with x uniform on [0, 1).
                let x = 2.0 * u - 1.0;
                for j in 0..m {
                    if deltas[j] > x {
                        break;
                    }
                    walk[j] += 1;
                    best[j] = best[j].max(walk[j]);
                }
            }
        }
    }

    let bound = (0..m)
        .map(|j| (1.0 - deltas[j]).powf((best[j] - walk[j] + 1) as f64))
        .fold(0.0, f64::max);
    Ok(StationarySample {
        method: Method::Backward,
        deltas: deltas.to_vec(),
        counts: best.iter().map(|&b| b as u64).collect(),
        truncation_error_bound: bound,
    })
}

/// `n` independent backward samples; sample `i` uses substream `first_stream + i`.
pub fn backward_batch(
    seed: u64,
    first_stream: u64,
    n: usize,
    deltas: &[f64],
    tol: f64,
) -> Result<Vec<StationarySample>> {
    validate_grid(deltas)?;
    (0..n as u64)
        .into_par_iter()
        .map(|i| sample_backward_shape(&mut RngStream::new(seed, first_stream + i), deltas, tol))
        .collect()
}

/// `n` independent exact draws from one stream.
pub fn exact_batch(rng: &mut RngStream, lambda: f64, n: usize) -> Result<Vec<u64>> {
    (0..n).map(|_| sample_exact_geometric(rng, lambda)).collect()
}
