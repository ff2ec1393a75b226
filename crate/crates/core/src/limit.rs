//! The Brownian limit shape `H_s = sup_{t>=0} (B_t - s t)`.
//!
//! `H` is the Legendre transform of the least concave majorant of `B`: for a
//! given `s` the supremum sits at the hull vertex where the edge slopes cross
//! `s`, so `H` is piecewise linear with `-H'_s = σ(s)` (the maximizing time),
//! and `H'` jumps exactly at the edge slopes of the hull.
//!
//! A path is sampled on a uniform grid over `[0, T]` with `T = 24 / s_min²`,
//! which makes the chance that any `t > T` matters for `s >= s_min` equal to
//! `2Φ(-√24) ≈ 1e-6`. The grid hull is then sharpened by Brownian-bridge
//! bisection of every grid interval that could still cross the current hull:
//! a bridge of length `h` starting `d_a` and ending `d_b` below a line crosses
//! it with probability `exp(-2 d_a d_b / h)`.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::point_process::RngStream;

/// Brownian path sampled at `0 = t_0 < t_1 < ... < t_n = T`, starting at 0.
#[derive(Clone, Debug, PartialEq)]
pub struct BrownianPath {
    times: Vec<f64>,
    values: Vec<f64>,
}

impl BrownianPath {
    /// Uniform grid path over `[0, horizon]` with the given standard-normal
    /// increments, each scaled by `sqrt(dt)`.
    pub fn from_increments<I>(horizon: f64, standard_increments: I) -> Result<Self>
    where
        I: IntoIterator<Item = f64>,
        I::IntoIter: ExactSizeIterator,
    {
        let incs = standard_increments.into_iter();
        let n = incs.len();
        if !(horizon > 0.0 && horizon.is_finite()) || n == 0 {
            return Err(Error::param("need a positive horizon and at least one step"));
        }
        let dt = horizon / n as f64;
        let sd = dt.sqrt();
        let mut times = Vec::with_capacity(n + 1);
        let mut values = Vec::with_capacity(n + 1);
        times.push(0.0);
        values.push(0.0);
        let mut b = 0.0;
        for (i, z) in incs.enumerate() {
            b += sd * z;
            times.push(if i + 1 == n { horizon } else { dt * (i + 1) as f64 });
            values.push(b);
        }
        Ok(Self { times, values })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn endpoint(&self) -> f64 {
        *self.values.last().unwrap()
    }

    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }
}

pub fn sample_brownian(rng: &mut RngStream, horizon: f64, steps: usize) -> Result<BrownianPath> {
    let mut draw = || -> f64 { StandardNormal.sample(&mut *rng) };
    let incs: Vec<f64> = (0..steps).map(|_| draw()).collect();
    BrownianPath::from_increments(horizon, incs)
}

/// Least concave majorant of a finite point set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConcaveHull {
    vertices: Vec<(f64, f64)>,
    slopes: Vec<f64>,
}

impl ConcaveHull {
    /// Upper hull by a monotone-chain scan; `points` must be strictly
    /// increasing in `t`. Collinear points are dropped so that edge slopes are
    /// strictly decreasing.
    pub fn from_sorted(points: &[(f64, f64)]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::param("hull of an empty point set"));
        }
        if points.windows(2).any(|w| !(w[0].0 < w[1].0)) {
            return Err(Error::logic("hull points must be strictly increasing in t"));
        }
        let mut hull: Vec<(f64, f64)> = Vec::new();
        for &p in points {
            while hull.len() >= 2 {
                let o = hull[hull.len() - 2];
                let a = hull[hull.len() - 1];
                let cross = (a.0 - o.0) * (p.1 - o.1) - (a.1 - o.1) * (p.0 - o.0);
                if cross >= 0.0 {
                    hull.pop();
                } else {
                    break;
                }
            }
            hull.push(p);
        }
        let slopes = hull
            .windows(2)
            .map(|w| (w[1].1 - w[0].1) / (w[1].0 - w[0].0))
            .collect();
        Ok(Self {
            vertices: hull,
            slopes,
        })
    }

    pub fn vertices(&self) -> &[(f64, f64)] {
        &self.vertices
    }

    /// Edge slopes, strictly decreasing.
    pub fn slopes(&self) -> &[f64] {
        &self.slopes
    }

    /// Hull value at `t` inside `[t_first, t_last]`.
    pub fn eval(&self, t: f64) -> Option<f64> {
        let first = self.vertices[0].0;
        let last = self.vertices[self.vertices.len() - 1].0;
        if !(t >= first && t <= last) {
            return None;
        }
        let i = self.vertices.partition_point(|v| v.0 <= t);
        if i == self.vertices.len() {
            return Some(self.vertices[i - 1].1);
        }
        let a = self.vertices[i - 1];
        Some(a.1 + (t - a.0) * self.slopes[i - 1])
    }

    /// `max_i (v_i - s t_i)` and the earliest maximizing `t_i`.
    pub fn legendre(&self, s: f64) -> (f64, f64) {
        let i = self.slopes.partition_point(|&e| e > s);
        let (t, v) = self.vertices[i];
        (v - s * t, t)
    }
}

pub fn concave_majorant(path: &BrownianPath) -> ConcaveHull {
    let pts: Vec<(f64, f64)> = path
        .times
        .iter()
        .copied()
        .zip(path.values.iter().copied())
        .collect();
    ConcaveHull::from_sorted(&pts).expect("path times are strictly increasing")
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefineOptions {
    /// Intervals whose bridge crosses the hull with probability above this
    /// are bisected.
    pub tol: f64,
    /// Bisection stops at intervals of length `horizon * min_fraction`.
    pub min_fraction: f64,
}

impl Default for RefineOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            min_fraction: 2f64.powi(-30),
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Interval {
    a: (f64, f64),
    b: (f64, f64),
}

fn crossing_probability(hull: &ConcaveHull, iv: &Interval) -> f64 {
    let da = (hull.eval(iv.a.0).unwrap_or(iv.a.1) - iv.a.1).max(0.0);
    let db = (hull.eval(iv.b.0).unwrap_or(iv.b.1) - iv.b.1).max(0.0);
    (-2.0 * da * db / (iv.b.0 - iv.a.0)).exp()
}

/// Concave majorant of the path, sharpened by bridge bisection near the hull.
///
/// The returned hull dominates every grid point. Midpoints are drawn from
/// the exact bridge law given their neighbours, so the refined points are a
/// finer sample of the same Brownian path.
pub fn refine_majorant(path: &BrownianPath, rng: &mut RngStream, opts: RefineOptions) -> ConcaveHull {
    let mut hull = concave_majorant(path);
    let min_len = path.horizon() * opts.min_fraction;
    // The hull only rises under refinement; screen with a looser threshold.
    let screen = opts.tol * 1e-3;
    let mut intervals: Vec<Interval> = path
        .times
        .windows(2)
        .zip(path.values.windows(2))
        .map(|(t, v)| Interval {
            a: (t[0], v[0]),
            b: (t[1], v[1]),
        })
        .filter(|iv| crossing_probability(&hull, iv) > screen)
        .collect();

    // Intervals that no longer need bisection are parked and rechecked once
    // the active set is exhausted, since later vertices can raise the hull.
    let mut parked: Vec<Interval> = Vec::new();
    loop {
        if intervals.is_empty() {
            let (again, keep): (Vec<Interval>, Vec<Interval>) = parked
                .drain(..)
                .partition(|iv| crossing_probability(&hull, iv) > opts.tol);
            if again.is_empty() {
                break;
            }
            intervals = again;
            parked = keep;
        }
        let mut fresh: Vec<(f64, f64)> = Vec::new();
        let mut next = Vec::with_capacity(intervals.len() * 2);
        for iv in intervals.drain(..) {
            let len = iv.b.0 - iv.a.0;
            if len <= 2.0 * min_len {
                continue;
            }
            if crossing_probability(&hull, &iv) > opts.tol {
                let z: f64 = StandardNormal.sample(&mut *rng);
                let t = 0.5 * (iv.a.0 + iv.b.0);
                let v = 0.5 * (iv.a.1 + iv.b.1) + 0.5 * len.sqrt() * z;
                fresh.push((t, v));
                next.push(Interval { a: iv.a, b: (t, v) });
                next.push(Interval { a: (t, v), b: iv.b });
            } else {
                parked.push(iv);
            }
        }
        intervals = next;
        if fresh.is_empty() {
            continue;
        }
        // Points below the old hull stay below the new one, so the old
        // vertices plus the new midpoints determine the new hull.
        let mut pts = hull.vertices.clone();
        pts.extend(fresh);
        pts.sort_by(|x, y| x.0.total_cmp(&y.0));
        pts.dedup_by(|x, y| x.0 == y.0);
        hull = ConcaveHull::from_sorted(&pts).expect("sorted and deduplicated");
    }
    hull
}

/// `T(s_min) = 24 / s_min²`.
pub fn horizon_for(s_min: f64) -> f64 {
    24.0 / (s_min * s_min)
}

/// `P[B_t - s t >= 0 for some t >= T] = 2Φ(-s√T)`.
pub fn truncation_bound(s_min: f64, horizon: f64) -> f64 {
    let x = s_min * horizon.sqrt();
    erfc(x / std::f64::consts::SQRT_2)
}

pub const TRUNCATION_TOLERANCE: f64 = 1e-4;
pub const DEFAULT_GRID_POINTS: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LimitOptions {
    pub s_min: f64,
    pub grid_points: usize,
    /// `None` keeps the plain grid hull.
    pub refine: Option<RefineOptions>,
}

impl LimitOptions {
    pub fn new(s_min: f64) -> Self {
        Self {
            s_min,
            grid_points: DEFAULT_GRID_POINTS,
            refine: Some(RefineOptions::default()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LimitShapeSample {
    pub hull: ConcaveHull,
    pub horizon: f64,
    pub s_min: f64,
    pub truncation_bound: f64,
    /// `B_T`, so that the path can be extended past the horizon.
    pub endpoint: f64,
}

pub fn sample_limit_shape(rng: &mut RngStream, opts: LimitOptions) -> Result<LimitShapeSample> {
    if !(opts.s_min > 0.0 && opts.s_min.is_finite()) {
        return Err(Error::param(format!("s_min = {} must be positive", opts.s_min)));
    }
    let horizon = horizon_for(opts.s_min);
    let bound = truncation_bound(opts.s_min, horizon);
    debug_assert!(bound < TRUNCATION_TOLERANCE);
    let path = sample_brownian(rng, horizon, opts.grid_points)?;
    let hull = match opts.refine {
        Some(r) => refine_majorant(&path, rng, r),
        None => concave_majorant(&path),
    };
    Ok(LimitShapeSample {
        hull,
        horizon,
        s_min: opts.s_min,
        truncation_bound: bound,
        endpoint: path.endpoint(),
    })
}

/// `(H_s, σ(s))` for `s >= s_min`.
pub fn eval_limit_shape(sample: &LimitShapeSample, s: f64) -> Result<(f64, f64)> {
    if !(s >= sample.s_min) {
        return Err(Error::param(format!(
            "s = {s} below s_min = {}; the horizon does not cover it",
            sample.s_min
        )));
    }
    Ok(sample.hull.legendre(s))
}

/// Number of jumps of `H'` in `(a, b)`: hull edge slopes strictly inside.
pub fn derivative_jumps(sample: &LimitShapeSample, a: f64, b: f64) -> Result<usize> {
    if !(a >= sample.s_min) {
        return Err(Error::param(format!("a = {a} below s_min = {}", sample.s_min)));
    }
    if b < a {
        return Err(Error::param(format!("empty interval ({a}, {b})")));
    }
    Ok(sample.hull.slopes().iter().filter(|&&e| e > a && e < b).count())
}

/// Survival function `P[H_s > x] = e^{-2sx}` of the drifted Brownian maximum.
pub fn exp_survival(s: f64, x: f64) -> f64 {
    if x <= 0.0 {
        1.0
    } else {
        (-2.0 * s * x).exp()
    }
}

/// `n` independent samples; sample `i` uses substream `first_stream + i`.
pub fn limit_batch(seed: u64, first_stream: u64, n: usize, opts: LimitOptions) -> Result<Vec<LimitShapeSample>> {
    (0..n as u64)
        .into_par_iter()
        .map(|i| sample_limit_shape(&mut RngStream::new(seed, first_stream + i), opts))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_of(points: &[(f64, f64)], s_min: f64) -> LimitShapeSample {
        LimitShapeSample {
            hull: ConcaveHull::from_sorted(points).unwrap(),
            horizon: points.last().unwrap().0,
            s_min,
            truncation_bound: 0.0,
            endpoint: points.last().unwrap().1,
        }
    }

    #[test]
    fn three_point_hull() {
        let h = ConcaveHull::from_sorted(&[(0.0, 0.0), (1.0, 1.0), (2.0, 0.0)]).unwrap();
        assert_eq!(h.vertices().len(), 3);
        assert_eq!(h.slopes(), &[1.0, -1.0]);
    }

    #[test]
    fn concave_points_are_their_own_hull() {
        let pts: Vec<(f64, f64)> = (0..20).map(|i| (i as f64, (i as f64).sqrt())).collect();
        let h = ConcaveHull::from_sorted(&pts).unwrap();
        assert_eq!(h.vertices(), &pts[..]);
    }

    #[test]
    fn collinear_points_dropped() {
        let h = ConcaveHull::from_sorted(&[(0.0, 0.0), (1.0, 1.0), (2.0, 2.0), (3.0, 0.0)]).unwrap();
        assert_eq!(h.vertices(), &[(0.0, 0.0), (2.0, 2.0), (3.0, 0.0)]);
    }

    #[test]
    fn zero_increments_give_zero_path() {
        let p = BrownianPath::from_increments(3.0, vec![0.0; 8]).unwrap();
        assert!(p.values().iter().all(|&v| v == 0.0));
        assert_eq!(p.horizon(), 3.0);
        let h = concave_majorant(&p);
        assert_eq!(h.vertices(), &[(0.0, 0.0), (3.0, 0.0)]);
    }

    #[test]
    fn single_step_variance() {
        let n = 100_000;
        let mut rng = RngStream::new(1, 0);
        let ends: Vec<f64> = (0..n)
            .map(|_| sample_brownian(&mut rng, 2.5, 1).unwrap().endpoint())
            .collect();
        let var = crate::stats::variance(&ends);
        // Var of the sample variance for Gaussians is 2σ^4/(n-1).
        assert!((var - 2.5).abs() < 3.0 * (2.0 * 2.5f64.powi(2) / n as f64).sqrt());
    }

    #[test]
    fn legendre_examples() {
        let s = sample_of(&[(0.0, 0.0), (1.0, 1.0), (2.0, 0.0)], 0.1);
        assert_eq!(eval_limit_shape(&s, 0.5).unwrap(), (0.5, 1.0));
        assert_eq!(eval_limit_shape(&s, 1.5).unwrap(), (0.0, 0.0));
        // Tie at s = 1 resolves to the earliest vertex.
        assert_eq!(eval_limit_shape(&s, 1.0).unwrap(), (0.0, 0.0));
        assert!(eval_limit_shape(&s, 0.05).unwrap_err().is_parameter());
    }

    #[test]
    fn jump_count_examples() {
        let pts = [(0.0, 0.0), (1.0, 3.0), (2.0, 4.5), (3.0, 4.7)];
        let s = sample_of(&pts, 0.1);
        assert_eq!(s.hull.slopes().len(), 3);
        assert_eq!(derivative_jumps(&s, 1.0, 2.0).unwrap(), 1);
        assert_eq!(derivative_jumps(&s, 1.0, 1.0).unwrap(), 0);
        assert!(derivative_jumps(&s, 0.05, 2.0).unwrap_err().is_parameter());
    }

    #[test]
    fn truncation_bound_is_small() {
        let b = truncation_bound(0.5, horizon_for(0.5));
        assert!(b < TRUNCATION_TOLERANCE);
        // 2Φ(-√24) does not depend on s_min.
        assert!((b - truncation_bound(3.0, horizon_for(3.0))).abs() < 1e-15);
        assert!((b - 9.6e-7).abs() < 0.1e-7);
    }

    #[test]
    fn refined_hull_dominates_grid() {
        for id in 0..20 {
            let mut rng = RngStream::new(9, id);
            let path = sample_brownian(&mut rng, 24.0, 512).unwrap();
            let coarse = concave_majorant(&path);
            let fine = refine_majorant(&path, &mut rng, RefineOptions::default());
            for (&t, &v) in path.times().iter().zip(path.values()) {
                assert!(fine.eval(t).unwrap() >= v - 1e-12);
                assert!(fine.eval(t).unwrap() >= coarse.eval(t).unwrap() - 1e-12);
            }
            assert!(fine.slopes().windows(2).all(|w| w[0] > w[1]));
        }
    }
}
