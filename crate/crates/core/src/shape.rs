//! The rescaled near-critical shape `H^ε_s = ε N^{1-2εs}` as a step function.
//!
//! Shapes are right-continuous, nonincreasing and eventually zero. The true
//! shape diverges as `s ↓ 0`, so a built shape is only meaningful from the
//! first grid point on; below it the first grid value is carried.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stationary::StationarySample;

/// Right-continuous nonincreasing step function on `(0, ∞)`.
///
/// `values[0]` holds on `(0, breakpoints[0])` and `values[i]` on
/// `[breakpoints[i-1], breakpoints[i])`; the last value is 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepShape {
    breakpoints: Vec<f64>,
    values: Vec<f64>,
}

impl StepShape {
    pub fn new(breakpoints: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if values.len() != breakpoints.len() + 1 {
            return Err(Error::param("need exactly one more value than breakpoints"));
        }
        if breakpoints.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::param("breakpoints must be positive and finite"));
        }
        if breakpoints.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::param("breakpoints must be strictly increasing"));
        }
        if values.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
            return Err(Error::logic("shape values must be finite and nonnegative"));
        }
        if values.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::logic("shape values must be nonincreasing"));
        }
        if *values.last().unwrap() != 0.0 {
            return Err(Error::logic("shape must vanish beyond its last breakpoint"));
        }
        Ok(Self {
            breakpoints,
            values,
        })
    }

    pub fn zero() -> Self {
        Self {
            breakpoints: Vec::new(),
            values: vec![0.0],
        }
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn at(&self, s: f64) -> f64 {
        self.values[self.breakpoints.partition_point(|&b| b <= s)]
    }

    pub fn eval(&self, s: f64) -> Result<f64> {
        if !(s > 0.0) {
            return Err(Error::param(format!("shape evaluated at s = {s} <= 0")));
        }
        Ok(self.at(s))
    }
}

pub fn eval_shape(shape: &StepShape, s: f64) -> Result<f64> {
    shape.eval(s)
}

/// `sup_{s >= s0} |a_s - b_s|`, exact over the merged breakpoints.
///
/// With `s0 <= 0` the supremum runs over all of `(0, ∞)`.
pub fn sup_distance(a: &StepShape, b: &StepShape, s0: f64) -> f64 {
    let diff = |s: f64| (a.at(s) - b.at(s)).abs();
    let mut d = if s0 > 0.0 {
        diff(s0)
    } else {
        (a.values[0] - b.values[0]).abs()
    };
    for &s in a.breakpoints.iter().chain(&b.breakpoints) {
        if s >= s0 {
            d = d.max(diff(s));
        }
    }
    d
}

/// δ-grid `{2εs}` that a sample must carry to be scaled onto `s_grid`.
pub fn delta_grid(eps: f64, s_grid: &[f64]) -> Result<Vec<f64>> {
    if !(eps > 0.0 && eps < 0.5) {
        return Err(Error::param(format!("ε = {eps} outside (0, 1/2)")));
    }
    if s_grid.is_empty() {
        return Err(Error::param("s-grid is empty"));
    }
    if s_grid.windows(2).any(|w| !(w[0] < w[1])) || !(s_grid[0] > 0.0) {
        return Err(Error::param("s-grid must be positive and strictly increasing"));
    }
    let deltas: Vec<f64> = s_grid.iter().map(|&s| 2.0 * eps * s).collect();
    if let Some(&d) = deltas.iter().find(|&&d| d > 1.0 + 1e-12) {
        return Err(Error::param(format!(
            "grid point with 2εs = {d} > 1 (s must be at most 1/(2ε) = {})",
            0.5 / eps
        )));
    }
    Ok(deltas.into_iter().map(|d| d.min(1.0)).collect())
}

/// `H^ε_s = ε · count` at each grid point, right-continuous in between and
/// zero from `1/(2ε)` on.
pub fn build_shape(sample: &StationarySample, eps: f64, s_grid: &[f64]) -> Result<StepShape> {
    let deltas = delta_grid(eps, s_grid)?;
    if sample.deltas.len() != deltas.len()
        || sample
            .deltas
            .iter()
            .zip(&deltas)
            .any(|(a, b)| (a - b).abs() > 1e-9 * b.max(1.0))
    {
        return Err(Error::param("sample δ-grid does not equal {2εs : s in the s-grid}"));
    }
    if !sample.is_monotone() {
        return Err(Error::logic("counts increase with δ; windows are nested"));
    }
    let end = 0.5 / eps;
    let mut breakpoints = s_grid.to_vec();
    let mut values: Vec<f64> = std::iter::once(sample.counts[0])
        .chain(sample.counts.iter().copied())
        .map(|c| eps * c as f64)
        .collect();
    if *breakpoints.last().unwrap() < end * (1.0 - 1e-12) {
        breakpoints.push(end);
        values.push(0.0);
    } else if *values.last().unwrap() != 0.0 {
        return Err(Error::logic("count at δ = 1 must be zero"));
    }
    StepShape::new(breakpoints, values)
}

/// `E[H^ε_s] = ε(1-2εs)/(2εs)`, from the geometric stationary law.
pub fn mean_shape(eps: f64, s: f64) -> f64 {
    let delta = 2.0 * eps * s;
    eps * (1.0 - delta) / delta
}

/// Sup-distance between the CDFs of `H^ε_s = ε·Geom(1-2εs)` and of its
/// limit marginal `Exp(2s)`.
///
/// `H^ε_s` lives on the lattice `εℕ` with an atom of mass `2εs` at 0, so
/// this distance is at least `2εs` and is the floor for any KS comparison.
pub fn lattice_ks_distance(eps: f64, s: f64) -> f64 {
    let lambda = 1.0 - 2.0 * eps * s;
    if !(lambda > 0.0 && lambda < 1.0) {
        return 1.0;
    }
    // P[H^ε > εk] = λ^{k+1}; P[H^ε >= εk] = λ^k.
    let mut d: f64 = 0.0;
    let mut k = 0u64;
    loop {
        let tail = (-2.0 * s * eps * k as f64).exp();
        let above = lambda.powf(k as f64 + 1.0);
        let at_or_above = lambda.powf(k as f64);
        d = d.max((tail - above).abs()).max((tail - at_or_above).abs());
        if tail < 1e-12 && at_or_above < 1e-12 {
            break;
        }
        k += 1;
    }
    d
}

/// Default s-grid: `n` log-spaced points from `lo` to `hi`.
pub fn geometric_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let r = (hi / lo).ln() / (n - 1) as f64;
    let mut g: Vec<f64> = (0..n).map(|i| lo * (r * i as f64).exp()).collect();
    g[n - 1] = hi;
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stationary::Method;

    fn sample(deltas: Vec<f64>, counts: Vec<u64>) -> StationarySample {
        StationarySample {
            method: Method::Backward,
            deltas,
            counts,
            truncation_error_bound: 0.0,
        }
    }

    #[test]
    fn zero_counts_give_zero_shape() {
        let grid = [1.0, 2.0];
        let sh = build_shape(&sample(vec![0.2, 0.4], vec![0, 0]), 0.1, &grid).unwrap();
        assert!(sh.values().iter().all(|&v| v == 0.0));
        assert_eq!(sup_distance(&sh, &StepShape::zero(), 0.1), 0.0);
    }

    #[test]
    fn direct_scaling() {
        let sh = build_shape(&sample(vec![0.2], vec![7]), 0.1, &[1.0]).unwrap();
        assert!((sh.eval(1.0).unwrap() - 0.7).abs() < 1e-12);
        assert_eq!(sh.eval(5.0).unwrap(), 0.0);
        assert!((sh.eval(4.99).unwrap() - 0.7).abs() < 1e-12);
    }

    #[test]
    fn grid_checks() {
        assert!(build_shape(&sample(vec![0.3], vec![1]), 0.1, &[1.0])
            .unwrap_err()
            .is_parameter());
        assert!(delta_grid(0.04, &[12.5]).is_ok());
        assert!(delta_grid(0.04, &[13.0]).unwrap_err().is_parameter());
        assert!(delta_grid(0.6, &[0.1]).unwrap_err().is_parameter());
        let err = build_shape(&sample(vec![0.2, 0.4], vec![1, 3]), 0.1, &[1.0, 2.0]).unwrap_err();
        assert!(matches!(err, Error::Logic(_)));
    }

    #[test]
    fn full_window_end_point() {
        // s = 1/(2ε) is δ = 1; its count must be zero and no extra breakpoint is added.
        let sh = build_shape(&sample(vec![0.5, 1.0], vec![3, 0]), 0.04, &[6.25, 12.5]).unwrap();
        assert_eq!(sh.breakpoints(), &[6.25, 12.5]);
        assert_eq!(sh.eval(12.5).unwrap(), 0.0);
    }

    #[test]
    fn eval_examples() {
        let sh = StepShape::new(vec![1.0], vec![2.0, 0.0]).unwrap();
        assert_eq!(sh.eval(0.5).unwrap(), 2.0);
        assert_eq!(sh.eval(1.0).unwrap(), 0.0);
        assert_eq!(sh.eval(100.0).unwrap(), 0.0);
        assert!(sh.eval(0.0).unwrap_err().is_parameter());
        assert!(sh.eval(-1.0).unwrap_err().is_parameter());
    }

    #[test]
    fn invalid_shapes_rejected() {
        assert!(StepShape::new(vec![1.0], vec![1.0, 2.0]).is_err());
        assert!(StepShape::new(vec![1.0], vec![1.0, 0.5]).is_err());
        assert!(StepShape::new(vec![2.0, 1.0], vec![2.0, 1.0, 0.0]).is_err());
        assert!(StepShape::new(vec![1.0], vec![0.0]).is_err());
    }

    #[test]
    fn sup_distance_examples() {
        let b = StepShape::new(vec![2.0], vec![1.0, 0.0]).unwrap();
        assert_eq!(sup_distance(&StepShape::zero(), &b, 1.0), 1.0);
        assert_eq!(sup_distance(&StepShape::zero(), &b, 2.0), 0.0);
        assert_eq!(sup_distance(&b, &b, 0.5), 0.0);
        let redundant = StepShape::new(vec![1.0, 2.0], vec![1.0, 1.0, 0.0]).unwrap();
        assert_eq!(redundant.eval(1.5).unwrap(), b.eval(1.5).unwrap());
        let c = StepShape::new(vec![1.5, 3.0], vec![2.0, 0.5, 0.0]).unwrap();
        assert_eq!(sup_distance(&c, &b, 0.5), sup_distance(&c, &redundant, 0.5));
    }

    #[test]
    fn mean_shape_oracle() {
        assert!((mean_shape(0.01, 1.0) - 0.49).abs() < 1e-12);
        assert!((mean_shape(0.01, 0.5) - 0.99).abs() < 1e-12);
    }

    #[test]
    fn default_grid() {
        let g = geometric_grid(0.1, 12.5, 40);
        assert_eq!(g.len(), 40);
        assert_eq!(g[0], 0.1);
        assert_eq!(g[39], 12.5);
        assert!(delta_grid(0.04, &g).is_ok());
    }

    #[test]
    fn lattice_distance_is_the_atom() {
        assert!((lattice_ks_distance(0.005, 2.0) - 0.02).abs() < 1e-3);
        assert!((lattice_ks_distance(0.005, 1.0) - 0.01).abs() < 1e-3);
        assert!(lattice_ks_distance(1e-6, 1.0) < 1e-5);
        assert_eq!(lattice_ks_distance(0.5, 1.0), 1.0);
    }
}
