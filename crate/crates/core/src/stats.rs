//! Goodness-of-fit tests that turn samples into pass/fail verdicts.
//!
//! p-values are asymptotic: the Kolmogorov limit law (with the usual
//! `sqrt(n) + 0.12 + 0.11/sqrt(n)` finite-sample correction) for KS, and the
//! chi-square law for Pearson statistics. Integer-valued laws are tested with
//! chi-square only.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

pub const DEFAULT_ALPHA: f64 = 0.01;
pub const DEFAULT_MIN_BIN: f64 = 5.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
    pub null_name: String,
    pub alpha: f64,
    pub pass: bool,
}

impl TestReport {
    fn new(statistic: f64, p_value: f64, n: usize, null_name: impl Into<String>) -> Self {
        let p_value = p_value.clamp(0.0, 1.0);
        Self {
            statistic,
            p_value,
            n,
            null_name: null_name.into(),
            alpha: DEFAULT_ALPHA,
            pass: p_value > DEFAULT_ALPHA,
        }
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self.pass = self.p_value > alpha;
        self
    }

    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.null_name = name.into();
        self
    }
}

/// Empirical distribution function of a finite sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Ecdf {
    values: Vec<f64>,
}

impl Ecdf {
    pub fn new(mut values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::param("empty sample"));
        }
        if values.iter().any(|v| v.is_nan()) {
            return Err(Error::param("sample contains NaN"));
        }
        values.sort_by(f64::total_cmp);
        Ok(Self { values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Fraction of the sample `<= x`.
    pub fn eval(&self, x: f64) -> f64 {
        self.values.partition_point(|&v| v <= x) as f64 / self.values.len() as f64
    }
}

/// Survival function of the Kolmogorov distribution, `P[K > x]`.
pub fn kolmogorov_sf(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x < 1.18 {
        // Theta-function form converges fast for small arguments.
        let y = std::f64::consts::PI.powi(2) / (8.0 * x * x);
        let mut sum = 0.0;
        for k in 1..=20 {
            let j = (2 * k - 1) as f64;
            sum += (-j * j * y).exp();
        }
        1.0 - (2.0 * std::f64::consts::PI).sqrt() / x * sum
    } else {
        let mut sum = 0.0;
        for k in 1..=100 {
            let kf = k as f64;
            let term = (-2.0 * kf * kf * x * x).exp();
            sum += if k % 2 == 1 { term } else { -term };
            if term < 1e-17 {
                break;
            }
        }
        (2.0 * sum).clamp(0.0, 1.0)
    }
}

fn ks_p_value(d: f64, effective_n: f64) -> f64 {
    let rn = effective_n.sqrt();
    kolmogorov_sf((rn + 0.12 + 0.11 / rn) * d)
}

/// Largest KS distance that still passes at level `alpha` with effective
/// sample size `effective_n` (`nm/(n+m)` for two samples).
pub fn ks_critical_value(alpha: f64, effective_n: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) || !(effective_n > 0.0) {
        return Err(Error::param(format!(
            "need alpha in (0, 1) and a positive sample size, got {alpha} and {effective_n}"
        )));
    }
    let (mut lo, mut hi) = (0.0, 10.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if kolmogorov_sf(mid) > alpha {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let rn = effective_n.sqrt();
    Ok(hi / (rn + 0.12 + 0.11 / rn))
}

const MIN_KS_SAMPLE: usize = 10;

/// One-sample KS distance between the sample and a continuous null CDF.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> Result<f64> {
    let ecdf = Ecdf::new(samples.to_vec())?;
    let n = ecdf.len() as f64;
    let mut d = 0.0f64;
    for (i, &x) in ecdf.values().iter().enumerate() {
        let f = cdf(x);
        d = d.max((i + 1) as f64 / n - f).max(f - i as f64 / n);
    }
    Ok(d)
}

pub fn ks_one_sample(samples: &[f64], cdf: impl Fn(f64) -> f64, null_name: &str) -> Result<TestReport> {
    if samples.len() < MIN_KS_SAMPLE {
        return Err(Error::param(format!(
            "KS test needs at least {MIN_KS_SAMPLE} samples, got {}",
            samples.len()
        )));
    }
    let d = ks_statistic(samples, cdf)?;
    Ok(TestReport::new(
        d,
        ks_p_value(d, samples.len() as f64),
        samples.len(),
        null_name,
    ))
}

/// Two-sample KS distance `sup_x |F_a(x) - F_b(x)|`, ties handled exactly.
pub fn two_sample_ks_statistic(a: &[f64], b: &[f64]) -> Result<f64> {
    let ea = Ecdf::new(a.to_vec())?;
    let eb = Ecdf::new(b.to_vec())?;
    let (xa, xb) = (ea.values(), eb.values());
    let (na, nb) = (xa.len() as f64, xb.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d = 0.0f64;
    while i < xa.len() && j < xb.len() {
        let x = xa[i].min(xb[j]);
        while i < xa.len() && xa[i] <= x {
            i += 1;
        }
        while j < xb.len() && xb[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(d)
}

pub fn two_sample_ks(a: &[f64], b: &[f64]) -> Result<TestReport> {
    if a.len() < MIN_KS_SAMPLE || b.len() < MIN_KS_SAMPLE {
        return Err(Error::param(format!(
            "two-sample KS needs at least {MIN_KS_SAMPLE} samples per side, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let d = two_sample_ks_statistic(a, b)?;
    let (na, nb) = (a.len() as f64, b.len() as f64);
    Ok(TestReport::new(
        d,
        ks_p_value(d, na * nb / (na + nb)),
        a.len() + b.len(),
        "two-sample",
    ))
}

/// Counts of each value `0..=max`.
pub fn histogram(values: &[u64]) -> Vec<u64> {
    let len = values.iter().max().map_or(0, |&m| m as usize + 1);
    let mut h = vec![0u64; len];
    for &v in values {
        h[v as usize] += 1;
    }
    h
}

fn chi_square_sf(statistic: f64, dof: usize) -> Result<f64> {
    let dist = ChiSquared::new(dof as f64).map_err(|e| Error::param(e.to_string()))?;
    Ok(dist.sf(statistic))
}

/// A merged cell: contiguous value range `[lo, hi]` (`hi = None` is an open tail).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bin {
    pub lo: u64,
    pub hi: Option<u64>,
    pub observed: f64,
    pub expected: f64,
}

/// Merges cells left to right until each expected count reaches `min_bin`;
/// the open upper tail absorbs the null mass beyond the last cell.
pub fn merge_bins(observed: &[u64], null_pmf: &dyn Fn(u64) -> f64, min_bin: f64) -> Result<Vec<Bin>> {
    let total: u64 = observed.iter().sum();
    let total = total as f64;
    const MAX_SUPPORT: u64 = 50_000_000;
    let mut bins = Vec::new();
    let (mut lo, mut cur_o, mut cur_e, mut cum_p) = (0u64, 0.0, 0.0, 0.0);
    let mut k = 0u64;
    loop {
        let p = null_pmf(k);
        if !(0.0..=1.0 + 1e-12).contains(&p) {
            return Err(Error::param(format!("null pmf({k}) = {p} is not a probability")));
        }
        cum_p += p;
        cur_e += total * p;
        cur_o += observed.get(k as usize).copied().unwrap_or(0) as f64;
        let tail = (total * (1.0 - cum_p)).max(0.0);
        if tail < min_bin {
            let beyond: u64 = observed.iter().skip(k as usize + 1).sum();
            bins.push(Bin {
                lo,
                hi: None,
                observed: cur_o + beyond as f64,
                expected: cur_e + tail,
            });
            break;
        }
        if cur_e >= min_bin {
            bins.push(Bin {
                lo,
                hi: Some(k),
                observed: cur_o,
                expected: cur_e,
            });
            lo = k + 1;
            cur_o = 0.0;
            cur_e = 0.0;
        }
        k += 1;
        if k > MAX_SUPPORT {
            return Err(Error::param("null pmf does not sum to one"));
        }
    }
    if bins.len() >= 2 && bins[bins.len() - 1].expected < min_bin {
        let last = bins.pop().unwrap();
        let prev = bins.last_mut().unwrap();
        prev.hi = None;
        prev.observed += last.observed;
        prev.expected += last.expected;
    }
    Ok(bins)
}

const MIN_CHI_SQUARE_TOTAL: u64 = 100;

/// Pearson goodness-of-fit of an integer histogram against a pmf on ℕ.
pub fn chi_square_counts(
    observed: &[u64],
    null_pmf: impl Fn(u64) -> f64,
    min_bin: f64,
    null_name: &str,
) -> Result<TestReport> {
    let total: u64 = observed.iter().sum();
    if total < MIN_CHI_SQUARE_TOTAL {
        return Err(Error::param(format!(
            "chi-square needs at least {MIN_CHI_SQUARE_TOTAL} observations, got {total}"
        )));
    }
    let bins = merge_bins(observed, &null_pmf, min_bin)?;
    if bins.len() < 2 {
        return Err(Error::param("all mass falls into a single bin"));
    }
    let stat: f64 = bins
        .iter()
        .map(|b| (b.observed - b.expected).powi(2) / b.expected)
        .sum();
    let p = chi_square_sf(stat, bins.len() - 1)?;
    Ok(TestReport::new(stat, p, total as usize, null_name))
}

/// Pearson homogeneity test of two integer histograms (2 × K table).
pub fn chi_square_homogeneity(a: &[u64], b: &[u64], min_bin: f64) -> Result<TestReport> {
    let (na, nb) = (a.iter().sum::<u64>(), b.iter().sum::<u64>());
    if na < MIN_CHI_SQUARE_TOTAL || nb < MIN_CHI_SQUARE_TOTAL {
        return Err(Error::param(format!(
            "homogeneity test needs at least {MIN_CHI_SQUARE_TOTAL} observations per sample"
        )));
    }
    let n = (na + nb) as f64;
    let (fa, fb) = (na as f64 / n, nb as f64 / n);
    let len = a.len().max(b.len());
    let get = |h: &[u64], k: usize| h.get(k).copied().unwrap_or(0) as f64;

    let mut cells: Vec<(f64, f64)> = Vec::new();
    let (mut ca, mut cb) = (0.0, 0.0);
    for k in 0..len {
        ca += get(a, k);
        cb += get(b, k);
        let col = ca + cb;
        if col * fa.min(fb) >= min_bin {
            cells.push((ca, cb));
            ca = 0.0;
            cb = 0.0;
        }
    }
    if ca + cb > 0.0 {
        match cells.last_mut() {
            Some(last) => {
                last.0 += ca;
                last.1 += cb;
            }
            None => cells.push((ca, cb)),
        }
    }
    if cells.len() < 2 {
        return Err(Error::param("all mass falls into a single bin"));
    }
    let stat: f64 = cells
        .iter()
        .map(|&(oa, ob)| {
            let col = oa + ob;
            let (ea, eb) = (col * fa, col * fb);
            (oa - ea).powi(2) / ea + (ob - eb).powi(2) / eb
        })
        .sum();
    let p = chi_square_sf(stat, cells.len() - 1)?;
    Ok(TestReport::new(stat, p, (na + nb) as usize, "homogeneity"))
}

/// `(1 - λ) λ^n`.
pub fn geometric_pmf(lambda: f64) -> impl Fn(u64) -> f64 {
    move |n| {
        if lambda == 0.0 {
            if n == 0 {
                1.0
            } else {
                0.0
            }
        } else {
            (1.0 - lambda) * lambda.powf(n as f64)
        }
    }
}

/// `e^{-m} m^k / k!`.
pub fn poisson_pmf(mean: f64) -> impl Fn(u64) -> f64 {
    move |k| {
        if mean == 0.0 {
            return if k == 0 { 1.0 } else { 0.0 };
        }
        let k = k as f64;
        (k * mean.ln() - mean - ln_gamma(k + 1.0)).exp()
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Standard error of the sample mean.
pub fn standard_error(xs: &[f64]) -> f64 {
    (variance(xs) / xs.len() as f64).sqrt()
}
