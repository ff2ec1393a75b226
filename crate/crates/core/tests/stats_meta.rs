use mailbox_core::point_process::RngStream;
use mailbox_core::stats::{chi_square_counts, ks_one_sample, poisson_pmf, two_sample_ks};

fn exp_draws(rng: &mut RngStream, n: usize) -> Vec<f64> {
    (0..n).map(|_| -(1.0 - rng.uniform()).ln()).collect()
}

#[test]
fn two_sample_ks_keeps_its_level() {
    let reps = 200;
    let passed = (0..reps)
        .filter(|&id| {
            let mut rng = RngStream::new(51, id);
            let a = exp_draws(&mut rng, 10_000);
            let b = exp_draws(&mut rng, 10_000);
            two_sample_ks(&a, &b).unwrap().pass
        })
        .count();
    assert!(passed as f64 >= 0.98 * reps as f64, "{passed} of {reps}");
}

#[test]
fn one_sample_p_values_are_uniform() {
    let ps: Vec<f64> = (0..500)
        .map(|id| {
            let mut rng = RngStream::new(52, id);
            let x = exp_draws(&mut rng, 1000);
            ks_one_sample(&x, |v| 1.0 - (-v).exp(), "Exp(1)").unwrap().p_value
        })
        .collect();
    let r = ks_one_sample(&ps, |p| p.clamp(0.0, 1.0), "U(0,1)").unwrap();
    assert!(r.pass, "{r:?}");
}

#[test]
fn poisson_chi_square_rejects_a_shifted_mean() {
    let mut rng = RngStream::new(53, 0);
    let counts: Vec<u64> = (0..10_000)
        .map(|_| {
            // Poisson(2.2) by counting unit-rate exponential gaps.
            let (mut t, mut k) = (-(1.0 - rng.uniform()).ln(), 0);
            while t < 2.2 {
                k += 1;
                t -= (1.0 - rng.uniform()).ln();
            }
            k
        })
        .collect();
    let hist = mailbox_core::stats::histogram(&counts);
    assert!(chi_square_counts(&hist, poisson_pmf(2.2), 5.0, "Poisson").unwrap().pass);
    assert!(!chi_square_counts(&hist, poisson_pmf(2.0), 5.0, "Poisson").unwrap().pass);
}
