use dlr_core::uncertainty::{
    build_ellipsoid, build_polytope, chi2_cdf, chi2_quantile, normal_cdf, truncated_deficit_expectation, RatingForecast,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[test]
fn chi2_two_dof_quantile_matches_closed_form() {
    // With two degrees of freedom the CDF is 1 - exp(-x/2).
    let q = chi2_quantile(2, 0.95).unwrap();
    assert!((q - 5.9915).abs() < 1e-3, "{q}");
    assert!((q + 2.0 * 0.05f64.ln()).abs() < 1e-6, "{q}");
    for x in [0.1, 1.0, 4.0, 12.0] {
        assert!((chi2_cdf(2, x) - (1.0 - (-x / 2.0f64).exp())).abs() < 1e-12);
    }
}

#[test]
fn correlated_ellipsoid_covers_gamma_of_normal_draws() {
    let f = RatingForecast::new(
        vec![1.4, 1.6, 1.5],
        vec![vec![0.04, 0.01, 0.0], vec![0.01, 0.02, 0.005], vec![0.0, 0.005, 0.03]],
        3.0,
    )
    .unwrap();
    let e = build_ellipsoid(&f, 0.9).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 100_000;
    let inside = (0..n).filter(|_| e.contains(&e.sample_normal(&mut rng))).count();
    let rate = inside as f64 / n as f64;
    assert!((rate - 0.9).abs() < 0.01, "{rate}");
}

#[test]
fn polytope_contains_ellipsoid_boundary_in_three_dimensions() {
    let f = RatingForecast::independent(vec![1.5, 1.4, 1.3], &[0.1, 0.2, 0.15], 3.0).unwrap();
    let e = build_ellipsoid(&f, 0.95).unwrap();
    let w = build_polytope(&e, 6).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..10_000 {
        let z = e.sample_boundary_z(&mut rng);
        assert!(w.contains_z(&z));
    }
}

/// Monte Carlo `E[max(0, y - delta)]` for one line with its standard error.
fn mc_deficit(mu: f64, sd: f64, y: f64, n: usize, rng: &mut ChaCha8Rng) -> (f64, f64) {
    let (mut s, mut s2) = (0.0, 0.0);
    for _ in 0..n {
        let z: f64 = rng.sample(StandardNormal);
        let v = (y - (mu + sd * z)).max(0.0);
        s += v;
        s2 += v * v;
    }
    let m = s / n as f64;
    let var = (s2 / n as f64 - m * m).max(0.0);
    (m, (var / n as f64).sqrt())
}

#[test]
fn deficit_expectation_matches_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(123);
    for _ in 0..20 {
        let mu = rng.random_range(1.0..2.0);
        let sd = rng.random_range(0.02..0.4);
        let y = mu + sd * rng.random_range(-2.5..2.5);
        let f = RatingForecast::independent(vec![mu], &[sd], 3.0).unwrap();
        let e = truncated_deficit_expectation(&f, &[y]).unwrap()[0];
        let (m, se) = mc_deficit(mu, sd, y, 1_000_000, &mut rng);
        assert!((e - m).abs() <= 3.0 * se + 1e-12, "mu {mu} sd {sd} y {y}: {e} vs {m} ± {se}");
    }
}

proptest! {
    #[test]
    fn quantile_inverts_cdf(k in 1usize..7, gamma in 0.5..0.999f64) {
        let q = chi2_quantile(k, gamma).unwrap();
        prop_assert!((chi2_cdf(k, q) - gamma).abs() < 1e-7);
    }

    /// The expectation is increasing in y with slope P(delta < y).
    #[test]
    fn deficit_expectation_slope(mu in 1.0..2.0f64, sd in 0.05..0.4f64, t in -2.0..2.0f64) {
        let f = RatingForecast::independent(vec![mu], &[sd], 3.0).unwrap();
        let y = mu + t * sd;
        let h = 1e-5;
        let lo = truncated_deficit_expectation(&f, &[y - h]).unwrap()[0];
        let hi = truncated_deficit_expectation(&f, &[y + h]).unwrap()[0];
        let slope = (hi - lo) / (2.0 * h);
        prop_assert!((slope - normal_cdf(t)).abs() < 1e-5, "{} vs {}", slope, normal_cdf(t));
    }

    #[test]
    fn polytope_vertices_lie_outside_or_on_the_ellipsoid(sd1 in 0.05..0.3f64, sd2 in 0.05..0.3f64, facets in 4usize..12) {
        let f = RatingForecast::independent(vec![1.5, 1.5], &[sd1, sd2], 3.0).unwrap();
        let e = build_ellipsoid(&f, 0.95).unwrap();
        let w = build_polytope(&e, facets).unwrap();
        for v in &w.vertices {
            let z = e.z_of(v).unwrap();
            let r = z.iter().map(|x| x * x).sum::<f64>().sqrt();
            prop_assert!(r >= e.radius() * (1.0 - 1e-9));
        }
    }
}
