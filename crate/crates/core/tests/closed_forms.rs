//! Brownian and Rayleigh closed forms against direct quadrature, and the KS
//! statistic against its definition.

mod common;

use common::oracles::{integrate, killed_density, ks_brute, survival_integral};
use conefluct::validation::{
    bm_corridor, bm_killed_mass_below, bm_survival, ks_statistic, rayleigh_cdf, rayleigh_quantile,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn closed_forms_match_quadrature_on_random_draws() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..100 {
        let n: f64 = rng.random_range(1.0..1e4);
        let sigma: f64 = rng.random_range(0.1..3.0);
        let scale = sigma * n.sqrt();
        let a = rng.random_range(0.0..4.0) * scale;
        let b = a + rng.random_range(0.01..6.0) * scale;

        let got = bm_survival(a, n, sigma);
        let want = survival_integral(a, n, sigma);
        assert!(
            (got - want).abs() < 1e-10,
            "survival a={a} n={n} s={sigma}: {got} vs {want}"
        );

        let got = bm_corridor(a, b, n, sigma).unwrap();
        let want = integrate(killed_density(a, n, sigma), a, b);
        assert!(
            (got - want).abs() < 1e-10,
            "corridor a={a} b={b} n={n}: {got} vs {want}"
        );

        let got = bm_killed_mass_below(a, n, sigma);
        let want = integrate(killed_density(a, n, sigma), 0.0, a);
        assert!(
            (got - want).abs() < 1e-10,
            "below a={a} n={n}: {got} vs {want}"
        );
    }
}

#[test]
fn corridor_to_infinity_is_survival_minus_mass_below() {
    for (a, n, sigma) in [(1.0, 10.0, 1.0), (0.3, 100.0, 0.7), (5.0, 2.0, 2.0)] {
        let far = a + 60.0 * sigma * f64::sqrt(n);
        let lhs = bm_corridor(a, far, n, sigma).unwrap();
        let rhs = bm_survival(a, n, sigma) - bm_killed_mass_below(a, n, sigma);
        assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
    }
}

#[test]
fn rayleigh_median() {
    for sigma in [0.1, 0.75, 1.0, 3.0] {
        let median = sigma * (2.0 * 2f64.ln()).sqrt();
        assert!((rayleigh_cdf(median, sigma) - 0.5).abs() < 1e-12);
        assert!((rayleigh_quantile(0.5, sigma) - median).abs() < 1e-12);
    }
}

proptest! {
    #[test]
    fn ks_matches_brute_force(
        sample in prop::collection::vec(prop_oneof![0.0f64..4.0, Just(1.0), Just(2.5)], 1..=100),
        sigma in 0.2f64..3.0,
    ) {
        let fast = ks_statistic(&sample, |t| rayleigh_cdf(t, sigma)).unwrap();
        let slow = ks_brute(&sample, |t| rayleigh_cdf(t, sigma));
        prop_assert!((fast - slow).abs() < 1e-15, "{fast} vs {slow}");
    }

    #[test]
    fn rayleigh_cdf_is_a_cdf(sigma in 0.05f64..10.0, s in 0.0f64..50.0, t in 0.0f64..50.0) {
        let (lo, hi) = if s <= t { (s, t) } else { (t, s) };
        prop_assert!(rayleigh_cdf(lo, sigma) <= rayleigh_cdf(hi, sigma));
        prop_assert!((0.0..=1.0).contains(&rayleigh_cdf(s, sigma)));
        prop_assert_eq!(rayleigh_cdf(-s, sigma), 0.0);
        prop_assert!(rayleigh_cdf(1e3 * sigma, sigma) == 1.0);
    }

    #[test]
    fn survival_is_monotone(a in 0.0f64..10.0, b in 0.0f64..10.0, n in 1.0f64..1e4, sigma in 0.1f64..3.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(bm_survival(lo, n, sigma) <= bm_survival(hi, n, sigma));
        prop_assert!(bm_survival(a, 2.0 * n, sigma) <= bm_survival(a, n, sigma));
        prop_assert!((0.0..1.0 + 1e-16).contains(&bm_survival(a, n, sigma)));
    }
}
