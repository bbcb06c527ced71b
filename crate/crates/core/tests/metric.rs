mod common;

use common::*;
use conefluct::matrix::{
    contraction_coeff, contraction_coeff_checked, hennion_distance, matrix_norms,
};
use conefluct::{PositiveMatrix, SimplexVector};
use proptest::prelude::*;
use proptest::strategy::ValueTree;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

proptest! {
    #[test]
    fn cocycle_identity(
        (g, h, x) in (2usize..=4).prop_flat_map(|d| {
            (positive_matrix(d), allowable_matrix(d), simplex_point_with_zeros(d))
        })
    ) {
        let (hx, rho_h) = h.act(&x).unwrap();
        let lhs = g.mul(&h).unwrap().rho(&x).unwrap();
        prop_assert!(close(lhs, rho_h + g.rho(&hx).unwrap(), 1e-12));
    }

    #[test]
    fn product_acts_as_composition(g in positive_matrix(2), h in allowable_matrix(2), x in simplex_point_with_zeros(2)) {
        let (hx, rho_h) = h.act(&x).unwrap();
        let lhs = g.mul(&h).unwrap().rho(&x).unwrap();
        prop_assert!(close(lhs, rho_h + g.rho(&hx).unwrap(), 1e-12));
        // The product acts as the composition.
        let (ghx, _) = g.mul(&h).unwrap().act(&x).unwrap();
        let (g_hx, _) = g.act(&hx).unwrap();
        for (a, b) in ghx.coords().iter().zip(g_hx.coords()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn metric_axioms(
        x in simplex_point_with_zeros(3),
        y in simplex_point_with_zeros(3),
        z in simplex_point_with_zeros(3),
    ) {
        let d = |p: &SimplexVector, q: &SimplexVector| hennion_distance(p, q).value();
        prop_assert!(d(&x, &x).abs() < 1e-12);
        prop_assert!((d(&x, &y) - d(&y, &x)).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&d(&x, &y)));
        prop_assert!(d(&x, &z) <= d(&x, &y) + d(&y, &z) + 1e-12);
        if d(&x, &y) < 1e-12 {
            for (a, b) in x.coords().iter().zip(y.coords()) {
                prop_assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn action_contracts(g in allowable_matrix(3), x in simplex_point_with_zeros(3), y in simplex_point_with_zeros(3)) {
        let (gx, _) = g.act(&x).unwrap();
        let (gy, _) = g.act(&y).unwrap();
        let c = contraction_coeff(&g).value();
        prop_assert!(hennion_distance(&gx, &gy).value() <= c * hennion_distance(&x, &y).value() + 1e-12);
    }

    #[test]
    fn contraction_is_submultiplicative(g in allowable_matrix(3), h in allowable_matrix(3)) {
        let c = |m: &PositiveMatrix| contraction_coeff(m).value();
        prop_assert!(c(&g.mul(&h).unwrap()) <= c(&g) * c(&h) + 1e-12);
    }

    #[test]
    fn positive_matrices_contract_strictly(g in positive_matrix(3)) {
        prop_assert!(contraction_coeff(&g).value() < 1.0);
    }

    #[test]
    fn norm_sandwich(g in allowable_matrix(3), x in simplex_point_with_zeros(3), h in allowable_matrix(3)) {
        let n = matrix_norms(&g);
        let size = g.rho(&x).unwrap().exp();
        prop_assert!(n.v * (1.0 - 1e-12) <= size && size <= n.norm * (1.0 + 1e-12));
        prop_assert!(g.rho(&x).unwrap().abs() <= n.n.ln() + 1e-12);
        let gh = matrix_norms(&g.mul(&h).unwrap());
        let nh = matrix_norms(&h);
        prop_assert!(gh.norm <= n.norm * nh.norm * (1.0 + 1e-12));
        prop_assert!(gh.v >= n.v * nh.v * (1.0 - 1e-12));
    }
}

#[test]
fn vertex_maximization_survives_random_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut atoms: Vec<PositiveMatrix> = common::fixture_law().atoms().to_vec();
    let mut runner = proptest::test_runner::TestRunner::deterministic();
    for d in [2, 3, 4] {
        for _ in 0..20 {
            atoms.push(allowable_matrix(d).new_tree(&mut runner).unwrap().current());
        }
    }
    for g in &atoms {
        let est = contraction_coeff_checked(g, 2000, &mut rng);
        assert!(!est.flagged, "{g:?}: {est:?}");
        assert!(est.sampled_max.value() <= est.vertex_value.value() + 1e-12);
    }
}
