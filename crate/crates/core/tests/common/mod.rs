#![allow(dead_code)]

pub mod oracles;

use conefluct::{MatrixLaw, PositiveMatrix, SimplexVector};
use proptest::prelude::*;

/// The calibrated two-atom reference law shipped with the CLI fixtures.
pub fn fixture_law() -> MatrixLaw {
    let atoms = vec![
        PositiveMatrix::new(
            2,
            vec![
                2.8142566099159767,
                0.5628513219831953,
                0.46904276831932945,
                1.1257026439663906,
            ],
        )
        .unwrap(),
        PositiveMatrix::new(
            2,
            vec![
                0.04690427683193295,
                0.0938085536638659,
                0.0938085536638659,
                0.5628513219831953,
            ],
        )
        .unwrap(),
    ];
    MatrixLaw::new(atoms, vec![0.5, 0.5]).unwrap()
}

/// Law whose atoms are `c I` with `c` in `{e^-1, e}`: the cocycle is an
/// i.i.d. +-1 walk.
pub fn scalar_law() -> MatrixLaw {
    let e = std::f64::consts::E;
    MatrixLaw::uniform(vec![
        PositiveMatrix::scalar(2, 1.0 / e).unwrap(),
        PositiveMatrix::scalar(2, e).unwrap(),
    ])
    .unwrap()
}

/// Entrywise positive `d x d` matrices with entries in `[0.01, 10]`.
pub fn positive_matrix(d: usize) -> impl Strategy<Value = PositiveMatrix> {
    prop::collection::vec(0.01f64..10.0, d * d)
        .prop_map(move |e| PositiveMatrix::new(d, e).unwrap())
}

/// Non-negative matrices with some zero entries but no zero column.
pub fn allowable_matrix(d: usize) -> impl Strategy<Value = PositiveMatrix> {
    (
        prop::collection::vec(0.01f64..10.0, d * d),
        prop::collection::vec(prop::bool::weighted(0.3), d * d),
    )
        .prop_map(move |(mut e, zero)| {
            for (k, z) in zero.into_iter().enumerate() {
                let (i, j) = (k / d, k % d);
                if z && i != j {
                    e[k] = 0.0;
                }
            }
            PositiveMatrix::new(d, e).unwrap()
        })
}

pub fn simplex_point(d: usize) -> impl Strategy<Value = SimplexVector> {
    prop::collection::vec(0.001f64..1.0, d).prop_map(|v| SimplexVector::from_cone(&v).unwrap())
}

/// Simplex points that may sit on a face.
pub fn simplex_point_with_zeros(d: usize) -> impl Strategy<Value = SimplexVector> {
    prop::collection::vec(prop_oneof![Just(0.0), 0.001f64..1.0], d)
        .prop_filter("not all zero", |v| v.iter().any(|&c| c > 0.0))
        .prop_map(|v| SimplexVector::from_cone(&v).unwrap())
}
