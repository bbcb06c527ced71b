//! Cone and simplex geometry for non-negative matrices.
//!
//! A [`PositiveMatrix`] is a `d x d` non-negative matrix with no zero column;
//! it acts linearly on the non-negative cone and projectively on the simplex
//! of unit l1-norm vectors. The projective action is carried together with
//! the log-norm cocycle `rho(g, x) = log |gx|`, so products are never formed
//! explicitly.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the coordinate sum of a [`SimplexVector`].
pub const SIMPLEX_TOL: f64 = 1e-12;

/// Non-negative square matrix in which every column has a positive entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMatrix", into = "RawMatrix")]
pub struct PositiveMatrix {
    dim: usize,
    /// Row-major: `entries[i * dim + j] = g(i, j)`.
    entries: Vec<f64>,
    interior: bool,
}

#[derive(Serialize, Deserialize)]
struct RawMatrix {
    dim: usize,
    entries: Vec<f64>,
}

impl TryFrom<RawMatrix> for PositiveMatrix {
    type Error = Error;
    fn try_from(raw: RawMatrix) -> Result<Self> {
        PositiveMatrix::new(raw.dim, raw.entries)
    }
}

impl From<PositiveMatrix> for RawMatrix {
    fn from(g: PositiveMatrix) -> Self {
        RawMatrix {
            dim: g.dim,
            entries: g.entries,
        }
    }
}

impl PositiveMatrix {
    pub fn new(dim: usize, entries: Vec<f64>) -> Result<Self> {
        if dim < 2 {
            return Err(Error::InvalidMatrix(format!("dimension {dim} < 2")));
        }
        if entries.len() != dim * dim {
            return Err(Error::InvalidMatrix(format!(
                "expected {} entries for dimension {dim}, got {}",
                dim * dim,
                entries.len()
            )));
        }
        if let Some(bad) = entries.iter().find(|e| !e.is_finite() || **e < 0.0) {
            return Err(Error::InvalidMatrix(format!(
                "entry {bad} is negative or not finite"
            )));
        }
        for j in 0..dim {
            if (0..dim).all(|i| entries[i * dim + j] == 0.0) {
                return Err(Error::InvalidMatrix(format!(
                    "column {j} is identically zero"
                )));
            }
        }
        let interior = entries.iter().all(|&e| e > 0.0);
        Ok(Self {
            dim,
            entries,
            interior,
        })
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let dim = rows.len();
        if let Some(r) = rows.iter().find(|r| r.len() != dim) {
            return Err(Error::InvalidMatrix(format!(
                "row of length {} in a {dim}-row matrix",
                r.len()
            )));
        }
        Self::new(dim, rows.iter().flat_map(|r| r.iter().copied()).collect())
    }

    pub fn identity(dim: usize) -> Self {
        Self::diagonal(&vec![1.0; dim]).expect("identity is in S")
    }

    pub fn scalar(dim: usize, c: f64) -> Result<Self> {
        Self::diagonal(&vec![c; dim])
    }

    pub fn diagonal(diag: &[f64]) -> Result<Self> {
        let dim = diag.len();
        let mut entries = vec![0.0; dim * dim];
        for (i, &c) in diag.iter().enumerate() {
            entries[i * dim + i] = c;
        }
        Self::new(dim, entries)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.dim + j]
    }

    /// True when every entry is strictly positive.
    pub fn is_interior(&self) -> bool {
        self.interior
    }

    /// Boolean zero pattern, row-major.
    pub fn pattern(&self) -> Vec<bool> {
        self.entries.iter().map(|&e| e > 0.0).collect()
    }

    pub fn column_sums(&self) -> Vec<f64> {
        (0..self.dim)
            .map(|j| (0..self.dim).map(|i| self.get(i, j)).sum())
            .collect()
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(self.dim, self.entries.iter().map(|e| e * factor).collect())
    }

    /// Matrix product `self * rhs`.
    pub fn mul(&self, rhs: &PositiveMatrix) -> Result<Self> {
        if rhs.dim != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: rhs.dim,
            });
        }
        let d = self.dim;
        let mut out = vec![0.0; d * d];
        for i in 0..d {
            for k in 0..d {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..d {
                    out[i * d + j] += a * rhs.get(k, j);
                }
            }
        }
        Self::new(d, out)
    }

    /// Writes `g . x` into `out` and returns `rho(g, x) = log |gx|`.
    ///
    /// `x` must be a point of the simplex; this is the hot path of every
    /// simulation and does not re-validate.
    #[inline]
    pub fn act_into(&self, x: &[f64], out: &mut [f64]) -> f64 {
        let d = self.dim;
        debug_assert_eq!(x.len(), d);
        debug_assert_eq!(out.len(), d);
        let mut total = 0.0;
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.entries[i * d..(i + 1) * d];
            let s: f64 = row.iter().zip(x).map(|(a, b)| a * b).sum();
            *o = s;
            total += s;
        }
        let inv = 1.0 / total;
        for o in out.iter_mut() {
            *o *= inv;
        }
        total.ln()
    }

    /// Projective action and cocycle value.
    pub fn act(&self, x: &SimplexVector) -> Result<(SimplexVector, f64)> {
        check_dim(self.dim, x.dim())?;
        let mut out = vec![0.0; self.dim];
        let rho = self.act_into(&x.coords, &mut out);
        Ok((SimplexVector { coords: out }, rho))
    }

    /// `rho(g, x) = log |gx|` without the projective image.
    pub fn rho(&self, x: &SimplexVector) -> Result<f64> {
        self.act(x).map(|(_, rho)| rho)
    }
}

fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        Err(Error::DimensionMismatch { expected, got })
    } else {
        Ok(())
    }
}

/// Point of the simplex `{x >= 0, sum x = 1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct SimplexVector {
    coords: Vec<f64>,
}

impl TryFrom<Vec<f64>> for SimplexVector {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        SimplexVector::new(v)
    }
}

impl From<SimplexVector> for Vec<f64> {
    fn from(x: SimplexVector) -> Self {
        x.coords
    }
}

impl SimplexVector {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.len() < 2 {
            return Err(Error::InvalidSimplex(format!(
                "dimension {} < 2",
                coords.len()
            )));
        }
        if coords.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(Error::InvalidSimplex(format!(
                "coordinates must be finite and non-negative: {coords:?}"
            )));
        }
        let sum: f64 = coords.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::InvalidSimplex(format!(
                "coordinates sum to {sum}, not 1"
            )));
        }
        Ok(Self { coords })
    }

    /// Projects a non-zero vector of the cone onto the simplex.
    pub fn from_cone(v: &[f64]) -> Result<Self> {
        if v.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(Error::InvalidSimplex(format!("{v:?} is not in the cone")));
        }
        let sum: f64 = v.iter().sum();
        if sum <= 0.0 {
            return Err(Error::InvalidSimplex("zero vector".into()));
        }
        Self::new(v.iter().map(|c| c / sum).collect())
    }

    pub fn barycenter(dim: usize) -> Self {
        Self {
            coords: vec![1.0 / dim as f64; dim],
        }
    }

    pub fn vertex(dim: usize, i: usize) -> Self {
        let mut coords = vec![0.0; dim];
        coords[i] = 1.0;
        Self { coords }
    }

    /// Uniform point of the simplex (normalized exponentials).
    pub fn random<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        let e: Vec<f64> = (0..dim)
            .map(|_| -(1.0 - rng.random::<f64>()).ln())
            .collect();
        let sum: f64 = e.iter().sum();
        Self {
            coords: e.into_iter().map(|c| c / sum).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub(crate) fn from_raw_unchecked(coords: Vec<f64>) -> Self {
        Self { coords }
    }
}

/// Value of the Hennion distance, a min-ratio or a contraction coefficient.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct MetricValue(f64);

impl MetricValue {
    fn clamp(v: f64) -> Self {
        debug_assert!(
            v > -1e-12 && v < 1.0 + 1e-12,
            "metric value {v} out of range"
        );
        MetricValue(v.clamp(0.0, 1.0))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl From<MetricValue> for f64 {
    fn from(m: MetricValue) -> f64 {
        m.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatrixNorms {
    /// Smallest column sum.
    pub v: f64,
    /// Largest column sum, the operator norm for l1.
    pub norm: f64,
    /// `max(1 / v, norm)`.
    pub n: f64,
}

pub fn matrix_norms(g: &PositiveMatrix) -> MatrixNorms {
    let sums = g.column_sums();
    let v = sums.iter().copied().fold(f64::INFINITY, f64::min);
    let norm = sums.iter().copied().fold(0.0, f64::max);
    MatrixNorms {
        v,
        norm,
        n: (1.0 / v).max(norm),
    }
}

pub fn act(g: &PositiveMatrix, x: &SimplexVector) -> Result<(SimplexVector, f64)> {
    g.act(x)
}

/// Runs the projective chain driven by `gs` from `x`, returning the final
/// state and the walk `S_0 = a, S_k = S_{k-1} + rho(g_k, X_{k-1})`.
pub fn left_product(
    gs: &[PositiveMatrix],
    x: &SimplexVector,
    a: f64,
) -> Result<(SimplexVector, Vec<f64>)> {
    let mut state = x.coords.clone();
    let mut next = vec![0.0; x.dim()];
    let mut walk = Vec::with_capacity(gs.len() + 1);
    walk.push(a);
    let mut s = a;
    for g in gs {
        check_dim(g.dim(), x.dim())?;
        s += g.act_into(&state, &mut next);
        std::mem::swap(&mut state, &mut next);
        walk.push(s);
    }
    Ok((SimplexVector { coords: state }, walk))
}

/// `m(x, y) = min { x_i / y_i : y_i > 0 }`.
pub fn min_ratio(x: &SimplexVector, y: &SimplexVector) -> MetricValue {
    MetricValue::clamp(raw_min_ratio(&x.coords, &y.coords))
}

fn raw_min_ratio(x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .filter(|(_, &yi)| yi > 0.0)
        .map(|(xi, yi)| xi / yi)
        .fold(f64::INFINITY, f64::min)
}

fn raw_distance(x: &[f64], y: &[f64]) -> f64 {
    let s = raw_min_ratio(x, y) * raw_min_ratio(y, x);
    (1.0 - s) / (1.0 + s)
}

/// Hennion distance `d(x, y) = phi(m(x, y) m(y, x))`, `phi(s) = (1 - s) / (1 + s)`.
pub fn hennion_distance(x: &SimplexVector, y: &SimplexVector) -> MetricValue {
    MetricValue::clamp(raw_distance(&x.coords, &y.coords))
}

/// Contraction coefficient `c(g) = sup d(g.x, g.y)`, taken over pairs of
/// simplex vertices. The image of the simplex is the convex hull of the
/// images of the vertices, and the supremum is attained on that hull's
/// extreme points.
pub fn contraction_coeff(g: &PositiveMatrix) -> MetricValue {
    let d = g.dim();
    let images: Vec<Vec<f64>> = (0..d)
        .map(|j| {
            let col: Vec<f64> = (0..d).map(|i| g.get(i, j)).collect();
            let sum: f64 = col.iter().sum();
            col.into_iter().map(|c| c / sum).collect()
        })
        .collect();
    let mut best: f64 = 0.0;
    for i in 0..d {
        for j in (i + 1)..d {
            best = best.max(raw_distance(&images[i], &images[j]));
        }
    }
    MetricValue::clamp(best)
}

/// Vertex value of `c(g)` cross-checked by random sampling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContractionEstimate {
    /// Reported coefficient: the vertex value, or the sampled maximum when
    /// sampling exceeded it.
    pub value: MetricValue,
    pub vertex_value: MetricValue,
    pub sampled_max: MetricValue,
    /// Set when a sampled pair beat the vertex value by more than `1e-12`.
    pub flagged: bool,
}

pub fn contraction_coeff_checked<R: Rng + ?Sized>(
    g: &PositiveMatrix,
    samples: usize,
    rng: &mut R,
) -> ContractionEstimate {
    let vertex_value = contraction_coeff(g);
    let d = g.dim();
    let mut gx = vec![0.0; d];
    let mut gy = vec![0.0; d];
    let mut sampled: f64 = 0.0;
    for _ in 0..samples {
        let x = SimplexVector::random(d, rng);
        let y = SimplexVector::random(d, rng);
        g.act_into(&x.coords, &mut gx);
        g.act_into(&y.coords, &mut gy);
        sampled = sampled.max(raw_distance(&gx, &gy));
    }
    let sampled_max = MetricValue::clamp(sampled);
    let flagged = sampled > vertex_value.value() + 1e-12;
    ContractionEstimate {
        value: if flagged { sampled_max } else { vertex_value },
        vertex_value,
        sampled_max,
        flagged,
    }
}

/// Checks `|rho(g, x)| <= 2 log N(g)` over the vertices, the barycenter and
/// a fixed pseudo-random sample of the simplex.
pub fn rho_bound_check(g: &PositiveMatrix) -> bool {
    use rand::SeedableRng;

    let d = g.dim();
    let bound = 2.0 * matrix_norms(g).n.ln();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x5eed);
    let points = (0..d)
        .map(|i| SimplexVector::vertex(d, i))
        .chain(std::iter::once(SimplexVector::barycenter(d)))
        .chain((0..256).map(|_| SimplexVector::random(d, &mut rng)));
    let mut out = vec![0.0; d];
    points
        .map(|x| g.act_into(&x.coords, &mut out).abs())
        .all(|r| r <= bound + 1e-12)
}
