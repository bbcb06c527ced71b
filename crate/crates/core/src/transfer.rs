//! Grid discretization of the transfer operator for `d = 2`.
//!
//! The simplex is parametrized by the first coordinate `t`, `x = (t, 1 - t)`,
//! and tabulated at `G` equispaced nodes. Functions are evaluated off-grid by
//! piecewise-linear interpolation in `t`, which turns `P` into a
//! row-stochastic `G x G` matrix with at most two entries per atom in each
//! row. Its adjoint pushes node masses forward with the same linear
//! splitting, so the discrete invariant measure is exactly invariant for the
//! discrete operator.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::law::MatrixLaw;
use crate::matrix::{PositiveMatrix, SimplexVector};

pub const MIN_RESOLUTION: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimplexGrid {
    resolution: usize,
}

impl SimplexGrid {
    pub fn new(resolution: usize) -> Result<Self> {
        if resolution < MIN_RESOLUTION {
            return Err(Error::InvalidArgument(format!(
                "grid resolution {resolution} < {MIN_RESOLUTION}"
            )));
        }
        Ok(Self { resolution })
    }

    pub fn len(&self) -> usize {
        self.resolution
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> f64 {
        1.0 / (self.resolution - 1) as f64
    }

    /// First coordinate of node `i`.
    pub fn param(&self, i: usize) -> f64 {
        i as f64 / (self.resolution - 1) as f64
    }

    pub fn node(&self, i: usize) -> SimplexVector {
        let t = self.param(i);
        SimplexVector::from_raw_unchecked(vec![t, 1.0 - t])
    }

    pub fn nodes(&self) -> impl Iterator<Item = SimplexVector> + '_ {
        (0..self.resolution).map(|i| self.node(i))
    }

    /// Cell index `j` and offset `lambda` with `t = (1 - lambda) t_j + lambda t_{j+1}`.
    #[inline]
    pub fn locate(&self, t: f64) -> (usize, f64) {
        let scaled = t.clamp(0.0, 1.0) * (self.resolution - 1) as f64;
        let j = (scaled.floor() as usize).min(self.resolution - 2);
        (j, scaled - j as f64)
    }
}

/// Complex-valued function tabulated on a [`SimplexGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    grid: SimplexGrid,
    values: Vec<Complex64>,
}

impl GridFunction {
    pub fn new(grid: SimplexGrid, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::DimensionMismatch {
                expected: grid.len(),
                got: values.len(),
            });
        }
        if values
            .iter()
            .any(|v| !v.re.is_finite() || !v.im.is_finite())
        {
            return Err(Error::InvalidArgument(
                "grid function has non-finite values".into(),
            ));
        }
        Ok(Self { grid, values })
    }

    pub fn real(grid: SimplexGrid, values: Vec<f64>) -> Result<Self> {
        Self::new(grid, values.into_iter().map(Complex64::from).collect())
    }

    pub fn constant(grid: SimplexGrid, c: f64) -> Self {
        Self {
            grid,
            values: vec![Complex64::from(c); grid.len()],
        }
    }

    /// Tabulates `f(t)` at the nodes.
    pub fn from_fn(grid: SimplexGrid, f: impl Fn(f64) -> f64) -> Self {
        Self {
            grid,
            values: (0..grid.len())
                .map(|i| Complex64::from(f(grid.param(i))))
                .collect(),
        }
    }

    pub fn grid(&self) -> SimplexGrid {
        self.grid
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn re(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.re).collect()
    }

    pub fn is_real(&self) -> bool {
        self.values.iter().all(|v| v.im == 0.0)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn abs(&self) -> GridFunction {
        Self {
            grid: self.grid,
            values: self
                .values
                .iter()
                .map(|v| Complex64::from(v.norm()))
                .collect(),
        }
    }

    /// Linear interpolation at first coordinate `t`.
    pub fn eval(&self, t: f64) -> Complex64 {
        let (j, lam) = self.grid.locate(t);
        interp(&self.values, j, lam)
    }

    pub fn eval_at(&self, x: &SimplexVector) -> Complex64 {
        self.eval(x.coords()[0])
    }

    /// `sum_i nu_i f(x_i)`.
    pub fn integrate(&self, nu: &[f64]) -> Complex64 {
        self.values.iter().zip(nu).map(|(v, w)| v * w).sum()
    }
}

#[inline]
fn interp<T>(values: &[T], j: usize, lam: f64) -> T
where
    T: Copy
        + std::ops::Add<Output = T>
        + std::ops::Sub<Output = T>
        + std::ops::Mul<f64, Output = T>,
{
    // f_j + lam (f_{j+1} - f_j) reproduces constants exactly.
    values[j] + (values[j + 1] - values[j]) * lam
}

#[derive(Debug, Clone, Copy)]
struct Stencil {
    cell: usize,
    lam: f64,
    rho: f64,
}

/// Discretized transfer operator of a law on a grid.
#[derive(Debug, Clone)]
pub struct TransferOperator {
    grid: SimplexGrid,
    weights: Vec<f64>,
    /// `stencils[i * atoms + k]` describes `g_k . x_i`.
    stencils: Vec<Stencil>,
}

pub(crate) fn require_grid_dim(dim: usize) -> Result<()> {
    match dim {
        2 => Ok(()),
        3 => Err(Error::UnsupportedDimension {
            dim,
            reason: "triangular grids are not implemented; use Monte Carlo estimators",
        }),
        _ => Err(Error::UnsupportedDimension {
            dim,
            reason: "operator computations are limited to d <= 3; use Monte Carlo estimators",
        }),
    }
}

impl TransferOperator {
    pub fn new(law: &MatrixLaw, grid: SimplexGrid) -> Result<Self> {
        require_grid_dim(law.dim())?;
        let total: f64 = law.weights().iter().sum();
        let weights: Vec<f64> = law.weights().iter().map(|w| w / total).collect();
        let mut stencils = Vec::with_capacity(grid.len() * weights.len());
        let mut out = [0.0; 2];
        for i in 0..grid.len() {
            let t = grid.param(i);
            let x = [t, 1.0 - t];
            for g in law.atoms() {
                let rho = g.act_into(&x, &mut out);
                let (cell, lam) = grid.locate(out[0]);
                stencils.push(Stencil { cell, lam, rho });
            }
        }
        Ok(Self {
            grid,
            weights,
            stencils,
        })
    }

    pub fn grid(&self) -> SimplexGrid {
        self.grid
    }

    pub fn atoms(&self) -> usize {
        self.weights.len()
    }

    fn row(&self, i: usize) -> &[Stencil] {
        let k = self.weights.len();
        &self.stencils[i * k..(i + 1) * k]
    }

    fn check_grid(&self, f: &GridFunction) -> Result<()> {
        if f.grid != self.grid {
            return Err(Error::DimensionMismatch {
                expected: self.grid.len(),
                got: f.grid.len(),
            });
        }
        Ok(())
    }

    /// Weighted mean of per-atom values, centered on the first atom so that a
    /// common value is returned exactly.
    #[inline]
    fn mix<T>(&self, vals: impl Iterator<Item = T>) -> T
    where
        T: Copy
            + std::ops::Add<Output = T>
            + std::ops::Sub<Output = T>
            + std::ops::Mul<f64, Output = T>,
    {
        let mut it = vals.zip(&self.weights);
        let (first, _) = it.next().expect("law has atoms");
        let mut acc = first;
        for (v, &w) in it {
            acc = acc + (v - first) * w;
        }
        acc
    }

    fn apply_real_slice(&self, f: &[f64]) -> Vec<f64> {
        (0..self.grid.len())
            .map(|i| self.mix(self.row(i).iter().map(|s| interp(f, s.cell, s.lam))))
            .collect()
    }

    /// `(P f)(x_i) = sum_k w_k f(g_k . x_i)`.
    pub fn apply(&self, f: &GridFunction) -> Result<GridFunction> {
        self.check_grid(f)?;
        let values = (0..self.grid.len())
            .map(|i| self.mix(self.row(i).iter().map(|s| interp(&f.values, s.cell, s.lam))))
            .collect();
        Ok(GridFunction {
            grid: self.grid,
            values,
        })
    }

    /// `(P_t f)(x_i) = sum_k w_k exp(i t rho(g_k, x_i)) f(g_k . x_i)`.
    pub fn apply_t(&self, f: &GridFunction, t: f64) -> Result<GridFunction> {
        self.check_grid(f)?;
        Ok(GridFunction {
            grid: self.grid,
            values: self.apply_t_values(&f.values, t),
        })
    }

    fn apply_t_values(&self, f: &[Complex64], t: f64) -> Vec<Complex64> {
        (0..self.grid.len())
            .map(|i| {
                self.mix(
                    self.row(i)
                        .iter()
                        .map(|s| Complex64::from_polar(1.0, t * s.rho) * interp(f, s.cell, s.lam)),
                )
            })
            .collect()
    }

    /// Push-forward of node masses: the adjoint of [`apply`](Self::apply).
    ///
    /// # Panics
    ///
    /// If `mass` does not have one entry per grid node.
    pub fn push_forward(&self, mass: &[f64]) -> Vec<f64> {
        assert_eq!(mass.len(), self.grid.len(), "one mass per grid node");
        let mut out = vec![0.0; self.grid.len()];
        for (i, &m) in mass.iter().enumerate() {
            if m == 0.0 {
                continue;
            }
            for (s, &w) in self.row(i).iter().zip(&self.weights) {
                let part = m * w;
                out[s.cell] += part * (1.0 - s.lam);
                out[s.cell + 1] += part * s.lam;
            }
        }
        out
    }

    /// `rho_bar(x_i) = sum_k w_k rho(g_k, x_i)`.
    pub fn rho_bar(&self) -> Vec<f64> {
        (0..self.grid.len())
            .map(|i| {
                self.row(i)
                    .iter()
                    .zip(&self.weights)
                    .map(|(s, w)| w * s.rho)
                    .sum()
            })
            .collect()
    }

    /// Dense row-stochastic matrix of the operator.
    pub fn dense(&self) -> DMatrix<f64> {
        let n = self.grid.len();
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            for (s, &w) in self.row(i).iter().zip(&self.weights) {
                m[(i, s.cell)] += w * (1.0 - s.lam);
                m[(i, s.cell + 1)] += w * s.lam;
            }
        }
        m
    }
}

pub fn apply_p(law: &MatrixLaw, f: &GridFunction) -> Result<GridFunction> {
    TransferOperator::new(law, f.grid())?.apply(f)
}

pub fn apply_p_t(law: &MatrixLaw, f: &GridFunction, t: f64) -> Result<GridFunction> {
    TransferOperator::new(law, f.grid())?.apply_t(f, t)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryMeasure {
    pub weights: Vec<f64>,
    /// `||P* nu - nu||_1`, which bounds `|nu(Pf) - nu(f)|` for `|f|_inf <= 1`.
    pub residual: f64,
    pub iterations: usize,
    /// True when the Cesaro average, not the last iterate, was returned.
    pub cesaro: bool,
}

fn l1_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

fn normalize_mass(v: &mut [f64]) {
    let total: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= total);
}

/// Invariant node measure of the discretized chain, by iterating the
/// push-forward from the uniform measure. The running Cesaro average is
/// monitored alongside the iterate and returned if it settles first
/// (periodic chains).
pub fn stationary_measure(
    op: &TransferOperator,
    tol: f64,
    max_iter: usize,
) -> Result<StationaryMeasure> {
    let n = op.grid.len();
    let mut nu = vec![1.0 / n as f64; n];
    let mut sum = nu.clone();
    let mut residual = f64::INFINITY;
    for it in 1..=max_iter {
        let mut next = op.push_forward(&nu);
        normalize_mass(&mut next);
        residual = l1_diff(&next, &nu);
        nu = next;
        if residual <= tol {
            let check = l1_diff(&op.push_forward(&nu), &nu);
            return Ok(StationaryMeasure {
                weights: nu,
                residual: check,
                iterations: it,
                cesaro: false,
            });
        }
        sum.iter_mut().zip(&nu).for_each(|(s, v)| *s += v);
        if it % 64 == 0 {
            let mut avg = sum.clone();
            normalize_mass(&mut avg);
            let r = l1_diff(&op.push_forward(&avg), &avg);
            if r <= tol {
                return Ok(StationaryMeasure {
                    weights: avg,
                    residual: r,
                    iterations: it,
                    cesaro: true,
                });
            }
        }
    }
    Err(Error::NoConvergence {
        what: "stationary measure",
        iterations: max_iter,
        residual,
    })
}

/// `gamma = sum_i sum_k nu_i w_k rho(g_k, x_i)`.
pub fn lyapunov_exact(op: &TransferOperator, nu: &[f64]) -> f64 {
    op.rho_bar().iter().zip(nu).map(|(r, w)| r * w).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualRecord {
    pub iteration: usize,
    /// `sup |f_{k+1} - f_k|` of the normalized iterates.
    pub residual: f64,
    pub lambda_re: f64,
    pub lambda_im: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenEstimate {
    pub t: f64,
    pub lambda_re: f64,
    pub lambda_im: f64,
    /// Fitted geometric rate of the power-iteration residuals.
    pub kappa_hat: f64,
    pub iterations: usize,
    pub history: Vec<ResidualRecord>,
}

impl EigenEstimate {
    pub fn lambda(&self) -> Complex64 {
        Complex64::new(self.lambda_re, self.lambda_im)
    }
}

/// Residuals below this are treated as round-off when fitting the rate.
const RESIDUAL_FLOOR: f64 = 1e-12;
/// Ratios averaged once the iteration has settled.
const AVERAGED_RATIOS: usize = 20;

/// Dominant eigenvalue of `P_t` by power iteration with sup-norm
/// normalization, starting from the constant function.
pub fn dominant_eigenvalue(
    op: &TransferOperator,
    t: f64,
    tol: f64,
    max_iter: usize,
) -> Result<EigenEstimate> {
    // A non-constant start so that the decay of the residual measures the gap
    // even at t = 0, where constants are eigenfunctions.
    let mut f: Vec<Complex64> = (0..op.grid.len())
        .map(|i| Complex64::from(1.0 + op.grid.param(i)))
        .collect();
    let mut ref_idx = op.grid.len() - 1;
    let mut prev_ratio: Option<Complex64> = None;
    let mut history = Vec::new();
    let mut settled: Vec<Complex64> = Vec::new();
    let mut last_change = f64::INFINITY;

    for it in 0..max_iter {
        let g = op.apply_t_values(&f, t);
        let ratio = g[ref_idx] / f[ref_idx];
        let (idx, _) =
            g.iter()
                .enumerate()
                .map(|(i, v)| (i, v.norm()))
                .fold(
                    (0, -1.0),
                    |best, cur| if cur.1 > best.1 { cur } else { best },
                );
        let scale = g[idx];
        if scale.norm() == 0.0 {
            return Err(Error::Degenerate("P_t annihilated the iterate".into()));
        }
        let next: Vec<Complex64> = g.iter().map(|v| v / scale).collect();
        let residual = next
            .iter()
            .zip(&f)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        history.push(ResidualRecord {
            iteration: it,
            residual,
            lambda_re: ratio.re,
            lambda_im: ratio.im,
        });
        last_change = prev_ratio.map_or(f64::INFINITY, |p| (ratio - p).norm());
        prev_ratio = Some(ratio);
        f = next;
        ref_idx = idx;

        if !settled.is_empty() || (residual <= tol && last_change <= tol) {
            settled.push(ratio);
            if settled.len() == AVERAGED_RATIOS {
                let lambda = settled.iter().sum::<Complex64>() / settled.len() as f64;
                return Ok(EigenEstimate {
                    t,
                    lambda_re: lambda.re,
                    lambda_im: lambda.im,
                    kappa_hat: fit_rate(&history),
                    iterations: it + 1,
                    history,
                });
            }
        }
    }
    Err(Error::NoConvergence {
        what: "dominant eigenvalue",
        iterations: max_iter,
        residual: last_change,
    })
}

/// Geometric rate from a least-squares fit of `log residual` against the
/// iteration count, over the later half of the residuals above round-off.
fn fit_rate(history: &[ResidualRecord]) -> f64 {
    let pts: Vec<(f64, f64)> = history
        .iter()
        .filter(|r| r.residual > RESIDUAL_FLOOR)
        .map(|r| (r.iteration as f64, r.residual.ln()))
        .collect();
    if pts.len() < 2 {
        return 0.0;
    }
    let tail = &pts[pts.len() / 2..];
    let tail = if tail.len() < 2 { &pts[..] } else { tail };
    match least_squares_slope(tail) {
        Some(slope) => slope.exp().clamp(0.0, 1.0),
        None => 0.0,
    }
}

pub(crate) fn least_squares_slope(pts: &[(f64, f64)]) -> Option<f64> {
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    Some(sxy / sxx)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sigma2Estimate {
    /// Richardson-extrapolated value.
    pub sigma2: f64,
    pub h: f64,
    /// `2 (1 - Re lambda_h) / h^2`.
    pub coarse: f64,
    /// Same at `h / 2`.
    pub fine: f64,
}

/// Resolution of the spectral variance: eigenvalue round-off divided by
/// `h^2`. Estimates within it of zero are reported as zero; estimates below
/// `-SIGMA2_FLOOR` signal a degenerate law.
pub const SIGMA2_FLOOR: f64 = 1e-9;

/// Asymptotic variance from the curvature of `Re lambda_t` at zero.
pub fn sigma2_spectral(
    op: &TransferOperator,
    h: f64,
    tol: f64,
    max_iter: usize,
) -> Result<Sigma2Estimate> {
    if h.is_nan() || h <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "step h = {h} must be positive"
        )));
    }
    let second_diff = |step: f64| -> Result<f64> {
        let lam = dominant_eigenvalue(op, step, tol, max_iter)?;
        Ok(2.0 * (1.0 - lam.lambda_re) / (step * step))
    };
    let coarse = second_diff(h)?;
    let fine = second_diff(h / 2.0)?;
    let sigma2 = (4.0 * fine - coarse) / 3.0;
    if sigma2 < -SIGMA2_FLOOR {
        return Err(Error::Degenerate(format!(
            "negative spectral variance estimate {sigma2:.3e}"
        )));
    }
    Ok(Sigma2Estimate {
        sigma2: if sigma2.abs() <= SIGMA2_FLOOR {
            0.0
        } else {
            sigma2
        },
        h,
        coarse,
        fine,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaPoint {
    pub t: f64,
    pub re: f64,
    pub im: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralSummary {
    pub lambda_at: Vec<LambdaPoint>,
    pub gamma: f64,
    pub sigma2: f64,
    pub kappa_hat: f64,
    pub residual_history: Vec<ResidualRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralSettings {
    pub tol: f64,
    pub max_iter: usize,
    /// Second-difference step for the variance.
    pub h: f64,
}

impl Default for SpectralSettings {
    fn default() -> Self {
        Self {
            tol: 1e-13,
            max_iter: 20_000,
            h: 0.05,
        }
    }
}

/// Eigenvalues on `ts`, Lyapunov exponent, variance and gap surrogate.
pub fn spectral_summary(
    op: &TransferOperator,
    nu: &[f64],
    ts: &[f64],
    settings: SpectralSettings,
) -> Result<SpectralSummary> {
    let base = dominant_eigenvalue(op, 0.0, settings.tol, settings.max_iter)?;
    let lambda_at = ts
        .iter()
        .map(|&t| {
            dominant_eigenvalue(op, t, settings.tol, settings.max_iter).map(|e| LambdaPoint {
                t,
                re: e.lambda_re,
                im: e.lambda_im,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let sigma2 = sigma2_spectral(op, settings.h, settings.tol, settings.max_iter)?;
    Ok(SpectralSummary {
        lambda_at,
        gamma: lyapunov_exact(op, nu),
        sigma2: sigma2.sigma2,
        kappa_hat: base.kappa_hat,
        residual_history: base.history,
    })
}

/// Environment part of the Poisson solution: `Theta = sum_n P^n rho_bar`.
///
/// The full solution on `S x X` is `theta(g, x) = rho(g, x) + Theta(g.x)`
/// with `Pbar theta(g, x) = Theta(g.x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoissonSolution {
    pub grid: SimplexGrid,
    /// Node values of `Theta`.
    pub theta_env: Vec<f64>,
    /// `A = 2 sup |Theta|`, the bound on `|S_n - M_n|`.
    pub bound_a: f64,
    pub truncation_n: usize,
    /// Geometric estimate of the neglected tail `sup |sum_{n > N} P^n rho_bar|`.
    pub tail_bound: f64,
    /// `||Theta - rho_bar - P Theta||_inf`.
    pub residual: f64,
    /// `nu(rho_bar)` removed before summation.
    pub centering: f64,
    /// Largest half-jump between neighbouring node values, a scale for the
    /// interpolation error of `Theta` off-grid.
    pub interp_slack: f64,
}

impl PoissonSolution {
    pub fn theta_at(&self, x: &[f64]) -> f64 {
        let (j, lam) = self.grid.locate(x[0]);
        interp(&self.theta_env, j, lam)
    }

    pub fn theta_function(&self) -> GridFunction {
        GridFunction::real(self.grid, self.theta_env.clone()).expect("finite values")
    }
}

fn sup_abs(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).fold(0.0, f64::max)
}

fn centered(v: &[f64], nu: &[f64]) -> (Vec<f64>, f64) {
    let mean: f64 = v.iter().zip(nu).map(|(a, b)| a * b).sum();
    (v.iter().map(|x| x - mean).collect(), mean)
}

/// Sums `Theta = sum_n R^n rho_bar_0`, `R = P - nu(.)1`, where `rho_bar_0` is
/// `rho_bar` minus its `nu`-mean. On centred functions `R^n = P^n`, and the
/// projection keeps round-off in `nu` from accumulating along the series.
pub fn solve_poisson(
    op: &TransferOperator,
    nu: &[f64],
    tol: f64,
    max_terms: usize,
) -> Result<PoissonSolution> {
    if nu.len() != op.grid.len() {
        return Err(Error::DimensionMismatch {
            expected: op.grid.len(),
            got: nu.len(),
        });
    }
    let (rho0, centering) = centered(&op.rho_bar(), nu);
    let mut theta = rho0.clone();
    let mut term = rho0.clone();
    let mut increments = vec![sup_abs(&term)];
    let mut converged = increments[0] < tol;
    let mut n = 0;
    while !converged {
        n += 1;
        if n > max_terms {
            return Err(Error::NoConvergence {
                what: "Poisson series",
                iterations: max_terms,
                residual: *increments.last().expect("non-empty"),
            });
        }
        term = centered(&op.apply_real_slice(&term), nu).0;
        theta.iter_mut().zip(&term).for_each(|(a, b)| *a += b);
        let inc = sup_abs(&term);
        increments.push(inc);
        converged = inc < tol;
    }

    let rate = match increments.len() {
        0..=2 => 0.0,
        k => (increments[k - 1] / increments[k - 2]).min(0.999),
    };
    let last = *increments.last().expect("non-empty");
    let tail_bound = last * rate / (1.0 - rate);

    let p_theta = op.apply_real_slice(&theta);
    let residual = theta
        .iter()
        .zip(&rho0)
        .zip(&p_theta)
        .map(|((th, r), pt)| (th - r - pt).abs())
        .fold(0.0, f64::max);
    let interp_slack = theta
        .windows(2)
        .map(|w| 0.5 * (w[1] - w[0]).abs())
        .fold(0.0, f64::max);

    Ok(PoissonSolution {
        grid: op.grid,
        bound_a: 2.0 * sup_abs(&theta),
        theta_env: theta,
        truncation_n: n,
        tail_bound,
        residual,
        centering,
        interp_slack,
    })
}

/// Direct solve of `(I - P + 1 nu^T) Theta = rho_bar_0`, whose solution is
/// the Poisson solution normalized by `nu(Theta) = 0`.
pub fn solve_poisson_dense(op: &TransferOperator, nu: &[f64]) -> Result<Vec<f64>> {
    let n = op.grid.len();
    let (rho0, _) = centered(&op.rho_bar(), nu);
    let mut m = -op.dense();
    for i in 0..n {
        m[(i, i)] += 1.0;
        for j in 0..n {
            m[(i, j)] += nu[j];
        }
    }
    let rhs = nalgebra::DVector::from_vec(rho0);
    m.lu()
        .solve(&rhs)
        .map(|v| v.iter().copied().collect())
        .ok_or_else(|| Error::Degenerate("I - P + Pi is singular on this grid".into()))
}

/// `(theta(g, x), Pbar theta(g, x)) = (rho(g, x) + Theta(g.x), Theta(g.x))`.
pub fn evaluate_theta(
    sol: &PoissonSolution,
    g: &PositiveMatrix,
    x: &SimplexVector,
) -> Result<(f64, f64)> {
    require_grid_dim(g.dim())?;
    let (y, rho) = g.act(x)?;
    let pbar = sol.theta_at(y.coords());
    Ok((rho + pbar, pbar))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> PositiveMatrix {
        PositiveMatrix::from_rows(rows).unwrap()
    }

    fn interior_law() -> MatrixLaw {
        MatrixLaw::uniform(vec![
            m(&[&[2.0, 1.0], &[1.0, 3.0]]),
            m(&[&[0.3, 0.2], &[0.1, 0.4]]),
        ])
        .unwrap()
    }

    fn stochastic_law() -> MatrixLaw {
        MatrixLaw::uniform(vec![
            m(&[&[0.3, 0.9], &[0.7, 0.1]]),
            m(&[&[0.5, 0.25], &[0.5, 0.75]]),
        ])
        .unwrap()
    }

    fn grid(n: usize) -> SimplexGrid {
        SimplexGrid::new(n).unwrap()
    }

    #[test]
    fn grid_layout() {
        let g = grid(17);
        assert_eq!(g.node(0).coords(), &[0.0, 1.0]);
        assert_eq!(g.node(16).coords(), &[1.0, 0.0]);
        assert_eq!(g.locate(1.0), (15, 1.0));
        assert_eq!(g.locate(0.0), (0, 0.0));
        assert!(SimplexGrid::new(8).is_err());
    }

    #[test]
    fn apply_p_examples() {
        let g = grid(65);
        let one = GridFunction::constant(g, 1.0);
        let out = apply_p(&interior_law(), &one).unwrap();
        assert!(out.values().iter().all(|v| *v == Complex64::from(1.0)));

        let f = GridFunction::from_fn(g, |t| (3.0 * t).sin());
        let id = MatrixLaw::dirac(PositiveMatrix::identity(2));
        assert_eq!(apply_p(&id, &f).unwrap(), f);

        // Rank one: image point (1/3, 2/3).
        let rank_one = MatrixLaw::dirac(m(&[&[1.0, 1.0], &[2.0, 2.0]]));
        let out = apply_p(&rank_one, &f).unwrap();
        let exact = (3.0_f64 / 3.0).sin();
        for v in out.values() {
            assert!((v.re - exact).abs() < 3.0 * g.spacing() * g.spacing());
            assert_eq!(*v, out.values()[0]);
        }
    }

    #[test]
    fn apply_p_t_examples() {
        let g = grid(33);
        let f = GridFunction::from_fn(g, |t| 1.0 + t * t);
        let law = interior_law();
        assert_eq!(
            apply_p_t(&law, &f, 0.0).unwrap(),
            apply_p(&law, &f).unwrap()
        );

        let stoch = stochastic_law();
        for t in [0.1, -0.7, 2.0] {
            let a = apply_p_t(&stoch, &f, t).unwrap();
            let b = apply_p(&stoch, &f).unwrap();
            for (x, y) in a.values().iter().zip(b.values()) {
                assert!((x - y).norm() < 1e-13);
            }
        }

        let c: f64 = 1.8;
        let scalar = MatrixLaw::dirac(PositiveMatrix::scalar(2, c).unwrap());
        let t = 0.37;
        let a = apply_p_t(&scalar, &f, t).unwrap();
        let b = apply_p(&scalar, &f).unwrap();
        let phase = Complex64::from_polar(1.0, t * c.ln());
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x - y * phase).norm() < 1e-14);
        }
    }

    #[test]
    fn fourier_operator_is_dominated() {
        let g = grid(64);
        let law = interior_law();
        let op = TransferOperator::new(&law, g).unwrap();
        let f = GridFunction::new(
            g,
            (0..64)
                .map(|i| Complex64::new((i as f64).cos(), (0.3 * i as f64).sin()))
                .collect(),
        )
        .unwrap();
        let dom = op.apply(&f.abs()).unwrap();
        for t in [-1.0, 0.2, 3.0] {
            let pt = op.apply_t(&f, t).unwrap();
            for (a, b) in pt.values().iter().zip(dom.values()) {
                assert!(a.norm() <= b.re + 1e-14);
            }
        }
    }

    #[test]
    fn rejects_higher_dimensions() {
        let law3 = MatrixLaw::dirac(PositiveMatrix::identity(3));
        assert!(matches!(
            TransferOperator::new(&law3, grid(16)),
            Err(Error::UnsupportedDimension { dim: 3, .. })
        ));
        let law4 = MatrixLaw::dirac(PositiveMatrix::identity(4));
        assert!(matches!(
            TransferOperator::new(&law4, grid(16)),
            Err(Error::UnsupportedDimension { dim: 4, .. })
        ));
    }

    #[test]
    fn stationary_measure_of_a_single_contraction() {
        let gmat = m(&[&[2.0, 1.0], &[1.0, 3.0]]);
        // Fixed point by direct iteration of g . x.
        let mut x = SimplexVector::barycenter(2);
        for _ in 0..200 {
            x = gmat.act(&x).unwrap().0;
        }
        let g = grid(129);
        let op = TransferOperator::new(&MatrixLaw::dirac(gmat), g).unwrap();
        let nu = stationary_measure(&op, 1e-13, 10_000).unwrap();
        let mass_near: f64 = (0..g.len())
            .filter(|&i| (g.param(i) - x.coords()[0]).abs() <= g.spacing())
            .map(|i| nu.weights[i])
            .sum();
        assert!(mass_near > 1.0 - 1e-9, "mass near fixed point {mass_near}");
    }

    #[test]
    fn stationary_measure_symmetry_and_invariance() {
        let law = MatrixLaw::uniform(vec![
            m(&[&[2.0, 1.0], &[1.0, 3.0]]),
            m(&[&[3.0, 1.0], &[1.0, 2.0]]),
        ])
        .unwrap();
        let g = grid(101);
        let op = TransferOperator::new(&law, g).unwrap();
        let nu = stationary_measure(&op, 1e-13, 10_000).unwrap();
        for i in 0..g.len() {
            assert!((nu.weights[i] - nu.weights[g.len() - 1 - i]).abs() < 1e-10);
        }
        let f = GridFunction::from_fn(g, |t| t);
        let pf = op.apply(&f).unwrap();
        assert!((pf.integrate(&nu.weights) - f.integrate(&nu.weights)).norm() < 1e-12);
        let total: f64 = nu.weights.iter().sum();
        assert!((total - 1.0).abs() < 1e-14);
    }

    #[test]
    fn lyapunov_exact_examples() {
        let g = grid(32);
        let c: f64 = 0.6;
        let op = TransferOperator::new(&MatrixLaw::dirac(PositiveMatrix::scalar(2, c).unwrap()), g)
            .unwrap();
        let uniform = vec![1.0 / 32.0; 32];
        assert!((lyapunov_exact(&op, &uniform) - c.ln()).abs() < 1e-15);
        let op = TransferOperator::new(&stochastic_law(), g).unwrap();
        let nu = stationary_measure(&op, 1e-13, 1000).unwrap();
        assert!(lyapunov_exact(&op, &nu.weights).abs() < 1e-15);
    }

    #[test]
    fn dominant_eigenvalue_examples() {
        let g = grid(128);
        let op = TransferOperator::new(&interior_law(), g).unwrap();
        let e = dominant_eigenvalue(&op, 0.0, 1e-13, 10_000).unwrap();
        assert!((e.lambda() - Complex64::from(1.0)).norm() < 1e-10);
        assert!(e.kappa_hat < 1.0);

        let op = TransferOperator::new(&stochastic_law(), g).unwrap();
        for t in [0.1, 0.5] {
            let e = dominant_eigenvalue(&op, t, 1e-13, 10_000).unwrap();
            assert!((e.lambda() - Complex64::from(1.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn sigma2_examples() {
        let g = grid(64);
        let op = TransferOperator::new(&stochastic_law(), g).unwrap();
        let s = sigma2_spectral(&op, 0.05, 1e-13, 10_000).unwrap();
        assert!(s.sigma2.abs() < 1e-10);

        // Scalar law with zero mean log: sigma^2 = sum w (log c)^2.
        let (c1, c2): (f64, f64) = (2.0, 0.5);
        let scalar = MatrixLaw::uniform(vec![
            PositiveMatrix::scalar(2, c1).unwrap(),
            PositiveMatrix::scalar(2, c2).unwrap(),
        ])
        .unwrap();
        let op = TransferOperator::new(&scalar, g).unwrap();
        let s = sigma2_spectral(&op, 0.05, 1e-13, 10_000).unwrap();
        let exact = 0.5 * c1.ln().powi(2) + 0.5 * c2.ln().powi(2);
        assert!((s.sigma2 - exact).abs() < 1e-8, "{} vs {exact}", s.sigma2);
    }

    #[test]
    fn poisson_examples() {
        let g = grid(128);
        let op = TransferOperator::new(&stochastic_law(), g).unwrap();
        let nu = stationary_measure(&op, 1e-13, 1000).unwrap();
        let sol = solve_poisson(&op, &nu.weights, 1e-12, 10_000).unwrap();
        assert!(sol.bound_a < 1e-14);
        assert!(sol.theta_env.iter().all(|v| v.abs() < 1e-14));

        let op = TransferOperator::new(&interior_law(), g).unwrap();
        let nu = stationary_measure(&op, 1e-13, 10_000).unwrap();
        let sol = solve_poisson(&op, &nu.weights, 1e-11, 10_000).unwrap();
        assert!(sol.residual < 1e-11);
        let dense = solve_poisson_dense(&op, &nu.weights).unwrap();
        let diff = dense
            .iter()
            .zip(&sol.theta_env)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(diff < 1e-10, "series vs dense {diff}");
        assert!(sol.bound_a > 0.0);
    }

    #[test]
    fn evaluate_theta_identity() {
        let g = grid(64);
        let law = interior_law();
        let op = TransferOperator::new(&law, g).unwrap();
        let nu = stationary_measure(&op, 1e-13, 10_000).unwrap();
        let sol = solve_poisson(&op, &nu.weights, 1e-11, 10_000).unwrap();
        let gm = m(&[&[0.7, 1.1], &[0.2, 0.9]]);
        let x = SimplexVector::new(vec![0.35, 0.65]).unwrap();
        let (theta, pbar) = evaluate_theta(&sol, &gm, &x).unwrap();
        assert!((theta - pbar - gm.rho(&x).unwrap()).abs() < 1e-14);

        let (theta, pbar) = evaluate_theta(&sol, &PositiveMatrix::identity(2), &x).unwrap();
        assert_eq!(theta, pbar);
        assert_eq!(pbar, sol.theta_at(x.coords()));
    }
}
