//! Monte Carlo estimators for the walk `(X_n, S_n)`, its martingale
//! correction `M_n` and the exit time `tau = min {n >= 1 : S_n <= 0}`.
//!
//! All estimators draw path `p` from [`path_stream`]`(seed, p)` and reduce
//! over fixed blocks of paths (see [`crate::stream`]), so results depend on
//! the seed only, never on the worker count.

pub(crate) mod walker;

mod harmonic;

pub use harmonic::{harmonicity_residual, HarmonicityResidual, VLattice};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::law::mean_var;
use crate::matrix::SimplexVector;
use crate::stream::{map_blocks, path_stream, MatrixSampler, PathRng, Sampling};
use crate::transfer::{least_squares_slope, require_grid_dim, PoissonSolution};
use walker::Walker;

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959963984540054;

/// One simulated trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathRecord {
    pub start_x: SimplexVector,
    pub start_a: f64,
    /// `S_0 = a, S_1, ...` up to the last simulated step.
    pub s: Vec<f64>,
    /// `M_n = S_n + Theta(X_n) - Theta(X_0)`, when a Poisson solution was given.
    pub m: Option<Vec<f64>>,
    /// First `n >= 1` with `S_n <= 0`.
    pub tau: Option<usize>,
    /// First `n >= 1` with `M_n <= 0`.
    pub t_exit: Option<usize>,
    /// First `n >= 1` with `M_n + A <= 0`: the martingale exit time at level `a + A`.
    pub t_exit_shifted: Option<usize>,
    pub horizon: usize,
    /// No exit of `S` within the horizon.
    pub censored: bool,
    pub x_final: SimplexVector,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathOptions {
    pub horizon: usize,
    /// Keep simulating after `tau` up to the horizon.
    pub full_horizon: bool,
}

fn check_start<L: MatrixSampler + ?Sized>(law: &L, x: &SimplexVector, a: f64) -> Result<()> {
    if x.dim() != law.dim() {
        return Err(Error::DimensionMismatch {
            expected: law.dim(),
            got: x.dim(),
        });
    }
    if !a.is_finite() || a < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "start level a = {a} must be >= 0"
        )));
    }
    Ok(())
}

/// Simulates one path from `(x, a)`.
pub fn simulate_path<L: MatrixSampler + ?Sized>(
    law: &L,
    x: &SimplexVector,
    a: f64,
    options: PathOptions,
    rng: &mut PathRng,
    poisson: Option<&PoissonSolution>,
) -> Result<PathRecord> {
    check_start(law, x, a)?;
    if options.horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be >= 1".into()));
    }
    if poisson.is_some() {
        require_grid_dim(law.dim())?;
    }
    let theta0 = poisson.map(|p| p.theta_at(x.coords()));
    let bound_a = poisson.map_or(0.0, |p| p.bound_a);

    let mut walker = Walker::new(x.coords(), a);
    let mut s = vec![a];
    let mut m = theta0.map(|_| vec![a]);
    let (mut tau, mut t_exit, mut t_exit_shifted) = (None, None, None);

    for n in 1..=options.horizon {
        walker.step(law, rng);
        s.push(walker.s);
        if tau.is_none() && walker.s <= 0.0 {
            tau = Some(n);
        }
        if let (Some(sol), Some(th0), Some(m)) = (poisson, theta0, m.as_mut()) {
            let mn = walker.s + sol.theta_at(&walker.x) - th0;
            m.push(mn);
            if t_exit.is_none() && mn <= 0.0 {
                t_exit = Some(n);
            }
            if t_exit_shifted.is_none() && mn + bound_a <= 0.0 {
                t_exit_shifted = Some(n);
            }
        }
        if tau.is_some() && !options.full_horizon {
            break;
        }
    }
    Ok(PathRecord {
        start_x: x.clone(),
        start_a: a,
        s,
        m,
        tau,
        t_exit,
        t_exit_shifted,
        horizon: options.horizon,
        censored: tau.is_none(),
        x_final: SimplexVector::from_raw_unchecked(walker.x),
    })
}

/// Runs a path until `tau` or `n_max` steps and calls `visit(n, S_n, X_n)`
/// after every step. Returns `tau` if it occurred.
#[inline]
fn run_until_exit<L, F>(
    law: &L,
    walker: &mut Walker,
    rng: &mut PathRng,
    n_max: usize,
    mut visit: F,
) -> Option<usize>
where
    L: MatrixSampler + ?Sized,
    F: FnMut(usize, f64),
{
    for n in 1..=n_max {
        walker.step(law, rng);
        if walker.s <= 0.0 {
            return Some(n);
        }
        visit(n, walker.s);
    }
    None
}

fn check_n_values(n_values: &[usize]) -> Result<()> {
    if n_values.is_empty() {
        return Err(Error::InvalidArgument("no n values given".into()));
    }
    if n_values[0] == 0 || n_values.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument(format!(
            "n values must be positive and strictly increasing: {n_values:?}"
        )));
    }
    Ok(())
}

/// Survival estimates `P(tau > n)` on one nested path set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalCurve {
    pub x: SimplexVector,
    pub a: f64,
    pub n_values: Vec<usize>,
    pub survivors: Vec<u64>,
    pub p_hat: Vec<f64>,
    /// Half width of the 95% normal interval.
    pub ci_half_width: Vec<f64>,
    pub paths_used: u64,
    pub seed: u64,
}

impl SurvivalCurve {
    pub fn stderr(&self, i: usize) -> f64 {
        self.ci_half_width[i] / Z95
    }
}

pub const MIN_SURVIVAL_PATHS: u64 = 100;

pub fn survival_probability<L: MatrixSampler + ?Sized>(
    law: &L,
    x: &SimplexVector,
    a: f64,
    n_values: &[usize],
    sampling: Sampling,
) -> Result<SurvivalCurve> {
    check_start(law, x, a)?;
    check_n_values(n_values)?;
    if sampling.paths < MIN_SURVIVAL_PATHS {
        return Err(Error::InvalidArgument(format!(
            "survival estimates need at least {MIN_SURVIVAL_PATHS} paths"
        )));
    }
    let n_max = *n_values.last().expect("non-empty");
    let blocks = map_blocks(sampling.paths, |range| {
        let mut counts = vec![0u64; n_values.len()];
        let mut walker = Walker::new(x.coords(), a);
        for p in range {
            let mut rng = path_stream(sampling.seed, p);
            walker.reset(x.coords(), a);
            let tau = run_until_exit(law, &mut walker, &mut rng, n_max, |_, _| {});
            for (c, &n) in counts.iter_mut().zip(n_values) {
                if tau.is_none_or(|t| t > n) {
                    *c += 1;
                }
            }
        }
        counts
    });
    let mut survivors = vec![0u64; n_values.len()];
    for b in blocks {
        survivors.iter_mut().zip(b).for_each(|(s, c)| *s += c);
    }
    let total = sampling.paths as f64;
    let p_hat: Vec<f64> = survivors.iter().map(|&c| c as f64 / total).collect();
    let ci_half_width = p_hat
        .iter()
        .map(|p| Z95 * (p * (1.0 - p) / total).sqrt())
        .collect();
    Ok(SurvivalCurve {
        x: x.clone(),
        a,
        n_values: n_values.to_vec(),
        survivors,
        p_hat,
        ci_half_width,
        paths_used: sampling.paths,
        seed: sampling.seed,
    })
}

/// Running sums of a scalar observable.
#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    sum: f64,
    sum_sq: f64,
}

impl Moments {
    #[inline]
    fn push(&mut self, y: f64) {
        self.sum += y;
        self.sum_sq += y * y;
    }

    fn merge(&mut self, o: &Moments) {
        self.sum += o.sum;
        self.sum_sq += o.sum_sq;
    }

    /// Mean and standard error over `count` observations.
    fn mean_stderr(&self, count: u64) -> (f64, f64) {
        let m = count as f64;
        let mean = self.sum / m;
        if count < 2 {
            return (mean, f64::NAN);
        }
        let var = ((self.sum_sq - m * mean * mean) / (m - 1.0)).max(0.0);
        (mean, (var / m).sqrt())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VnEntry {
    pub n: usize,
    /// Estimate of `E[S_n; tau > n]`.
    pub estimate: f64,
    pub stderr: f64,
}

/// Monte Carlo estimate of the harmonic function `V(x, a)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarmonicEstimate {
    pub x: SimplexVector,
    pub a: f64,
    pub v_n: Vec<VnEntry>,
    pub v_hat: f64,
    pub v_hat_stderr: f64,
    /// First schedule point at which successive estimates agreed.
    pub plateau_n: usize,
    pub converged: bool,
    /// `a - A` when a Poisson solution was supplied.
    pub lower_bound: Option<f64>,
    /// `V_hat / (1 + a)`; bounded in `a` for a harmonic `V`.
    pub upper_ratio: f64,
    pub diagnostics: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VSettings {
    /// Strictly increasing times at which `E[S_n; tau > n]` is recorded.
    pub schedule: Vec<usize>,
    /// Relative tolerance of the plateau rule.
    pub rel_tol: f64,
}

impl Default for VSettings {
    fn default() -> Self {
        Self {
            schedule: (4..=12).map(|k| 1usize << k).collect(),
            rel_tol: 5e-3,
        }
    }
}

/// `E[S_n; tau > n]` at every schedule point, one path set.
pub fn truncated_means<L: MatrixSampler + ?Sized>(
    law: &L,
    x: &SimplexVector,
    a: f64,
    schedule: &[usize],
    sampling: Sampling,
) -> Result<Vec<VnEntry>> {
    check_start(law, x, a)?;
    check_n_values(schedule)?;
    if sampling.paths < 2 {
        return Err(Error::InvalidArgument("need at least two paths".into()));
    }
    let n_max = *schedule.last().expect("non-empty");
    let blocks = map_blocks(sampling.paths, |range| {
        let mut acc = vec![Moments::default(); schedule.len()];
        let mut walker = Walker::new(x.coords(), a);
        for p in range {
            let mut rng = path_stream(sampling.seed, p);
            walker.reset(x.coords(), a);
            let mut next = 0;
            run_until_exit(law, &mut walker, &mut rng, n_max, |n, s| {
                if n == schedule[next] {
                    acc[next].push(s);
                    next += 1;
                }
            });
        }
        acc
    });
    let mut total = vec![Moments::default(); schedule.len()];
    for b in &blocks {
        total.iter_mut().zip(b).for_each(|(t, m)| t.merge(m));
    }
    Ok(schedule
        .iter()
        .zip(&total)
        .map(|(&n, m)| {
            let (estimate, stderr) = m.mean_stderr(sampling.paths);
            VnEntry {
                n,
                estimate,
                stderr,
            }
        })
        .collect())
}

/// Estimates `V(x, a)` as the plateau of `E[S_n; tau > n]` along the
/// schedule: the first point where successive estimates differ by less than
/// `max(stderr, rel_tol * |V|)`.
pub fn estimate_v<L: MatrixSampler + ?Sized>(
    law: &L,
    x: &SimplexVector,
    a: f64,
    settings: &VSettings,
    sampling: Sampling,
    poisson: Option<&PoissonSolution>,
) -> Result<HarmonicEstimate> {
    let v_n = truncated_means(law, x, a, &settings.schedule, sampling)?;
    let plateau = v_n.windows(2).position(|w| {
        let tol = w[1].stderr.max(settings.rel_tol * w[1].estimate.abs());
        (w[1].estimate - w[0].estimate).abs() < tol
    });
    let (idx, converged) = match plateau {
        Some(i) => (i + 1, true),
        None => (v_n.len() - 1, false),
    };
    let chosen = v_n[idx];
    let lower_bound = poisson.map(|p| a - p.bound_a);
    let mut diagnostics = Vec::new();
    if !converged {
        diagnostics.push(format!(
            "no plateau within schedule; reporting n = {}",
            chosen.n
        ));
    }
    if let Some(lb) = lower_bound {
        if chosen.estimate < lb - 3.0 * chosen.stderr {
            diagnostics.push(format!(
                "estimate {:.4} below the lower bound a - A = {lb:.4}",
                chosen.estimate
            ));
        }
    }
    if chosen.estimate < 0.0 {
        diagnostics.push("negative estimate clipped to 0".into());
    }
    let v_hat = chosen.estimate.max(0.0);
    Ok(HarmonicEstimate {
        x: x.clone(),
        a,
        v_n,
        v_hat,
        v_hat_stderr: chosen.stderr,
        plateau_n: chosen.n,
        converged,
        lower_bound,
        upper_ratio: v_hat / (1.0 + a),
        diagnostics: diagnostics.join("; "),
    })
}

/// `S_n / sqrt(n)` over the paths that survive past `n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalSample {
    pub n: usize,
    pub paths: u64,
    pub values: Vec<f64>,
}

pub fn conditional_endpoint_samples<L: MatrixSampler + ?Sized>(
    law: &L,
    x: &SimplexVector,
    a: f64,
    n_values: &[usize],
    sampling: Sampling,
) -> Result<Vec<ConditionalSample>> {
    check_start(law, x, a)?;
    check_n_values(n_values)?;
    let n_max = *n_values.last().expect("non-empty");
    let blocks = map_blocks(sampling.paths, |range| {
        let mut out: Vec<Vec<f64>> = vec![Vec::new(); n_values.len()];
        let mut walker = Walker::new(x.coords(), a);
        for p in range {
            let mut rng = path_stream(sampling.seed, p);
            walker.reset(x.coords(), a);
            let mut next = 0;
            run_until_exit(law, &mut walker, &mut rng, n_max, |n, s| {
                if n == n_values[next] {
                    out[next].push(s / (n as f64).sqrt());
                    next += 1;
                }
            });
        }
        out
    });
    let mut samples: Vec<ConditionalSample> = n_values
        .iter()
        .map(|&n| ConditionalSample {
            n,
            paths: sampling.paths,
            values: Vec::new(),
        })
        .collect();
    for b in blocks {
        for (s, v) in samples.iter_mut().zip(b) {
            s.values.extend(v);
        }
    }
    if let Some(empty) = samples.iter().find(|s| s.values.is_empty()) {
        return Err(Error::InsufficientData(format!(
            "no path survived to n = {}; use more paths or a smaller n",
            empty.n
        )));
    }
    Ok(samples)
}

pub fn conditional_endpoint_sample<L: MatrixSampler + ?Sized>(
    law: &L,
    x: &SimplexVector,
    a: f64,
    n: usize,
    sampling: Sampling,
) -> Result<Vec<f64>> {
    conditional_endpoint_samples(law, x, a, &[n], sampling)
        .map(|mut v| v.pop().expect("one n").values)
}

/// Runs every path for exactly `n` steps from `(x, 0)` and returns `S_n`
/// in path order.
fn endpoint_values<L: MatrixSampler + ?Sized>(
    law: &L,
    x: &SimplexVector,
    n: usize,
    sampling: Sampling,
) -> Vec<f64> {
    map_blocks(sampling.paths, |range| {
        let mut walker = Walker::new(x.coords(), 0.0);
        range
            .map(|p| {
                let mut rng = path_stream(sampling.seed, p);
                walker.reset(x.coords(), 0.0);
                for _ in 0..n {
                    walker.step(law, &mut rng);
                }
                walker.s
            })
            .collect::<Vec<f64>>()
    })
    .into_iter()
    .flatten()
    .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sigma2Mc {
    pub n: usize,
    pub paths: u64,
    pub sigma2_hat: f64,
    pub stderr: f64,
}

/// `Var(S_n) / n` from independent paths started at `(x, 0)`.
pub fn mc_sigma2<L: MatrixSampler + ?Sized>(
    law: &L,
    x: &SimplexVector,
    n: usize,
    sampling: Sampling,
) -> Result<Sigma2Mc> {
    check_start(law, x, 0.0)?;
    if n == 0 || sampling.paths < 4 {
        return Err(Error::InvalidArgument(
            "variance estimate needs n >= 1 and at least 4 paths".into(),
        ));
    }
    let values = endpoint_values(law, x, n, sampling);
    let (mean, var) = mean_var(&values);
    let m = values.len() as f64;
    let m4 = values.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / m;
    let se_var = ((m4 - var * var).max(0.0) / m).sqrt();
    Ok(Sigma2Mc {
        n,
        paths: sampling.paths,
        sigma2_hat: var / n as f64,
        stderr: se_var / n as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovarianceEntry {
    pub lag: usize,
    pub cov: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceDecay {
    pub burn_in: usize,
    pub entries: Vec<CovarianceEntry>,
    /// Lags with `|cov| > 3 stderr` used in the fit.
    pub fit_lags: Vec<usize>,
    /// `exp(slope)` of the least-squares line through `log |cov|`; absent
    /// when fewer than two lags are significant.
    pub kappa: Option<f64>,
}

/// Sample covariances of the increments `(a_m, a_{m+l})`, `l = 0..=lags`,
/// across paths, and the fitted geometric decay rate.
///
/// The fit window includes lag 0 (the variance) whenever it is significant.
pub fn covariance_decay<L: MatrixSampler + ?Sized>(
    law: &L,
    x: &SimplexVector,
    burn_in: usize,
    lags: usize,
    sampling: Sampling,
) -> Result<CovarianceDecay> {
    check_start(law, x, 0.0)?;
    if burn_in == 0 {
        return Err(Error::InvalidArgument("burn-in must be >= 1".into()));
    }
    if sampling.paths < 4 {
        return Err(Error::InvalidArgument("need at least 4 paths".into()));
    }
    let width = lags + 1;
    // Row p holds a_m, ..., a_{m+lags} for path p.
    let rows: Vec<f64> = map_blocks(sampling.paths, |range| {
        let mut walker = Walker::new(x.coords(), 0.0);
        let mut out = Vec::with_capacity((range.end - range.start) as usize * width);
        for p in range {
            let mut rng = path_stream(sampling.seed, p);
            walker.reset(x.coords(), 0.0);
            for _ in 1..burn_in {
                walker.step(law, &mut rng);
            }
            for _ in 0..width {
                out.push(walker.step(law, &mut rng));
            }
        }
        out
    })
    .into_iter()
    .flatten()
    .collect();

    let m = sampling.paths as usize;
    let col = |l: usize| rows.iter().skip(l).step_by(width).copied();
    let means: Vec<f64> = (0..width).map(|l| col(l).sum::<f64>() / m as f64).collect();
    let entries: Vec<CovarianceEntry> = (0..width)
        .map(|l| {
            let u: Vec<f64> = col(0)
                .zip(col(l))
                .map(|(a0, al)| (a0 - means[0]) * (al - means[l]))
                .collect();
            let (mean_u, var_u) = mean_var(&u);
            CovarianceEntry {
                lag: l,
                cov: mean_u * m as f64 / (m as f64 - 1.0),
                stderr: (var_u / m as f64).sqrt(),
            }
        })
        .collect();
    let significant: Vec<&CovarianceEntry> = entries
        .iter()
        .filter(|e| e.cov.abs() > 3.0 * e.stderr && e.cov != 0.0)
        .collect();
    let fit_lags: Vec<usize> = significant.iter().map(|e| e.lag).collect();
    let kappa = if significant.len() >= 2 {
        let pts: Vec<(f64, f64)> = significant
            .iter()
            .map(|e| (e.lag as f64, e.cov.abs().ln()))
            .collect();
        least_squares_slope(&pts).map(f64::exp)
    } else {
        None
    };
    Ok(CovarianceDecay {
        burn_in,
        entries,
        fit_lags,
        kappa,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapSummary {
    pub max_gap: f64,
    pub violations: u64,
    pub bound: f64,
    pub slack: f64,
}

/// `max |S_n - M_n|` over records and the count of steps exceeding `A + slack`.
pub fn martingale_gap(records: &[PathRecord], bound_a: f64, slack: f64) -> Result<GapSummary> {
    let mut max_gap: f64 = 0.0;
    let mut violations = 0;
    for r in records {
        let m = r
            .m
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("path record carries no martingale".into()))?;
        for (s, mv) in r.s.iter().zip(m) {
            let gap = (s - mv).abs();
            max_gap = max_gap.max(gap);
            if gap > bound_a + slack {
                violations += 1;
            }
        }
    }
    Ok(GapSummary {
        max_gap,
        violations,
        bound: bound_a,
        slack,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrderingSummary {
    /// Paths on which both `tau_a` and `T_{a+A}` were observed.
    pub checked: u64,
    pub violations: u64,
}

/// Checks `tau_a <= T_{a+A}` on every record where both are observed.
pub fn exit_time_ordering(records: &[PathRecord]) -> OrderingSummary {
    let mut summary = OrderingSummary {
        checked: 0,
        violations: 0,
    };
    for r in records {
        if let (Some(tau), Some(t)) = (r.tau, r.t_exit_shifted) {
            summary.checked += 1;
            if tau > t {
                summary.violations += 1;
            }
        }
    }
    summary
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::law::MatrixLaw;
    use crate::matrix::PositiveMatrix;
    use crate::transfer::{solve_poisson, stationary_measure, SimplexGrid, TransferOperator};

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

    fn x0() -> SimplexVector {
        SimplexVector::barycenter(2)
    }

    #[test]
    fn identity_path_is_censored() {
        let law = MatrixLaw::dirac(PositiveMatrix::identity(2));
        let opts = PathOptions {
            horizon: 50,
            full_horizon: false,
        };
        let r = simulate_path(&law, &x0(), 1.0, opts, &mut path_stream(1, 0), None).unwrap();
        assert!(r.censored);
        assert_eq!(r.tau, None);
        assert_eq!(r.s.len(), 51);
        assert!(r.s.iter().all(|&s| s == 1.0));
    }

    #[test]
    fn deterministic_decay_exit_time() {
        for c in [0.5f64, 0.9, 0.3] {
            let law = MatrixLaw::dirac(PositiveMatrix::scalar(2, c).unwrap());
            let opts = PathOptions {
                horizon: 1000,
                full_horizon: false,
            };
            let r = simulate_path(&law, &x0(), 1.0, opts, &mut path_stream(0, 0), None).unwrap();
            let expected = (1.0 / c.ln().abs()).ceil() as usize;
            assert_eq!(r.tau, Some(expected), "c = {c}");
            assert_eq!(r.s.len(), expected + 1);
            assert!(r.s[expected] <= 0.0 && r.s[expected - 1] > 0.0);
        }
    }

    #[test]
    fn same_stream_same_record() {
        let law = interior_law();
        let opts = PathOptions {
            horizon: 300,
            full_horizon: true,
        };
        let a = simulate_path(&law, &x0(), 0.5, opts, &mut path_stream(42, 7), None).unwrap();
        let b = simulate_path(&law, &x0(), 0.5, opts, &mut path_stream(42, 7), None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn deterministic_survival_is_zero_one() {
        let c: f64 = 0.8;
        let law = MatrixLaw::dirac(PositiveMatrix::scalar(2, c).unwrap());
        let a = 2.0;
        let exit = (a / c.ln().abs()).ceil() as usize;
        let curve = survival_probability(
            &law,
            &x0(),
            a,
            &[exit - 1, exit, exit + 3],
            Sampling::new(200, 3),
        )
        .unwrap();
        assert_eq!(curve.p_hat, vec![1.0, 0.0, 0.0]);
        assert!(survival_probability(&law, &x0(), a, &[5], Sampling::new(50, 3)).is_err());
        assert!(survival_probability(&law, &x0(), a, &[5, 5], Sampling::new(500, 3)).is_err());
    }

    #[test]
    fn survival_from_zero_is_monotone_and_nontrivial() {
        let law = interior_law();
        let curve =
            survival_probability(&law, &x0(), 0.0, &[1, 2, 4, 8, 16], Sampling::new(4000, 9))
                .unwrap();
        assert!(curve.p_hat[0] > 0.0 && curve.p_hat[0] < 1.0);
        assert!(curve.p_hat.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn conditional_values_are_positive() {
        let law = interior_law();
        let s = conditional_endpoint_sample(&law, &x0(), 1.0, 32, Sampling::new(3000, 1)).unwrap();
        assert!(!s.is_empty());
        assert!(s.iter().all(|&v| v > 0.0));

        let dying = MatrixLaw::dirac(PositiveMatrix::scalar(2, 0.5).unwrap());
        assert!(matches!(
            conditional_endpoint_sample(&dying, &x0(), 1.0, 10, Sampling::new(100, 1)),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn sigma2_of_stochastic_law_is_zero() {
        let law = MatrixLaw::uniform(vec![
            m(&[&[0.3, 0.9], &[0.7, 0.1]]),
            m(&[&[0.5, 0.25], &[0.5, 0.75]]),
        ])
        .unwrap();
        let est = mc_sigma2(&law, &x0(), 64, Sampling::new(500, 4)).unwrap();
        assert!(est.sigma2_hat < 1e-28);
    }

    #[test]
    fn sigma2_of_scalar_law() {
        let (c1, c2): (f64, f64) = (1.5, 1.0 / 1.5);
        let law = MatrixLaw::uniform(vec![
            PositiveMatrix::scalar(2, c1).unwrap(),
            PositiveMatrix::scalar(2, c2).unwrap(),
        ])
        .unwrap();
        let exact = c1.ln().powi(2);
        let est = mc_sigma2(&law, &x0(), 100, Sampling::new(20_000, 8)).unwrap();
        assert!(
            (est.sigma2_hat - exact).abs() < 3.0 * est.stderr,
            "{est:?} vs {exact}"
        );
    }

    #[test]
    fn scalar_law_increments_are_uncorrelated() {
        let law = MatrixLaw::uniform(vec![
            PositiveMatrix::scalar(2, 2.0).unwrap(),
            PositiveMatrix::scalar(2, 0.5).unwrap(),
        ])
        .unwrap();
        let decay = covariance_decay(&law, &x0(), 5, 6, Sampling::new(20_000, 2)).unwrap();
        for e in &decay.entries[1..] {
            assert!(e.cov.abs() < 3.0 * e.stderr + 1e-12, "{e:?}");
        }
        assert!(decay.kappa.is_none());
    }

    #[test]
    fn gap_and_ordering_on_interior_law() {
        let law = interior_law();
        let grid = SimplexGrid::new(256).unwrap();
        let op = TransferOperator::new(&law, grid).unwrap();
        let nu = stationary_measure(&op, 1e-13, 10_000).unwrap();
        let sol = solve_poisson(&op, &nu.weights, 1e-11, 10_000).unwrap();
        let opts = PathOptions {
            horizon: 200,
            full_horizon: true,
        };
        let records: Vec<PathRecord> = (0..200)
            .map(|p| {
                simulate_path(&law, &x0(), 1.0, opts, &mut path_stream(5, p), Some(&sol)).unwrap()
            })
            .collect();
        for r in &records {
            let m = r.m.as_ref().unwrap();
            assert_eq!(m[0], r.s[0]);
            if let Some(tau) = r.tau {
                assert!(r.s[tau] <= 0.0);
                assert!(r.s[1..tau].iter().all(|&s| s > 0.0));
            }
        }
        let gap = martingale_gap(&records, sol.bound_a, sol.interp_slack).unwrap();
        assert_eq!(gap.violations, 0);
        assert!(gap.max_gap > 0.0);
        let order = exit_time_ordering(&records);
        assert_eq!(order.violations, 0);

        let bare: Vec<PathRecord> = records
            .iter()
            .map(|r| PathRecord {
                m: None,
                ..r.clone()
            })
            .collect();
        assert!(martingale_gap(&bare, 1.0, 0.0).is_err());
    }

    #[test]
    fn gap_vanishes_without_cocycle_variation() {
        let law = MatrixLaw::uniform(vec![
            m(&[&[0.3, 0.9], &[0.7, 0.1]]),
            m(&[&[0.5, 0.25], &[0.5, 0.75]]),
        ])
        .unwrap();
        let grid = SimplexGrid::new(64).unwrap();
        let op = TransferOperator::new(&law, grid).unwrap();
        let nu = stationary_measure(&op, 1e-13, 10_000).unwrap();
        let sol = solve_poisson(&op, &nu.weights, 1e-12, 10_000).unwrap();
        let opts = PathOptions {
            horizon: 100,
            full_horizon: true,
        };
        let records: Vec<PathRecord> = (0..20)
            .map(|p| {
                simulate_path(&law, &x0(), 1.0, opts, &mut path_stream(5, p), Some(&sol)).unwrap()
            })
            .collect();
        let gap = martingale_gap(&records, sol.bound_a, 0.0).unwrap();
        assert!(gap.max_gap < 1e-13);
    }

    #[test]
    fn v_estimate_is_monotone_in_a() {
        let law = interior_law();
        let settings = VSettings {
            schedule: vec![8, 16, 32, 64],
            rel_tol: 1e-2,
        };
        let s = Sampling::new(4000, 77);
        let v: Vec<f64> = [0.0, 0.5, 1.0, 2.0]
            .iter()
            .map(|&a| {
                estimate_v(&law, &x0(), a, &settings, s, None)
                    .unwrap()
                    .v_hat
            })
            .collect();
        assert!(v.windows(2).all(|w| w[0] <= w[1]), "{v:?}");
    }
}
