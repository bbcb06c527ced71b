//! Finitely supported matrix laws and the checks run on them before any
//! limit-theorem machinery is used.

use std::borrow::Cow;
use std::collections::HashSet;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::matrix::{contraction_coeff, matrix_norms, PositiveMatrix, SimplexVector};
use crate::sim::mc_sigma2;
use crate::sim::walker::Walker;
use crate::stream::{map_blocks, path_stream, MatrixSampler, PathRng, Sampling};
use crate::transfer::{lyapunov_exact, stationary_measure, SimplexGrid, TransferOperator};

/// Tolerance on the total weight of a law.
pub const WEIGHT_TOL: f64 = 1e-12;

/// Distribution on `S` with finitely many atoms.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixLaw {
    dim: usize,
    atoms: Vec<PositiveMatrix>,
    weights: Vec<f64>,
    cumulative: Vec<f64>,
}

impl MatrixLaw {
    pub fn new(atoms: Vec<PositiveMatrix>, weights: Vec<f64>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::InvalidLaw("law has no atoms".into()));
        }
        if atoms.len() != weights.len() {
            return Err(Error::InvalidLaw(format!(
                "{} atoms but {} weights",
                atoms.len(),
                weights.len()
            )));
        }
        let dim = atoms[0].dim();
        if let Some(g) = atoms.iter().find(|g| g.dim() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: g.dim(),
            });
        }
        if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w <= 0.0) {
            return Err(Error::InvalidLaw(format!("weight {w} is not positive")));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_TOL {
            return Err(Error::InvalidLaw(format!("weights sum to {total}, not 1")));
        }
        let mut acc = 0.0;
        let mut cumulative: Vec<f64> = weights
            .iter()
            .map(|w| {
                acc += w;
                acc / total
            })
            .collect();
        *cumulative.last_mut().expect("non-empty") = 1.0;
        Ok(Self {
            dim,
            atoms,
            weights,
            cumulative,
        })
    }

    /// Point mass at `g`.
    pub fn dirac(g: PositiveMatrix) -> Self {
        Self::new(vec![g], vec![1.0]).expect("single atom law is valid")
    }

    pub fn uniform(atoms: Vec<PositiveMatrix>) -> Result<Self> {
        let w = 1.0 / atoms.len().max(1) as f64;
        let mut weights = vec![w; atoms.len()];
        // Make the total exact so the weight check cannot trip on rounding.
        if let Some(last) = weights.last_mut() {
            *last = 1.0 - w * (atoms.len() - 1) as f64;
        }
        Self::new(atoms, weights)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn atoms(&self) -> &[PositiveMatrix] {
        &self.atoms
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn support_size(&self) -> usize {
        self.atoms.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&PositiveMatrix, f64)> {
        self.atoms.iter().zip(self.weights.iter().copied())
    }

    /// Index of the atom selected by a uniform draw `u` in `[0, 1)`.
    #[inline]
    pub fn index_for(&self, u: f64) -> usize {
        self.cumulative
            .iter()
            .position(|&c| u < c)
            .unwrap_or(self.atoms.len() - 1)
    }

    /// Hex SHA-256 of the dimension, atom entries and weights (little-endian
    /// IEEE bits), used to tie reports to the exact law they describe.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.dim as u64).to_le_bytes());
        for (g, w) in self.iter() {
            for e in g.entries() {
                h.update(e.to_le_bytes());
            }
            h.update(w.to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

impl MatrixSampler for MatrixLaw {
    fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    fn sample(&self, rng: &mut PathRng) -> Cow<'_, PositiveMatrix> {
        let u: f64 = rng.random();
        Cow::Borrowed(&self.atoms[self.index_for(u)])
    }
}

/// `sum_i w_i N(g_i)^delta0`.
pub fn check_p1(law: &MatrixLaw, delta0: f64) -> f64 {
    law.iter()
        .map(|(g, w)| w * matrix_norms(g).n.powf(delta0))
        .sum()
}

type Pattern = Vec<bool>;

fn pattern_product(p: &Pattern, q: &Pattern, d: usize) -> Pattern {
    let mut out = vec![false; d * d];
    for i in 0..d {
        for j in 0..d {
            out[i * d + j] = (0..d).any(|k| p[i * d + k] && q[k * d + j]);
        }
    }
    out
}

/// Least `n0 <= cap` such that some product of `n0` atoms is entrywise
/// positive. Works on zero patterns, which determine the pattern of every
/// product, so the answer is exact.
pub fn check_p3(law: &MatrixLaw, cap: usize) -> Option<usize> {
    let d = law.dim();
    let atoms: HashSet<Pattern> = law.atoms().iter().map(|g| g.pattern()).collect();
    let mut level = atoms.clone();
    let mut seen: Vec<HashSet<Pattern>> = Vec::new();
    for n in 1..=cap {
        if level.iter().any(|p| p.iter().all(|&b| b)) {
            return Some(n);
        }
        // The level sets evolve deterministically; a repeat means a cycle
        // that never reaches the positive pattern.
        if seen.contains(&level) {
            return None;
        }
        let next: HashSet<Pattern> = level
            .iter()
            .flat_map(|p| atoms.iter().map(move |q| pattern_product(q, p, d)))
            .collect();
        seen.push(std::mem::replace(&mut level, next));
    }
    None
}

/// `max_i log v(g_i)`; the law satisfies the strict-growth condition for some
/// `delta > 0` iff this is positive.
pub fn check_p5(law: &MatrixLaw) -> f64 {
    law.atoms()
        .iter()
        .map(|g| matrix_norms(g).v.ln())
        .fold(f64::NEG_INFINITY, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LyapunovEstimate {
    pub gamma_hat: f64,
    pub stderr: f64,
}

/// Mean of `S_n / n` over independent paths started at `(x0, 0)`.
pub fn estimate_lyapunov<L: MatrixSampler + ?Sized>(
    law: &L,
    x0: &SimplexVector,
    n: usize,
    sampling: Sampling,
) -> Result<LyapunovEstimate> {
    if n == 0 || sampling.paths == 0 {
        return Err(Error::InvalidArgument(
            "Lyapunov estimate needs n >= 1 and paths >= 1".into(),
        ));
    }
    if x0.dim() != law.dim() {
        return Err(Error::DimensionMismatch {
            expected: law.dim(),
            got: x0.dim(),
        });
    }
    let per_block = map_blocks(sampling.paths, |range| {
        let mut walker = Walker::new(x0.coords(), 0.0);
        range
            .map(|p| {
                let mut rng = path_stream(sampling.seed, p);
                walker.reset(x0.coords(), 0.0);
                for _ in 0..n {
                    walker.step(law, &mut rng);
                }
                walker.s / n as f64
            })
            .collect::<Vec<f64>>()
    });
    let values: Vec<f64> = per_block.into_iter().flatten().collect();
    let (mean, var) = mean_var(&values);
    Ok(LyapunovEstimate {
        gamma_hat: mean,
        stderr: (var / values.len() as f64).sqrt(),
    })
}

pub(crate) fn mean_var(values: &[f64]) -> (f64, f64) {
    let m = values.len() as f64;
    let mean = values.iter().sum::<f64>() / m;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0)
    } else {
        0.0
    };
    (mean, var)
}

/// Scales every atom by `exp(-gamma)`: the projective chain is unchanged and
/// every cocycle value drops by `gamma`.
pub fn calibrate(law: &MatrixLaw, gamma: f64) -> Result<MatrixLaw> {
    if gamma == 0.0 {
        return Ok(law.clone());
    }
    let factor = (-gamma).exp();
    let atoms = law
        .atoms()
        .iter()
        .map(|g| g.scaled(factor))
        .collect::<Result<Vec<_>>>()?;
    MatrixLaw::new(atoms, law.weights().to_vec())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum ContractionMode {
    /// Enumerate every product of `n` atoms; refuse above `budget` products.
    Exact { budget: u64 },
    /// Average `c` over `samples` random products.
    Sampled { samples: u64, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvolutionContraction {
    pub n: usize,
    /// Estimate of `c(mu^{*n})`.
    pub value: f64,
    /// `value^(1/n)`, an upper surrogate for the rate of the spectral gap.
    pub kappa: f64,
}

/// Contraction of the `n`-fold convolution: the `mu^{*n}`-average of
/// `c(L_n)`. Over vertex pairs the ratio `d(g.x, g.y) / d(x, y)` equals
/// `c(g)` since vertices are at distance one.
pub fn convolution_contraction(
    law: &MatrixLaw,
    n: usize,
    mode: ContractionMode,
) -> Result<ConvolutionContraction> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be >= 1".into()));
    }
    let value = match mode {
        ContractionMode::Exact { budget } => {
            let count = (law.support_size() as u128).checked_pow(n as u32);
            match count {
                Some(c) if c <= budget as u128 => {}
                _ => {
                    return Err(Error::BudgetExceeded {
                        count: count.unwrap_or(u128::MAX),
                        budget: budget as u128,
                    })
                }
            }
            let mut total = 0.0;
            enumerate_products(
                law,
                n,
                &PositiveMatrix::identity(law.dim()),
                1.0,
                &mut |g, w| {
                    total += w * contraction_coeff(g).value();
                },
            )?;
            total
        }
        ContractionMode::Sampled { samples, seed } => {
            if samples == 0 {
                return Err(Error::InvalidArgument("samples must be >= 1".into()));
            }
            let sums = map_blocks(samples, |range| {
                range
                    .map(|i| {
                        let mut rng = path_stream(seed, i);
                        let mut prod = PositiveMatrix::identity(law.dim());
                        for _ in 0..n {
                            let g = law.sample(&mut rng);
                            prod = g.mul(&prod).expect("dimensions agree");
                        }
                        contraction_coeff(&prod).value()
                    })
                    .sum::<f64>()
            });
            sums.into_iter().sum::<f64>() / samples as f64
        }
    };
    let value = value.clamp(0.0, 1.0);
    Ok(ConvolutionContraction {
        n,
        value,
        kappa: value.powf(1.0 / n as f64),
    })
}

fn enumerate_products(
    law: &MatrixLaw,
    remaining: usize,
    prefix: &PositiveMatrix,
    weight: f64,
    visit: &mut dyn FnMut(&PositiveMatrix, f64),
) -> Result<()> {
    if remaining == 0 {
        visit(prefix, weight);
        return Ok(());
    }
    for (g, w) in law.iter() {
        let next = g.mul(prefix)?;
        enumerate_products(law, remaining - 1, &next, weight * w, visit)?;
    }
    Ok(())
}

/// Outcome of the hypothesis checks on a finite law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisReport {
    pub fingerprint: String,
    pub delta0: f64,
    pub p1_moment: f64,
    pub p3_cap: usize,
    pub p3_n0: Option<usize>,
    /// `max_i log v(g_i)`; positive iff the strict-growth condition holds.
    pub p5_delta: f64,
    pub p4_gamma_hat: f64,
    pub p4_gamma_stderr: f64,
    /// Grid quadrature of the Lyapunov exponent, `d = 2` only.
    pub p4_gamma_grid: Option<f64>,
    pub p4_pass: bool,
    pub sigma2_estimate: f64,
    pub sigma2_stderr: f64,
    pub sigma2_positive: bool,
    pub p2_note: String,
}

impl HypothesisReport {
    /// All checkable hypotheses hold. The non-arithmeticity condition is
    /// only represented by its variance proxy.
    pub fn pass(&self) -> bool {
        self.p1_moment.is_finite()
            && self.p3_n0.is_some()
            && self.p5_delta > 0.0
            && self.p4_pass
            && self.sigma2_positive
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HypothesisSettings {
    pub delta0: f64,
    pub p3_cap: usize,
    /// Steps per path for the Lyapunov and variance estimates.
    pub steps: usize,
    pub paths: u64,
    pub seed: u64,
    pub gamma_tol: f64,
    pub sigma2_threshold: f64,
    pub grid_resolution: usize,
}

impl Default for HypothesisSettings {
    fn default() -> Self {
        Self {
            delta0: 1.0,
            p3_cap: 64,
            steps: 512,
            paths: 10_000,
            seed: 0,
            gamma_tol: 1e-4,
            sigma2_threshold: 1e-6,
            grid_resolution: 512,
        }
    }
}

fn grid_gamma(law: &MatrixLaw, resolution: usize) -> Result<Option<f64>> {
    if law.dim() != 2 {
        return Ok(None);
    }
    let op = TransferOperator::new(law, SimplexGrid::new(resolution)?)?;
    let nu = stationary_measure(&op, 1e-13, 100_000)?;
    Ok(Some(lyapunov_exact(&op, &nu.weights)))
}

pub const P2_NOTE: &str = "no invariant bounded affine set: not decidable here; \
the variance proxy sigma2 > threshold is reported instead";

pub fn hypothesis_report(
    law: &MatrixLaw,
    settings: &HypothesisSettings,
) -> Result<HypothesisReport> {
    let x0 = SimplexVector::barycenter(law.dim());
    let sampling = Sampling::new(settings.paths, settings.seed);
    let lyap = estimate_lyapunov(law, &x0, settings.steps, sampling)?;
    let gamma_grid = grid_gamma(law, settings.grid_resolution)?;
    let p4_pass = match gamma_grid {
        Some(g) => g.abs() <= settings.gamma_tol,
        None => lyap.gamma_hat.abs() <= 3.0 * lyap.stderr,
    };
    let sigma = mc_sigma2(law, &x0, settings.steps, sampling)?;
    Ok(HypothesisReport {
        fingerprint: law.fingerprint(),
        delta0: settings.delta0,
        p1_moment: check_p1(law, settings.delta0),
        p3_cap: settings.p3_cap,
        p3_n0: check_p3(law, settings.p3_cap),
        p5_delta: check_p5(law),
        p4_gamma_hat: lyap.gamma_hat,
        p4_gamma_stderr: lyap.stderr,
        p4_gamma_grid: gamma_grid,
        p4_pass,
        sigma2_estimate: sigma.sigma2_hat,
        sigma2_stderr: sigma.stderr,
        sigma2_positive: sigma.sigma2_hat > settings.sigma2_threshold,
        p2_note: P2_NOTE.into(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    /// Monte Carlo estimate on the input law.
    pub gamma_mc: LyapunovEstimate,
    /// Grid quadrature after the Monte Carlo correction, `d = 2` only.
    pub gamma_grid: Option<f64>,
    /// Total shift applied.
    pub shift: f64,
    /// Grid quadrature on the returned law.
    pub residual: Option<f64>,
}

/// Monte Carlo correction followed, for `d = 2`, by a grid-quadrature
/// refinement.
pub fn calibrate_two_stage(
    law: &MatrixLaw,
    settings: &HypothesisSettings,
) -> Result<(MatrixLaw, Calibration)> {
    let x0 = SimplexVector::barycenter(law.dim());
    let gamma_mc = estimate_lyapunov(
        law,
        &x0,
        settings.steps,
        Sampling::new(settings.paths, settings.seed),
    )?;
    let coarse = calibrate(law, gamma_mc.gamma_hat)?;
    let gamma_grid = grid_gamma(&coarse, settings.grid_resolution)?;
    let (fine, shift) = match gamma_grid {
        Some(g) => (calibrate(&coarse, g)?, gamma_mc.gamma_hat + g),
        None => (coarse, gamma_mc.gamma_hat),
    };
    let residual = grid_gamma(&fine, settings.grid_resolution)?;
    Ok((
        fine,
        Calibration {
            gamma_mc,
            gamma_grid,
            shift,
            residual,
        },
    ))
}
