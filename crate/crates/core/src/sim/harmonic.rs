use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::law::MatrixLaw;
use crate::matrix::SimplexVector;
use crate::stream::{map_blocks, path_stream, MatrixSampler, Sampling};
use crate::transfer::require_grid_dim;

use super::truncated_means;

/// Tabulated estimates of `V(x, a)` on a product lattice, `d = 2`,
/// parametrized by `t = x[0]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VLattice {
    pub n: usize,
    pub t_values: Vec<f64>,
    pub a_values: Vec<f64>,
    /// Row-major in `(t, a)`.
    pub v: Vec<f64>,
    pub stderr: Vec<f64>,
}

fn check_axis(name: &str, v: &[f64], lo: f64, hi: f64) -> Result<()> {
    if v.len() < 2 || v.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument(format!(
            "{name} axis needs at least two strictly increasing values"
        )));
    }
    if v[0] < lo || v[v.len() - 1] > hi {
        return Err(Error::InvalidArgument(format!(
            "{name} axis must lie in [{lo}, {hi}]"
        )));
    }
    Ok(())
}

fn bracket(axis: &[f64], x: f64) -> (usize, f64) {
    let k = axis.partition_point(|&v| v <= x).clamp(1, axis.len() - 1) - 1;
    let lam = ((x - axis[k]) / (axis[k + 1] - axis[k])).clamp(0.0, 1.0);
    (k, lam)
}

impl VLattice {
    /// Estimates `E[S_n; tau > n]` at every lattice node, all with the same `n`.
    /// Node `k` uses seed `sampling.seed + k`.
    pub fn estimate(
        law: &MatrixLaw,
        t_values: Vec<f64>,
        a_values: Vec<f64>,
        n: usize,
        sampling: Sampling,
    ) -> Result<Self> {
        require_grid_dim(law.dim())?;
        check_axis("t", &t_values, 0.0, 1.0)?;
        check_axis("a", &a_values, 0.0, f64::INFINITY)?;
        let mut v = Vec::with_capacity(t_values.len() * a_values.len());
        let mut stderr = Vec::with_capacity(v.capacity());
        for (i, &t) in t_values.iter().enumerate() {
            let x = SimplexVector::new(vec![t, 1.0 - t])?;
            for (j, &a) in a_values.iter().enumerate() {
                let seed = sampling.seed.wrapping_add((i * a_values.len() + j) as u64);
                let e = truncated_means(law, &x, a, &[n], Sampling::new(sampling.paths, seed))?;
                v.push(e[0].estimate);
                stderr.push(e[0].stderr);
            }
        }
        Ok(Self {
            n,
            t_values,
            a_values,
            v,
            stderr,
        })
    }

    fn at(&self, i: usize, j: usize) -> (f64, f64) {
        let k = i * self.a_values.len() + j;
        (self.v[k], self.stderr[k])
    }

    /// Bilinear interpolation with `V = 0` for `a < 0` and slope one in `a`
    /// beyond the last lattice level. Returns the value and a propagated
    /// standard error.
    pub fn eval(&self, t: f64, a: f64) -> (f64, f64) {
        if a < 0.0 {
            return (0.0, 0.0);
        }
        let a_max = self.a_values[self.a_values.len() - 1];
        let extra = (a - a_max).max(0.0);
        let (i, lt) = bracket(&self.t_values, t);
        let (j, la) = bracket(&self.a_values, a.min(a_max));
        let corners = [
            ((1.0 - lt) * (1.0 - la), self.at(i, j)),
            ((1.0 - lt) * la, self.at(i, j + 1)),
            (lt * (1.0 - la), self.at(i + 1, j)),
            (lt * la, self.at(i + 1, j + 1)),
        ];
        let value = corners.iter().map(|(w, (v, _))| w * v).sum::<f64>() + extra;
        let var = corners
            .iter()
            .map(|(w, (_, s))| (w * s).powi(2))
            .sum::<f64>();
        (value, var.sqrt())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarmonicityResidual {
    pub t: f64,
    pub a: f64,
    pub v: f64,
    /// Mean of `V(X_1, S_1) 1{S_1 > 0}` over one-step samples.
    pub one_step: f64,
    pub residual: f64,
    pub stderr: f64,
    pub warning: Option<String>,
}

impl HarmonicityResidual {
    pub fn z(&self) -> f64 {
        if self.stderr > 0.0 {
            self.residual.abs() / self.stderr
        } else if self.residual == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    }
}

/// One-step harmonicity defect `E[V(X_1, S_1); S_1 > 0] - V(x, a)` by Monte
/// Carlo. `v` returns an estimate of `V` and its standard error; it is only
/// called with `a > 0`.
pub fn harmonicity_residual<L, F>(
    law: &L,
    v: F,
    x: &SimplexVector,
    a: f64,
    sampling: Sampling,
) -> Result<HarmonicityResidual>
where
    L: MatrixSampler + ?Sized,
    F: Fn(&[f64], f64) -> (f64, f64) + Sync,
{
    if x.dim() != law.dim() {
        return Err(Error::DimensionMismatch {
            expected: law.dim(),
            got: x.dim(),
        });
    }
    if sampling.paths < 2 {
        return Err(Error::InvalidArgument("need at least two samples".into()));
    }
    // Per block: sums of the integrand, its square, evaluator stderrs, rho and rho^2.
    let blocks = map_blocks(sampling.paths, |range| {
        let mut acc = [0.0; 5];
        let mut next = vec![0.0; x.dim()];
        for p in range {
            let mut rng = path_stream(sampling.seed, p);
            let g = law.sample(&mut rng);
            let rho = g.act_into(x.coords(), &mut next);
            let s1 = a + rho;
            let (y, se) = if s1 > 0.0 { v(&next, s1) } else { (0.0, 0.0) };
            acc[0] += y;
            acc[1] += y * y;
            acc[2] += se;
            acc[3] += rho;
            acc[4] += rho * rho;
        }
        acc
    });
    let mut acc = [0.0; 5];
    for b in &blocks {
        acc.iter_mut().zip(b).for_each(|(t, v)| *t += v);
    }
    let m = sampling.paths as f64;
    let one_step = acc[0] / m;
    let var = ((acc[1] - m * one_step * one_step) / (m - 1.0)).max(0.0);
    let (v0, se0) = v(x.coords(), a);
    let eval_se = acc[2] / m + se0;
    let rho_mean = acc[3] / m;
    let rho_var = acc[4] / m - rho_mean * rho_mean;
    let warning = if rho_var <= 1e-14 * (1.0 + rho_mean * rho_mean) {
        Some("the cocycle shows no variability; the law is degenerate (sigma = 0)".into())
    } else {
        None
    };
    Ok(HarmonicityResidual {
        t: x.coords()[0],
        a,
        v: v0,
        one_step,
        residual: one_step - v0,
        stderr: (var / m + eval_se * eval_se).sqrt(),
        warning,
    })
}
