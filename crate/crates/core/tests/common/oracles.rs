//! Reference computations that share no code with the library: adaptive
//! quadrature, the KS statistic by counting, and exact enumeration of short
//! walks.

use std::f64::consts::PI;

use conefluct::MatrixLaw;

fn simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    (b - a) / 6.0 * (f(a) + 4.0 * f(0.5 * (a + b)) + f(b))
}

fn adaptive(f: &impl Fn(f64) -> f64, a: f64, b: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (left, right) = (simpson(f, a, m), simpson(f, m, b));
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    adaptive(f, a, m, left, tol / 2.0, depth - 1) + adaptive(f, m, b, right, tol / 2.0, depth - 1)
}

/// Adaptive Simpson quadrature of `f` over `[a, b]` on 64 fixed panels.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let pieces = 64;
    let h = (b - a) / pieces as f64;
    (0..pieces)
        .map(|k| {
            let (lo, hi) = (a + k as f64 * h, a + (k + 1) as f64 * h);
            adaptive(&f, lo, hi, simpson(&f, lo, hi), 1e-15, 40)
        })
        .sum()
}

/// Density at time `n` of Brownian motion from `a` killed at zero.
pub fn killed_density(a: f64, n: f64, sigma: f64) -> impl Fn(f64) -> f64 {
    let v = n * sigma * sigma;
    let c = 1.0 / (2.0 * PI * v).sqrt();
    move |s| c * ((-(s - a).powi(2) / (2.0 * v)).exp() - (-(s + a).powi(2) / (2.0 * v)).exp())
}

/// `2 / (sigma sqrt(2 pi n)) int_0^a exp(-s^2 / (2 n sigma^2)) ds`.
pub fn survival_integral(a: f64, n: f64, sigma: f64) -> f64 {
    let v = n * sigma * sigma;
    let c = 2.0 / (2.0 * PI * v).sqrt();
    integrate(|s| c * (-s * s / (2.0 * v)).exp(), 0.0, a)
}

/// `sup_x |F_m(x) - F(x)|` evaluated on both sides of every sample point by
/// counting.
pub fn ks_brute(sample: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let m = sample.len() as f64;
    let mut best: f64 = 0.0;
    for &x in sample {
        let at = sample.iter().filter(|&&y| y <= x).count() as f64 / m;
        let below = sample.iter().filter(|&&y| y < x).count() as f64 / m;
        let f = cdf(x);
        best = best.max((at - f).abs()).max((below - f).abs());
    }
    best
}

pub const N_MAX: usize = 6;

/// Exact values for `n = 0..=N_MAX`.
#[derive(Default)]
pub struct Exact {
    pub survival: [f64; N_MAX + 1],
    /// `E[S_n; tau > n]`.
    pub truncated: [f64; N_MAX + 1],
}

/// Recurses over every sequence with the unnormalized product
/// `v = G_n ... G_1 x`, so `S_n = a + log |v|` needs no projective action.
pub fn enumerate(law: &MatrixLaw, x: &[f64], a: f64) -> Exact {
    fn rec(law: &MatrixLaw, v: &[f64], a: f64, n: usize, weight: f64, exact: &mut Exact) {
        if n == N_MAX {
            return;
        }
        let d = law.dim();
        for (g, w) in law.iter() {
            let u: Vec<f64> = (0..d)
                .map(|i| (0..d).map(|j| g.get(i, j) * v[j]).sum())
                .collect();
            let s = a + u.iter().sum::<f64>().ln();
            if s > 0.0 {
                exact.survival[n + 1] += weight * w;
                exact.truncated[n + 1] += weight * w * s;
                rec(law, &u, a, n + 1, weight * w, exact);
            }
        }
    }
    let mut exact = Exact::default();
    exact.survival[0] = 1.0;
    exact.truncated[0] = a;
    rec(law, x, a, 0, 1.0, &mut exact);
    exact
}
