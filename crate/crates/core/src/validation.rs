//! Brownian and Rayleigh reference laws, the KS statistic, and the report
//! sections that compare simulation output against them.

use std::f64::consts::{PI, SQRT_2};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{ConditionalSample, GapSummary, OrderingSummary, SurvivalCurve};

fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / SQRT_2)
}

/// `P(tau > n)` for Brownian motion with variance `sigma^2` per unit time
/// started at `a >= 0`: `erf(a / (sigma sqrt(2n)))`.
pub fn bm_survival(a: f64, n: f64, sigma: f64) -> f64 {
    if a <= 0.0 {
        return 0.0;
    }
    libm::erf(a / (sigma * (2.0 * n).sqrt()))
}

/// Mass of Brownian motion started at `a` and killed at 0 that lies in
/// `(0, a)` at time `n`.
pub fn bm_killed_mass_below(a: f64, n: f64, sigma: f64) -> f64 {
    if a <= 0.0 {
        return 0.0;
    }
    let s = sigma * n.sqrt();
    (0.5 - normal_cdf(-a / s)) - (normal_cdf(2.0 * a / s) - normal_cdf(a / s))
}

/// Mass of Brownian motion started at `a` and killed at 0 that lies in
/// `(a, b)` at time `n`.
pub fn bm_corridor(a: f64, b: f64, n: f64, sigma: f64) -> Result<f64> {
    if a.is_nan() || b.is_nan() || b <= a || a < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "corridor needs 0 <= a < b, got a = {a}, b = {b}"
        )));
    }
    let s = sigma * n.sqrt();
    let direct = normal_cdf((b - a) / s) - 0.5;
    let reflected = normal_cdf((b + a) / s) - normal_cdf(2.0 * a / s);
    Ok((direct - reflected).clamp(0.0, 1.0))
}

pub fn rayleigh_cdf(t: f64, sigma: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    -(-t * t / (2.0 * sigma * sigma)).exp_m1()
}

pub fn rayleigh_quantile(p: f64, sigma: f64) -> f64 {
    sigma * (-2.0 * (-p).ln_1p()).sqrt()
}

/// Kolmogorov-Smirnov distance between the empirical CDF of `sample` and `cdf`.
pub fn ks_statistic(sample: &[f64], cdf: impl Fn(f64) -> f64) -> Result<f64> {
    if sample.is_empty() {
        return Err(Error::InsufficientData(
            "KS statistic of an empty sample".into(),
        ));
    }
    let mut sorted = sample.to_vec();
    sorted.sort_by(f64::total_cmp);
    let m = sorted.len() as f64;
    Ok(sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            ((i + 1) as f64 / m - f).abs().max((f - i as f64 / m).abs())
        })
        .fold(0.0, f64::max))
}

/// Pass/fail bands for the validation report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Thresholds {
    pub ratio_band: [f64; 2],
    pub ks_max: f64,
    pub min_survivors: usize,
    pub slope_band: [f64; 2],
    pub sigma2_rel_tol: f64,
    /// KS with a doubled sigma must exceed this.
    pub negative_control_ks: f64,
    /// Normal quantile for CI-qualified comparisons.
    pub ci_z: f64,
    /// Multiplier for stderr-qualified bounds and trend tests.
    pub stderr_mult: f64,
    /// Coefficient of the two-sample KS noise allowance.
    pub ks_noise: f64,
    /// Allowance added to the convolution contraction rate when checking kappa.
    pub kappa_slack: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            ratio_band: [0.85, 1.15],
            ks_max: 0.03,
            min_survivors: 200,
            slope_band: [0.9, 1.1],
            sigma2_rel_tol: 0.05,
            negative_control_ks: 0.15,
            ci_z: 1.96,
            stderr_mult: 3.0,
            ks_noise: 1.36,
            kappa_slack: 0.1,
        }
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !sigma.is_finite() || sigma <= 1e-12 {
        return Err(Error::Degenerate(format!(
            "sigma = {sigma}: the walk has no fluctuations and the limit laws do not apply"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SigmaSource {
    Spectral,
    MonteCarlo,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmaChoice {
    pub sigma: f64,
    pub source: SigmaSource,
    pub sigma2_spectral: Option<f64>,
    pub sigma2_mc: Option<f64>,
    pub sigma2_mc_stderr: Option<f64>,
    /// `|spectral - mc| / spectral` when both are present.
    pub relative_discrepancy: Option<f64>,
}

/// Prefers the spectral value and falls back to Monte Carlo.
pub fn select_sigma(spectral: Option<f64>, mc: Option<(f64, f64)>) -> Result<SigmaChoice> {
    let (sigma2, source) = match (spectral, mc) {
        (Some(s), _) => (s, SigmaSource::Spectral),
        (None, Some((m, _))) => (m, SigmaSource::MonteCarlo),
        (None, None) => {
            return Err(Error::InvalidArgument(
                "no variance estimate available; run the spectral or simulate step".into(),
            ))
        }
    };
    let sigma = sigma2.max(0.0).sqrt();
    check_sigma(sigma)?;
    Ok(SigmaChoice {
        sigma,
        source,
        sigma2_spectral: spectral,
        sigma2_mc: mc.map(|m| m.0),
        sigma2_mc_stderr: mc.map(|m| m.1),
        relative_discrepancy: spectral.zip(mc).map(|(s, (m, _))| (s - m).abs() / s),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioRow {
    pub n: usize,
    pub sqrt_n_p: f64,
    pub sqrt_n_p_ci: f64,
    /// `2 V / (sigma sqrt(2 pi))`.
    pub reference: f64,
    pub ratio: f64,
    pub ratio_ci: f64,
    pub in_band: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DoublingRow {
    pub n: usize,
    pub a: f64,
    /// `p(2a) / p(a)` at `n`.
    pub survival_ratio: f64,
    pub survival_ratio_ci: f64,
    /// `V(2a) / V(a)`.
    pub v_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExitAsymptotics {
    pub a: f64,
    pub v_hat: f64,
    pub v_hat_stderr: f64,
    pub sigma: f64,
    pub rows: Vec<RatioRow>,
    /// Index of the first row in the checked upper half of the grid.
    pub checked_from: usize,
    pub band_pass: bool,
    /// Weighted least-squares slope of `sqrt(n) p_n` against `log2 n` on the
    /// checked rows, and its standard error.
    pub trend_slope: f64,
    pub trend_stderr: f64,
    pub flat: bool,
    /// `sup_n sqrt(n) p_n / V`.
    pub uniform_bound: f64,
    pub doubling: Option<DoublingRow>,
    pub pass: bool,
}

/// Survival curve at `2a` together with `V(2a)`, for the doubling row.
#[derive(Debug, Clone, Copy)]
pub struct Doubled<'a> {
    pub curve: &'a SurvivalCurve,
    pub v_hat: f64,
}

pub fn validate_exit_asymptotics(
    curve: &SurvivalCurve,
    v_hat: f64,
    v_hat_stderr: f64,
    sigma: f64,
    thresholds: &Thresholds,
    doubled: Option<Doubled<'_>>,
) -> Result<ExitAsymptotics> {
    check_sigma(sigma)?;
    if v_hat.is_nan() || v_hat <= 0.0 {
        return Err(Error::Degenerate(format!(
            "V estimate {v_hat} is not positive"
        )));
    }
    let z = thresholds.ci_z;
    let reference = 2.0 * v_hat / (sigma * (2.0 * PI).sqrt());
    let v_rel = v_hat_stderr / v_hat;
    let rows: Vec<RatioRow> = curve
        .n_values
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            let rn = (n as f64).sqrt();
            let sqrt_n_p = rn * curve.p_hat[i];
            let sqrt_n_p_ci = rn * curve.ci_half_width[i];
            let ratio = sqrt_n_p / reference;
            let p_rel = if sqrt_n_p > 0.0 {
                sqrt_n_p_ci / sqrt_n_p
            } else {
                f64::INFINITY
            };
            let ratio_ci = ratio * (p_rel.powi(2) + (z * v_rel).powi(2)).sqrt();
            let [lo, hi] = thresholds.ratio_band;
            RatioRow {
                n,
                sqrt_n_p,
                sqrt_n_p_ci,
                reference,
                ratio,
                ratio_ci,
                in_band: ratio + ratio_ci >= lo && ratio - ratio_ci <= hi,
            }
        })
        .collect();
    let checked_from = rows.len() / 2;
    let upper = &rows[checked_from..];
    let band_pass = upper.iter().all(|r| r.in_band);

    let (trend_slope, trend_stderr) = weighted_slope(
        upper
            .iter()
            .map(|r| ((r.n as f64).log2(), r.sqrt_n_p, (r.sqrt_n_p_ci / z).powi(2))),
    );
    let flat = upper.len() < 2 || trend_slope.abs() <= thresholds.stderr_mult * trend_stderr;
    let uniform_bound = rows.iter().map(|r| r.sqrt_n_p / v_hat).fold(0.0, f64::max);

    let doubling = doubled.map(|d| doubling_row(curve, d, v_hat)).transpose()?;

    Ok(ExitAsymptotics {
        a: curve.a,
        v_hat,
        v_hat_stderr,
        sigma,
        rows,
        checked_from,
        band_pass,
        trend_slope,
        trend_stderr,
        flat,
        uniform_bound,
        doubling,
        pass: band_pass && flat && uniform_bound.is_finite(),
    })
}

fn doubling_row(curve: &SurvivalCurve, d: Doubled<'_>, v_hat: f64) -> Result<DoublingRow> {
    let i = curve.n_values.len() - 1;
    let n = curve.n_values[i];
    let j = d
        .curve
        .n_values
        .iter()
        .position(|&m| m == n)
        .ok_or_else(|| Error::InvalidArgument(format!("doubled curve lacks n = {n}")))?;
    let (p1, p2) = (curve.p_hat[i], d.curve.p_hat[j]);
    if p1 <= 0.0 {
        return Err(Error::InsufficientData(format!("no survivors at n = {n}")));
    }
    let ratio = p2 / p1;
    let rel = ((curve.ci_half_width[i] / p1).powi(2)
        + (d.curve.ci_half_width[j] / p2.max(f64::MIN_POSITIVE)).powi(2))
    .sqrt();
    Ok(DoublingRow {
        n,
        a: curve.a,
        survival_ratio: ratio,
        survival_ratio_ci: ratio * rel,
        v_ratio: d.v_hat / v_hat,
    })
}

/// Weighted least-squares slope of `(x, y)` with variances `var`, and its
/// standard error. Points with zero variance get the smallest positive one.
fn weighted_slope(pts: impl Iterator<Item = (f64, f64, f64)>) -> (f64, f64) {
    let pts: Vec<(f64, f64, f64)> = pts.collect();
    if pts.len() < 2 {
        return (0.0, f64::INFINITY);
    }
    let floor = pts
        .iter()
        .map(|p| p.2)
        .filter(|&v| v > 0.0)
        .fold(f64::INFINITY, f64::min);
    let floor = if floor.is_finite() { floor } else { 1.0 };
    let w: Vec<f64> = pts.iter().map(|p| 1.0 / p.2.max(floor)).collect();
    let sw: f64 = w.iter().sum();
    let mx = pts.iter().zip(&w).map(|(p, w)| w * p.0).sum::<f64>() / sw;
    let my = pts.iter().zip(&w).map(|(p, w)| w * p.1).sum::<f64>() / sw;
    let sxx: f64 = pts
        .iter()
        .zip(&w)
        .map(|(p, w)| w * (p.0 - mx).powi(2))
        .sum();
    let sxy: f64 = pts
        .iter()
        .zip(&w)
        .map(|(p, w)| w * (p.0 - mx) * (p.1 - my))
        .sum();
    (sxy / sxx, (1.0 / sxx).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsRow {
    pub n: usize,
    pub ks: f64,
    pub survivors: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalLaw {
    pub sigma: f64,
    pub rows: Vec<KsRow>,
    pub final_pass: bool,
    /// KS does not increase beyond two-sample noise along the grid.
    pub non_increasing: bool,
    pub pass: bool,
}

pub fn validate_conditional_law(
    samples: &[ConditionalSample],
    sigma: f64,
    thresholds: &Thresholds,
) -> Result<ConditionalLaw> {
    check_sigma(sigma)?;
    if samples.is_empty() {
        return Err(Error::InvalidArgument("no conditional samples".into()));
    }
    if let Some(short) = samples
        .iter()
        .find(|s| s.values.len() < thresholds.min_survivors)
    {
        let adequate = samples
            .iter()
            .filter(|s| s.values.len() >= thresholds.min_survivors)
            .map(|s| s.n)
            .max();
        let hint = match adequate {
            Some(n) => format!("the largest adequate n on this grid is {n}"),
            None => "no n on this grid is adequate; increase the path count".into(),
        };
        return Err(Error::InsufficientData(format!(
            "{} survivors at n = {} (need {}); {hint}",
            short.values.len(),
            short.n,
            thresholds.min_survivors
        )));
    }
    let rows = samples
        .iter()
        .map(|s| {
            Ok(KsRow {
                n: s.n,
                ks: ks_statistic(&s.values, |t| rayleigh_cdf(t, sigma))?,
                survivors: s.values.len(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let non_increasing = rows.windows(2).all(|w| {
        let noise = thresholds.ks_noise
            * (1.0 / w[0].survivors as f64 + 1.0 / w[1].survivors as f64).sqrt();
        w[1].ks <= w[0].ks + noise
    });
    let final_pass = rows[rows.len() - 1].ks < thresholds.ks_max;
    Ok(ConditionalLaw {
        sigma,
        rows,
        final_pass,
        non_increasing,
        pass: final_pass && non_increasing,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VRow {
    pub a: f64,
    pub v: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VProperties {
    pub rows: Vec<VRow>,
    pub bound_a: f64,
    pub monotone_violations: usize,
    pub lower_bound_violations: usize,
    /// `sup_a V(a) / (1 + a)`.
    pub upper_ratio_sup: f64,
    /// `V(a) / a` at the largest positive `a`.
    pub slope_at_max: Option<f64>,
    pub slope_pass: bool,
    pub pass: bool,
}

/// Checks monotonicity, the lower bound `V >= a - A` and the slope `V / a`
/// on a table sorted by `a`.
pub fn check_v_properties(
    rows: &[VRow],
    bound_a: f64,
    thresholds: &Thresholds,
) -> Result<VProperties> {
    if rows.is_empty() || rows.windows(2).any(|w| w[0].a >= w[1].a) {
        return Err(Error::InvalidArgument(
            "V table must be non-empty and strictly increasing in a".into(),
        ));
    }
    let monotone_violations = rows
        .windows(2)
        .filter(|w| {
            let noise = thresholds.ci_z * w[0].stderr.hypot(w[1].stderr);
            w[1].v < w[0].v - noise
        })
        .count();
    let lower_bound_violations = rows
        .iter()
        .filter(|r| r.v < r.a - bound_a - thresholds.stderr_mult * r.stderr)
        .count();
    let upper_ratio_sup = rows.iter().map(|r| r.v / (1.0 + r.a)).fold(0.0, f64::max);
    let last = rows[rows.len() - 1];
    let slope_at_max = (last.a > 0.0).then(|| last.v / last.a);
    let [lo, hi] = thresholds.slope_band;
    let slope_pass = slope_at_max.is_some_and(|s| (lo..=hi).contains(&s));
    Ok(VProperties {
        rows: rows.to_vec(),
        bound_a,
        monotone_violations,
        lower_bound_violations,
        upper_ratio_sup,
        slope_at_max,
        slope_pass,
        pass: monotone_violations == 0 && lower_bound_violations == 0 && slope_pass,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovarianceCheck {
    pub kappa: Option<f64>,
    /// `c(mu^{*n})^{1/n}`.
    pub contraction_rate: f64,
    pub pass: bool,
}

pub fn check_covariance_kappa(
    kappa: Option<f64>,
    contraction_rate: f64,
    thresholds: &Thresholds,
) -> CovarianceCheck {
    let pass = kappa.is_some_and(|k| k < 1.0 && k <= contraction_rate + thresholds.kappa_slack);
    CovarianceCheck {
        kappa,
        contraction_rate,
        pass,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HarmonicityCheck {
    pub points: usize,
    pub max_z: f64,
    pub pass: bool,
}

/// Verdict flags, one per report section that was run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Verdicts {
    pub sigma2_agreement: Option<bool>,
    pub exit_asymptotics: Option<bool>,
    pub conditional_law: Option<bool>,
    pub v_properties: Option<bool>,
    pub harmonicity: Option<bool>,
    pub martingale_gap: Option<bool>,
    pub exit_ordering: Option<bool>,
    pub covariance: Option<bool>,
}

impl Verdicts {
    pub fn all_pass(&self) -> bool {
        [
            self.sigma2_agreement,
            self.exit_asymptotics,
            self.conditional_law,
            self.v_properties,
            self.harmonicity,
            self.martingale_gap,
            self.exit_ordering,
            self.covariance,
        ]
        .iter()
        .all(|v| v.unwrap_or(true))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub law_fingerprint: String,
    pub seed: u64,
    pub gamma_hat: Option<f64>,
    pub gamma_stderr: Option<f64>,
    pub sigma: SigmaChoice,
    pub v_table: Vec<VRow>,
    pub exit_asymptotics: Option<ExitAsymptotics>,
    pub conditional_law: Option<ConditionalLaw>,
    pub v_properties: Option<VProperties>,
    pub harmonicity: Option<HarmonicityCheck>,
    pub martingale_gap: Option<GapSummary>,
    pub exit_ordering: Option<OrderingSummary>,
    pub covariance: Option<CovarianceCheck>,
    pub thresholds: Thresholds,
    pub verdicts: Verdicts,
}

impl ValidationReport {
    pub fn new(
        law_fingerprint: String,
        seed: u64,
        sigma: SigmaChoice,
        thresholds: Thresholds,
    ) -> Self {
        Self {
            law_fingerprint,
            seed,
            gamma_hat: None,
            gamma_stderr: None,
            sigma,
            v_table: Vec::new(),
            exit_asymptotics: None,
            conditional_law: None,
            v_properties: None,
            harmonicity: None,
            martingale_gap: None,
            exit_ordering: None,
            covariance: None,
            thresholds,
            verdicts: Verdicts::default(),
        }
    }

    /// Recomputes the verdict flags from the sections present.
    pub fn finalize(&mut self) {
        let t = &self.thresholds;
        self.verdicts = Verdicts {
            sigma2_agreement: self
                .sigma
                .relative_discrepancy
                .map(|d| d <= t.sigma2_rel_tol),
            exit_asymptotics: self.exit_asymptotics.as_ref().map(|s| s.pass),
            conditional_law: self.conditional_law.as_ref().map(|s| s.pass),
            v_properties: self.v_properties.as_ref().map(|s| s.pass),
            harmonicity: self.harmonicity.map(|h| h.pass),
            martingale_gap: self.martingale_gap.map(|g| g.violations == 0),
            exit_ordering: self.exit_ordering.map(|o| o.violations == 0),
            covariance: self.covariance.map(|c| c.pass),
        };
    }
}
