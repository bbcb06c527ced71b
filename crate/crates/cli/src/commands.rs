//! The subcommands. Each writes its artifacts and a manifest into the output
//! directory and returns whether its verdicts passed.

use std::path::Path;

use anyhow::{bail, Context, Result};
use conefluct::law::{
    check_p3, convolution_contraction, estimate_lyapunov, hypothesis_report, ContractionMode,
    HypothesisReport, HypothesisSettings,
};
use conefluct::sim::{
    conditional_endpoint_samples, covariance_decay, estimate_v, exit_time_ordering,
    harmonicity_residual, martingale_gap, mc_sigma2, simulate_path, survival_probability,
    ConditionalSample, GapSummary, HarmonicEstimate, OrderingSummary, PathOptions, Sigma2Mc,
    SurvivalCurve, VLattice, VSettings,
};
use conefluct::stream::{map_blocks, path_stream};
use conefluct::transfer::{
    solve_poisson, spectral_summary, stationary_measure, LambdaPoint, PoissonSolution, SimplexGrid,
    SpectralSettings, TransferOperator,
};
use conefluct::validation::{
    check_covariance_kappa, check_v_properties, select_sigma, validate_conditional_law,
    validate_exit_asymptotics, Doubled, HarmonicityCheck, VRow, ValidationReport,
};
use conefluct::{MatrixLaw, Sampling, SimplexVector};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::lawfile::load_law;
use crate::output::{num, read_json, Artifacts};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Pass,
    Fail,
}

impl Outcome {
    fn from_pass(pass: bool) -> Self {
        if pass {
            Outcome::Pass
        } else {
            Outcome::Fail
        }
    }
}

// Stream labels for `RunConfig::seed_for`.
const S_CHECK: u64 = 0;
const S_SIGMA2: u64 = 1;
const S_SURVIVAL: u64 = 2;
const S_SURVIVAL_2A: u64 = 3;
const S_V: u64 = 4;
const S_V_2A: u64 = 5;
const S_CONDITIONAL: u64 = 6;
const S_COVARIANCE: u64 = 7;
const S_CONTRACTION: u64 = 8;
const S_MARTINGALE: u64 = 9;
const S_LATTICE: u64 = 10;
const S_GAMMA: u64 = 11;
const S_V_TABLE: u64 = 100;
const S_HARMONIC: u64 = 200;

pub struct Session {
    pub run: RunConfig,
    pub law: MatrixLaw,
    pub law_text: String,
    pub fingerprint: String,
    pub x: SimplexVector,
}

impl Session {
    pub fn load(run: RunConfig) -> Result<Self> {
        let (_, law) = load_law(&run.law_path)?;
        let law_text = std::fs::read_to_string(&run.law_path)?;
        let x = run.config.start.x.resolve(law.dim())?;
        Ok(Self {
            fingerprint: law.fingerprint(),
            run,
            law,
            law_text,
            x,
        })
    }

    fn artifacts(&self) -> Result<Artifacts> {
        Artifacts::new(&self.run.out)
    }

    /// Copies the law and a resolved configuration into the output directory
    /// so the run can be repeated from there.
    fn write_run_files(&self, arts: &mut Artifacts) -> Result<()> {
        let mut c = self.run.config.clone();
        c.law = "law.toml".into();
        c.out = Some(".".into());
        arts.text("law.toml", &self.law_text)?;
        arts.text("run.toml", &toml::to_string(&c)?)
    }

    fn hypothesis_settings(&self) -> HypothesisSettings {
        let c = &self.run.config.check;
        HypothesisSettings {
            delta0: c.delta0,
            p3_cap: c.p3_cap,
            steps: c.steps,
            paths: c.paths,
            seed: self.run.seed_for(S_CHECK),
            gamma_tol: c.gamma_tol,
            sigma2_threshold: c.sigma2_threshold,
            grid_resolution: self.run.config.grids.resolution,
        }
    }

    fn sampling(&self, paths: u64, stream: u64) -> Sampling {
        Sampling::new(paths, self.run.seed_for(stream))
    }
}

fn mark(ok: bool) -> &'static str {
    if ok {
        "ok"
    } else {
        "FAIL"
    }
}

fn print_hypotheses(r: &HypothesisReport) {
    println!("law {}", r.fingerprint);
    println!(
        "P1  sum w N^delta0 (delta0 = {})  = {:<14.6} {}",
        r.delta0,
        r.p1_moment,
        mark(r.p1_moment.is_finite())
    );
    match r.p3_n0 {
        Some(n0) => println!("P3  n0                          = {n0:<14} ok"),
        None => println!(
            "P3  n0                          = none <= {:<6} FAIL",
            r.p3_cap
        ),
    }
    let gamma = r.p4_gamma_grid.unwrap_or(r.p4_gamma_hat);
    println!(
        "P4  gamma                       = {:<14.3e} {} (Monte Carlo {:.3e} +- {:.1e})",
        gamma,
        mark(r.p4_pass),
        r.p4_gamma_hat,
        r.p4_gamma_stderr
    );
    println!(
        "P5  max log v                   = {:<14.6} {}",
        r.p5_delta,
        mark(r.p5_delta > 0.0)
    );
    println!(
        "P2  sigma2 proxy                = {:<14.6} {} ({})",
        r.sigma2_estimate,
        mark(r.sigma2_positive),
        r.p2_note
    );
}

pub fn cmd_check(ctx: &Session) -> Result<Outcome> {
    let report = hypothesis_report(&ctx.law, &ctx.hypothesis_settings())?;
    print_hypotheses(&report);
    let mut arts = ctx.artifacts()?;
    arts.json("hypotheses.json", &report)?;
    ctx.write_run_files(&mut arts)?;
    arts.finish("check", &ctx.run, &ctx.fingerprint)?;
    Ok(Outcome::from_pass(report.pass()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralReport {
    pub law_fingerprint: String,
    pub resolution: usize,
    pub gamma: f64,
    pub sigma2: f64,
    pub kappa_hat: f64,
    pub lambda_at: Vec<LambdaPoint>,
    pub stationary_residual: f64,
    pub stationary_iterations: usize,
    pub stationary_cesaro: bool,
    pub bound_a: f64,
    pub interp_slack: f64,
    pub poisson_residual: f64,
    pub poisson_terms: usize,
}

pub fn cmd_spectral(ctx: &Session) -> Result<Outcome> {
    let c = &ctx.run.config;
    let cap = c.check.p3_cap;
    if check_p3(&ctx.law, cap).is_none() {
        bail!(
            "no product of at most {cap} atoms is strictly positive (P3 fails); \
             the transfer operator has no spectral gap to compute"
        );
    }
    let grid = SimplexGrid::new(c.grids.resolution)?;
    let op = TransferOperator::new(&ctx.law, grid).context("building the transfer operator")?;
    let max_iter = c.budgets.max_iter;
    let nu =
        stationary_measure(&op, c.tolerances.stationary, max_iter).context("stationary measure")?;
    let settings = SpectralSettings {
        tol: c.tolerances.eigen,
        max_iter,
        h: c.tolerances.h,
    };
    let summary = spectral_summary(&op, &nu.weights, &c.grids.spectral_t, settings)
        .context("dominant eigenvalues")?;
    let poisson = solve_poisson(&op, &nu.weights, c.tolerances.poisson, max_iter)
        .context("Poisson equation")?;

    let report = SpectralReport {
        law_fingerprint: ctx.fingerprint.clone(),
        resolution: grid.len(),
        gamma: summary.gamma,
        sigma2: summary.sigma2,
        kappa_hat: summary.kappa_hat,
        lambda_at: summary.lambda_at.clone(),
        stationary_residual: nu.residual,
        stationary_iterations: nu.iterations,
        stationary_cesaro: nu.cesaro,
        bound_a: poisson.bound_a,
        interp_slack: poisson.interp_slack,
        poisson_residual: poisson.residual,
        poisson_terms: poisson.truncation_n,
    };
    println!("gamma      = {:.6e}", report.gamma);
    println!("sigma2     = {:.8}", report.sigma2);
    println!("kappa_hat  = {:.6}", report.kappa_hat);
    println!(
        "A          = {:.8} (slack {:.2e})",
        report.bound_a, report.interp_slack
    );
    println!(
        "residuals  = stationary {:.2e}, Poisson {:.2e}",
        report.stationary_residual, report.poisson_residual
    );

    let mut arts = ctx.artifacts()?;
    arts.json("spectral.json", &report)?;
    arts.json("poisson.json", &poisson)?;
    arts.csv(
        "nu.csv",
        &["node", "t", "nu"],
        nu.weights
            .iter()
            .enumerate()
            .map(|(i, w)| vec![i.to_string(), num(grid.param(i)), num(*w)]),
    )?;
    arts.csv(
        "theta.csv",
        &["node", "t", "theta"],
        poisson
            .theta_env
            .iter()
            .enumerate()
            .map(|(i, v)| vec![i.to_string(), num(grid.param(i)), num(*v)]),
    )?;
    arts.csv(
        "lambda.csv",
        &["t", "lambda_re", "lambda_im"],
        summary
            .lambda_at
            .iter()
            .map(|p| vec![num(p.t), num(p.re), num(p.im)]),
    )?;
    arts.csv(
        "eigen_history.csv",
        &["iteration", "residual", "lambda_re", "lambda_im"],
        summary.residual_history.iter().map(|r| {
            vec![
                r.iteration.to_string(),
                num(r.residual),
                num(r.lambda_re),
                num(r.lambda_im),
            ]
        }),
    )?;
    ctx.write_run_files(&mut arts)?;
    arts.finish("spectral", &ctx.run, &ctx.fingerprint)?;
    Ok(Outcome::Pass)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarmonicArtifact {
    pub at_a: HarmonicEstimate,
    pub at_2a: HarmonicEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VTableRow {
    pub a_sigma: f64,
    pub a: f64,
    pub v_hat: f64,
    pub stderr: f64,
    pub plateau_n: usize,
    pub converged: bool,
}

fn survival_csv(arts: &mut Artifacts, name: &str, c: &SurvivalCurve) -> Result<()> {
    arts.csv(
        name,
        &["n", "p_hat", "ci_half_width", "survivors", "paths"],
        (0..c.n_values.len()).map(|i| {
            vec![
                c.n_values[i].to_string(),
                num(c.p_hat[i]),
                num(c.ci_half_width[i]),
                c.survivors[i].to_string(),
                c.paths_used.to_string(),
            ]
        }),
    )
}

fn check_horizon(ctx: &Session) -> Result<()> {
    let g = &ctx.run.config.grids;
    let horizon = ctx.run.config.budgets.horizon;
    let lists: [(&str, &[usize]); 3] = [
        ("n_values", &g.n_values),
        ("conditional_n", &g.conditional_n),
        ("v_schedule", &g.v_schedule),
    ];
    for (name, list) in lists {
        if let Some(n) = list.iter().find(|&&n| n > horizon) {
            bail!("grids.{name} contains n = {n}, which exceeds budgets.horizon = {horizon}");
        }
    }
    Ok(())
}

pub fn cmd_simulate(ctx: &Session) -> Result<Outcome> {
    check_horizon(ctx)?;
    if !ctx.run.force {
        let report = hypothesis_report(&ctx.law, &ctx.hypothesis_settings())?;
        if !report.pass() {
            print_hypotheses(&report);
            bail!("hypothesis checks failed; rerun with --force to simulate anyway");
        }
    }
    let c = &ctx.run.config;
    let (law, x, a) = (&ctx.law, &ctx.x, c.start.a);
    let b = &c.budgets;
    let mut arts = ctx.artifacts()?;

    let sigma2 = mc_sigma2(law, x, b.sigma2_n, ctx.sampling(b.sigma2_paths, S_SIGMA2));
    let sigma = match &sigma2 {
        Ok(s) => {
            println!(
                "sigma2 (Monte Carlo) = {:.6} +- {:.1e}",
                s.sigma2_hat, s.stderr
            );
            arts.json("sigma2_mc.json", s)?;
            Some(s.sigma2_hat.sqrt())
        }
        Err(e) => {
            arts.error("variance", &anyhow::anyhow!("{e}"));
            None
        }
    };

    for (name, level, stream) in [
        ("survival", a, S_SURVIVAL),
        ("survival_2a", 2.0 * a, S_SURVIVAL_2A),
    ] {
        match survival_probability(
            law,
            x,
            level,
            &c.grids.n_values,
            ctx.sampling(b.survival_paths, stream),
        ) {
            Ok(curve) => {
                arts.json(&format!("{name}.json"), &curve)?;
                survival_csv(&mut arts, &format!("{name}.csv"), &curve)?;
            }
            Err(e) => arts.error(name, &e.into()),
        }
    }

    let v_settings = VSettings {
        schedule: c.grids.v_schedule.clone(),
        rel_tol: c.tolerances.plateau_rel,
    };
    let at_a = estimate_v(law, x, a, &v_settings, ctx.sampling(b.v_paths, S_V), None);
    let at_2a = estimate_v(
        law,
        x,
        2.0 * a,
        &v_settings,
        ctx.sampling(b.v_paths, S_V_2A),
        None,
    );
    match (at_a, at_2a) {
        (Ok(at_a), Ok(at_2a)) => {
            println!(
                "V(x, {a}) = {:.5} +- {:.1e} (plateau n = {})",
                at_a.v_hat, at_a.v_hat_stderr, at_a.plateau_n
            );
            arts.csv(
                "v_estimate.csv",
                &["a", "n", "estimate", "stderr"],
                [&at_a, &at_2a].into_iter().flat_map(|h| {
                    h.v_n
                        .iter()
                        .map(|e| vec![num(h.a), e.n.to_string(), num(e.estimate), num(e.stderr)])
                        .collect::<Vec<_>>()
                }),
            )?;
            arts.json("harmonic.json", &HarmonicArtifact { at_a, at_2a })?;
        }
        (Err(e), _) | (_, Err(e)) => arts.error("harmonic function", &e.into()),
    }

    match conditional_endpoint_samples(
        law,
        x,
        a,
        &c.grids.conditional_n,
        ctx.sampling(b.conditional_paths, S_CONDITIONAL),
    ) {
        Ok(samples) => arts.csv(
            "conditional.csv",
            &["n", "value"],
            samples.iter().flat_map(|s| {
                s.values
                    .iter()
                    .map(|v| vec![s.n.to_string(), num(*v)])
                    .collect::<Vec<_>>()
            }),
        )?,
        Err(e) => arts.error("conditional samples", &e.into()),
    }

    if let Some(sigma) = sigma {
        let mut rows = Vec::new();
        for (k, &m) in c.grids.a_grid_sigma.iter().enumerate() {
            let level = m * sigma;
            let s = ctx.sampling(b.v_table_paths, S_V_TABLE + k as u64);
            match estimate_v(law, x, level, &v_settings, s, None) {
                Ok(h) => rows.push(VTableRow {
                    a_sigma: m,
                    a: level,
                    v_hat: h.v_hat,
                    stderr: h.v_hat_stderr,
                    plateau_n: h.plateau_n,
                    converged: h.converged,
                }),
                Err(e) => arts.error(&format!("V at a = {level}"), &e.into()),
            }
        }
        arts.csv(
            "v_table.csv",
            &["a_sigma", "a", "v_hat", "stderr", "plateau_n", "converged"],
            rows.iter().map(|r| {
                vec![
                    num(r.a_sigma),
                    num(r.a),
                    num(r.v_hat),
                    num(r.stderr),
                    r.plateau_n.to_string(),
                    r.converged.to_string(),
                ]
            }),
        )?;
        arts.json("v_table.json", &rows)?;
    }

    ctx.write_run_files(&mut arts)?;
    let failed = arts.has_errors();
    arts.finish("simulate", &ctx.run, &ctx.fingerprint)?;
    Ok(Outcome::from_pass(!failed))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceArtifact {
    pub decay: conefluct::sim::CovarianceDecay,
    pub contraction: conefluct::law::ConvolutionContraction,
    pub contraction_mode: ContractionMode,
}

pub fn cmd_covariance(ctx: &Session) -> Result<Outcome> {
    let cc = &ctx.run.config.covariance;
    let decay = covariance_decay(
        &ctx.law,
        &ctx.x,
        cc.burn_in,
        cc.lags,
        ctx.sampling(cc.paths, S_COVARIANCE),
    )?;
    let count = (ctx.law.support_size() as u128).checked_pow(cc.contraction_n as u32);
    let mode = match count {
        Some(n) if n <= cc.contraction_budget as u128 => ContractionMode::Exact {
            budget: cc.contraction_budget,
        },
        _ => ContractionMode::Sampled {
            samples: cc.contraction_samples,
            seed: ctx.run.seed_for(S_CONTRACTION),
        },
    };
    let contraction = convolution_contraction(&ctx.law, cc.contraction_n, mode)?;
    for e in &decay.entries {
        println!(
            "lag {:>3}  cov {:>12.6}  stderr {:.2e}",
            e.lag, e.cov, e.stderr
        );
    }
    match decay.kappa {
        Some(k) => println!("kappa (fit) = {k:.4}"),
        None => println!("kappa (fit) = none: fewer than two significant lags"),
    }
    println!(
        "c(mu^*{})^(1/{}) = {:.4}",
        contraction.n, contraction.n, contraction.kappa
    );

    let mut arts = ctx.artifacts()?;
    arts.csv(
        "covariance.csv",
        &["lag", "cov", "stderr", "in_fit"],
        decay.entries.iter().map(|e| {
            vec![
                e.lag.to_string(),
                num(e.cov),
                num(e.stderr),
                decay.fit_lags.contains(&e.lag).to_string(),
            ]
        }),
    )?;
    arts.json(
        "covariance.json",
        &CovarianceArtifact {
            decay,
            contraction,
            contraction_mode: mode,
        },
    )?;
    ctx.write_run_files(&mut arts)?;
    arts.finish("covariance", &ctx.run, &ctx.fingerprint)?;
    Ok(Outcome::Pass)
}

fn read_conditional(path: &Path) -> Result<Vec<ConditionalSample>> {
    let mut reader =
        csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out: Vec<ConditionalSample> = Vec::new();
    for (line, rec) in reader.deserialize::<(usize, f64)>().enumerate() {
        let (n, v) = rec.with_context(|| format!("{} record {}", path.display(), line + 1))?;
        match out.last_mut() {
            Some(s) if s.n == n => s.values.push(v),
            _ => out.push(ConditionalSample {
                n,
                paths: 0,
                values: vec![v],
            }),
        }
    }
    Ok(out)
}

/// Martingale gap and exit ordering over independent full-horizon paths,
/// reduced block by block so that no path is kept.
pub fn martingale_checks(
    law: &MatrixLaw,
    x: &SimplexVector,
    a: f64,
    poisson: &PoissonSolution,
    steps: usize,
    sampling: Sampling,
) -> Result<(GapSummary, OrderingSummary)> {
    let options = PathOptions {
        horizon: steps,
        full_horizon: true,
    };
    let blocks = map_blocks(sampling.paths, |range| -> conefluct::Result<_> {
        let mut gap = GapSummary {
            max_gap: 0.0,
            violations: 0,
            bound: poisson.bound_a,
            slack: poisson.interp_slack,
        };
        let mut order = OrderingSummary {
            checked: 0,
            violations: 0,
        };
        for p in range {
            let mut rng = path_stream(sampling.seed, p);
            let rec = simulate_path(law, x, a, options, &mut rng, Some(poisson))?;
            let records = std::slice::from_ref(&rec);
            let g = martingale_gap(records, poisson.bound_a, poisson.interp_slack)?;
            gap.max_gap = gap.max_gap.max(g.max_gap);
            gap.violations += g.violations;
            let o = exit_time_ordering(records);
            order.checked += o.checked;
            order.violations += o.violations;
        }
        Ok((gap, order))
    });
    let mut gap = GapSummary {
        max_gap: 0.0,
        violations: 0,
        bound: poisson.bound_a,
        slack: poisson.interp_slack,
    };
    let mut order = OrderingSummary {
        checked: 0,
        violations: 0,
    };
    for b in blocks {
        let (g, o) = b?;
        gap.max_gap = gap.max_gap.max(g.max_gap);
        gap.violations += g.violations;
        order.checked += o.checked;
        order.violations += o.violations;
    }
    Ok((gap, order))
}

fn harmonicity_check(ctx: &Session, sigma: f64) -> Result<HarmonicityCheck> {
    let h = &ctx.run.config.harmonicity;
    let a_values: Vec<f64> = h.a_sigma.iter().map(|m| m * sigma).collect();
    let lattice = VLattice::estimate(
        &ctx.law,
        h.t_values.clone(),
        a_values,
        h.n,
        ctx.sampling(h.lattice_paths, S_LATTICE),
    )?;
    let mut max_z: f64 = 0.0;
    for (k, [t, m]) in h.points.iter().enumerate() {
        let x = SimplexVector::new(vec![*t, 1.0 - t])?;
        let r = harmonicity_residual(
            &ctx.law,
            |y, a| lattice.eval(y[0], a),
            &x,
            m * sigma,
            ctx.sampling(h.samples, S_HARMONIC + k as u64),
        )?;
        println!(
            "harmonicity at t = {t}, a = {:.3}: residual {:+.5} +- {:.5}",
            m * sigma,
            r.residual,
            r.stderr
        );
        max_z = max_z.max(r.z());
    }
    Ok(HarmonicityCheck {
        points: h.points.len(),
        max_z,
        pass: max_z <= ctx.run.config.thresholds.stderr_mult,
    })
}

const SIMULATE_FILES: [&str; 6] = [
    "sigma2_mc.json",
    "survival.json",
    "survival_2a.json",
    "harmonic.json",
    "conditional.csv",
    "v_table.json",
];
const SPECTRAL_FILES: [&str; 2] = ["spectral.json", "poisson.json"];

pub fn cmd_validate(ctx: &Session, sigma_scale: f64) -> Result<Outcome> {
    let dir = &ctx.run.out;
    let missing = |files: &[&str]| -> Vec<String> {
        files
            .iter()
            .filter(|f| !dir.join(f).exists())
            .map(|f| f.to_string())
            .collect()
    };
    let (ms, mm) = (missing(&SPECTRAL_FILES), missing(&SIMULATE_FILES));
    if !ms.is_empty() || !mm.is_empty() {
        let mut hints = Vec::new();
        if !ms.is_empty() {
            hints.push(format!("`conefluct spectral` (missing {})", ms.join(", ")));
        }
        if !mm.is_empty() {
            hints.push(format!("`conefluct simulate` (missing {})", mm.join(", ")));
        }
        bail!(
            "artifacts missing in {}; run {} with the same --config and --out first",
            dir.display(),
            hints.join(" and ")
        );
    }
    let spectral: SpectralReport = read_json(&dir.join("spectral.json"))?;
    if spectral.law_fingerprint != ctx.fingerprint {
        bail!(
            "{} was produced for law {}, not {}; rerun `conefluct spectral`",
            dir.join("spectral.json").display(),
            spectral.law_fingerprint,
            ctx.fingerprint
        );
    }
    let poisson: PoissonSolution = read_json(&dir.join("poisson.json"))?;
    let mc: Sigma2Mc = read_json(&dir.join("sigma2_mc.json"))?;
    let survival: SurvivalCurve = read_json(&dir.join("survival.json"))?;
    let survival_2a: SurvivalCurve = read_json(&dir.join("survival_2a.json"))?;
    let harmonic: HarmonicArtifact = read_json(&dir.join("harmonic.json"))?;
    let v_table: Vec<VTableRow> = read_json(&dir.join("v_table.json"))?;
    let conditional = read_conditional(&dir.join("conditional.csv"))?;

    let c = &ctx.run.config;
    let t = &c.thresholds;
    let sigma = select_sigma(Some(spectral.sigma2), Some((mc.sigma2_hat, mc.stderr)))?;
    let mut report = ValidationReport::new(ctx.fingerprint.clone(), ctx.run.seed, sigma, t.clone());
    let gamma = estimate_lyapunov(
        &ctx.law,
        &ctx.x,
        c.check.steps,
        ctx.sampling(c.check.paths, S_GAMMA),
    )?;
    report.gamma_hat = Some(gamma.gamma_hat);
    report.gamma_stderr = Some(gamma.stderr);
    report.v_table = v_table
        .iter()
        .map(|r| VRow {
            a: r.a,
            v: r.v_hat,
            stderr: r.stderr,
        })
        .collect();

    report.exit_asymptotics = Some(validate_exit_asymptotics(
        &survival,
        harmonic.at_a.v_hat,
        harmonic.at_a.v_hat_stderr,
        sigma.sigma,
        t,
        Some(Doubled {
            curve: &survival_2a,
            v_hat: harmonic.at_2a.v_hat,
        }),
    )?);
    report.conditional_law = Some(validate_conditional_law(
        &conditional,
        sigma.sigma * sigma_scale,
        t,
    )?);
    report.v_properties = Some(check_v_properties(&report.v_table, poisson.bound_a, t)?);

    let (gap, order) = martingale_checks(
        &ctx.law,
        &ctx.x,
        c.start.a,
        &poisson,
        c.budgets.martingale_steps,
        ctx.sampling(c.budgets.martingale_paths, S_MARTINGALE),
    )?;
    report.martingale_gap = Some(gap);
    report.exit_ordering = Some(order);
    if c.harmonicity.enabled {
        report.harmonicity = Some(harmonicity_check(ctx, sigma.sigma)?);
    }
    let cov_path = dir.join("covariance.json");
    if cov_path.exists() {
        let cov: CovarianceArtifact = read_json(&cov_path)?;
        report.covariance = Some(check_covariance_kappa(
            cov.decay.kappa,
            cov.contraction.kappa,
            t,
        ));
    } else {
        println!(
            "note: covariance.json absent; run `conefluct covariance` to include the decay check"
        );
    }
    report.finalize();
    print_verdicts(&report);

    let mut arts = ctx.artifacts()?;
    arts.json("validation_report.json", &report)?;
    if let Some(e) = &report.exit_asymptotics {
        arts.csv(
            "ratio_table.csv",
            &[
                "n",
                "sqrt_n_p",
                "sqrt_n_p_ci",
                "reference",
                "ratio",
                "ratio_ci",
                "in_band",
            ],
            e.rows.iter().map(|r| {
                vec![
                    r.n.to_string(),
                    num(r.sqrt_n_p),
                    num(r.sqrt_n_p_ci),
                    num(r.reference),
                    num(r.ratio),
                    num(r.ratio_ci),
                    r.in_band.to_string(),
                ]
            }),
        )?;
    }
    if let Some(k) = &report.conditional_law {
        arts.csv(
            "ks_table.csv",
            &["n", "ks", "survivors"],
            k.rows
                .iter()
                .map(|r| vec![r.n.to_string(), num(r.ks), r.survivors.to_string()]),
        )?;
    }
    arts.csv(
        "v_properties.csv",
        &["a", "v_hat", "stderr", "lower_bound", "upper_ratio"],
        report.v_table.iter().map(|r| {
            vec![
                num(r.a),
                num(r.v),
                num(r.stderr),
                num(r.a - poisson.bound_a),
                num(r.v / (1.0 + r.a)),
            ]
        }),
    )?;
    ctx.write_run_files(&mut arts)?;
    arts.finish("validate", &ctx.run, &ctx.fingerprint)?;
    Ok(Outcome::from_pass(report.verdicts.all_pass()))
}

fn print_verdicts(r: &ValidationReport) {
    let s = &r.sigma;
    println!(
        "sigma = {:.6} from {:?}; sigma2 spectral {:?}, Monte Carlo {:?}, discrepancy {:?}",
        s.sigma, s.source, s.sigma2_spectral, s.sigma2_mc, s.relative_discrepancy
    );
    if let Some(e) = &r.exit_asymptotics {
        for row in &e.rows {
            println!(
                "n = {:>6}  sqrt(n) p = {:.4} +- {:.4}  ratio = {:.4} +- {:.4}",
                row.n, row.sqrt_n_p, row.sqrt_n_p_ci, row.ratio, row.ratio_ci
            );
        }
        println!(
            "trend slope {:.4} +- {:.4}; sup sqrt(n) p / V = {:.4}",
            e.trend_slope, e.trend_stderr, e.uniform_bound
        );
    }
    if let Some(k) = &r.conditional_law {
        for row in &k.rows {
            println!(
                "n = {:>6}  KS = {:.4}  survivors = {}",
                row.n, row.ks, row.survivors
            );
        }
    }
    let v = &r.verdicts;
    let lines = [
        ("sigma2 agreement", v.sigma2_agreement),
        ("exit asymptotics", v.exit_asymptotics),
        ("conditional law", v.conditional_law),
        ("V properties", v.v_properties),
        ("harmonicity", v.harmonicity),
        ("martingale gap", v.martingale_gap),
        ("exit ordering", v.exit_ordering),
        ("covariance decay", v.covariance),
    ];
    for (name, verdict) in lines {
        let text = match verdict {
            Some(true) => "pass",
            Some(false) => "FAIL",
            None => "not run",
        };
        println!("{name:<18} {text}");
    }
}
