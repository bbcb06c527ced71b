//! Experiment configuration files and their resolution against CLI flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use conefluct::validation::Thresholds;
use conefluct::SimplexVector;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StartPoint {
    Named(String),
    Coords(Vec<f64>),
}

impl StartPoint {
    pub fn resolve(&self, dim: usize) -> Result<SimplexVector> {
        match self {
            StartPoint::Named(s) if s == "barycenter" => Ok(SimplexVector::barycenter(dim)),
            StartPoint::Named(s) => {
                bail!("start.x: unknown point {s:?}; use \"barycenter\" or coordinates")
            }
            StartPoint::Coords(c) => SimplexVector::new(c.clone()).context("start.x"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Start {
    pub x: StartPoint,
    pub a: f64,
}

impl Default for Start {
    fn default() -> Self {
        Self {
            x: StartPoint::Named("barycenter".into()),
            a: 1.0,
        }
    }
}

fn powers_of_two(lo: u32, hi: u32) -> Vec<usize> {
    (lo..=hi).map(|k| 1usize << k).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Grids {
    /// Times for survival probabilities.
    pub n_values: Vec<usize>,
    /// Times for conditional samples.
    pub conditional_n: Vec<usize>,
    /// Schedule of the `V` plateau search.
    pub v_schedule: Vec<usize>,
    /// Start levels of the `V` table, in units of the Monte Carlo sigma.
    pub a_grid_sigma: Vec<f64>,
    /// Grid resolution of the transfer operator.
    pub resolution: usize,
    /// Fourier parameters at which the dominant eigenvalue is reported.
    pub spectral_t: Vec<f64>,
}

impl Default for Grids {
    fn default() -> Self {
        Self {
            n_values: powers_of_two(8, 13),
            conditional_n: vec![64, 256, 1024],
            v_schedule: powers_of_two(4, 13),
            a_grid_sigma: vec![0.0, 0.5, 1.0, 2.0, 5.0, 20.0, 50.0],
            resolution: 512,
            spectral_t: vec![0.1, 0.25, 0.5, 1.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Budgets {
    pub survival_paths: u64,
    pub conditional_paths: u64,
    pub v_paths: u64,
    pub v_table_paths: u64,
    pub sigma2_paths: u64,
    pub sigma2_n: usize,
    pub horizon: usize,
    pub max_iter: usize,
    pub martingale_paths: u64,
    pub martingale_steps: usize,
}

impl Default for Budgets {
    fn default() -> Self {
        Self {
            survival_paths: 1_000_000,
            conditional_paths: 1_000_000,
            v_paths: 1_000_000,
            v_table_paths: 100_000,
            sigma2_paths: 100_000,
            sigma2_n: 4096,
            horizon: 1_000_000,
            max_iter: 100_000,
            martingale_paths: 10_000,
            martingale_steps: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub stationary: f64,
    pub eigen: f64,
    pub poisson: f64,
    pub plateau_rel: f64,
    /// Second-difference step for the spectral variance.
    pub h: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            stationary: 1e-13,
            eigen: 1e-13,
            poisson: 1e-12,
            plateau_rel: 5e-3,
            h: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheckConfig {
    pub delta0: f64,
    pub p3_cap: usize,
    pub steps: usize,
    pub paths: u64,
    pub gamma_tol: f64,
    pub sigma2_threshold: f64,
}

impl Default for CheckConfig {
    fn default() -> Self {
        Self {
            delta0: 1.0,
            p3_cap: 64,
            steps: 512,
            paths: 10_000,
            gamma_tol: 1e-4,
            sigma2_threshold: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CovarianceConfig {
    pub burn_in: usize,
    pub lags: usize,
    pub paths: u64,
    /// Convolution power for the contraction rate.
    pub contraction_n: usize,
    /// Largest number of products enumerated exactly; above it the
    /// contraction is sampled.
    pub contraction_budget: u64,
    pub contraction_samples: u64,
}

impl Default for CovarianceConfig {
    fn default() -> Self {
        Self {
            burn_in: 50,
            lags: 8,
            paths: 200_000,
            contraction_n: 8,
            contraction_budget: 1 << 20,
            contraction_samples: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarmonicityConfig {
    pub enabled: bool,
    /// Lattice in `t = x[0]`.
    pub t_values: Vec<f64>,
    /// Lattice in `a`, in units of sigma.
    pub a_sigma: Vec<f64>,
    /// Common time at which the lattice values are estimated.
    pub n: usize,
    pub lattice_paths: u64,
    pub samples: u64,
    /// Points `(t, a / sigma)` at which the residual is evaluated.
    pub points: Vec<[f64; 2]>,
}

impl Default for HarmonicityConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            t_values: vec![0.1, 0.3, 0.5, 0.7, 0.9],
            a_sigma: (0..=24).map(|k| k as f64 * 0.25).collect(),
            n: 512,
            lattice_paths: 20_000,
            samples: 100_000,
            points: vec![[0.5, 1.0], [0.3, 2.0], [0.7, 4.0]],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Law file, relative to the configuration file.
    pub law: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Output directory, relative to the configuration file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub start: Start,
    #[serde(default)]
    pub grids: Grids,
    #[serde(default)]
    pub budgets: Budgets,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub check: CheckConfig,
    #[serde(default)]
    pub covariance: CovarianceConfig,
    #[serde(default)]
    pub harmonicity: HarmonicityConfig,
    #[serde(default)]
    pub thresholds: Thresholds,
}

/// Command-line values that override the configuration file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
    pub force: bool,
}

/// Configuration with every path made absolute and the seed fixed.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub config: ExperimentConfig,
    pub law_path: PathBuf,
    pub seed: u64,
    pub out: PathBuf,
    pub workers: Option<usize>,
    pub force: bool,
}

impl RunConfig {
    pub fn load(path: &Path, overrides: Overrides) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let config: ExperimentConfig = toml::from_str(&text)
            .with_context(|| format!("malformed config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::resolve(config, base, overrides)
    }

    pub fn resolve(
        mut config: ExperimentConfig,
        base: &Path,
        overrides: Overrides,
    ) -> Result<Self> {
        let seed = overrides
            .seed
            .or(config.seed)
            .context("a seed is mandatory: set `seed` in the config or pass --seed")?;
        config.seed = Some(seed);
        let out = match (overrides.out, &config.out) {
            (Some(o), _) => o,
            (None, Some(o)) => base.join(o),
            (None, None) => bail!("no output directory: set `out` in the config or pass --out"),
        };
        if overrides.workers == Some(0) {
            bail!("--workers must be at least 1");
        }
        validate(&config)?;
        Ok(Self {
            law_path: base.join(&config.law),
            config,
            seed,
            out,
            workers: overrides.workers,
            force: overrides.force,
        })
    }

    /// SHA-256 of the canonical JSON form of the configuration, seed
    /// included, with the law path replaced by the law fingerprint and the
    /// output directory left out.
    pub fn config_hash(&self, law_fingerprint: &str) -> String {
        let mut c = self.config.clone();
        c.law = PathBuf::new();
        c.out = None;
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&c).expect("config serializes"));
        h.update(law_fingerprint.as_bytes());
        hex::encode(h.finalize())
    }

    /// Independent seed for one estimator of a run.
    pub fn seed_for(&self, stream: u64) -> u64 {
        self.seed ^ (stream + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
    }
}

fn validate(c: &ExperimentConfig) -> Result<()> {
    let b = &c.budgets;
    let budgets = [
        ("survival_paths", b.survival_paths),
        ("conditional_paths", b.conditional_paths),
        ("v_paths", b.v_paths),
        ("v_table_paths", b.v_table_paths),
        ("sigma2_paths", b.sigma2_paths),
        ("martingale_paths", b.martingale_paths),
        ("sigma2_n", b.sigma2_n as u64),
        ("horizon", b.horizon as u64),
        ("max_iter", b.max_iter as u64),
        ("martingale_steps", b.martingale_steps as u64),
    ];
    if let Some((name, _)) = budgets.iter().find(|(_, v)| *v == 0) {
        bail!("budgets.{name} must be positive");
    }
    if c.start.a.is_nan() || c.start.a < 0.0 {
        bail!("start.a must be >= 0");
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> ExperimentConfig {
        toml::from_str("law = \"law.toml\"\nout = \"out\"\n").unwrap()
    }

    #[test]
    fn seed_is_mandatory() {
        let err =
            RunConfig::resolve(minimal(), Path::new("/cfg"), Overrides::default()).unwrap_err();
        assert!(err.to_string().contains("seed"));
        let run = RunConfig::resolve(
            minimal(),
            Path::new("/cfg"),
            Overrides {
                seed: Some(5),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(run.seed, 5);
        assert_eq!(run.law_path, Path::new("/cfg/law.toml"));
        assert_eq!(run.out, Path::new("/cfg/out"));
    }

    #[test]
    fn overrides_change_the_hash_only_through_the_seed() {
        let mut c = minimal();
        c.seed = Some(1);
        let a = RunConfig::resolve(c.clone(), Path::new("."), Overrides::default()).unwrap();
        let b = RunConfig::resolve(
            c.clone(),
            Path::new("."),
            Overrides {
                out: Some("elsewhere".into()),
                workers: Some(3),
                ..Default::default()
            },
        )
        .unwrap();
        let s = RunConfig::resolve(
            c,
            Path::new("."),
            Overrides {
                seed: Some(2),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(a.config_hash("f"), b.config_hash("f"));
        assert_ne!(a.config_hash("f"), s.config_hash("f"));
        assert_ne!(a.config_hash("f"), a.config_hash("g"));
    }

    #[test]
    fn rejects_bad_values() {
        let mut c = minimal();
        c.seed = Some(1);
        c.budgets.horizon = 0;
        assert!(RunConfig::resolve(c, Path::new("."), Overrides::default()).is_err());
        assert!(toml::from_str::<ExperimentConfig>("law = \"l\"\nbogus = 1\n").is_err());
        let s = StartPoint::Named("center".into());
        assert!(s.resolve(2).is_err());
        assert!(StartPoint::Coords(vec![0.2, 0.8]).resolve(2).is_ok());
    }
}
