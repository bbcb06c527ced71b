//! Artifact emission: CSV tables, JSON documents and the run manifest.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

/// Shortest representation that parses back to the same `f64`.
pub fn num(v: f64) -> String {
    format!("{v}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub workers: Option<usize>,
    pub law_fingerprint: String,
    pub version: String,
    pub artifacts: Vec<ArtifactEntry>,
    pub errors: Vec<String>,
}

/// Writes the artifacts of one command into the output directory and
/// records their hashes for the manifest.
pub struct Artifacts {
    dir: PathBuf,
    written: Vec<ArtifactEntry>,
    errors: Vec<String>,
}

impl Artifacts {
    pub fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)
            .with_context(|| format!("creating output directory {}", dir.display()))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            written: Vec::new(),
            errors: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn put(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.written.push(ArtifactEntry {
            file: name.into(),
            sha256: hex::encode(Sha256::digest(bytes)),
        });
        Ok(())
    }

    pub fn csv<I>(&mut self, name: &str, header: &[&str], rows: I) -> Result<()>
    where
        I: IntoIterator<Item = Vec<String>>,
    {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header)?;
        for row in rows {
            w.write_record(&row)?;
        }
        let bytes = w.into_inner().context("flushing CSV")?;
        self.put(name, &bytes)
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.put(name, &bytes)
    }

    pub fn text(&mut self, name: &str, text: &str) -> Result<()> {
        self.put(name, text.as_bytes())
    }

    /// Records an estimator failure; the run continues with the others.
    pub fn error(&mut self, what: &str, err: &anyhow::Error) {
        let msg = format!("{what}: {err:#}");
        eprintln!("error: {msg}");
        self.errors.push(msg);
    }

    pub fn has_errors(&self) -> bool {
        !self.errors.is_empty()
    }

    /// Writes `<command>.manifest.json` listing everything written so far.
    pub fn finish(
        mut self,
        command: &str,
        run: &RunConfig,
        law_fingerprint: &str,
    ) -> Result<Manifest> {
        let manifest = Manifest {
            command: command.into(),
            config_hash: run.config_hash(law_fingerprint),
            seed: run.seed,
            workers: run.workers,
            law_fingerprint: law_fingerprint.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            artifacts: std::mem::take(&mut self.written),
            errors: std::mem::take(&mut self.errors),
        };
        let mut bytes = serde_json::to_vec_pretty(&manifest)?;
        bytes.push(b'\n');
        let path = self.dir.join(format!("{command}.manifest.json"));
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        Ok(manifest)
    }
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", path.display()))
}
