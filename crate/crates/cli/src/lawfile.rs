//! TOML law files:
//!
//! ```toml
//! name = "example"
//! dim = 2
//! weights = [0.5, 0.5]
//! atoms = [[2.0, 1.0, 1.0, 3.0], [0.3, 0.2, 0.1, 0.4]]  # row-major
//!
//! [metadata]
//! note = "free-form"
//! ```

use std::path::Path;

use anyhow::{bail, Context, Result};
use conefluct::{MatrixLaw, PositiveMatrix};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LawFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub dim: usize,
    pub weights: Vec<f64>,
    pub atoms: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "toml::Table::is_empty")]
    pub metadata: toml::Table,
}

impl LawFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).context("malformed law file")
    }

    pub fn from_law(law: &MatrixLaw, name: Option<String>, metadata: toml::Table) -> Self {
        Self {
            name,
            dim: law.dim(),
            weights: law.weights().to_vec(),
            atoms: law.atoms().iter().map(|g| g.entries().to_vec()).collect(),
            metadata,
        }
    }

    pub fn to_law(&self) -> Result<MatrixLaw> {
        if self.dim == 0 {
            bail!("field `dim`: must be at least 1");
        }
        if self.atoms.len() != self.weights.len() {
            bail!(
                "fields `atoms`/`weights`: {} atoms but {} weights",
                self.atoms.len(),
                self.weights.len()
            );
        }
        let atoms = self
            .atoms
            .iter()
            .enumerate()
            .map(|(i, entries)| {
                if entries.len() != self.dim * self.dim {
                    bail!(
                        "field `atoms[{i}]`: {} entries, dim = {} needs {}",
                        entries.len(),
                        self.dim,
                        self.dim * self.dim
                    );
                }
                PositiveMatrix::new(self.dim, entries.clone())
                    .with_context(|| format!("field `atoms[{i}]`"))
            })
            .collect::<Result<Vec<_>>>()?;
        MatrixLaw::new(atoms, self.weights.clone()).context("field `weights`")
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).context("serializing law file")
    }
}

pub fn load_law(path: &Path) -> Result<(LawFile, MatrixLaw)> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading law file {}", path.display()))?;
    let file = LawFile::parse(&text).with_context(|| format!("in {}", path.display()))?;
    let law = file
        .to_law()
        .with_context(|| format!("invalid law in {}", path.display()))?;
    Ok((file, law))
}

#[cfg(test)]
mod tests {
    use super::*;

    const TEXT: &str = r#"
name = "two atoms"
dim = 2
weights = [0.25, 0.75]
atoms = [[2.0, 1.0, 1.0, 3.0], [0.3, 0.2, 0.1, 0.4]]

[metadata]
source = "hand written"
"#;

    #[test]
    fn parses_and_round_trips() {
        let file = LawFile::parse(TEXT).unwrap();
        let law = file.to_law().unwrap();
        assert_eq!(law.weights(), &[0.25, 0.75]);
        assert_eq!(law.atoms()[1].get(1, 0), 0.1);
        let again = LawFile::parse(&file.to_toml().unwrap()).unwrap();
        assert_eq!(again, file);
        assert_eq!(again.to_law().unwrap(), law);
    }

    #[test]
    fn awkward_floats_round_trip() {
        let x = 0.1 + 0.2;
        let file = LawFile {
            name: None,
            dim: 1,
            weights: vec![1.0],
            atoms: vec![vec![x]],
            metadata: toml::Table::new(),
        };
        let again = LawFile::parse(&file.to_toml().unwrap()).unwrap();
        assert_eq!(again.atoms[0][0].to_bits(), x.to_bits());
    }

    #[test]
    fn errors_name_the_field() {
        let bad_weights = TEXT.replace("[0.25, 0.75]", "[0.25, 0.65]");
        let err = LawFile::parse(&bad_weights).unwrap().to_law().unwrap_err();
        assert!(format!("{err:#}").contains("weights"), "{err:#}");

        let short = TEXT.replace("[0.3, 0.2, 0.1, 0.4]", "[0.3, 0.2, 0.1]");
        let err = LawFile::parse(&short).unwrap().to_law().unwrap_err();
        assert!(format!("{err:#}").contains("atoms[1]"), "{err:#}");

        let zero_col = TEXT.replace("[0.3, 0.2, 0.1, 0.4]", "[0.0, 0.2, 0.0, 0.4]");
        let err = LawFile::parse(&zero_col).unwrap().to_law().unwrap_err();
        assert!(format!("{err:#}").contains("atoms[1]"), "{err:#}");

        let syntax = TEXT.replace("dim = 2", "dim = ");
        let err = LawFile::parse(&syntax).unwrap_err();
        assert!(format!("{err:#}").contains("line"), "{err:#}");
    }
}
