//! Parameter ensembles produced by every inference method, and their on-disk snapshot.
//!
//! A snapshot directory holds `manifest.json` (method, hyperparameters, seed,
//! diagnostics) and `params.csv` with one row per member and one column per
//! parameter, in the model's frozen parameter layout.

use crate::data::{fmt_f64, parse_field};
use crate::error::{Result, UqError};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acceptance_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_size: Option<f64>,
    #[serde(default)]
    pub divergences: usize,
    #[serde(default)]
    pub restarts: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub method: String,
    pub hyperparameters: serde_json::Value,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorEnsemble {
    pub members: Vec<Vec<f64>>,
    /// Per-member noise variance when σ_u² was inferred alongside θ.
    pub noise_variances: Option<Vec<f64>>,
    pub provenance: Provenance,
    pub diagnostics: Diagnostics,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    provenance: Provenance,
    diagnostics: Diagnostics,
    members: usize,
    params: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    noise_variances: Option<Vec<f64>>,
}

impl PosteriorEnsemble {
    pub fn new(members: Vec<Vec<f64>>, method: &str, hyperparameters: serde_json::Value, seed: u64) -> Self {
        Self {
            members,
            noise_variances: None,
            provenance: Provenance {
                method: method.to_string(),
                hyperparameters,
                seed,
            },
            diagnostics: Diagnostics::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.members.first().map_or(0, Vec::len)
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim()];
        for s in &self.members {
            m.iter_mut().zip(s).for_each(|(a, b)| *a += b);
        }
        let n = self.len().max(1) as f64;
        m.iter_mut().for_each(|a| *a /= n);
        m
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let manifest = Manifest {
            provenance: self.provenance.clone(),
            diagnostics: self.diagnostics.clone(),
            members: self.len(),
            params: self.dim(),
            noise_variances: self.noise_variances.clone(),
        };
        std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
        let mut w = csv::WriterBuilder::new()
            .has_headers(false)
            .from_path(dir.join("params.csv"))?;
        for m in &self.members {
            w.write_record(m.iter().map(|v| fmt_f64(*v)))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: Manifest = serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json"))?)?;
        let path = dir.join("params.csv");
        let mut r = csv::ReaderBuilder::new().has_headers(false).from_path(&path)?;
        let mut members = Vec::with_capacity(manifest.members);
        for rec in r.records() {
            let rec = rec?;
            let row = rec.iter().map(|f| parse_field(f, &path)).collect::<Result<Vec<_>>>()?;
            if row.len() != manifest.params {
                return Err(UqError::Config(format!(
                    "{}: member {} has {} parameters, manifest says {}",
                    path.display(),
                    members.len(),
                    row.len(),
                    manifest.params
                )));
            }
            members.push(row);
        }
        if members.len() != manifest.members {
            return Err(UqError::Config(format!(
                "{}: {} members found, manifest says {}",
                path.display(),
                members.len(),
                manifest.members
            )));
        }
        Ok(Self {
            members,
            noise_variances: manifest.noise_variances,
            provenance: manifest.provenance,
            diagnostics: manifest.diagnostics,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snapshot_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut e = PosteriorEnsemble::new(
            vec![vec![0.1, -2.0 / 3.0], vec![1e-300, 4.0]],
            "hmc",
            serde_json::json!({"step_size": 0.1}),
            42,
        );
        e.diagnostics.acceptance_rate = Some(0.61);
        e.noise_variances = Some(vec![0.01, 0.02]);
        e.save(dir.path()).unwrap();
        assert_eq!(PosteriorEnsemble::load(dir.path()).unwrap(), e);
        assert_eq!(e.mean(), vec![0.05, (4.0 - 2.0 / 3.0) / 2.0]);
    }

    #[test]
    fn truncated_params_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let e = PosteriorEnsemble::new(vec![vec![1.0, 2.0]], "dens", serde_json::Value::Null, 1);
        e.save(dir.path()).unwrap();
        std::fs::write(dir.path().join("params.csv"), "1.0\n").unwrap();
        assert!(PosteriorEnsemble::load(dir.path()).is_err());
    }
}
