use crate::UsageError;
use anyhow::{Context, Result};
use sciuq::benchmarks::FunctionProblem;
use sciuq::pinn::PdeProblem;
use sciuq::probmodel::PriorSpec;
use sciuq::workflow::{MethodSpec, NetworkSpec};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub const RESOLVED_NAME: &str = "manifest.toml";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentManifest {
    #[serde(default = "default_name")]
    pub name: String,
    /// Seed for initialization, sampling and minibatching; data seeds live in the problem.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    pub problem: ProblemSpec,
    pub method: MethodSpec,
}

fn default_name() -> String {
    "run".into()
}

fn default_output() -> PathBuf {
    PathBuf::from("runs/run")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProblemSpec {
    Function {
        #[serde(default)]
        data: FunctionProblem,
        #[serde(default)]
        network: NetworkSpec,
    },
    Pinn {
        #[serde(default)]
        pde: PdeProblem,
        #[serde(default)]
        heteroscedastic: bool,
        #[serde(default)]
        prior: PriorSpec,
        #[serde(default)]
        evaluation: PinnEvaluation,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PinnEvaluation {
    /// Uniform x-grid size on [−1, 1] at each evaluation time.
    pub points: usize,
    pub times: Vec<f64>,
    /// Held-out noisy u measurements at random (t, x) used for calibration.
    pub n_calibration: usize,
}

impl Default for PinnEvaluation {
    fn default() -> Self {
        Self {
            points: 101,
            times: vec![1.0],
            n_calibration: 64,
        }
    }
}

impl ExperimentManifest {
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let m: Self = toml::from_str(text).map_err(|e| {
            UsageError(format!(
                "{}: {}\nvalid method ids: {}",
                origin.display(),
                e.message(),
                MethodSpec::IDS.join(", ")
            ))
        })?;
        m.check()?;
        Ok(m)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text, path)
    }

    /// Loads the resolved manifest stored in a run directory.
    pub fn from_run(dir: &Path) -> Result<Self> {
        let path = dir.join(RESOLVED_NAME);
        if !path.is_file() {
            return Err(UsageError(format!("{} is not a run directory (no {RESOLVED_NAME})", dir.display())).into());
        }
        Self::read(&path)
    }

    fn check(&self) -> Result<()> {
        if let (ProblemSpec::Pinn { .. }, MethodSpec::Gp(_)) = (&self.problem, &self.method) {
            return Err(UsageError("the GP baseline is only defined for function problems".into()).into());
        }
        if let ProblemSpec::Pinn { evaluation, .. } = &self.problem {
            if evaluation.points < 2 || evaluation.times.is_empty() {
                return Err(UsageError("PINN evaluation needs at least 2 grid points and one time".into()).into());
            }
        }
        Ok(())
    }

    /// Every field, defaults included.
    pub fn resolved(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn write_resolved(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(RESOLVED_NAME), self.resolved()?)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_manifest_resolves_and_round_trips() {
        let m = ExperimentManifest::parse(
            "seed = 4\n[problem]\nkind = \"function\"\n[method]\nid = \"dens\"\n",
            Path::new("m.toml"),
        )
        .unwrap();
        let text = m.resolved().unwrap();
        assert!(text.contains("weight_decay = 0.0005"));
        assert_eq!(ExperimentManifest::parse(&text, Path::new("r.toml")).unwrap(), m);
    }

    #[test]
    fn pinn_manifest_resolves_and_round_trips() {
        let m = ExperimentManifest::parse("[problem]\nkind = \"pinn\"\n[method]\nid = \"hmc\"\n", Path::new("m.toml")).unwrap();
        let text = m.resolved().unwrap();
        assert!(text.contains("N_f = 13"));
        assert_eq!(ExperimentManifest::parse(&text, Path::new("r.toml")).unwrap(), m);
    }

    #[test]
    fn unknown_method_is_a_usage_error() {
        let err = ExperimentManifest::parse("[problem]\nkind = \"function\"\n[method]\nid = \"nuts\"\n", Path::new("m.toml")).unwrap_err();
        assert!(err.downcast_ref::<UsageError>().is_some());
        assert!(err.to_string().contains("hmc, ld"));
    }

    #[test]
    fn gp_on_pinn_is_rejected() {
        let err = ExperimentManifest::parse("[problem]\nkind = \"pinn\"\n[method]\nid = \"gp\"\n", Path::new("m.toml")).unwrap_err();
        assert!(err.downcast_ref::<UsageError>().is_some());
    }
}
