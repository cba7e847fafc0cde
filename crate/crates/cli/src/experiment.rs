//! Data and targets rebuilt deterministically from a manifest.

use crate::manifest::{ExperimentManifest, PinnEvaluation, ProblemSpec};
use crate::UsageError;
use anyhow::Result;
use rand::Rng;
use rand_distr::StandardNormal;
use sciuq::benchmarks::FunctionSplits;
use sciuq::data::fmt_f64;
use sciuq::eval::PredictiveSummary;
use sciuq::pinn::{PdeProblem, PinnDataset, PinnField, ReferenceFields, ReferenceSolution, UPinn, UPinnTarget};
use sciuq::probmodel::RegressionTarget;
use sciuq::rng::{indexed_stream, Purpose};
use sciuq::workflow::{fit_pinn, fit_regression, summarize_pinn, summarize_regression, Fitted, MethodSpec};
use sciuq::{DenseMatrix, MlpModel};
use std::path::Path;

pub enum Experiment {
    Function {
        splits: FunctionSplits,
        target: RegressionTarget<MlpModel>,
    },
    Pinn {
        target: UPinnTarget,
        reference: ReferenceSolution,
        evaluation: PinnEvaluation,
        calibration: Points,
    },
}

/// Evaluation inputs with their observed or true values.
pub struct Points {
    pub t: Option<Vec<f64>>,
    pub x: Vec<f64>,
    pub u: Vec<f64>,
}

impl Points {
    pub fn inputs(&self) -> (Vec<&'static str>, DenseMatrix) {
        match &self.t {
            None => (vec!["x"], DenseMatrix::column(&self.x)),
            Some(t) => (vec!["x", "t"], DenseMatrix::from_fn(self.x.len(), 2, |i, j| if j == 0 { self.x[i] } else { t[i] })),
        }
    }
}

/// Noisy u readings at uniform random `(t, x)` held out for calibration.
fn pinn_calibration(pde: &PdeProblem, reference: &ReferenceSolution, n: usize) -> Points {
    let mut loc = indexed_stream(pde.seed, Purpose::Split, 0);
    let mut noise = indexed_stream(pde.seed, Purpose::Noise, 1);
    let mut t = Vec::with_capacity(n);
    let mut x = Vec::with_capacity(n);
    let mut u = Vec::with_capacity(n);
    for _ in 0..n {
        let ti = 1.0 - loc.random::<f64>();
        let xi = loc.random_range(-1.0..=1.0);
        let z: f64 = noise.sample(StandardNormal);
        t.push(ti);
        x.push(xi);
        u.push(reference.interpolate(ti, xi) + pde.noise.u * z);
    }
    Points { t: Some(t), x, u }
}

impl Experiment {
    pub fn build(m: &ExperimentManifest) -> Result<Self> {
        Ok(match &m.problem {
            ProblemSpec::Function { data, network } => {
                let splits = data.generate()?;
                let target = network.target(splits.train.clone(), data.gaussian_sigma())?;
                Experiment::Function {
                    splits,
                    target,
                }
            }
            ProblemSpec::Pinn {
                pde,
                heteroscedastic,
                prior,
                evaluation,
            } => {
                let reference = pde.solve_reference()?;
                let data = PinnDataset::generate(pde, &reference)?;
                let target = UPinnTarget::new(UPinn::for_problem(pde, *heteroscedastic), data, *prior)?;
                let calibration = pinn_calibration(pde, &reference, evaluation.n_calibration);
                Experiment::Pinn {
                    target,
                    reference,
                    evaluation: evaluation.clone(),
                    calibration,
                }
            }
        })
    }

    pub fn fit(&self, method: &MethodSpec, seed: u64) -> Result<Fitted> {
        Ok(match self {
            Experiment::Function { splits, target, .. } => fit_regression(target, Some(&splits.validation), method, seed)?,
            Experiment::Pinn { target, .. } => fit_pinn(target, method, seed)?,
        })
    }

    /// Points of a named split. PINN problems expose `test` (the evaluation grid
    /// with exact field values) and `calibration`.
    pub fn points(&self, split: &str, field: PinnField) -> Result<Points> {
        match self {
            Experiment::Function { splits, .. } => {
                let d = splits
                    .named()
                    .into_iter()
                    .find(|(n, _)| *n == split)
                    .map(|(_, d)| d)
                    .ok_or_else(|| UsageError(format!("no `{split}` split for this problem")))?;
                Ok(Points {
                    t: None,
                    x: d.x.col_to_vec(0),
                    u: d.u.clone(),
                })
            }
            Experiment::Pinn {
                reference,
                evaluation,
                calibration,
                ..
            } => match split {
                "calibration" if field == PinnField::U => Ok(Points {
                    t: calibration.t.clone(),
                    x: calibration.x.clone(),
                    u: calibration.u.clone(),
                }),
                "test" => Ok(pinn_grid(reference, evaluation, field)),
                _ => Err(UsageError(format!("no `{split}` split for the {field:?} field of a PINN problem")).into()),
            },
        }
    }

    pub fn summarize(&self, fitted: &Fitted, p: &Points, field: PinnField) -> Result<PredictiveSummary> {
        Ok(match self {
            Experiment::Function { target, .. } => summarize_regression(target, fitted, &DenseMatrix::column(&p.x))?,
            Experiment::Pinn { target, .. } => {
                let t = p.t.clone().unwrap_or_else(|| vec![0.0; p.x.len()]);
                summarize_pinn(target, fitted, field, &t, &p.x)?
            }
        })
    }

    /// Writes every dataset the experiment uses.
    pub fn write_data(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        match self {
            Experiment::Function { splits, .. } => {
                for (name, d) in splits.named() {
                    d.write_csv(&dir.join(format!("{name}.csv")))?;
                }
            }
            Experiment::Pinn {
                target,
                reference,
                evaluation,
                calibration,
                ..
            } => {
                target.data.write_csv(&dir.join("train.csv"))?;
                write_points(&calibration_rows(calibration), &dir.join("calibration.csv"))?;
                write_points(&calibration_rows(&pinn_grid(reference, evaluation, PinnField::U)), &dir.join("reference.csv"))?;
            }
        }
        Ok(())
    }
}

fn pinn_grid(reference: &ReferenceSolution, ev: &PinnEvaluation, field: PinnField) -> Points {
    let xs: Vec<f64> = (0..ev.points).map(|i| -1.0 + 2.0 * i as f64 / (ev.points - 1) as f64).collect();
    match field {
        PinnField::U => {
            let mut t = Vec::new();
            let mut x = Vec::new();
            for &tk in &ev.times {
                t.extend(std::iter::repeat_n(tk, xs.len()));
                x.extend_from_slice(&xs);
            }
            let u = t.iter().zip(&x).map(|(&a, &b)| reference.interpolate(a, b)).collect();
            Points { t: Some(t), x, u }
        }
        PinnField::Lambda => Points {
            t: None,
            u: xs.iter().map(|&v| ReferenceFields::lambda(v)).collect(),
            x: xs,
        },
        PinnField::F => Points {
            t: Some(vec![ev.times[0]; xs.len()]),
            u: xs.iter().map(|&v| ReferenceFields::source(v)).collect(),
            x: xs,
        },
    }
}

fn calibration_rows(p: &Points) -> Vec<[f64; 3]> {
    let t = p.t.as_deref();
    (0..p.x.len()).map(|i| [p.x[i], t.map_or(0.0, |t| t[i]), p.u[i]]).collect()
}

fn write_points(rows: &[[f64; 3]], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["x", "t", "u"])?;
    for r in rows {
        w.write_record(r.map(fmt_f64))?;
    }
    w.flush()?;
    Ok(())
}
