//! Laplace approximation around a MAP estimate with a dense generalized
//! Gauss-Newton precision and linearized predictive variance.

use crate::data::{fmt_f64, parse_field};
use crate::error::{shape_err, Result, UqError};
use crate::eval::PredictiveSummary;
use crate::model::{output_jacobian, DiffModel};
use crate::optim::{train, NegLogPosterior, TrainConfig, TrainOutcome};
use crate::posterior::PosteriorEnsemble;
use crate::probmodel::{BayesTarget, GaussianLikelihood, RegressionTarget};
use crate::tensor::DenseMatrix;
use nalgebra::{DMatrix, DVector};
use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const JITTER_LADDER: [f64; 5] = [1e-10, 1e-9, 1e-8, 1e-7, 1e-6];

/// Models whose observations can be linearized around θ.
pub trait LinearizedTarget: Sync {
    fn dim(&self) -> usize;
    fn prior_variance(&self) -> f64;
    /// `N × K` Jacobian of the predicted observations and the Gaussian precision of each.
    fn observation_jacobian(&self, theta: &[f64]) -> Result<(DenseMatrix, Vec<f64>)>;
}

impl<M: DiffModel> LinearizedTarget for RegressionTarget<M> {
    fn dim(&self) -> usize {
        self.model.n_params()
    }

    fn prior_variance(&self) -> f64 {
        self.prior.variance()
    }

    fn observation_jacobian(&self, theta: &[f64]) -> Result<(DenseMatrix, Vec<f64>)> {
        if self.data.is_empty() {
            return Ok((DenseMatrix::zeros(0, theta.len()), Vec::new()));
        }
        let j = output_jacobian(&self.model, theta, &self.data.x, 0)?;
        let (_, var) = self.predict(theta, &self.data.x)?;
        Ok((j, var.iter().map(|v| 1.0 / v).collect()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LaplaceConfig {
    pub map: TrainConfig,
    pub samples: usize,
    pub temperature: f64,
    /// Candidate prior variances for the offline validation search; empty keeps the target's prior.
    pub prior_grid: Vec<f64>,
}

impl Default for LaplaceConfig {
    fn default() -> Self {
        Self {
            map: TrainConfig::adam(1e-2, 30_000),
            samples: 1000,
            temperature: 1.0,
            prior_grid: Vec::new(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct LaplaceFit {
    pub theta_hat: Vec<f64>,
    /// Likelihood part `Σ J_iᵀ J_i / σ_i²`; absent after loading a snapshot.
    pub ggn: Option<DenseMatrix>,
    pub prior_variance: f64,
    pub temperature: f64,
    /// Diagonal jitter that made the precision factorizable.
    pub jitter: f64,
    /// Lower Cholesky factor of the posterior precision `A`.
    factor: DMatrix<f64>,
}

#[derive(Serialize, Deserialize)]
struct LaplaceManifest {
    dim: usize,
    prior_variance: f64,
    temperature: f64,
    jitter: f64,
    theta_hat: Vec<f64>,
}

fn factorize(ggn: &DenseMatrix, prior_variance: f64, temperature: f64) -> Result<(DMatrix<f64>, f64)> {
    if !(prior_variance > 0.0) {
        return Err(UqError::Config(format!("prior variance must be positive, got {prior_variance}")));
    }
    let k = ggn.rows();
    let mut a = ggn.to_nalgebra();
    for i in 0..k {
        a[(i, i)] += 1.0 / prior_variance;
    }
    a /= temperature;
    let a = (&a + a.transpose()) * 0.5;
    if let Some(c) = a.clone().cholesky() {
        return Ok((c.l(), 0.0));
    }
    for jitter in JITTER_LADDER {
        let mut aj = a.clone();
        for i in 0..k {
            aj[(i, i)] += jitter;
        }
        if let Some(c) = aj.cholesky() {
            log::warn!("Laplace precision needed jitter {jitter:e}");
            return Ok((c.l(), jitter));
        }
    }
    Err(UqError::Cholesky {
        jitter: JITTER_LADDER[JITTER_LADDER.len() - 1],
    })
}

/// Accumulates `JᵀPJ` at θ̂ and factorizes `A = (JᵀPJ + I/σ_θ²)/τ`.
pub fn laplace_fit<T: LinearizedTarget + ?Sized>(target: &T, theta_hat: &[f64], temperature: f64) -> Result<LaplaceFit> {
    if !(temperature > 0.0) {
        return Err(UqError::Config("temperature must be positive".into()));
    }
    let k = target.dim();
    if theta_hat.len() != k {
        return Err(shape_err("Laplace mode", k, theta_hat.len()));
    }
    let (j, prec) = target.observation_jacobian(theta_hat)?;
    let weighted = DenseMatrix::from_fn(j.rows(), k, |i, c| j.get(i, c) * prec[i]);
    let ggn = j.matmul_at(&weighted)?;
    let prior_variance = target.prior_variance();
    let (factor, jitter) = factorize(&ggn, prior_variance, temperature)?;
    Ok(LaplaceFit {
        theta_hat: theta_hat.to_vec(),
        ggn: Some(ggn),
        prior_variance,
        temperature,
        jitter,
        factor,
    })
}

/// MAP training followed by [`laplace_fit`].
pub fn laplace_train<T: BayesTarget + LinearizedTarget>(
    target: &T,
    theta0: &[f64],
    cfg: &LaplaceConfig,
    rng: &mut dyn RngCore,
) -> Result<(LaplaceFit, TrainOutcome)> {
    let obj = NegLogPosterior {
        target,
        include_prior: true,
    };
    let out = train(&obj, theta0, &cfg.map, rng, |_, _| Ok(true))?;
    let fit = laplace_fit(target, &out.theta, cfg.temperature)?;
    Ok((fit, out))
}

impl LaplaceFit {
    pub fn dim(&self) -> usize {
        self.theta_hat.len()
    }

    pub fn cholesky_lower(&self) -> DenseMatrix {
        DenseMatrix::from_nalgebra(&self.factor)
    }

    /// Dense posterior covariance `A⁻¹`.
    pub fn covariance(&self) -> DenseMatrix {
        let k = self.dim();
        let linv = self
            .factor
            .solve_lower_triangular(&DMatrix::identity(k, k))
            .expect("Cholesky factor has a positive diagonal");
        DenseMatrix::from_nalgebra(&(linv.transpose() * linv))
    }

    /// Same GGN with a different prior variance.
    pub fn with_prior_variance(&self, prior_variance: f64) -> Result<Self> {
        let ggn = self
            .ggn
            .as_ref()
            .ok_or_else(|| UqError::Config("loaded Laplace fits carry no GGN to refactor".into()))?;
        let (factor, jitter) = factorize(ggn, prior_variance, self.temperature)?;
        Ok(Self {
            theta_hat: self.theta_hat.clone(),
            ggn: Some(ggn.clone()),
            prior_variance,
            temperature: self.temperature,
            jitter,
            factor,
        })
    }

    /// Picks the candidate prior variance with the highest `score` (e.g. validation log predictive).
    pub fn select_prior_variance(&self, candidates: &[f64], score: impl Fn(&LaplaceFit) -> Result<f64>) -> Result<(Self, f64)> {
        let mut best: Option<(Self, f64)> = None;
        for &v in candidates {
            let fit = self.with_prior_variance(v)?;
            let s = score(&fit)?;
            if best.as_ref().is_none_or(|(_, b)| s > *b) {
                best = Some((fit, s));
            }
        }
        best.ok_or(UqError::Empty("prior variance candidates"))
    }

    /// `gᵀ A⁻¹ g` for each row `g` of an `n × K` output Jacobian.
    pub fn predict_var(&self, jacobian: &DenseMatrix) -> Result<Vec<f64>> {
        if jacobian.cols() != self.dim() {
            return Err(shape_err("output jacobian", self.dim(), jacobian.cols()));
        }
        let gt = jacobian.transpose().to_nalgebra();
        let v = self
            .factor
            .solve_lower_triangular(&gt)
            .ok_or_else(|| UqError::Solver("singular Laplace factor".into()))?;
        Ok(v.column_iter().map(|c| c.norm_squared()).collect())
    }

    /// `θ̂ + L⁻ᵀ z`, a draw from `N(θ̂, A⁻¹)`.
    pub fn sample(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        let z = DVector::from_fn(self.dim(), |_, _| StandardNormal.sample(rng));
        let d = self
            .factor
            .transpose()
            .solve_upper_triangular(&z)
            .expect("Cholesky factor has a positive diagonal");
        self.theta_hat.iter().zip(d.iter()).map(|(t, e)| t + e).collect()
    }

    pub fn sample_ensemble(&self, m: usize, seed: u64, rng: &mut dyn RngCore) -> PosteriorEnsemble {
        let members = (0..m).map(|_| self.sample(rng)).collect();
        PosteriorEnsemble::new(
            members,
            "la",
            serde_json::json!({
                "prior_variance": self.prior_variance,
                "temperature": self.temperature,
                "jitter": self.jitter,
            }),
            seed,
        )
    }

    /// Linearized predictive: mean `u_θ̂(x)`, epistemic `∇uᵀA⁻¹∇u`.
    pub fn summarize<M: DiffModel + ?Sized>(&self, model: &M, likelihood: &GaussianLikelihood, x: &DenseMatrix) -> Result<PredictiveSummary> {
        let pred = model.forward(&self.theta_hat, x)?;
        let (mean, aleatoric) = likelihood.split_outputs(&pred)?;
        let j = output_jacobian(model, &self.theta_hat, x, 0)?;
        let epistemic = self.predict_var(&j)?;
        PredictiveSummary::from_moments(mean, aleatoric, epistemic)
    }

    /// Writes `laplace.json` (θ̂ and settings) and `cholesky.csv` (row i holds `L[i][0..=i]`).
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let m = LaplaceManifest {
            dim: self.dim(),
            prior_variance: self.prior_variance,
            temperature: self.temperature,
            jitter: self.jitter,
            theta_hat: self.theta_hat.clone(),
        };
        std::fs::write(dir.join("laplace.json"), serde_json::to_string_pretty(&m)?)?;
        let mut w = csv::WriterBuilder::new()
            .has_headers(false)
            .flexible(true)
            .from_path(dir.join("cholesky.csv"))?;
        for i in 0..self.dim() {
            w.write_record((0..=i).map(|j| fmt_f64(self.factor[(i, j)])))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let m: LaplaceManifest = serde_json::from_str(&std::fs::read_to_string(dir.join("laplace.json"))?)?;
        if m.theta_hat.len() != m.dim {
            return Err(shape_err("Laplace mode", m.dim, m.theta_hat.len()));
        }
        let path = dir.join("cholesky.csv");
        let mut r = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .from_path(&path)?;
        let mut factor = DMatrix::zeros(m.dim, m.dim);
        let mut rows = 0;
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            if i >= m.dim || rec.len() != i + 1 {
                return Err(shape_err("Cholesky row", i + 1, rec.len()));
            }
            for (j, f) in rec.iter().enumerate() {
                factor[(i, j)] = parse_field(f, &path)?;
            }
            rows += 1;
        }
        if rows != m.dim {
            return Err(shape_err("Cholesky rows", m.dim, rows));
        }
        Ok(Self {
            theta_hat: m.theta_hat,
            ggn: None,
            prior_variance: m.prior_variance,
            temperature: m.temperature,
            jitter: m.jitter,
            factor,
        })
    }
}
