//! Unadjusted Langevin dynamics and its stochastic-gradient variant.

use crate::error::{Result, UqError};
use crate::optim::draw_batch;
use crate::posterior::PosteriorEnsemble;
use crate::probmodel::BayesTarget;
use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LangevinConfig {
    pub step_size: f64,
    pub burn_in: usize,
    pub samples: usize,
    pub lag: usize,
    /// Minibatch size; `None` (or ≥ N) gives full-batch Langevin dynamics.
    pub batch_size: Option<usize>,
    pub temperature: f64,
}

impl Default for LangevinConfig {
    fn default() -> Self {
        Self {
            step_size: 1e-4,
            burn_in: 5000,
            samples: 1000,
            lag: 1,
            batch_size: None,
            temperature: 1.0,
        }
    }
}

impl LangevinConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(UqError::Config("langevin: step size must be positive".into()));
        }
        if self.samples == 0 || self.lag == 0 {
            return Err(UqError::Config("langevin: samples and lag must be positive".into()));
        }
        if !(self.temperature > 0.0) {
            return Err(UqError::Config("langevin: temperature must be positive".into()));
        }
        if self.batch_size == Some(0) {
            return Err(UqError::Config("langevin: batch size must be positive".into()));
        }
        Ok(())
    }
}

/// `θ' = θ + (ε/2)·drift + η`, `η_j ~ N(0, ε)`.
pub fn langevin_step(theta: &[f64], eps: f64, drift: &[f64], rng: &mut dyn RngCore) -> Vec<f64> {
    let sd = eps.sqrt();
    theta
        .iter()
        .zip(drift)
        .map(|(t, g)| t + 0.5 * eps * g + sd * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// `(N/|S|·∇log p(D_S|θ) + ∇log p(θ)) / τ`
pub fn stochastic_drift<T: BayesTarget + ?Sized>(
    target: &T,
    theta: &[f64],
    batch: Option<&[usize]>,
    temperature: f64,
) -> Result<Vec<f64>> {
    let (_, mut g) = target.log_likelihood_grad(theta, batch)?;
    let factor = match batch {
        Some(b) if !b.is_empty() => target.n_data() as f64 / b.len() as f64,
        _ => 1.0,
    };
    let (_, gp) = target.log_prior_grad(theta);
    for (a, b) in g.iter_mut().zip(&gp) {
        *a = (*a * factor + b) / temperature;
    }
    Ok(g)
}

pub fn langevin_sample<T: BayesTarget + ?Sized>(
    target: &T,
    init: &[f64],
    cfg: &LangevinConfig,
    seed: u64,
    rng: &mut dyn RngCore,
) -> Result<PosteriorEnsemble> {
    cfg.validate()?;
    let mut theta = init.to_vec();
    let mut members = Vec::with_capacity(cfg.samples);
    let total = cfg.burn_in + cfg.samples * cfg.lag;
    let stochastic = matches!(cfg.batch_size, Some(b) if b < target.n_data());
    for iter in 0..total {
        let batch = draw_batch(target.n_data(), cfg.batch_size, rng);
        let drift = stochastic_drift(target, &theta, batch.as_deref(), cfg.temperature)?;
        if drift.iter().any(|g| !g.is_finite()) {
            return Err(UqError::Divergence {
                step: iter,
                reason: "non-finite Langevin drift".into(),
            });
        }
        theta = langevin_step(&theta, cfg.step_size, &drift, rng);
        if iter >= cfg.burn_in && (iter - cfg.burn_in + 1) % cfg.lag == 0 {
            members.push(theta.clone());
        }
    }
    let method = if stochastic { "sgld" } else { "ld" };
    Ok(PosteriorEnsemble::new(
        members,
        method,
        serde_json::to_value(cfg)?,
        seed,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::LabeledDataset;
    use crate::model::LinearModel;
    use crate::probmodel::{GaussianLikelihood, PriorSpec, RegressionTarget};
    use crate::rng::{indexed_stream, stream, Purpose};
    use rayon::prelude::*;

    #[test]
    fn zero_drift_is_pure_noise() {
        let mut rng = stream(1, Purpose::Sampler);
        let n = 100_000;
        let d: Vec<f64> = (0..n).map(|_| langevin_step(&[2.0], 1.0, &[0.0], &mut rng)[0] - 2.0).collect();
        let mean = d.iter().sum::<f64>() / n as f64;
        let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 3.0 / (n as f64).sqrt());
        assert!((var - 1.0).abs() < 0.02);
    }

    #[test]
    fn stationary_variance_of_standard_normal() {
        // 32 independent chains of 10⁶ steps each, started from the target
        let chains: Vec<f64> = (0..32u64)
            .into_par_iter()
            .map(|c| {
                let mut rng = indexed_stream(7, Purpose::Sampler, c);
                let mut t = rng.sample::<f64, _>(StandardNormal);
                let mut ss = 0.0;
                for _ in 0..1_000_000 {
                    t = langevin_step(&[t], 1e-3, &[-t], &mut rng)[0];
                    ss += t * t;
                }
                ss / 1e6
            })
            .collect();
        let var = chains.iter().sum::<f64>() / chains.len() as f64;
        assert!((var - 1.0).abs() < 0.05, "{var}");
    }

    #[test]
    fn full_minibatch_matches_full_batch() {
        let t = RegressionTarget::new(
            LinearModel::new(1),
            LabeledDataset::from_1d(&[0.1, 0.5, -0.3], &[0.2, 0.4, 0.0]).unwrap(),
            GaussianLikelihood::homoscedastic(0.5).unwrap(),
            PriorSpec::standard_normal(),
        )
        .unwrap();
        let full = stochastic_drift(&t, &[0.3], None, 1.0).unwrap();
        let mini = stochastic_drift(&t, &[0.3], Some(&[0, 1, 2]), 1.0).unwrap();
        assert_eq!(full, mini);
        let a = langevin_step(&[0.3], 0.01, &full, &mut stream(2, Purpose::Sampler));
        let b = langevin_step(&[0.3], 0.01, &mini, &mut stream(2, Purpose::Sampler));
        assert_eq!(a, b);
        let cold = stochastic_drift(&t, &[0.3], None, 0.5).unwrap();
        assert!((cold[0] - 2.0 * full[0]).abs() < 1e-15);
    }

    #[test]
    fn sampler_reproducible_and_labelled() {
        let t = RegressionTarget::new(
            LinearModel::new(1),
            LabeledDataset::from_1d(&[0.1, 0.5, -0.3, 0.9], &[0.2, 0.4, 0.0, 1.0]).unwrap(),
            GaussianLikelihood::homoscedastic(0.5).unwrap(),
            PriorSpec::standard_normal(),
        )
        .unwrap();
        let cfg = LangevinConfig {
            step_size: 1e-2,
            burn_in: 10,
            samples: 20,
            lag: 2,
            batch_size: Some(2),
            temperature: 1.0,
        };
        let a = langevin_sample(&t, &[0.0], &cfg, 1, &mut stream(1, Purpose::Sampler)).unwrap();
        let b = langevin_sample(&t, &[0.0], &cfg, 1, &mut stream(1, Purpose::Sampler)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 20);
        assert_eq!(a.provenance.method, "sgld");
    }
}
