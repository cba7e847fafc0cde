//! Mean-field variational inference with the reparameterized one-sample ELBO.

use crate::error::{Result, UqError};
use crate::optim::{draw_batch, Optimizer, OptimizerKind};
use crate::posterior::PosteriorEnsemble;
use crate::probmodel::{softplus, BayesTarget};
use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// Factorized Gaussian `q(θ) = Π N(μ_j, softplus(ρ_j)²)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanFieldPosterior {
    pub mu: Vec<f64>,
    pub rho: Vec<f64>,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Inverse of softplus, for initializing ρ from a target σ.
pub fn inverse_softplus(sigma: f64) -> f64 {
    if sigma > 30.0 {
        sigma
    } else {
        sigma.exp_m1().ln()
    }
}

impl MeanFieldPosterior {
    pub fn new(mu: Vec<f64>, sigma: &[f64]) -> Result<Self> {
        if mu.len() != sigma.len() {
            return Err(crate::error::shape_err("variational stdevs", mu.len(), sigma.len()));
        }
        if let Some(s) = sigma.iter().find(|s| !(**s > 0.0)) {
            return Err(UqError::Config(format!("variational stdev must be positive, got {s}")));
        }
        Ok(Self {
            mu,
            rho: sigma.iter().map(|&s| inverse_softplus(s)).collect(),
        })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn sigma(&self) -> Vec<f64> {
        self.rho.iter().map(|&r| softplus(r)).collect()
    }

    /// `θ = μ + σ ⊙ z`
    pub fn draw_with(&self, z: &[f64]) -> Vec<f64> {
        self.mu
            .iter()
            .zip(&self.rho)
            .zip(z)
            .map(|((m, r), zi)| m + softplus(*r) * zi)
            .collect()
    }

    pub fn draw(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        let z: Vec<f64> = (0..self.dim()).map(|_| StandardNormal.sample(rng)).collect();
        self.draw_with(&z)
    }

    /// Closed-form `KL(q ‖ N(0, σ_p² I))` and its gradients with respect to (μ, ρ).
    pub fn kl_to_prior(&self, prior_variance: f64) -> (f64, Vec<f64>, Vec<f64>) {
        let mut kl = 0.0;
        let mut g_mu = Vec::with_capacity(self.dim());
        let mut g_rho = Vec::with_capacity(self.dim());
        let ln_sp = 0.5 * prior_variance.ln();
        for (&m, &r) in self.mu.iter().zip(&self.rho) {
            let s = softplus(r);
            kl += ln_sp - s.ln() + (s * s + m * m) / (2.0 * prior_variance) - 0.5;
            g_mu.push(m / prior_variance);
            g_rho.push((-1.0 / s + s / prior_variance) * sigmoid(r));
        }
        (kl, g_mu, g_rho)
    }

    pub fn sample_ensemble(&self, m: usize, seed: u64, rng: &mut dyn RngCore, hyper: serde_json::Value) -> PosteriorEnsemble {
        let members = (0..m).map(|_| self.draw(rng)).collect();
        PosteriorEnsemble::new(members, "mfvi", hyper, seed)
    }
}

/// Monte Carlo ELBO `E_q[log p(D|θ)] − KL(q‖p)` with `n_mc` draws.
pub fn elbo<T: BayesTarget + ?Sized>(q: &MeanFieldPosterior, target: &T, n_mc: usize, rng: &mut dyn RngCore) -> Result<f64> {
    if n_mc == 0 {
        return Err(UqError::Config("ELBO needs at least one Monte Carlo sample".into()));
    }
    let (kl, _, _) = q.kl_to_prior(target.prior_variance());
    if target.n_data() == 0 {
        return Ok(-kl);
    }
    let mut ll = 0.0;
    for _ in 0..n_mc {
        ll += target.log_likelihood(&q.draw(rng))?;
    }
    Ok(ll / n_mc as f64 - kl)
}

/// One-sample negative-ELBO estimate (per data point) and its gradients for fixed noise `z`.
/// The KL term is weighted by the temperature τ.
pub fn neg_elbo_grad<T: BayesTarget + ?Sized>(
    q: &MeanFieldPosterior,
    target: &T,
    z: &[f64],
    batch: Option<&[usize]>,
    temperature: f64,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let n = target.n_data();
    let theta = q.draw_with(z);
    let (ll, g) = if n == 0 {
        (0.0, vec![0.0; q.dim()])
    } else {
        target.log_likelihood_grad(&theta, batch)?
    };
    let factor = match batch {
        Some(b) if !b.is_empty() => n as f64 / b.len() as f64,
        _ => 1.0,
    };
    let (kl, kmu, krho) = q.kl_to_prior(target.prior_variance());
    let scale = 1.0 / n.max(1) as f64;
    let mut g_mu = Vec::with_capacity(q.dim());
    let mut g_rho = Vec::with_capacity(q.dim());
    for j in 0..q.dim() {
        let gl = -factor * g[j];
        g_mu.push((gl + temperature * kmu[j]) * scale);
        g_rho.push((gl * z[j] * sigmoid(q.rho[j]) + temperature * krho[j]) * scale);
    }
    Ok(((-factor * ll + temperature * kl) * scale, g_mu, g_rho))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MfviConfig {
    pub lr: f64,
    pub steps: usize,
    pub batch_size: Option<usize>,
    /// Initial ρ; σ_0 = softplus(ρ_0).
    pub init_rho: f64,
    pub samples: usize,
    pub temperature: f64,
    /// Validation check cadence and patience for early stopping.
    pub check_every: usize,
    pub patience: usize,
}

impl Default for MfviConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            steps: 4450,
            batch_size: Some(32),
            init_rho: -6.0,
            samples: 1000,
            temperature: 1.0,
            check_every: 50,
            patience: 10,
        }
    }
}

impl MfviConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || self.steps == 0 || self.samples == 0 || self.check_every == 0 {
            return Err(UqError::Config(
                "MFVI needs positive lr, steps, samples and check cadence".into(),
            ));
        }
        if !(self.temperature > 0.0) {
            return Err(UqError::Config("temperature must be positive".into()));
        }
        if self.batch_size == Some(0) {
            return Err(UqError::Config("batch size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct MfviOutcome {
    pub posterior: MeanFieldPosterior,
    pub losses: Vec<f64>,
    /// Step at which the returned posterior was recorded.
    pub best_step: usize,
    pub stopped_early: bool,
}

/// Fits q by Adam on the one-sample negative ELBO. When `validation_nll` is
/// given it is checked every `check_every` steps; the best iterate is kept
/// and training stops after `patience` checks without improvement.
pub fn mfvi_fit<T: BayesTarget + ?Sized>(
    target: &T,
    mu0: Vec<f64>,
    cfg: &MfviConfig,
    rng: &mut dyn RngCore,
    validation_nll: Option<&dyn Fn(&MeanFieldPosterior) -> Result<f64>>,
) -> Result<MfviOutcome> {
    cfg.validate()?;
    let k = target.dim();
    if mu0.len() != k {
        return Err(crate::error::shape_err("MFVI initial mean", k, mu0.len()));
    }
    let mut q = MeanFieldPosterior {
        mu: mu0,
        rho: vec![cfg.init_rho; k],
    };
    let mut packed = vec![0.0; 2 * k];
    let mut opt = Optimizer::new(OptimizerKind::default(), 2 * k);
    let mut losses = Vec::with_capacity(cfg.steps);
    let mut best = (f64::INFINITY, q.clone(), 0usize);
    let mut stale = 0;
    let mut stopped_early = false;
    for step in 0..cfg.steps {
        let batch = draw_batch(target.n_data(), cfg.batch_size, rng);
        let z: Vec<f64> = (0..k).map(|_| StandardNormal.sample(rng)).collect();
        let (loss, g_mu, g_rho) = neg_elbo_grad(&q, target, &z, batch.as_deref(), cfg.temperature)?;
        if !loss.is_finite() || g_mu.iter().chain(&g_rho).any(|g| !g.is_finite()) {
            return Err(UqError::Divergence {
                step,
                reason: format!("negative ELBO {loss}"),
            });
        }
        packed[..k].copy_from_slice(&q.mu);
        packed[k..].copy_from_slice(&q.rho);
        let grad: Vec<f64> = g_mu.into_iter().chain(g_rho).collect();
        opt.step(&mut packed, &grad, cfg.lr);
        q.mu.copy_from_slice(&packed[..k]);
        q.rho.copy_from_slice(&packed[k..]);
        losses.push(loss);
        if let Some(val) = validation_nll {
            if (step + 1) % cfg.check_every == 0 {
                let v = val(&q)?;
                if v < best.0 {
                    best = (v, q.clone(), step + 1);
                    stale = 0;
                } else {
                    stale += 1;
                    if stale >= cfg.patience {
                        stopped_early = true;
                        break;
                    }
                }
            }
        }
    }
    let (posterior, best_step) = if validation_nll.is_some() && best.0.is_finite() {
        (best.1, best.2)
    } else {
        (q, losses.len())
    };
    Ok(MfviOutcome {
        posterior,
        losses,
        best_step,
        stopped_early,
    })
}
