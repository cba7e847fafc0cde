//! Monte Carlo dropout: train with dropout, then draw masked copies of θ̂.

use crate::error::{Result, UqError};
use crate::optim::{train, NegLogPosterior, TrainConfig, TrainOutcome};
use crate::posterior::PosteriorEnsemble;
use crate::probmodel::BayesTarget;
use rand::RngCore;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct McdConfig {
    pub rate: f64,
    pub train: TrainConfig,
    pub samples: usize,
}

impl Default for McdConfig {
    fn default() -> Self {
        let mut train = TrainConfig::adam(1e-3, 20_000);
        train.dropout_rate = 0.05;
        Self {
            rate: 0.05,
            train,
            samples: 1000,
        }
    }
}

fn check_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(UqError::Config(format!("dropout rate must lie in [0, 1), got {rate}")));
    }
    Ok(())
}

/// MAP training with dropout at the configured rate.
pub fn mcd_train<T: BayesTarget>(target: &T, theta0: &[f64], cfg: &McdConfig, rng: &mut dyn RngCore) -> Result<TrainOutcome> {
    check_rate(cfg.rate)?;
    let mut tc = cfg.train.clone();
    tc.dropout_rate = cfg.rate;
    let obj = NegLogPosterior {
        target,
        include_prior: true,
    };
    train(&obj, theta0, &tc, rng, |_, _| Ok(true))
}

/// `M` masked parameter vectors `θ̂ ⊙ mask_j`, one per stochastic forward pass.
pub fn mcd_ensemble<T: BayesTarget + ?Sized>(
    target: &T,
    theta_hat: &[f64],
    rate: f64,
    m: usize,
    seed: u64,
    rng: &mut dyn RngCore,
) -> Result<PosteriorEnsemble> {
    check_rate(rate)?;
    if m == 0 {
        return Err(UqError::Empty("dropout samples"));
    }
    let mut members = Vec::with_capacity(m);
    for _ in 0..m {
        let mask = if rate > 0.0 {
            target
                .dropout_mask(rate, rng)
                .ok_or_else(|| UqError::Config("target does not support dropout".into()))?
        } else {
            vec![1.0; theta_hat.len()]
        };
        members.push(theta_hat.iter().zip(&mask).map(|(t, k)| t * k).collect());
    }
    Ok(PosteriorEnsemble::new(
        members,
        "mcd",
        serde_json::json!({ "rate": rate, "samples": m }),
        seed,
    ))
}
