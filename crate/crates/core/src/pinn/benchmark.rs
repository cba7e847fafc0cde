//! End-to-end steep-boundary run: reference solve, data generation, MAP
//! warm start, HMC, and evaluation on a uniform x-grid.

use super::data::PinnDataset;
use super::model::{PinnField, UPinn, UPinnTarget};
use super::problem::PdeProblem;
use super::solver::ReferenceSolution;
use crate::error::Result;
use crate::eval::metrics::normal_quantile;
use crate::eval::{rl2e, PredictiveSummary};
use crate::mcmc::{hmc_sample, HmcConfig};
use crate::optim::{train, NegLogPosterior, TrainConfig};
use crate::posterior::PosteriorEnsemble;
use crate::probmodel::{LogPosterior, PriorSpec};
use crate::rng::{stream, Purpose};
use serde::{Deserialize, Serialize};
use std::time::Instant;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SteepConfig {
    pub problem: PdeProblem,
    pub prior: PriorSpec,
    pub heteroscedastic: bool,
    /// Adam warm start on the negative log-posterior.
    pub map: TrainConfig,
    pub hmc: HmcConfig,
    /// Points of the uniform evaluation grid on `[−1, 1]`.
    pub eval_points: usize,
    pub eval_times: Vec<f64>,
    pub seed: u64,
}

impl Default for SteepConfig {
    fn default() -> Self {
        Self {
            problem: PdeProblem::steep(),
            prior: PriorSpec::standard_normal(),
            heteroscedastic: false,
            map: TrainConfig::adam(1e-3, 20_000),
            hmc: HmcConfig {
                step_size: 1e-3,
                leapfrog_steps: 50,
                burn_in: 5000,
                samples: 1000,
                ..HmcConfig::default()
            },
            eval_points: 101,
            eval_times: vec![1.0],
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FieldScore {
    pub rl2e: f64,
    /// Fraction of grid points whose error lies inside the 95% total-uncertainty interval.
    pub coverage: f64,
}

impl FieldScore {
    pub fn compute(s: &PredictiveSummary, truth: &[f64]) -> Result<Self> {
        let z = normal_quantile(0.975);
        let sd = s.std_total();
        let inside = truth
            .iter()
            .zip(s.mean.iter().zip(&sd))
            .filter(|(u, (m, sd))| (*m - *u).abs() <= z * *sd)
            .count();
        Ok(Self {
            rl2e: rl2e(s, truth)?,
            coverage: inside as f64 / truth.len() as f64,
        })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SteepOutcome {
    pub u: FieldScore,
    pub lambda: Option<FieldScore>,
    pub f: FieldScore,
    pub map_rl2e_u: f64,
    pub acceptance_rate: Option<f64>,
    pub step_size: Option<f64>,
    pub seconds: f64,
}

/// Grid points `(t, x)` and reference u values.
pub fn evaluation_grid(reference: &ReferenceSolution, points: usize, times: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut t = Vec::new();
    let mut x = Vec::new();
    for &tk in times {
        for i in 0..points {
            t.push(tk);
            x.push(-1.0 + 2.0 * i as f64 / (points - 1) as f64);
        }
    }
    let u = t.iter().zip(&x).map(|(&a, &b)| reference.interpolate(a, b)).collect();
    (t, x, u)
}

/// Target, reference solution and dataset for a problem.
pub fn build_target(problem: &PdeProblem, prior: PriorSpec, heteroscedastic: bool) -> Result<(UPinnTarget, ReferenceSolution)> {
    let reference = problem.solve_reference()?;
    let data = PinnDataset::generate(problem, &reference)?;
    let model = UPinn::for_problem(problem, heteroscedastic);
    Ok((UPinnTarget::new(model, data, prior)?, reference))
}

/// Adam MAP estimate from a seeded initialization.
pub fn map_estimate(target: &UPinnTarget, cfg: &TrainConfig, seed: u64) -> Result<Vec<f64>> {
    let theta0 = target.model.init_params(&mut stream(seed, Purpose::Init)).0;
    let obj = NegLogPosterior {
        target,
        include_prior: true,
    };
    let mut rng = stream(seed, Purpose::Minibatch);
    Ok(train(&obj, &theta0, cfg, &mut rng, |_, _| Ok(true))?.theta)
}

/// Scores an ensemble on the evaluation grid.
pub fn score_ensemble(
    target: &UPinnTarget,
    reference: &ReferenceSolution,
    ensemble: &PosteriorEnsemble,
    points: usize,
    times: &[f64],
) -> Result<(FieldScore, Option<FieldScore>, FieldScore)> {
    let (t, x, u) = evaluation_grid(reference, points, times);
    let su = target.summarize(ensemble, PinnField::U, &t, &x)?;
    let xs: Vec<f64> = x[..points].to_vec();
    let lambda = match target.model.lambda_net {
        Some(_) => {
            let sl = target.summarize(ensemble, PinnField::Lambda, &vec![0.0; points], &xs)?;
            let truth: Vec<f64> = xs.iter().map(|&v| target_lambda(v)).collect();
            Some(FieldScore::compute(&sl, &truth)?)
        }
        None => None,
    };
    let t_mid = vec![times.first().copied().unwrap_or(1.0); points];
    let sf = target.summarize(ensemble, PinnField::F, &t_mid, &xs)?;
    let f_truth: Vec<f64> = xs.iter().map(|&v| super::problem::ReferenceFields::source(v)).collect();
    Ok((FieldScore::compute(&su, &u)?, lambda, FieldScore::compute(&sf, &f_truth)?))
}

fn target_lambda(x: f64) -> f64 {
    super::problem::ReferenceFields::lambda(x)
}

pub fn run_steep(cfg: &SteepConfig) -> Result<(SteepOutcome, PosteriorEnsemble)> {
    let start = Instant::now();
    let (target, reference) = build_target(&cfg.problem, cfg.prior, cfg.heteroscedastic)?;
    let theta_map = map_estimate(&target, &cfg.map, cfg.seed)?;
    let map_ens = PosteriorEnsemble::new(vec![theta_map.clone()], "map", serde_json::Value::Null, cfg.seed);
    let (map_u, _, _) = score_ensemble(&target, &reference, &map_ens, cfg.eval_points, &cfg.eval_times)?;
    log::info!("steep: MAP RL2E(u) = {:.4}", map_u.rl2e);
    let post = LogPosterior::untempered(&target);
    let mut rng = stream(cfg.seed, Purpose::Sampler);
    let ens = hmc_sample(&post, &theta_map, &cfg.hmc, cfg.seed, &mut rng)?;
    let (u, lambda, f) = score_ensemble(&target, &reference, &ens, cfg.eval_points, &cfg.eval_times)?;
    Ok((
        SteepOutcome {
            u,
            lambda,
            f,
            map_rl2e_u: map_u.rl2e,
            acceptance_rate: ens.diagnostics.acceptance_rate,
            step_size: ens.diagnostics.step_size,
            seconds: start.elapsed().as_secs_f64(),
        },
        ens,
    ))
}
