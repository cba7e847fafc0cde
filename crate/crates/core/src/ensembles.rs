//! Ensemble approximations of the posterior: deep ensembles, snapshot
//! ensembles along a cyclical learning rate, and SWAG.

use crate::error::{Result, UqError};
use crate::optim::{train, LrSchedule, OptimizerKind, PointObjective, TrainConfig};
use crate::posterior::PosteriorEnsemble;
use crate::rng::{indexed_stream, Purpose};
use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

const MAX_RESTARTS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CyclicalSchedule {
    pub eps_init: f64,
    pub eps_final: f64,
    pub steps_total: usize,
    pub cycles: usize,
    /// Number of trailing cycles whose end points are kept.
    pub used: usize,
}

impl CyclicalSchedule {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(UqError::Config(format!("cyclical schedule: {m}")));
        if !(self.eps_final > 0.0 && self.eps_init >= self.eps_final) {
            return bad(format!(
                "need eps_init >= eps_final > 0, got {} and {}",
                self.eps_init, self.eps_final
            ));
        }
        if self.cycles == 0 || self.steps_total == 0 || self.steps_total % self.cycles != 0 {
            return bad(format!(
                "{} steps cannot be split into {} equal cycles",
                self.steps_total, self.cycles
            ));
        }
        if self.used == 0 || self.used > self.cycles {
            return bad(format!("used cycles {} must lie in 1..={}", self.used, self.cycles));
        }
        Ok(())
    }

    pub fn cycle_len(&self) -> usize {
        self.steps_total / self.cycles
    }

    /// Half-cosine decay from `eps_init` to `eps_final` within each cycle.
    pub fn lr(&self, step: usize) -> f64 {
        let len = self.cycle_len();
        if len <= 1 {
            return self.eps_init;
        }
        let frac = (step % len) as f64 / (len - 1) as f64;
        self.eps_final + 0.5 * (self.eps_init - self.eps_final) * (1.0 + (std::f64::consts::PI * frac).cos())
    }

    pub fn is_cycle_end(&self, step: usize) -> bool {
        (step + 1) % self.cycle_len() == 0
    }

    /// Whether the cycle ending at `step` is one of the last `used` cycles.
    pub fn is_collected(&self, step: usize) -> bool {
        self.is_cycle_end(step) && (step + 1) / self.cycle_len() > self.cycles - self.used
    }
}

pub fn cosine_lr(step: usize, schedule: &CyclicalSchedule) -> f64 {
    schedule.lr(step)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeepEnsembleConfig {
    pub members: usize,
    pub train: TrainConfig,
}

impl Default for DeepEnsembleConfig {
    fn default() -> Self {
        let mut train = TrainConfig::adam(1e-4, 20_000);
        train.weight_decay = 5e-4;
        Self { members: 10, train }
    }
}

/// Trains one member, restarting from a fresh initialization if training diverges.
fn train_member<O, I>(objective: &O, init: &I, cfg: &TrainConfig, seed: u64, index: u64) -> Result<(Vec<f64>, usize)>
where
    O: PointObjective + ?Sized,
    I: Fn(&mut dyn RngCore) -> Vec<f64> + Sync,
{
    let mut restarts = 0;
    loop {
        // attempt `a` of member `j` uses stream index j + a·2²⁰ so retries never collide
        let stream_index = index + ((restarts as u64) << 20);
        let mut init_rng = indexed_stream(seed, Purpose::Init, stream_index);
        let mut batch_rng = indexed_stream(seed, Purpose::Minibatch, stream_index);
        let theta0 = init(&mut init_rng);
        match train(objective, &theta0, cfg, &mut batch_rng, |_, _| Ok(true)) {
            Ok(out) => return Ok((out.theta, restarts)),
            Err(UqError::Divergence { step, reason }) if restarts < MAX_RESTARTS => {
                log::warn!("ensemble member {index} diverged at step {step} ({reason}); restarting");
                restarts += 1;
            }
            Err(e) => return Err(e),
        }
    }
}

/// `M` independently initialized MAP solutions, trained in parallel.
pub fn deep_ensemble_fit<O, I>(objective: &O, init: I, cfg: &DeepEnsembleConfig, seed: u64) -> Result<PosteriorEnsemble>
where
    O: PointObjective + ?Sized,
    I: Fn(&mut dyn RngCore) -> Vec<f64> + Sync,
{
    if cfg.members < 2 {
        return Err(UqError::Config(format!(
            "a deep ensemble needs at least 2 members, got {}",
            cfg.members
        )));
    }
    cfg.train.validate()?;
    let results: Vec<Result<(Vec<f64>, usize)>> = (0..cfg.members as u64)
        .into_par_iter()
        .map(|j| train_member(objective, &init, &cfg.train, seed, j))
        .collect();
    let mut members = Vec::with_capacity(cfg.members);
    let mut restarts = 0;
    for r in results {
        let (theta, n) = r?;
        restarts += n;
        members.push(theta);
    }
    let mut ens = PosteriorEnsemble::new(members, "dens", serde_json::to_value(cfg)?, seed);
    ens.diagnostics.restarts = restarts;
    Ok(ens)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CyclicalConfig {
    pub schedule: CyclicalSchedule,
    pub optimizer: OptimizerKind,
    pub batch_size: Option<usize>,
    pub weight_decay: f64,
}

impl CyclicalConfig {
    pub fn snapshot_defaults() -> Self {
        Self {
            schedule: CyclicalSchedule {
                eps_init: 1e-2,
                eps_final: 1e-4,
                steps_total: 20_000,
                cycles: 20,
                used: 20,
            },
            ..Self::default()
        }
    }

    pub fn swag_defaults() -> Self {
        Self {
            schedule: CyclicalSchedule {
                eps_init: 1e-2,
                eps_final: 1e-4,
                steps_total: 20_000,
                cycles: 10,
                used: 5,
            },
            ..Self::default()
        }
    }

    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            steps: self.schedule.steps_total,
            lr: LrSchedule::Cyclical(self.schedule),
            optimizer: self.optimizer,
            batch_size: self.batch_size,
            weight_decay: self.weight_decay,
            dropout_rate: 0.0,
        }
    }
}

impl Default for CyclicalConfig {
    fn default() -> Self {
        Self {
            schedule: CyclicalSchedule {
                eps_init: 1e-2,
                eps_final: 1e-4,
                steps_total: 20_000,
                cycles: 20,
                used: 20,
            },
            optimizer: OptimizerKind::default(),
            batch_size: None,
            weight_decay: 0.0,
        }
    }
}

/// Parameter vectors at the end of each of the last `used` cycles.
pub fn cyclical_snapshots<O: PointObjective + ?Sized>(
    objective: &O,
    theta0: &[f64],
    cfg: &CyclicalConfig,
    rng: &mut dyn RngCore,
) -> Result<Vec<Vec<f64>>> {
    cfg.schedule.validate()?;
    let mut snaps = Vec::with_capacity(cfg.schedule.used);
    train(objective, theta0, &cfg.train_config(), rng, |step, theta| {
        if cfg.schedule.is_collected(step) {
            snaps.push(theta.to_vec());
        }
        Ok(true)
    })?;
    Ok(snaps)
}

pub fn snapshot_ensemble_fit<O: PointObjective + ?Sized>(
    objective: &O,
    theta0: &[f64],
    cfg: &CyclicalConfig,
    seed: u64,
    rng: &mut dyn RngCore,
) -> Result<PosteriorEnsemble> {
    let snaps = cyclical_snapshots(objective, theta0, cfg, rng)?;
    Ok(PosteriorEnsemble::new(snaps, "sens", serde_json::to_value(cfg)?, seed))
}

/// Gaussian fit to trajectory snapshots: mean θ̄, covariance
/// `½·diag(θ²‾ − θ̄²) + ½·DDᵀ/(Q−1)` with `D` the last `Q` deviations from θ̄.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SwagFit {
    pub mean: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub deviations: Vec<Vec<f64>>,
    pub snapshots_averaged: usize,
}

impl SwagFit {
    /// Running moments over all snapshots; the last `rank` form the deviation bank.
    pub fn from_snapshots(snapshots: &[Vec<f64>], rank: usize) -> Result<Self> {
        if rank < 2 {
            return Err(UqError::Config(format!("SWAG rank must be at least 2, got {rank}")));
        }
        if snapshots.len() < rank {
            return Err(UqError::Config(format!(
                "SWAG rank {rank} exceeds the {} collected snapshots",
                snapshots.len()
            )));
        }
        let k = snapshots[0].len();
        let mut mean = vec![0.0; k];
        let mut sq = vec![0.0; k];
        for (n, s) in snapshots.iter().enumerate() {
            let w = 1.0 / (n + 1) as f64;
            for i in 0..k {
                mean[i] += (s[i] - mean[i]) * w;
                sq[i] += (s[i] * s[i] - sq[i]) * w;
            }
        }
        let deviations = snapshots[snapshots.len() - rank..]
            .iter()
            .map(|s| s.iter().zip(&mean).map(|(a, b)| a - b).collect())
            .collect();
        Ok(Self {
            mean,
            second_moment: sq,
            deviations,
            snapshots_averaged: snapshots.len(),
        })
    }

    pub fn rank(&self) -> usize {
        self.deviations.len()
    }

    /// Diagonal variance, clamped at zero.
    pub fn diag_variance(&self) -> Vec<f64> {
        let mut clamped = 0;
        let v = self
            .mean
            .iter()
            .zip(&self.second_moment)
            .map(|(m, s)| {
                let d = s - m * m;
                if d < 0.0 {
                    clamped += 1;
                    0.0
                } else {
                    d
                }
            })
            .collect();
        if clamped > 0 {
            log::debug!("swag: clamped {clamped} negative diagonal variances to zero");
        }
        v
    }

    /// Dense covariance (for small K).
    pub fn covariance(&self) -> Vec<Vec<f64>> {
        let k = self.mean.len();
        let diag = self.diag_variance();
        let q = self.rank() as f64;
        let mut c = vec![vec![0.0; k]; k];
        for i in 0..k {
            c[i][i] += 0.5 * diag[i];
            for j in 0..k {
                let lr: f64 = self.deviations.iter().map(|d| d[i] * d[j]).sum();
                c[i][j] += 0.5 * lr / (q - 1.0);
            }
        }
        c
    }

    pub fn sample(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        let diag = self.diag_variance();
        let c = 1.0 / (2.0 * (self.rank() as f64 - 1.0)).sqrt();
        let z2: Vec<f64> = (0..self.rank()).map(|_| rng.sample(StandardNormal)).collect();
        let mut theta: Vec<f64> = self
            .mean
            .iter()
            .zip(&diag)
            .map(|(m, d)| m + (0.5 * d).sqrt() * rng.sample::<f64, _>(StandardNormal))
            .collect();
        for (dev, z) in self.deviations.iter().zip(&z2) {
            theta.iter_mut().zip(dev).for_each(|(t, d)| *t += c * d * z);
        }
        theta
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

pub fn swag_fit<O: PointObjective + ?Sized>(
    objective: &O,
    theta0: &[f64],
    cfg: &CyclicalConfig,
    rank: usize,
    rng: &mut dyn RngCore,
) -> Result<SwagFit> {
    if rank < 2 {
        return Err(UqError::Config(format!("SWAG rank must be at least 2, got {rank}")));
    }
    let snaps = cyclical_snapshots(objective, theta0, cfg, rng)?;
    SwagFit::from_snapshots(&snaps, rank)
}

pub fn swag_sample(fit: &SwagFit, m: usize, seed: u64, rng: &mut dyn RngCore) -> PosteriorEnsemble {
    let members = (0..m).map(|_| fit.sample(rng)).collect();
    PosteriorEnsemble::new(
        members,
        "swag",
        serde_json::json!({"rank": fit.rank(), "snapshots": fit.snapshots_averaged}),
        seed,
    )
}

/// The SWA point estimate θ̄ as a one-member ensemble.
pub fn swa_point(fit: &SwagFit, seed: u64) -> PosteriorEnsemble {
    PosteriorEnsemble::new(vec![fit.mean.clone()], "swa", serde_json::Value::Null, seed)
}
