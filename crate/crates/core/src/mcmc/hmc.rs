//! Hamiltonian Monte Carlo with leapfrog integration, identity mass matrix and
//! dual-averaging step-size adaptation during burn-in.

use crate::error::{Result, UqError};
use crate::mcmc::gibbs::{GibbsConfig, GibbsSweep};
use crate::posterior::PosteriorEnsemble;
use crate::probmodel::{HyperTarget, LogDensity, LogPosterior};
use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HmcConfig {
    /// Initial leapfrog step size ε₀.
    pub step_size: f64,
    pub leapfrog_steps: usize,
    pub burn_in: usize,
    pub samples: usize,
    /// Fraction of burn-in during which the step size adapts.
    pub adapt_fraction: f64,
    pub target_accept: f64,
    /// Transitions between retained samples.
    pub lag: usize,
    pub divergence_threshold: f64,
    /// Each trajectory uses `ε·(1 + j·U)`, `U ~ U(−1, 1)`, which breaks the
    /// periodicity of fixed-length trajectories on near-quadratic targets.
    pub step_jitter: f64,
}

impl Default for HmcConfig {
    fn default() -> Self {
        Self {
            step_size: 0.1,
            leapfrog_steps: 50,
            burn_in: 2000,
            samples: 1000,
            adapt_fraction: 0.8,
            target_accept: 0.6,
            lag: 1,
            divergence_threshold: 1000.0,
            step_jitter: 0.1,
        }
    }
}

impl HmcConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(UqError::Config(format!("hmc: {m}")));
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return bad("step size must be positive");
        }
        if self.leapfrog_steps == 0 {
            return bad("at least one leapfrog step is required");
        }
        if self.samples == 0 {
            return bad("at least one retained sample is required");
        }
        if !(0.0..=1.0).contains(&self.adapt_fraction) {
            return bad("adapt_fraction must lie in [0, 1]");
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return bad("target acceptance must lie in (0, 1)");
        }
        if self.lag == 0 {
            return bad("lag must be at least 1");
        }
        if !(0.0..1.0).contains(&self.step_jitter) {
            return bad("step_jitter must lie in [0, 1)");
        }
        Ok(())
    }

    fn jittered(&self, eps: f64, rng: &mut dyn RngCore) -> f64 {
        if self.step_jitter == 0.0 {
            return eps;
        }
        eps * (1.0 + self.step_jitter * rng.random_range(-1.0..=1.0))
    }

    fn adapt_steps(&self) -> usize {
        (self.adapt_fraction * self.burn_in as f64).floor() as usize
    }
}

/// End point of a leapfrog trajectory together with the log-density and gradient there.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub theta: Vec<f64>,
    pub momentum: Vec<f64>,
    pub log_density: f64,
    pub grad: Vec<f64>,
}

/// `T` leapfrog steps for `H = −log p(θ) + ‖m‖²/2`, starting from a known
/// gradient. Returns `None` as soon as any quantity turns non-finite.
pub fn leapfrog_from<F>(
    theta: &[f64],
    momentum: &[f64],
    grad: &[f64],
    eps: f64,
    steps: usize,
    mut grad_fn: F,
) -> Result<Option<Trajectory>>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let mut q = theta.to_vec();
    let mut p = momentum.to_vec();
    let mut g = grad.to_vec();
    let mut logp = f64::NAN;
    for _ in 0..steps {
        p.iter_mut().zip(&g).for_each(|(pi, gi)| *pi += 0.5 * eps * gi);
        q.iter_mut().zip(&p).for_each(|(qi, pi)| *qi += eps * pi);
        match grad_fn(&q) {
            Ok((lp, gn)) => {
                if !lp.is_finite() || gn.iter().any(|v| !v.is_finite()) {
                    return Ok(None);
                }
                logp = lp;
                g = gn;
            }
            Err(UqError::NonFinite { .. }) => return Ok(None),
            Err(e) => return Err(e),
        }
        p.iter_mut().zip(&g).for_each(|(pi, gi)| *pi += 0.5 * eps * gi);
    }
    if steps == 0 {
        logp = grad_fn(&q)?.0;
    }
    Ok(Some(Trajectory {
        theta: q,
        momentum: p,
        log_density: logp,
        grad: g,
    }))
}

/// Leapfrog integration evaluating the starting gradient itself.
pub fn leapfrog<F>(theta: &[f64], momentum: &[f64], eps: f64, steps: usize, mut grad_fn: F) -> Result<Option<Trajectory>>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let (_, g0) = grad_fn(theta)?;
    leapfrog_from(theta, momentum, &g0, eps, steps, grad_fn)
}

/// Nesterov dual averaging of log ε toward a target acceptance probability.
#[derive(Clone, Debug)]
pub struct DualAveraging {
    mu: f64,
    target: f64,
    h_bar: f64,
    log_eps_bar: f64,
    t: f64,
    gamma: f64,
    t0: f64,
    kappa: f64,
}

impl DualAveraging {
    pub fn new(eps0: f64, target: f64) -> Self {
        Self {
            mu: (10.0 * eps0).ln(),
            target,
            h_bar: 0.0,
            log_eps_bar: eps0.ln(),
            t: 0.0,
            gamma: 0.2,
            t0: 10.0,
            kappa: 0.75,
        }
    }

    /// Feeds one acceptance probability and returns the next step size.
    pub fn update(&mut self, accept_prob: f64) -> f64 {
        self.t += 1.0;
        let w = 1.0 / (self.t + self.t0);
        self.h_bar = (1.0 - w) * self.h_bar + w * (self.target - accept_prob);
        let log_eps = self.mu - self.t.sqrt() / self.gamma * self.h_bar;
        let eta = self.t.powf(-self.kappa);
        self.log_eps_bar = eta * log_eps + (1.0 - eta) * self.log_eps_bar;
        log_eps.exp()
    }

    /// Averaged step size used once adaptation ends.
    pub fn final_step(&self) -> f64 {
        self.log_eps_bar.exp()
    }
}

/// Current position of a chain with cached log-density and gradient.
#[derive(Clone, Debug)]
pub struct ChainState {
    pub theta: Vec<f64>,
    pub log_density: f64,
    pub grad: Vec<f64>,
}

impl ChainState {
    pub fn at<D: LogDensity + ?Sized>(density: &D, theta: Vec<f64>) -> Result<Self> {
        let (log_density, grad) = density.log_density_grad(&theta)?;
        if !log_density.is_finite() {
            return Err(UqError::NonFinite {
                context: "initial log-density",
                value: log_density,
            });
        }
        Ok(Self {
            theta,
            log_density,
            grad,
        })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct TransitionInfo {
    pub accepted: bool,
    pub divergent: bool,
    pub accept_prob: f64,
    pub energy_error: f64,
}

/// One HMC transition with fixed step size.
pub fn hmc_transition<D: LogDensity + ?Sized>(
    density: &D,
    state: &mut ChainState,
    eps: f64,
    steps: usize,
    divergence_threshold: f64,
    rng: &mut dyn RngCore,
) -> Result<TransitionInfo> {
    let m0: Vec<f64> = (0..state.theta.len()).map(|_| rng.sample(StandardNormal)).collect();
    let kinetic = |m: &[f64]| 0.5 * m.iter().map(|v| v * v).sum::<f64>();
    let h0 = -state.log_density + kinetic(&m0);
    let traj = leapfrog_from(&state.theta, &m0, &state.grad, eps, steps, |q| density.log_density_grad(q))?;
    let u: f64 = rng.random();
    let Some(traj) = traj else {
        log::debug!("hmc: non-finite trajectory at step size {eps:e}");
        return Ok(TransitionInfo {
            accepted: false,
            divergent: true,
            accept_prob: 0.0,
            energy_error: f64::INFINITY,
        });
    };
    let h1 = -traj.log_density + kinetic(&traj.momentum);
    let dh = h1 - h0;
    if !dh.is_finite() || dh.abs() > divergence_threshold {
        log::debug!("hmc: divergent transition, energy error {dh:e}");
        return Ok(TransitionInfo {
            accepted: false,
            divergent: true,
            accept_prob: 0.0,
            energy_error: dh,
        });
    }
    let accept_prob = (-dh).exp().min(1.0);
    let accepted = u < accept_prob;
    if accepted {
        state.theta = traj.theta;
        state.log_density = traj.log_density;
        state.grad = traj.grad;
    }
    Ok(TransitionInfo {
        accepted,
        divergent: false,
        accept_prob,
        energy_error: dh,
    })
}

/// Runs burn-in plus `samples·lag` transitions and keeps every `lag`-th post-burn-in state.
pub fn hmc_sample<D: LogDensity + ?Sized>(
    density: &D,
    init: &[f64],
    cfg: &HmcConfig,
    seed: u64,
    rng: &mut dyn RngCore,
) -> Result<PosteriorEnsemble> {
    cfg.validate()?;
    let mut state = ChainState::at(density, init.to_vec())?;
    let mut stats = ChainStats::new(cfg);
    let mut members = Vec::with_capacity(cfg.samples);
    let total = cfg.burn_in + cfg.samples * cfg.lag;
    for iter in 0..total {
        let info = hmc_transition(density, &mut state, cfg.jittered(stats.eps, rng), cfg.leapfrog_steps, cfg.divergence_threshold, rng)?;
        stats.record(iter, &info, cfg);
        if iter >= cfg.burn_in && (iter - cfg.burn_in + 1) % cfg.lag == 0 {
            members.push(state.theta.clone());
        }
    }
    Ok(stats.finish(members, cfg, seed, "hmc"))
}

/// HMC on θ alternating with conjugate Gibbs draws of σ_θ² and/or σ_u²
/// (one HMC proposal per hyperparameter sweep).
pub fn hmc_gibbs_sample<T: HyperTarget + Clone>(
    target: &mut T,
    temperature: f64,
    init: &[f64],
    cfg: &HmcConfig,
    gibbs: &GibbsConfig,
    seed: u64,
    rng: &mut dyn RngCore,
) -> Result<PosteriorEnsemble> {
    cfg.validate()?;
    gibbs.validate()?;
    let mut sweep = GibbsSweep::new(gibbs.clone());
    let mut state = {
        let post = LogPosterior::new(&*target, temperature)?;
        ChainState::at(&post, init.to_vec())?
    };
    let mut stats = ChainStats::new(cfg);
    let mut members = Vec::with_capacity(cfg.samples);
    let mut noise = Vec::with_capacity(cfg.samples);
    let total = cfg.burn_in + cfg.samples * cfg.lag;
    for iter in 0..total {
        {
            let post = LogPosterior::new(&*target, temperature)?;
            let info = hmc_transition(&post, &mut state, cfg.jittered(stats.eps, rng), cfg.leapfrog_steps, cfg.divergence_threshold, rng)?;
            stats.record(iter, &info, cfg);
        }
        let noise_var = sweep.update(target, &state.theta, rng)?;
        let post = LogPosterior::new(&*target, temperature)?;
        state = ChainState::at(&post, std::mem::take(&mut state.theta))?;
        if iter >= cfg.burn_in && (iter - cfg.burn_in + 1) % cfg.lag == 0 {
            members.push(state.theta.clone());
            noise.push(noise_var);
        }
    }
    let mut ens = stats.finish(members, cfg, seed, "hmc");
    if gibbs.update_noise {
        ens.noise_variances = Some(noise);
    }
    ens.provenance.hyperparameters["gibbs"] = serde_json::to_value(gibbs)?;
    ens.provenance.hyperparameters["temperature"] = temperature.into();
    Ok(ens)
}

struct ChainStats {
    eps: f64,
    adapter: DualAveraging,
    adapt_steps: usize,
    accepted: usize,
    counted: usize,
    divergences: usize,
}

impl ChainStats {
    fn new(cfg: &HmcConfig) -> Self {
        Self {
            eps: cfg.step_size,
            adapter: DualAveraging::new(cfg.step_size, cfg.target_accept),
            adapt_steps: cfg.adapt_steps(),
            accepted: 0,
            counted: 0,
            divergences: 0,
        }
    }

    fn record(&mut self, iter: usize, info: &TransitionInfo, cfg: &HmcConfig) {
        if info.divergent {
            self.divergences += 1;
        }
        if iter < self.adapt_steps {
            self.eps = self.adapter.update(info.accept_prob);
            if iter + 1 == self.adapt_steps {
                self.eps = self.adapter.final_step();
                log::debug!("hmc: step size fixed at {:e}", self.eps);
            }
        }
        if iter >= cfg.burn_in {
            self.counted += 1;
            if info.accepted {
                self.accepted += 1;
            }
        }
    }

    fn finish(self, members: Vec<Vec<f64>>, cfg: &HmcConfig, seed: u64, method: &str) -> PosteriorEnsemble {
        let mut ens = PosteriorEnsemble::new(
            members,
            method,
            serde_json::to_value(cfg).unwrap_or_default(),
            seed,
        );
        let rate = self.accepted as f64 / self.counted.max(1) as f64;
        ens.diagnostics.acceptance_rate = Some(rate);
        ens.diagnostics.step_size = Some(self.eps);
        ens.diagnostics.divergences = self.divergences;
        if rate < 0.05 {
            let msg = format!("acceptance rate {rate:.3} below 0.05");
            log::warn!("{method}: {msg}");
            ens.diagnostics.warnings.push(msg);
        }
        ens
    }
}
