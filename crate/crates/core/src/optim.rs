//! Point estimation: objectives, first-order optimizers and a training loop.

use crate::ensembles::CyclicalSchedule;
use crate::error::{Result, UqError};
use crate::model::DiffModel;
use crate::probmodel::{BayesTarget, RegressionTarget};
use rand::seq::index::sample;
use rand::RngCore;
use serde::{Deserialize, Serialize};

/// A scalar training loss with optional minibatching.
pub trait PointObjective: Sync {
    fn dim(&self) -> usize;
    fn n_data(&self) -> usize;
    fn loss_grad(&self, theta: &[f64], batch: Option<&[usize]>) -> Result<(f64, Vec<f64>)>;

    /// Multiplicative mask over θ used for dropout training; `None` if unsupported.
    fn dropout_mask(&self, _rate: f64, _rng: &mut dyn RngCore) -> Option<Vec<f64>> {
        None
    }
}

/// `−(N/|S|·log p(D_S|θ) + log p(θ)) / N`, the MAP loss per data point.
/// Without the prior this is the scaled negative log-likelihood (MLE).
pub struct NegLogPosterior<'a, T> {
    pub target: &'a T,
    pub include_prior: bool,
}

impl<T: BayesTarget> PointObjective for NegLogPosterior<'_, T> {
    fn dim(&self) -> usize {
        self.target.dim()
    }

    fn n_data(&self) -> usize {
        self.target.n_data()
    }

    fn loss_grad(&self, theta: &[f64], batch: Option<&[usize]>) -> Result<(f64, Vec<f64>)> {
        let n = self.target.n_data().max(1) as f64;
        let (ll, mut g) = self.target.log_likelihood_grad(theta, batch)?;
        let factor = match batch {
            Some(b) if !b.is_empty() => self.target.n_data() as f64 / b.len() as f64,
            _ => 1.0,
        };
        let mut total = ll * factor;
        g.iter_mut().for_each(|v| *v *= factor);
        if self.include_prior {
            let (lp, gp) = self.target.log_prior_grad(theta);
            total += lp;
            g.iter_mut().zip(&gp).for_each(|(a, b)| *a += b);
        }
        g.iter_mut().for_each(|v| *v = -*v / n);
        Ok((-total / n, g))
    }

    fn dropout_mask(&self, rate: f64, rng: &mut dyn RngCore) -> Option<Vec<f64>> {
        self.target.dropout_mask(rate, rng)
    }
}

/// Plain mean squared error on the mean output.
pub struct MseObjective<'a, M>(pub &'a RegressionTarget<M>);

impl<M: DiffModel> PointObjective for MseObjective<'_, M> {
    fn dim(&self) -> usize {
        self.0.model.n_params()
    }

    fn n_data(&self) -> usize {
        self.0.data.len()
    }

    fn loss_grad(&self, theta: &[f64], batch: Option<&[usize]>) -> Result<(f64, Vec<f64>)> {
        self.0.mse_grad(theta, batch)
    }

    fn dropout_mask(&self, rate: f64, rng: &mut dyn RngCore) -> Option<Vec<f64>> {
        Some(self.0.model.dropout_mask(rate, rng))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam { beta1: f64, beta2: f64, eps: f64 },
    Sgd { momentum: f64 },
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Stateful first-order update rule.
#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, dim: usize) -> Self {
        Self {
            kind,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            t: 0,
        }
    }

    pub fn adam(dim: usize) -> Self {
        Self::new(OptimizerKind::default(), dim)
    }

    /// In-place descent step `θ ← θ − lr·update(g)`.
    pub fn step(&mut self, theta: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        match self.kind {
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let c1 = 1.0 - beta1.powi(self.t.min(i32::MAX as u64) as i32);
                let c2 = 1.0 - beta2.powi(self.t.min(i32::MAX as u64) as i32);
                for i in 0..theta.len() {
                    self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * grad[i];
                    self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * grad[i] * grad[i];
                    let mh = self.m[i] / c1;
                    let vh = self.v[i] / c2;
                    theta[i] -= lr * mh / (vh.sqrt() + eps);
                }
            }
            OptimizerKind::Sgd { momentum } => {
                for i in 0..theta.len() {
                    self.m[i] = momentum * self.m[i] + grad[i];
                    theta[i] -= lr * self.m[i];
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LrSchedule {
    Constant { lr: f64 },
    Cyclical(CyclicalSchedule),
}

impl LrSchedule {
    pub fn at(&self, step: usize) -> f64 {
        match self {
            LrSchedule::Constant { lr } => *lr,
            LrSchedule::Cyclical(s) => s.lr(step),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    pub lr: LrSchedule,
    pub optimizer: OptimizerKind,
    /// `None` trains full-batch.
    pub batch_size: Option<usize>,
    /// L2 penalty added to the gradient as `wd·θ`.
    pub weight_decay: f64,
    pub dropout_rate: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::adam(1e-3, 10_000)
    }
}

impl TrainConfig {
    pub fn adam(lr: f64, steps: usize) -> Self {
        Self {
            steps,
            lr: LrSchedule::Constant { lr },
            optimizer: OptimizerKind::default(),
            batch_size: None,
            weight_decay: 0.0,
            dropout_rate: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(UqError::Config(format!(
                "dropout rate must lie in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        if self.weight_decay < 0.0 {
            return Err(UqError::Config("weight decay must be non-negative".into()));
        }
        if self.batch_size == Some(0) {
            return Err(UqError::Config("batch size must be positive".into()));
        }
        if let LrSchedule::Cyclical(s) = &self.lr {
            s.validate()?;
            if s.steps_total != self.steps {
                return Err(UqError::Config(format!(
                    "schedule covers {} steps but training runs {}",
                    s.steps_total, self.steps
                )));
            }
        }
        Ok(())
    }
}

/// Draws a minibatch of distinct indices, or `None` when the batch covers all data.
pub fn draw_batch(n: usize, batch_size: Option<usize>, rng: &mut dyn RngCore) -> Option<Vec<usize>> {
    match batch_size {
        Some(b) if b < n => {
            let mut idx = sample(rng, n, b).into_vec();
            idx.sort_unstable();
            Some(idx)
        }
        _ => None,
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub theta: Vec<f64>,
    pub final_loss: f64,
    pub losses: Vec<f64>,
}

/// Minimizes `objective` from `theta0`. `on_step(step, θ)` runs after every
/// update; returning `false` stops training early.
pub fn train<O: PointObjective + ?Sized>(
    objective: &O,
    theta0: &[f64],
    cfg: &TrainConfig,
    rng: &mut dyn RngCore,
    mut on_step: impl FnMut(usize, &[f64]) -> Result<bool>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut theta = theta0.to_vec();
    let mut opt = Optimizer::new(cfg.optimizer, theta.len());
    let mut losses = Vec::with_capacity(cfg.steps);
    let mut last = f64::NAN;
    for step in 0..cfg.steps {
        let batch = draw_batch(objective.n_data(), cfg.batch_size, rng);
        let mask = if cfg.dropout_rate > 0.0 {
            objective.dropout_mask(cfg.dropout_rate, rng)
        } else {
            None
        };
        let (loss, mut grad) = match &mask {
            Some(m) => {
                let masked: Vec<f64> = theta.iter().zip(m).map(|(t, k)| t * k).collect();
                let (l, mut g) = objective.loss_grad(&masked, batch.as_deref())?;
                g.iter_mut().zip(m).for_each(|(gi, k)| *gi *= k);
                (l, g)
            }
            None => objective.loss_grad(&theta, batch.as_deref())?,
        };
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(UqError::Divergence {
                step,
                reason: format!("loss {loss}"),
            });
        }
        if cfg.weight_decay > 0.0 {
            grad.iter_mut()
                .zip(&theta)
                .for_each(|(g, t)| *g += cfg.weight_decay * t);
        }
        opt.step(&mut theta, &grad, cfg.lr.at(step));
        losses.push(loss);
        last = loss;
        if !on_step(step, &theta)? {
            break;
        }
    }
    Ok(TrainOutcome {
        theta,
        final_loss: last,
        losses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::LabeledDataset;
    use crate::model::LinearModel;
    use crate::probmodel::{GaussianLikelihood, PriorSpec};
    use crate::rng::{stream, Purpose};

    struct Quadratic(f64);

    impl PointObjective for Quadratic {
        fn dim(&self) -> usize {
            1
        }
        fn n_data(&self) -> usize {
            1
        }
        fn loss_grad(&self, theta: &[f64], _: Option<&[usize]>) -> Result<(f64, Vec<f64>)> {
            let d = theta[0] - self.0;
            Ok((d * d, vec![2.0 * d]))
        }
    }

    #[test]
    fn adam_and_sgd_reach_quadratic_minimum() {
        let mut rng = stream(0, Purpose::Minibatch);
        let out = train(&Quadratic(1.5), &[0.0], &TrainConfig::adam(0.05, 2000), &mut rng, |_, _| Ok(true)).unwrap();
        assert!((out.theta[0] - 1.5).abs() < 1e-6);
        let mut cfg = TrainConfig::adam(0.1, 200);
        cfg.optimizer = OptimizerKind::Sgd { momentum: 0.0 };
        let out = train(&Quadratic(-2.0), &[3.0], &cfg, &mut rng, |_, _| Ok(true)).unwrap();
        assert!((out.theta[0] + 2.0).abs() < 1e-10);
    }

    #[test]
    fn first_adam_step_has_lr_magnitude() {
        let mut opt = Optimizer::adam(2);
        let mut theta = vec![0.0, 0.0];
        opt.step(&mut theta, &[3.0, -0.01], 0.1);
        assert!((theta[0] + 0.1).abs() < 1e-8 && (theta[1] - 0.1).abs() < 1e-6);
    }

    #[test]
    fn map_on_linear_regression_matches_closed_form() {
        let x = [0.5, -1.0, 1.5, 2.0];
        let u = [0.4, -0.9, 1.2, 2.1];
        let sigma = 0.5;
        let t = RegressionTarget::new(
            LinearModel::new(1),
            LabeledDataset::from_1d(&x, &u).unwrap(),
            GaussianLikelihood::homoscedastic(sigma).unwrap(),
            PriorSpec::standard_normal(),
        )
        .unwrap();
        let sxx: f64 = x.iter().map(|v| v * v).sum();
        let sxu: f64 = x.iter().zip(&u).map(|(a, b)| a * b).sum();
        let want = (sxu / (sigma * sigma)) / (sxx / (sigma * sigma) + 1.0);
        let obj = NegLogPosterior {
            target: &t,
            include_prior: true,
        };
        let mut rng = stream(0, Purpose::Minibatch);
        let out = train(&obj, &[0.0], &TrainConfig::adam(0.01, 5000), &mut rng, |_, _| Ok(true)).unwrap();
        assert!((out.theta[0] - want).abs() < 1e-6, "{} vs {want}", out.theta[0]);
    }

    #[test]
    fn full_minibatch_equals_full_batch() {
        let t = RegressionTarget::new(
            LinearModel::new(1),
            LabeledDataset::from_1d(&[0.1, 0.2, 0.3], &[1.0, 0.0, -1.0]).unwrap(),
            GaussianLikelihood::homoscedastic(1.0).unwrap(),
            PriorSpec::standard_normal(),
        )
        .unwrap();
        let obj = NegLogPosterior {
            target: &t,
            include_prior: true,
        };
        let a = obj.loss_grad(&[0.4], None).unwrap();
        let b = obj.loss_grad(&[0.4], Some(&[0, 1, 2])).unwrap();
        assert_eq!(a, b);
        let mut rng = stream(0, Purpose::Minibatch);
        assert!(draw_batch(3, Some(3), &mut rng).is_none());
        assert_eq!(draw_batch(10, Some(4), &mut rng).unwrap().len(), 4);
    }

    #[test]
    fn divergence_reports_step() {
        struct Bad;
        impl PointObjective for Bad {
            fn dim(&self) -> usize {
                1
            }
            fn n_data(&self) -> usize {
                1
            }
            fn loss_grad(&self, theta: &[f64], _: Option<&[usize]>) -> Result<(f64, Vec<f64>)> {
                Ok((if theta[0] > 0.25 { f64::NAN } else { 0.0 }, vec![-1.0]))
            }
        }
        let mut rng = stream(0, Purpose::Minibatch);
        let mut cfg = TrainConfig::adam(0.1, 10);
        cfg.optimizer = OptimizerKind::Sgd { momentum: 0.0 };
        match train(&Bad, &[0.0], &cfg, &mut rng, |_, _| Ok(true)) {
            Err(UqError::Divergence { step, .. }) => assert_eq!(step, 3),
            other => panic!("{other:?}"),
        }
    }
}
