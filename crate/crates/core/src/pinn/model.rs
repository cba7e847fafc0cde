//! U-PINN: a solution network `u_θ(t, x)` and optionally a reaction-rate
//! network `λ_θ(x)`, tied together by the residual
//! `f_θ = ∂_t u − D ∂²_x u + λ u³`.

use super::data::{Channel, ChannelData, PinnDataset};
use super::problem::{LambdaRole, PdeProblem, ReferenceFields};
use crate::approx::LinearizedTarget;
use crate::autodiff::{grad_params, JetValue, Tape, Var};
use crate::error::{shape_err, Result, UqError};
use crate::eval::{Aleatoric, PredictiveSummary};
use crate::mlp::{Architecture, MlpModel};
use crate::model::{DiffModel, ParamVector};
use crate::optim::PointObjective;
use crate::posterior::PosteriorEnsemble;
use crate::probmodel::{BayesTarget, GaussianLikelihood, PriorSpec, LN_2PI};
use crate::tensor::DenseMatrix;
use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct UPinn {
    pub u_net: MlpModel,
    /// `None` when λ is the known reference field.
    pub lambda_net: Option<MlpModel>,
    pub diffusion: f64,
}

/// Network predictions for each channel of a dataset, recorded on a tape.
struct ChannelPreds<'t> {
    f: Option<Var<'t>>,
    b: Option<Var<'t>>,
    u: Option<Var<'t>>,
    lambda: Option<Var<'t>>,
}

fn points(t: &[f64], x: &[f64]) -> DenseMatrix {
    DenseMatrix::from_fn(t.len(), 2, |i, j| if j == 0 { t[i] } else { x[i] })
}

fn first_column(v: Var<'_>) -> Var<'_> {
    if v.shape().1 == 1 {
        v
    } else {
        v.column(0)
    }
}

/// `w · Σ_i log N(v_i | pred_i, σ²)`
fn gaussian_ll<'t>(tape: &'t Tape, pred: Var<'t>, values: &[f64], sigma: f64, weight: f64) -> Var<'t> {
    let var = sigma * sigma;
    let n = values.len() as f64;
    let r = pred - tape.constant(DenseMatrix::column(values));
    r.square()
        .sum()
        .scale(-0.5 * weight / var)
        .add_const(-0.5 * weight * n * (LN_2PI + var.ln()))
}

/// `∂_t u − D ∂²_x u + λ u³` from a jet of u along x and its time derivative.
pub fn residual_from_jet(u: JetValue, u_t: f64, lambda: f64, diffusion: f64) -> f64 {
    u_t - diffusion * u.d2 + lambda * u.value.powi(3)
}

impl UPinn {
    /// Default architecture: two hidden layers of 50 tanh units for each network.
    pub fn for_problem(problem: &PdeProblem, heteroscedastic: bool) -> Self {
        let width = [50, 50];
        let out = if heteroscedastic { 2 } else { 1 };
        Self {
            u_net: MlpModel::new(Architecture::tanh(2, &width, out)),
            lambda_net: match problem.lambda {
                LambdaRole::Network => Some(MlpModel::new(Architecture::tanh(1, &width, 1))),
                LambdaRole::Reference => None,
            },
            diffusion: problem.diffusion,
        }
    }

    pub fn n_params(&self) -> usize {
        self.u_net.n_params() + self.lambda_net.as_ref().map_or(0, |m| m.n_params())
    }

    pub fn is_heteroscedastic(&self) -> bool {
        self.u_net.out_dim() == 2
    }

    pub fn init_params(&self, rng: &mut dyn RngCore) -> ParamVector {
        let mut p = self.u_net.init_params(rng).0;
        if let Some(l) = &self.lambda_net {
            p.extend(l.init_params(rng).0);
        }
        ParamVector(p)
    }

    pub fn dropout_mask(&self, rate: f64, rng: &mut dyn RngCore) -> Vec<f64> {
        let mut m = self.u_net.dropout_mask(rate, rng);
        if let Some(l) = &self.lambda_net {
            m.extend(l.dropout_mask(rate, rng));
        }
        m
    }

    fn check(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.n_params() {
            return Err(shape_err("U-PINN parameter vector", self.n_params(), theta.len()));
        }
        Ok(())
    }

    fn u_params<'t>(&self, p: Var<'t>) -> Var<'t> {
        p.slice(0, self.u_net.n_params(), 1)
    }

    fn lambda_params<'t>(&self, p: Var<'t>) -> Option<(Var<'t>, &MlpModel)> {
        self.lambda_net.as_ref().map(|m| {
            let ku = self.u_net.n_params();
            (p.slice(ku, m.n_params(), 1), m)
        })
    }

    /// λ at `x`, from the network or the reference field.
    pub fn lambda_tape<'t>(&self, tape: &'t Tape, p: Var<'t>, x: &[f64]) -> Result<Var<'t>> {
        match self.lambda_params(p) {
            Some((pl, net)) => net.forward_tape(tape, pl, &DenseMatrix::column(x)),
            None => {
                let v: Vec<f64> = x.iter().map(|&xi| ReferenceFields::lambda(xi)).collect();
                Ok(tape.constant(DenseMatrix::column(&v)))
            }
        }
    }

    /// Raw u-network outputs at `(t_i, x_i)`.
    pub fn u_tape<'t>(&self, tape: &'t Tape, p: Var<'t>, t: &[f64], x: &[f64]) -> Result<Var<'t>> {
        self.u_net.forward_tape(tape, self.u_params(p), &points(t, x))
    }

    /// `∂_t u − D ∂²_x u + λ(x) u³` at `(t_i, x_i)`, as an `n × 1` node.
    pub fn residual_tape<'t>(&self, tape: &'t Tape, p: Var<'t>, t: &[f64], x: &[f64]) -> Result<Var<'t>> {
        let jet = self.u_net.forward_jet_tape(tape, self.u_params(p), &points(t, x), 1, &[0])?;
        let u = first_column(jet.value);
        let uxx = first_column(jet.d2);
        let ut = first_column(jet.extra[0]);
        let lam = self.lambda_tape(tape, p, x)?;
        Ok(ut - uxx.scale(self.diffusion) + lam * u.powi(3))
    }

    /// The predicted source `f_θ(t_i, x_i)`.
    pub fn residual(&self, theta: &[f64], t: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        self.check(theta)?;
        if t.len() != x.len() {
            return Err(shape_err("residual points", t.len(), x.len()));
        }
        let tape = Tape::new();
        let p = tape.constant(DenseMatrix::column(theta));
        Ok(self.residual_tape(&tape, p, t, x)?.value().into_vec())
    }

    /// Single-point residual from scalar jets along x and t.
    pub fn residual_point(&self, theta: &[f64], t: f64, x: f64) -> Result<f64> {
        self.check(theta)?;
        let pu = &theta[..self.u_net.n_params()];
        let ux = self.u_net.input_jet(pu, &[t, x], 1)?[0];
        let ut = self.u_net.input_jet(pu, &[t, x], 0)?[0].d1;
        let lam = self.predict_lambda(theta, &[x])?[0];
        Ok(residual_from_jet(ux, ut, lam, self.diffusion))
    }

    /// `(mean, aleatoric variance)` of u at `(t_i, x_i)`; `sigma_u` is used for homoscedastic nets.
    pub fn predict_u(&self, theta: &[f64], t: &[f64], x: &[f64], sigma_u: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check(theta)?;
        let pred = self.u_net.forward(&theta[..self.u_net.n_params()], &points(t, x))?;
        let lik = if self.is_heteroscedastic() {
            GaussianLikelihood::heteroscedastic()
        } else {
            GaussianLikelihood::homoscedastic(sigma_u)?
        };
        lik.split_outputs(&pred)
    }

    pub fn predict_lambda(&self, theta: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        self.check(theta)?;
        match &self.lambda_net {
            Some(net) => Ok(net
                .forward(&theta[self.u_net.n_params()..], &DenseMatrix::column(x))?
                .into_vec()),
            None => Ok(x.iter().map(|&v| ReferenceFields::lambda(v)).collect()),
        }
    }

    fn f_points(ds: &PinnDataset) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let mut t = Vec::new();
        let mut x = Vec::new();
        let mut v = Vec::new();
        for &tl in &ds.meta.f_times {
            for i in 0..ds.f.len() {
                t.push(tl);
                x.push(ds.f.x[i]);
                v.push(ds.f.value[i]);
            }
        }
        (t, x, v)
    }

    fn predictions<'t>(&self, tape: &'t Tape, p: Var<'t>, ds: &PinnDataset) -> Result<ChannelPreds<'t>> {
        let f = if ds.f.is_empty() {
            None
        } else {
            let (t, x, _) = Self::f_points(ds);
            Some(self.residual_tape(tape, p, &t, &x)?)
        };
        let b = if ds.b.is_empty() {
            None
        } else {
            Some(first_column(self.u_tape(tape, p, &ds.b.t, &ds.b.x)?))
        };
        let u = if ds.u.is_empty() {
            None
        } else {
            Some(self.u_tape(tape, p, &ds.u.t, &ds.u.x)?)
        };
        let lambda = if ds.lambda.is_empty() {
            None
        } else {
            if self.lambda_net.is_none() {
                return Err(UqError::Config("λ measurements need a λ network".into()));
            }
            Some(self.lambda_tape(tape, p, &ds.lambda.x)?)
        };
        Ok(ChannelPreds { f, b, u, lambda })
    }

    /// Per-channel log-likelihood nodes in f, b, u, λ order; empty channels give 0.
    fn channel_ll_tape<'t>(&self, tape: &'t Tape, p: Var<'t>, ds: &PinnDataset) -> Result<[Var<'t>; 4]> {
        let preds = self.predictions(tape, p, ds)?;
        let zero = || tape.scalar_constant(0.0);
        let f = match preds.f {
            Some(r) => {
                let (_, _, v) = Self::f_points(ds);
                gaussian_ll(tape, r, &v, ds.sigma(Channel::F), 1.0 / ds.meta.f_times.len() as f64)
            }
            None => zero(),
        };
        let b = match preds.b {
            Some(r) => gaussian_ll(tape, r, &ds.b.value, ds.sigma(Channel::B), 1.0),
            None => zero(),
        };
        let u = match preds.u {
            Some(r) if self.is_heteroscedastic() => {
                GaussianLikelihood::heteroscedastic().log_likelihood_tape(tape, r, &ds.u.value)?
            }
            Some(r) => gaussian_ll(tape, r, &ds.u.value, ds.sigma(Channel::U), 1.0),
            None => zero(),
        };
        let lambda = match preds.lambda {
            Some(r) => gaussian_ll(tape, r, &ds.lambda.value, ds.sigma(Channel::Lambda), 1.0),
            None => zero(),
        };
        Ok([f, b, u, lambda])
    }

    /// `log p(D_f|θ) + log p(D_b|θ) + log p(D_u|θ) + log p(D_λ|θ)` and its gradient.
    pub fn log_likelihood_grad(&self, theta: &[f64], ds: &PinnDataset) -> Result<(f64, Vec<f64>)> {
        self.check(theta)?;
        if ds.is_empty() {
            return Ok((0.0, vec![0.0; theta.len()]));
        }
        grad_params(theta, |tape, p| {
            let [f, b, u, l] = self.channel_ll_tape(tape, p, ds)?;
            Ok(f + b + u + l)
        })
        .map(|(v, g)| (v, g.0))
    }

    pub fn log_likelihood(&self, theta: &[f64], ds: &PinnDataset) -> Result<f64> {
        Ok(self.channel_log_likelihoods(theta, ds)?.iter().sum())
    }

    /// Channel log-likelihoods in f, b, u, λ order.
    pub fn channel_log_likelihoods(&self, theta: &[f64], ds: &PinnDataset) -> Result<[f64; 4]> {
        self.check(theta)?;
        let tape = Tape::new();
        let p = tape.constant(DenseMatrix::column(theta));
        let parts = self.channel_ll_tape(&tape, p, ds)?;
        Ok(parts.map(|v| v.scalar()))
    }

    /// `Σ_c w_c · mean_i (pred_i − value_i)²` over the four channels (f, b, u, λ weights).
    pub fn point_loss_grad(&self, theta: &[f64], ds: &PinnDataset, weights: &LossWeights) -> Result<(f64, Vec<f64>)> {
        self.check(theta)?;
        weights.validate()?;
        if ds.is_empty() {
            return Ok((0.0, vec![0.0; theta.len()]));
        }
        grad_params(theta, |tape, p| self.point_loss_tape(tape, p, ds, weights))
            .map(|(v, g)| (v, g.0))
    }

    fn point_loss_tape<'t>(&self, tape: &'t Tape, p: Var<'t>, ds: &PinnDataset, weights: &LossWeights) -> Result<Var<'t>> {
        let preds = self.predictions(tape, p, ds)?;
        let mse = |pred: Option<Var<'t>>, values: &[f64], w: f64| -> Option<Var<'t>> {
            pred.filter(|_| w > 0.0).map(|r| {
                let r = first_column(r) - tape.constant(DenseMatrix::column(values));
                r.square().sum().scale(w / values.len() as f64)
            })
        };
        let (_, _, fv) = Self::f_points(ds);
        let terms = [
            mse(preds.f, &fv, weights.f),
            mse(preds.b, &ds.b.value, weights.b),
            mse(preds.u, &ds.u.value, weights.u),
            mse(preds.lambda, &ds.lambda.value, weights.lambda),
        ];
        Ok(terms
            .into_iter()
            .flatten()
            .fold(tape.scalar_constant(0.0), |acc, v| acc + v))
    }

    pub fn point_loss(&self, theta: &[f64], ds: &PinnDataset, weights: &LossWeights) -> Result<f64> {
        Ok(self.point_loss_grad(theta, ds, weights)?.0)
    }
}

/// Channel weights of the PINN point-estimation loss.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub f: f64,
    pub b: f64,
    pub u: f64,
    pub lambda: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { f: 1.0, b: 1.0, u: 1.0, lambda: 1.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for v in [self.f, self.b, self.u, self.lambda] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(UqError::Config(format!("loss weights must be nonnegative, got {v}")));
            }
        }
        Ok(())
    }
}

/// Which field an ensemble prediction refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PinnField {
    U,
    Lambda,
    F,
}

/// Bayesian U-PINN: network pair, four-channel data and a Gaussian prior.
#[derive(Clone, Debug)]
pub struct UPinnTarget {
    pub model: UPinn,
    pub data: PinnDataset,
    pub prior: PriorSpec,
}

impl UPinnTarget {
    pub fn new(model: UPinn, data: PinnDataset, prior: PriorSpec) -> Result<Self> {
        data.validate()?;
        prior.validate()?;
        if !data.lambda.is_empty() && model.lambda_net.is_none() {
            return Err(UqError::Config("λ measurements need a λ network".into()));
        }
        Ok(Self { model, data, prior })
    }

    fn batch_data(&self, batch: Option<&[usize]>) -> Result<std::borrow::Cow<'_, PinnDataset>> {
        Ok(match batch {
            None => std::borrow::Cow::Borrowed(&self.data),
            Some(idx) => std::borrow::Cow::Owned(self.data.subset(idx)?),
        })
    }

    /// Predictive summary of `field` at `(t_i, x_i)` across ensemble members.
    ///
    /// Aleatoric parts: u uses the channel σ (or the learned head), λ and f use their channel σ.
    pub fn summarize(&self, ensemble: &PosteriorEnsemble, field: PinnField, t: &[f64], x: &[f64]) -> Result<PredictiveSummary> {
        if ensemble.is_empty() {
            return Err(UqError::Empty("posterior ensemble"));
        }
        let sigma_u = self.data.sigma(Channel::U);
        let per: Vec<(Vec<f64>, Vec<f64>)> = ensemble
            .members
            .par_iter()
            .map(|theta| match field {
                PinnField::U => self.model.predict_u(theta, t, x, sigma_u),
                PinnField::Lambda => {
                    let s = self.data.sigma(Channel::Lambda);
                    Ok((self.model.predict_lambda(theta, x)?, vec![s * s; x.len()]))
                }
                PinnField::F => {
                    let s = self.data.sigma(Channel::F);
                    Ok((self.model.residual(theta, t, x)?, vec![s * s; x.len()]))
                }
            })
            .collect::<Result<_>>()?;
        let (m, n) = (per.len(), x.len());
        let samples = DenseMatrix::from_fn(m, n, |j, i| per[j].0[i]);
        let noise = DenseMatrix::from_fn(m, n, |j, i| per[j].1[i]);
        PredictiveSummary::from_samples(samples, Aleatoric::PerSample(&noise))
    }
}

impl BayesTarget for UPinnTarget {
    fn dim(&self) -> usize {
        self.model.n_params()
    }

    fn n_data(&self) -> usize {
        self.data.len()
    }

    fn log_likelihood_grad(&self, theta: &[f64], batch: Option<&[usize]>) -> Result<(f64, Vec<f64>)> {
        let ds = self.batch_data(batch)?;
        self.model.log_likelihood_grad(theta, &ds)
    }

    fn log_prior_grad(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        self.prior.log_prior_grad(theta)
    }

    fn prior_variance(&self) -> f64 {
        self.prior.variance()
    }

    fn log_likelihood(&self, theta: &[f64]) -> Result<f64> {
        self.model.log_likelihood(theta, &self.data)
    }

    fn dropout_mask(&self, rate: f64, rng: &mut dyn RngCore) -> Option<Vec<f64>> {
        Some(self.model.dropout_mask(rate, rng))
    }
}

impl LinearizedTarget for UPinnTarget {
    fn dim(&self) -> usize {
        self.model.n_params()
    }

    fn prior_variance(&self) -> f64 {
        self.prior.variance()
    }

    /// One row per predicted observation; each f measurement contributes one
    /// row per time level with its precision divided by the number of levels.
    fn observation_jacobian(&self, theta: &[f64]) -> Result<(DenseMatrix, Vec<f64>)> {
        self.model.check(theta)?;
        let ds = &self.data;
        let tape = Tape::new();
        let p = tape.variable(DenseMatrix::column(theta));
        let preds = self.model.predictions(&tape, p, ds)?;
        let k = theta.len();
        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut prec = Vec::new();
        let mut push_rows = |v: Var<'_>, precisions: Vec<f64>| {
            let (n, cols) = v.shape();
            for (i, pi) in precisions.into_iter().enumerate().take(n) {
                let mut seed = DenseMatrix::zeros(n, cols);
                seed.set(i, 0, 1.0);
                rows.push(tape.gradients_seeded(v, seed).wrt_or_zeros(p).into_vec());
                prec.push(pi);
            }
        };
        let inv = |s: f64| 1.0 / (s * s);
        if let Some(r) = preds.f {
            let n = r.shape().0;
            let l = ds.meta.f_times.len() as f64;
            push_rows(r, vec![inv(ds.sigma(Channel::F)) / l; n]);
        }
        if let Some(r) = preds.b {
            push_rows(r, vec![inv(ds.sigma(Channel::B)); ds.b.len()]);
        }
        if let Some(r) = preds.u {
            let p_u = if self.model.is_heteroscedastic() {
                let (_, var) = GaussianLikelihood::heteroscedastic().split_outputs(&r.value())?;
                var.into_iter().map(|v| 1.0 / v).collect()
            } else {
                vec![inv(ds.sigma(Channel::U)); ds.u.len()]
            };
            push_rows(r, p_u);
        }
        if let Some(r) = preds.lambda {
            push_rows(r, vec![inv(ds.sigma(Channel::Lambda)); ds.lambda.len()]);
        }
        let n = rows.len();
        Ok((DenseMatrix::from_fn(n, k, |i, j| rows[i][j]), prec))
    }
}

/// Weighted-MSE training objective for point estimates (ensemble members, MAP warm starts).
pub struct PinnLoss<'a> {
    pub target: &'a UPinnTarget,
    pub weights: LossWeights,
}

impl PointObjective for PinnLoss<'_> {
    fn dim(&self) -> usize {
        self.target.model.n_params()
    }

    fn n_data(&self) -> usize {
        self.target.data.len()
    }

    fn loss_grad(&self, theta: &[f64], batch: Option<&[usize]>) -> Result<(f64, Vec<f64>)> {
        let ds = self.target.batch_data(batch)?;
        self.target.model.point_loss_grad(theta, &ds, &self.weights)
    }

    fn dropout_mask(&self, rate: f64, rng: &mut dyn RngCore) -> Option<Vec<f64>> {
        Some(self.target.model.dropout_mask(rate, rng))
    }
}

/// Rows of a channel whose points lie on the given x-interval.
pub fn restrict_x(data: &ChannelData, lo: f64, hi: f64) -> ChannelData {
    let idx: Vec<usize> = (0..data.len()).filter(|&i| (lo..=hi).contains(&data.x[i])).collect();
    data.subset(&idx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlp::Activation;
    use crate::pinn::problem::ChannelNoise;
    use crate::rng::{stream, Purpose};

    fn random_pinn(lambda: LambdaRole, hidden: &[usize], seed: u64) -> (UPinn, Vec<f64>) {
        let mut prob = PdeProblem::steep();
        prob.lambda = lambda;
        let mut m = UPinn::for_problem(&prob, false);
        m.u_net = MlpModel::new(Architecture::tanh(2, hidden, 1));
        if m.lambda_net.is_some() {
            m.lambda_net = Some(MlpModel::new(Architecture::tanh(1, hidden, 1)));
        }
        let mut rng = stream(seed, Purpose::Init);
        let theta = m.init_params(&mut rng).0;
        (m, theta)
    }

    /// Single-layer identity-activation net with W = [w_t; w_x], b, so u = w_t t + w_x x + b.
    fn affine_u(w_t: f64, w_x: f64, b: f64) -> (UPinn, Vec<f64>) {
        let mut arch = Architecture::tanh(2, &[], 1);
        arch.activation = Activation::Identity;
        let m = UPinn {
            u_net: MlpModel::new(arch),
            lambda_net: None,
            diffusion: 0.01,
        };
        (m, vec![w_t, w_x, b])
    }

    #[test]
    fn zero_network_has_zero_residual() {
        let (m, theta) = random_pinn(LambdaRole::Network, &[5, 5], 1);
        let zeros = vec![0.0; theta.len()];
        let r = m.residual(&zeros, &[0.1, 0.5, 0.9], &[-0.7, 0.0, 0.3]).unwrap();
        assert!(r.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn residual_of_time_linear_solution() {
        // u = t: ∂_t u = 1, ∂²_x u = 0, so f = 1 + λ(x) t³
        let (m, theta) = affine_u(1.0, 0.0, 0.0);
        let t = [0.0, 0.3, 0.8, 1.0];
        let x = [-0.9, -0.2, 0.4, 1.0];
        let r = m.residual(&theta, &t, &x).unwrap();
        for i in 0..4 {
            let want = 1.0 + ReferenceFields::lambda(x[i]) * t[i].powi(3);
            assert!((r[i] - want).abs() < 1e-14, "{} vs {}", r[i], want);
        }
    }

    #[test]
    fn residual_of_manufactured_solutions() {
        // u = x², λ ≡ 0: residual = −2D
        for x in [-0.5, 0.25, 0.75] {
            let u = JetValue::variable(x) * JetValue::variable(x);
            assert!((residual_from_jet(u, 0.0, 0.0, 0.01) + 0.02).abs() < 1e-15);
        }
        // u = t: residual = 1 + λ(x) t³
        for (t, x) in [(0.2, -0.4), (0.9, 0.6)] {
            let lam = ReferenceFields::lambda(x);
            let want = 1.0 + lam * t * t * t;
            assert!((residual_from_jet(JetValue::constant(t), 1.0, lam, 0.01) - want).abs() < 1e-15);
        }
    }

    #[test]
    fn pointwise_and_batched_residuals_agree() {
        let (m, theta) = random_pinn(LambdaRole::Network, &[7, 7], 12);
        let t = [0.1, 0.45, 0.95];
        let x = [-0.95, 0.05, 0.7];
        let r = m.residual(&theta, &t, &x).unwrap();
        for i in 0..3 {
            let p = m.residual_point(&theta, t[i], x[i]).unwrap();
            assert!((r[i] - p).abs() < 1e-12 * p.abs().max(1.0));
        }
    }

    #[test]
    fn residual_matches_finite_difference_stencils() {
        let (m, theta) = random_pinn(LambdaRole::Network, &[8, 8], 3);
        let ku = m.u_net.n_params();
        let t = [0.2, 0.55, 0.9];
        let x = [-0.6, 0.1, 0.8];
        let r = m.residual(&theta, &t, &x).unwrap();
        let lam = m.predict_lambda(&theta, &x).unwrap();
        let h = 1e-4;
        let u = |tt: f64, xx: f64| m.u_net.forward_point(&theta[..ku], &[tt, xx]).unwrap()[0];
        for i in 0..3 {
            let ut = (u(t[i] + h, x[i]) - u(t[i] - h, x[i])) / (2.0 * h);
            let uxx = (u(t[i], x[i] + h) - 2.0 * u(t[i], x[i]) + u(t[i], x[i] - h)) / (h * h);
            let fd = ut - m.diffusion * uxx + lam[i] * u(t[i], x[i]).powi(3);
            assert!((r[i] - fd).abs() <= 1e-4 * fd.abs().max(1.0), "{} vs {}", r[i], fd);
        }
    }

    fn tiny_dataset(sigma: f64) -> PinnDataset {
        let mut ds = PinnDataset::empty(ChannelNoise::uniform(sigma), vec![0.0, 0.5]);
        ds.f.push(0.0, -0.5, 0.3);
        ds.f.push(0.0, 0.4, -0.1);
        ds.b.push(0.0, 0.2, 0.6);
        ds.b.push(0.5, -1.0, 1.0);
        ds.u.push(0.3, 0.1, 0.4);
        ds.u.push(0.7, -0.3, 0.9);
        ds.u.push(1.0, 0.6, 0.2);
        ds.lambda.push(0.0, 0.25, 1.1);
        ds
    }

    #[test]
    fn empty_dataset_has_zero_likelihood() {
        let (m, theta) = random_pinn(LambdaRole::Network, &[4], 2);
        let ds = PinnDataset::empty(ChannelNoise::uniform(0.05), vec![0.0]);
        assert_eq!(m.log_likelihood(&theta, &ds).unwrap(), 0.0);
        assert_eq!(m.log_likelihood_grad(&theta, &ds).unwrap().0, 0.0);
    }

    #[test]
    fn single_exact_u_point_log_likelihood() {
        let (m, theta) = random_pinn(LambdaRole::Network, &[4], 2);
        let pred = m.predict_u(&theta, &[0.4], &[0.2], 0.05).unwrap().0[0];
        let mut ds = PinnDataset::empty(ChannelNoise::uniform(0.05), vec![0.0]);
        ds.u.push(0.4, 0.2, pred);
        let want = (1.0 / (0.05 * (2.0 * std::f64::consts::PI).sqrt())).ln();
        assert!((m.log_likelihood(&theta, &ds).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn log_likelihood_decomposes_over_channels() {
        let (m, theta) = random_pinn(LambdaRole::Network, &[6, 6], 4);
        let ds = tiny_dataset(0.05);
        let s2 = 0.05f64 * 0.05;
        let ln = |v: f64, mu: f64| -0.5 * ((v - mu).powi(2) / s2 + LN_2PI + s2.ln());
        let ku = m.u_net.n_params();
        let u = |t: f64, x: f64| m.u_net.forward_point(&theta[..ku], &[t, x]).unwrap()[0];
        let lam = |x: f64| m.predict_lambda(&theta, &[x]).unwrap()[0];
        let mut f = 0.0;
        for &tl in &ds.meta.f_times {
            for i in 0..ds.f.len() {
                let r = m.residual(&theta, &[tl], &[ds.f.x[i]]).unwrap()[0];
                f += ln(ds.f.value[i], r) / 2.0;
            }
        }
        let b: f64 = (0..ds.b.len()).map(|i| ln(ds.b.value[i], u(ds.b.t[i], ds.b.x[i]))).sum();
        let uu: f64 = (0..ds.u.len()).map(|i| ln(ds.u.value[i], u(ds.u.t[i], ds.u.x[i]))).sum();
        let l: f64 = (0..ds.lambda.len()).map(|i| ln(ds.lambda.value[i], lam(ds.lambda.x[i]))).sum();
        let parts = m.channel_log_likelihoods(&theta, &ds).unwrap();
        for (got, want) in parts.iter().zip([f, b, uu, l]) {
            assert!((got - want).abs() < 1e-12 * want.abs().max(1.0), "{got} vs {want}");
        }
        let total = m.log_likelihood_grad(&theta, &ds).unwrap().0;
        assert!((total - (f + b + uu + l)).abs() < 1e-12 * total.abs());
    }

    #[test]
    fn point_loss_matches_hand_sum() {
        let (m, theta) = random_pinn(LambdaRole::Network, &[6], 5);
        let ds = tiny_dataset(0.05);
        let ku = m.u_net.n_params();
        let u = |t: f64, x: f64| m.u_net.forward_point(&theta[..ku], &[t, x]).unwrap()[0];
        let mut f = 0.0;
        for &tl in &ds.meta.f_times {
            for i in 0..ds.f.len() {
                f += (m.residual(&theta, &[tl], &[ds.f.x[i]]).unwrap()[0] - ds.f.value[i]).powi(2);
            }
        }
        f /= (ds.f.len() * ds.meta.f_times.len()) as f64;
        let mean_sq = |c: &ChannelData, pred: &dyn Fn(usize) -> f64| {
            (0..c.len()).map(|i| (pred(i) - c.value[i]).powi(2)).sum::<f64>() / c.len() as f64
        };
        let b = mean_sq(&ds.b, &|i| u(ds.b.t[i], ds.b.x[i]));
        let uu = mean_sq(&ds.u, &|i| u(ds.u.t[i], ds.u.x[i]));
        let l = mean_sq(&ds.lambda, &|i| m.predict_lambda(&theta, &[ds.lambda.x[i]]).unwrap()[0]);
        let got = m.point_loss(&theta, &ds, &LossWeights::default()).unwrap();
        assert!((got - (f + b + uu + l)).abs() < 1e-12 * got.abs().max(1.0));
        let none = LossWeights { f: 0.0, b: 0.0, u: 0.0, lambda: 0.0 };
        assert_eq!(m.point_loss(&theta, &ds, &none).unwrap(), 0.0);
    }

    #[test]
    fn perfect_fit_has_zero_point_loss() {
        let (m, theta) = random_pinn(LambdaRole::Network, &[6], 6);
        let mut ds = tiny_dataset(0.05);
        ds.meta.f_times = vec![0.3];
        for i in 0..ds.f.len() {
            ds.f.value[i] = m.residual(&theta, &[0.3], &[ds.f.x[i]]).unwrap()[0];
        }
        for c in [Channel::B, Channel::U] {
            let d = ds.channel(c).clone();
            let (mu, _) = m.predict_u(&theta, &d.t, &d.x, 0.05).unwrap();
            ds.channel_mut(c).value = mu;
        }
        ds.lambda.value = m.predict_lambda(&theta, &ds.lambda.x).unwrap();
        assert!(m.point_loss(&theta, &ds, &LossWeights::default()).unwrap() < 1e-28);
    }

    #[test]
    fn likelihood_gradient_matches_finite_differences() {
        let (m, theta) = random_pinn(LambdaRole::Network, &[4], 7);
        let ds = tiny_dataset(0.3);
        let (_, g) = m.log_likelihood_grad(&theta, &ds).unwrap();
        let h = 1e-6;
        for k in (0..theta.len()).step_by(3) {
            let mut a = theta.clone();
            let mut b = theta.clone();
            a[k] += h;
            b[k] -= h;
            let fd = (m.log_likelihood(&a, &ds).unwrap() - m.log_likelihood(&b, &ds).unwrap()) / (2.0 * h);
            assert!((g[k] - fd).abs() < 1e-5 * fd.abs().max(1.0), "k={k}: {} vs {fd}", g[k]);
        }
    }

    #[test]
    fn batched_likelihood_selects_channel_rows() {
        let (m, theta) = random_pinn(LambdaRole::Network, &[4], 8);
        let target = UPinnTarget::new(m, tiny_dataset(0.05), PriorSpec::standard_normal()).unwrap();
        let all: Vec<usize> = (0..target.n_data()).collect();
        let full = target.log_likelihood_grad(&theta, None).unwrap().0;
        let batched = target.log_likelihood_grad(&theta, Some(&all)).unwrap().0;
        assert!((full - batched).abs() < 1e-12 * full.abs());
    }

    #[test]
    fn observation_jacobian_rows_match_ggn_oracle() {
        // J^T P J from the per-row Jacobian equals the Gauss-Newton matrix of the
        // log-likelihood built from finite differences of the stacked predictions.
        let (m, theta) = random_pinn(LambdaRole::Network, &[3], 9);
        let target = UPinnTarget::new(m, tiny_dataset(0.1), PriorSpec::standard_normal()).unwrap();
        let (j, prec) = target.observation_jacobian(&theta).unwrap();
        assert_eq!(j.rows(), 2 * 2 + 2 + 3 + 1);
        assert!((prec[0] - 50.0).abs() < 1e-12);
        let stacked = |th: &[f64]| {
            let ds = &target.data;
            let mut out = Vec::new();
            for &tl in &ds.meta.f_times {
                out.extend(target.model.residual(th, &vec![tl; ds.f.len()], &ds.f.x).unwrap());
            }
            out.extend(target.model.predict_u(th, &ds.b.t, &ds.b.x, 0.1).unwrap().0);
            out.extend(target.model.predict_u(th, &ds.u.t, &ds.u.x, 0.1).unwrap().0);
            out.extend(target.model.predict_lambda(th, &ds.lambda.x).unwrap());
            out
        };
        let h = 1e-6;
        for k in (0..theta.len()).step_by(5) {
            let mut a = theta.clone();
            let mut b = theta.clone();
            a[k] += h;
            b[k] -= h;
            let (pa, pb) = (stacked(&a), stacked(&b));
            for i in 0..j.rows() {
                let fd = (pa[i] - pb[i]) / (2.0 * h);
                assert!((j.get(i, k) - fd).abs() < 1e-6 * fd.abs().max(1.0));
            }
        }
    }

    #[test]
    fn summary_decomposition_holds() {
        let (m, theta) = random_pinn(LambdaRole::Network, &[4], 10);
        let target = UPinnTarget::new(m, tiny_dataset(0.05), PriorSpec::standard_normal()).unwrap();
        let mut rng = stream(10, Purpose::Init);
        let members: Vec<Vec<f64>> = (0..5)
            .map(|_| {
                let mut th = target.model.init_params(&mut rng).0;
                th.iter_mut().zip(&theta).for_each(|(a, b)| *a = 0.1 * *a + b);
                th
            })
            .collect();
        let e = PosteriorEnsemble::new(members, "test", serde_json::Value::Null, 0);
        for field in [PinnField::U, PinnField::Lambda, PinnField::F] {
            let s = target.summarize(&e, field, &[0.5, 1.0], &[0.2, 0.3]).unwrap();
            assert!(s.decomposition_holds());
            assert!(s.epistemic.iter().all(|&v| v > 0.0), "{field:?} {:?}", s.epistemic);
        }
    }

    #[test]
    fn lambda_data_without_lambda_network_rejected() {
        let (m, _) = random_pinn(LambdaRole::Reference, &[4], 11);
        assert!(UPinnTarget::new(m, tiny_dataset(0.05), PriorSpec::standard_normal()).is_err());
    }
}
