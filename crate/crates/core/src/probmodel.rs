//! Likelihoods, priors and (tempered) log-posteriors.

use crate::autodiff::{grad_params, Tape, Var};
use crate::data::LabeledDataset;
use crate::error::{shape_err, Result, UqError};
use crate::model::DiffModel;
use crate::tensor::DenseMatrix;
use rand::{Rng, RngCore};
use rand_distr::{Distribution, StudentT};
use serde::{Deserialize, Serialize};

pub const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Smallest aleatoric variance a heteroscedastic head can produce.
pub const DEFAULT_VARIANCE_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum NoiseModel {
    Homoscedastic { sigma: f64 },
    /// Output column 1 carries the raw variance, mapped through `softplus(·) + floor`.
    Heteroscedastic { floor: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianLikelihood {
    pub noise: NoiseModel,
    /// Whether σ_u is inferred (Gibbs) rather than known.
    #[serde(default)]
    pub learned: bool,
}

pub fn gaussian_log_density(u: f64, mean: f64, var: f64) -> f64 {
    let r = u - mean;
    -0.5 * (LN_2PI + var.ln() + r * r / var)
}

pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

impl GaussianLikelihood {
    pub fn homoscedastic(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(UqError::Config(format!("noise stdev must be positive, got {sigma}")));
        }
        Ok(Self {
            noise: NoiseModel::Homoscedastic { sigma },
            learned: false,
        })
    }

    pub fn heteroscedastic() -> Self {
        Self {
            noise: NoiseModel::Heteroscedastic {
                floor: DEFAULT_VARIANCE_FLOOR,
            },
            learned: false,
        }
    }

    pub fn is_heteroscedastic(&self) -> bool {
        matches!(self.noise, NoiseModel::Heteroscedastic { .. })
    }

    /// Number of network outputs the likelihood consumes.
    pub fn outputs(&self) -> usize {
        if self.is_heteroscedastic() {
            2
        } else {
            1
        }
    }

    pub fn sigma(&self) -> Option<f64> {
        match self.noise {
            NoiseModel::Homoscedastic { sigma } => Some(sigma),
            NoiseModel::Heteroscedastic { .. } => None,
        }
    }

    pub fn set_sigma(&mut self, sigma: f64) {
        if let NoiseModel::Homoscedastic { sigma: s } = &mut self.noise {
            *s = sigma;
        }
    }

    /// Splits raw network outputs into `(mean, aleatoric variance)` per row.
    pub fn split_outputs(&self, pred: &DenseMatrix) -> Result<(Vec<f64>, Vec<f64>)> {
        if pred.cols() < self.outputs() {
            return Err(shape_err("likelihood outputs", self.outputs(), pred.cols()));
        }
        let mean = pred.col_to_vec(0);
        let var = match self.noise {
            NoiseModel::Homoscedastic { sigma } => vec![sigma * sigma; pred.rows()],
            NoiseModel::Heteroscedastic { floor } => {
                let mut v = Vec::with_capacity(pred.rows());
                for i in 0..pred.rows() {
                    let s = softplus(pred.get(i, 1)) + floor;
                    if !(s > 0.0 && s.is_finite()) {
                        return Err(UqError::NonPositiveVariance { index: i, value: s });
                    }
                    v.push(s);
                }
                v
            }
        };
        Ok((mean, var))
    }

    /// `Σ_i log N(u_i | mean_i, var_i)` from raw network outputs.
    pub fn log_likelihood_values(&self, pred: &DenseMatrix, u: &[f64]) -> Result<f64> {
        if pred.rows() != u.len() {
            return Err(shape_err("likelihood targets", pred.rows(), u.len()));
        }
        let (mean, var) = self.split_outputs(pred)?;
        Ok(u.iter()
            .zip(mean.iter().zip(&var))
            .map(|(&ui, (&m, &v))| gaussian_log_density(ui, m, v))
            .sum())
    }

    /// Same quantity recorded on a tape.
    pub fn log_likelihood_tape<'t>(&self, tape: &'t Tape, pred: Var<'t>, u: &[f64]) -> Result<Var<'t>> {
        let (rows, cols) = pred.shape();
        if rows != u.len() {
            return Err(shape_err("likelihood targets", rows, u.len()));
        }
        if cols < self.outputs() {
            return Err(shape_err("likelihood outputs", self.outputs(), cols));
        }
        let n = rows as f64;
        if rows == 0 {
            return Ok(tape.scalar_constant(0.0));
        }
        let mean = if cols == 1 { pred } else { pred.column(0) };
        let r = mean - tape.constant(DenseMatrix::column(u));
        Ok(match self.noise {
            NoiseModel::Homoscedastic { sigma } => {
                let var = sigma * sigma;
                r.square()
                    .sum()
                    .scale(-0.5 / var)
                    .add_const(-0.5 * n * (LN_2PI + var.ln()))
            }
            NoiseModel::Heteroscedastic { floor } => {
                let var = pred.column(1).softplus().add_const(floor);
                (r.square() / var + var.ln())
                    .sum()
                    .scale(-0.5)
                    .add_const(-0.5 * n * LN_2PI)
            }
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PriorSpec {
    IidGaussian {
        variance: f64,
    },
    /// Inverse-gamma hyperprior `IG(shape, scale)` on σ_θ²; `variance` is the current value.
    Hierarchical {
        shape: f64,
        scale: f64,
        variance: f64,
    },
}

impl Default for PriorSpec {
    fn default() -> Self {
        PriorSpec::IidGaussian { variance: 1.0 }
    }
}

impl PriorSpec {
    pub fn standard_normal() -> Self {
        Self::default()
    }

    pub fn hierarchical(shape: f64, scale: f64) -> Self {
        PriorSpec::Hierarchical {
            shape,
            scale,
            variance: 1.0,
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            PriorSpec::IidGaussian { variance } | PriorSpec::Hierarchical { variance, .. } => variance,
        }
    }

    pub fn set_variance(&mut self, v: f64) {
        match self {
            PriorSpec::IidGaussian { variance } | PriorSpec::Hierarchical { variance, .. } => *variance = v,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            PriorSpec::IidGaussian { variance } => variance > 0.0,
            PriorSpec::Hierarchical {
                shape,
                scale,
                variance,
            } => shape > 0.0 && scale > 0.0 && variance > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(UqError::Config(format!("invalid prior {self:?}")))
        }
    }

    /// iid Gaussian log-density over all components at the current variance.
    pub fn log_prior(&self, theta: &[f64]) -> f64 {
        let var = self.variance();
        let k = theta.len() as f64;
        let ss: f64 = theta.iter().map(|v| v * v).sum();
        -0.5 * k * (LN_2PI + var.ln()) - 0.5 * ss / var
    }

    pub fn log_prior_grad(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        let var = self.variance();
        (self.log_prior(theta), theta.iter().map(|v| -v / var).collect())
    }
}

/// A differentiable log-density over θ.
pub trait LogDensity: Sync {
    fn dim(&self) -> usize;
    fn log_density_grad(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)>;

    fn log_density(&self, theta: &[f64]) -> Result<f64> {
        Ok(self.log_density_grad(theta)?.0)
    }
}

/// Likelihood and prior pieces of a Bayesian model, kept separate so that
/// samplers can rescale minibatch likelihoods and apply tempering.
pub trait BayesTarget: Sync {
    fn dim(&self) -> usize;
    fn n_data(&self) -> usize;
    /// `log p(D_S | θ)` and its gradient; `None` means the full dataset.
    fn log_likelihood_grad(&self, theta: &[f64], batch: Option<&[usize]>) -> Result<(f64, Vec<f64>)>;
    fn log_prior_grad(&self, theta: &[f64]) -> (f64, Vec<f64>);
    /// Current iid Gaussian prior variance σ_θ².
    fn prior_variance(&self) -> f64;

    fn log_likelihood(&self, theta: &[f64]) -> Result<f64> {
        Ok(self.log_likelihood_grad(theta, None)?.0)
    }

    /// Multiplicative dropout mask over θ; `None` when the model has no units to drop.
    fn dropout_mask(&self, _rate: f64, _rng: &mut dyn RngCore) -> Option<Vec<f64>> {
        None
    }
}

impl<T: BayesTarget + ?Sized> BayesTarget for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn n_data(&self) -> usize {
        (**self).n_data()
    }
    fn log_likelihood_grad(&self, theta: &[f64], batch: Option<&[usize]>) -> Result<(f64, Vec<f64>)> {
        (**self).log_likelihood_grad(theta, batch)
    }
    fn log_prior_grad(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        (**self).log_prior_grad(theta)
    }
    fn prior_variance(&self) -> f64 {
        (**self).prior_variance()
    }
    fn log_likelihood(&self, theta: &[f64]) -> Result<f64> {
        (**self).log_likelihood(theta)
    }
    fn dropout_mask(&self, rate: f64, rng: &mut dyn RngCore) -> Option<Vec<f64>> {
        (**self).dropout_mask(rate, rng)
    }
}

/// Targets whose prior and noise variances can be resampled by Gibbs steps.
pub trait HyperTarget: BayesTarget {
    fn set_prior_variance(&mut self, v: f64);
    /// `(Σ_i (u_i − u_θ(x_i))², N)`
    fn residual_sum_sq(&self, theta: &[f64]) -> Result<(f64, usize)>;
    fn set_noise_variance(&mut self, v: f64);
}

/// `(log p(D|θ) + log p(θ)) / τ`
#[derive(Clone, Debug)]
pub struct LogPosterior<T> {
    pub target: T,
    pub temperature: f64,
}

impl<T: BayesTarget> LogPosterior<T> {
    pub fn new(target: T, temperature: f64) -> Result<Self> {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(UqError::Config(format!("temperature must be positive, got {temperature}")));
        }
        Ok(Self { target, temperature })
    }

    pub fn untempered(target: T) -> Self {
        Self {
            target,
            temperature: 1.0,
        }
    }
}

impl<T: BayesTarget> LogDensity for LogPosterior<T> {
    fn dim(&self) -> usize {
        self.target.dim()
    }

    fn log_density_grad(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (ll, mut g) = self.target.log_likelihood_grad(theta, None)?;
        let (lp, gp) = self.target.log_prior_grad(theta);
        let inv = 1.0 / self.temperature;
        for (a, b) in g.iter_mut().zip(&gp) {
            *a = (*a + b) * inv;
        }
        Ok(((ll + lp) * inv, g))
    }
}

/// Gaussian-likelihood regression with a network (or linear) mean.
#[derive(Clone, Debug)]
pub struct RegressionTarget<M> {
    pub model: M,
    pub data: LabeledDataset,
    pub likelihood: GaussianLikelihood,
    pub prior: PriorSpec,
}

impl<M: DiffModel> RegressionTarget<M> {
    pub fn new(model: M, data: LabeledDataset, likelihood: GaussianLikelihood, prior: PriorSpec) -> Result<Self> {
        if data.in_dim() != model.in_dim() {
            return Err(shape_err("dataset inputs", model.in_dim(), data.in_dim()));
        }
        if model.out_dim() < likelihood.outputs() {
            return Err(shape_err("model outputs", likelihood.outputs(), model.out_dim()));
        }
        prior.validate()?;
        Ok(Self {
            model,
            data,
            likelihood,
            prior,
        })
    }

    /// Per-point mean and aleatoric variance under θ.
    pub fn predict(&self, theta: &[f64], x: &DenseMatrix) -> Result<(Vec<f64>, Vec<f64>)> {
        let pred = self.model.forward(theta, x)?;
        self.likelihood.split_outputs(&pred)
    }

    /// Plain (non-differentiated) log-likelihood of an arbitrary dataset.
    pub fn log_likelihood_of(&self, theta: &[f64], data: &LabeledDataset) -> Result<f64> {
        let pred = self.model.forward(theta, &data.x)?;
        self.likelihood.log_likelihood_values(&pred, &data.u)
    }

    pub fn mse_grad(&self, theta: &[f64], batch: Option<&[usize]>) -> Result<(f64, Vec<f64>)> {
        let (x, u) = self.batch(batch);
        let n = u.len().max(1) as f64;
        grad_params(theta, |tape, p| {
            let pred = self.model.forward_tape(tape, p, &x)?;
            let mean = if pred.shape().1 == 1 { pred } else { pred.column(0) };
            let r = mean - tape.constant(DenseMatrix::column(&u));
            Ok(r.square().sum().scale(1.0 / n))
        })
        .map(|(v, g)| (v, g.0))
    }

    fn batch(&self, batch: Option<&[usize]>) -> (DenseMatrix, Vec<f64>) {
        match batch {
            None => (self.data.x.clone(), self.data.u.clone()),
            Some(idx) => {
                let s = self.data.subset(idx);
                (s.x, s.u)
            }
        }
    }
}

impl<M: DiffModel> BayesTarget for RegressionTarget<M> {
    fn dim(&self) -> usize {
        self.model.n_params()
    }

    fn n_data(&self) -> usize {
        self.data.len()
    }

    fn log_likelihood_grad(&self, theta: &[f64], batch: Option<&[usize]>) -> Result<(f64, Vec<f64>)> {
        let (x, u) = self.batch(batch);
        if u.is_empty() {
            return Ok((0.0, vec![0.0; self.dim()]));
        }
        // grad_params rejects non-finite values; a log-likelihood of -inf is a legitimate error here
        grad_params(theta, |tape, p| {
            let pred = self.model.forward_tape(tape, p, &x)?;
            self.likelihood.log_likelihood_tape(tape, pred, &u)
        })
        .map(|(v, g)| (v, g.0))
    }

    fn log_prior_grad(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        self.prior.log_prior_grad(theta)
    }

    fn prior_variance(&self) -> f64 {
        self.prior.variance()
    }

    fn log_likelihood(&self, theta: &[f64]) -> Result<f64> {
        self.log_likelihood_of(theta, &self.data)
    }

    fn dropout_mask(&self, rate: f64, rng: &mut dyn RngCore) -> Option<Vec<f64>> {
        Some(self.model.dropout_mask(rate, rng))
    }
}

impl<M: DiffModel> HyperTarget for RegressionTarget<M> {
    fn set_prior_variance(&mut self, v: f64) {
        self.prior.set_variance(v);
    }

    fn residual_sum_sq(&self, theta: &[f64]) -> Result<(f64, usize)> {
        let pred = self.model.forward(theta, &self.data.x)?;
        let ss = (0..self.data.len())
            .map(|i| (self.data.u[i] - pred.get(i, 0)).powi(2))
            .sum();
        Ok((ss, self.data.len()))
    }

    fn set_noise_variance(&mut self, v: f64) {
        self.likelihood.set_sigma(v.sqrt());
    }
}

/// Heteroscedastic Student-t noise `scale·|x|·t_ν`.
pub fn student_t_noise<R: Rng + ?Sized>(x: f64, scale: f64, dof: f64, rng: &mut R) -> f64 {
    let t = StudentT::new(dof).expect("degrees of freedom must be positive");
    scale * x.abs() * t.sample(rng)
}

/// Default benchmark noise `0.5·|x|·t_5`.
pub fn generate_student_t_noise<R: Rng + ?Sized>(x: f64, rng: &mut R) -> f64 {
    student_t_noise(x, 0.5, 5.0, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlp::{Architecture, MlpModel};
    use crate::model::LinearModel;
    use crate::rng::{stream, Purpose};
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn naive_normal_pdf(u: f64, m: f64, s: f64) -> f64 {
        (-(u - m) * (u - m) / (2.0 * s * s)).exp() / (s * (2.0 * std::f64::consts::PI).sqrt())
    }

    fn linear_target(x: &[f64], u: &[f64], sigma: f64) -> RegressionTarget<LinearModel> {
        RegressionTarget::new(
            LinearModel::new(1),
            LabeledDataset::from_1d(x, u).unwrap(),
            GaussianLikelihood::homoscedastic(sigma).unwrap(),
            PriorSpec::standard_normal(),
        )
        .unwrap()
    }

    #[test]
    fn log_likelihood_at_mean() {
        let t = linear_target(&[2.0], &[1.0], 1.0);
        let ll = t.log_likelihood(&[0.5]).unwrap();
        assert!((ll - (1.0 / (2.0 * std::f64::consts::PI).sqrt()).ln()).abs() < 1e-15);
        assert!((ll + 0.9189385332046727).abs() < 1e-12);

        let t = linear_target(&[2.0], &[1.0], 0.05);
        let ll = t.log_likelihood(&[0.5]).unwrap();
        let want = (1.0 / (0.05 * (2.0 * std::f64::consts::PI).sqrt())).ln();
        assert!((ll - want).abs() < 1e-12);
    }

    #[test]
    fn log_likelihood_matches_density_sum_oracle() {
        let mut rng = stream(11, Purpose::Data);
        let model = MlpModel::new(Architecture::tanh(1, &[10], 1));
        let theta = model.init_params(&mut rng);
        let x: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
        let u: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
        let t = RegressionTarget::new(
            model.clone(),
            LabeledDataset::from_1d(&x, &u).unwrap(),
            GaussianLikelihood::homoscedastic(0.3).unwrap(),
            PriorSpec::standard_normal(),
        )
        .unwrap();
        let oracle: f64 = x
            .iter()
            .zip(&u)
            .map(|(&xi, &ui)| naive_normal_pdf(ui, model.forward_point(&theta, &[xi]).unwrap()[0], 0.3).ln())
            .sum();
        assert!((t.log_likelihood(&theta).unwrap() - oracle).abs() < 1e-12);
        let (taped, _) = t.log_likelihood_grad(&theta, None).unwrap();
        assert!((taped - oracle).abs() < 1e-11);
    }

    #[test]
    fn heteroscedastic_tape_matches_plain_and_is_positive() {
        let mut rng = stream(5, Purpose::Data);
        let model = MlpModel::new(Architecture::tanh(1, &[6], 2));
        let x: Vec<f64> = (0..7).map(|i| i as f64 / 3.0 - 1.0).collect();
        let u: Vec<f64> = x.iter().map(|v| v.sin()).collect();
        let t = RegressionTarget::new(
            model.clone(),
            LabeledDataset::from_1d(&x, &u).unwrap(),
            GaussianLikelihood::heteroscedastic(),
            PriorSpec::standard_normal(),
        )
        .unwrap();
        for _ in 0..5 {
            let theta: Vec<f64> = model.init_params(&mut rng).iter().map(|v| 5.0 * v).collect();
            let plain = t.log_likelihood(&theta).unwrap();
            let (taped, _) = t.log_likelihood_grad(&theta, None).unwrap();
            assert!((plain - taped).abs() < 1e-9 * plain.abs().max(1.0));
            let (_, var) = t.predict(&theta, &t.data.x).unwrap();
            assert!(var.iter().all(|&v| v > 0.0));
        }
    }

    #[test]
    fn log_prior_values() {
        let p = PriorSpec::standard_normal();
        assert!((p.log_prior(&[0.0, 0.0]) + (2.0 * std::f64::consts::PI).ln()).abs() < 1e-15);

        let mut rng = stream(2, Purpose::Init);
        let theta: Vec<f64> = (0..5151).map(|_| rng.sample(StandardNormal)).collect();
        let oracle: f64 = theta.iter().map(|&v| naive_normal_pdf(v, 0.0, 1.0).ln()).sum();
        assert!((p.log_prior(&theta) - oracle).abs() < 1e-10 * oracle.abs().max(1.0) + 1e-10);

        let wide = PriorSpec::IidGaussian { variance: 1e12 };
        let diff = wide.log_prior(&[0.0, 1.0]) - wide.log_prior(&[3.0, -2.0]);
        assert!(diff.abs() < 1e-11);
    }

    #[test]
    fn tempering_is_linear() {
        let t = linear_target(&[0.3, -0.2, 1.1], &[0.1, 0.0, 0.4], 0.2);
        let theta = [0.37];
        let base = LogPosterior::untempered(t.clone()).log_density(&theta).unwrap();
        let direct = t.log_likelihood_grad(&theta, None).unwrap().0 + t.log_prior_grad(&theta).0;
        assert_eq!(base, direct);
        let plain = t.log_likelihood(&theta).unwrap() + t.log_prior_grad(&theta).0;
        assert!((base - plain).abs() < 1e-14 * plain.abs());
        let cold = LogPosterior::new(t.clone(), 0.5).unwrap().log_density(&theta).unwrap();
        assert_eq!(cold, 2.0 * base);
        let hot = LogPosterior::new(t, 2.0).unwrap().log_density(&theta).unwrap();
        assert_eq!(hot, 0.5 * base);
        assert!(LogPosterior::new(linear_target(&[1.0], &[1.0], 1.0), 0.0).is_err());
    }

    #[test]
    fn map_gradient_is_mse_plus_l2() {
        // −∇ log posterior = ∇MSE·N/(2σ²) + θ/σ_θ²
        let t = linear_target(&[0.3, -0.2, 1.1, 0.8], &[0.1, 0.0, 0.4, -0.3], 0.2);
        let theta = [0.9];
        let (_, gpost) = LogPosterior::untempered(t.clone()).log_density_grad(&theta).unwrap();
        let (_, gmse) = t.mse_grad(&theta, None).unwrap();
        let n = 4.0;
        let want = gmse[0] * n / (2.0 * 0.04) + theta[0];
        assert!((-gpost[0] - want).abs() < 1e-10);
    }

    #[test]
    fn mle_argmin_matches_mse_argmin() {
        let t = linear_target(&[0.3, -0.2, 1.1, 0.8], &[0.1, 0.0, 0.4, -0.3], 0.2);
        let grid: Vec<f64> = (0..401).map(|i| -1.0 + i as f64 * 0.005).collect();
        let best_ll = grid
            .iter()
            .copied()
            .max_by(|a, b| t.log_likelihood(&[*a]).unwrap().total_cmp(&t.log_likelihood(&[*b]).unwrap()))
            .unwrap();
        let best_mse = grid
            .iter()
            .copied()
            .min_by(|a, b| t.mse_grad(&[*a], None).unwrap().0.total_cmp(&t.mse_grad(&[*b], None).unwrap().0))
            .unwrap();
        assert_eq!(best_ll, best_mse);
    }

    #[test]
    fn student_t_noise_moments() {
        let mut rng = stream(3, Purpose::Noise);
        assert_eq!(generate_student_t_noise(0.0, &mut rng), 0.0);
        let n = 1_000_000;
        let draws: Vec<f64> = (0..n).map(|_| generate_student_t_noise(1.0, &mut rng)).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let want = 0.25 * 5.0 / 3.0;
        assert!((var - want).abs() / want < 0.02, "var {var}");
        assert!(mean.abs() < 3.0 * (var / n as f64).sqrt(), "mean {mean}");
    }
}
