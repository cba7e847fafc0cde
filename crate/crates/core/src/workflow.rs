//! Every inference method behind one interface: a serializable method
//! specification, a fitted-posterior snapshot, and prediction into a
//! [`PredictiveSummary`] for regression networks and PINNs alike.

use crate::approx::{laplace_train, mcd_ensemble, mcd_train, mfvi_fit, LaplaceConfig, LaplaceFit, LinearizedTarget, McdConfig, MfviConfig};
use crate::data::LabeledDataset;
use crate::ensembles::{deep_ensemble_fit, snapshot_ensemble_fit, swag_fit, swag_sample, CyclicalConfig, DeepEnsembleConfig};
use crate::error::{Result, UqError};
use crate::eval::{mpl, predict_ensemble, PredictiveSummary};
use crate::gp::{gp_fit, gp_grid_search, GpGrid, GpModel, SeKernel};
use crate::mcmc::{hmc_gibbs_sample, hmc_sample, langevin_sample, GibbsConfig, HmcConfig, LangevinConfig};
use crate::mlp::{Architecture, MlpModel};
use crate::model::DiffModel;
use crate::optim::{train, NegLogPosterior, TrainConfig};
use crate::pinn::{PinnField, UPinnTarget};
use crate::posterior::PosteriorEnsemble;
use crate::probmodel::{BayesTarget, GaussianLikelihood, LogPosterior, PriorSpec, RegressionTarget};
use crate::rng::{stream, Purpose};
use crate::tensor::DenseMatrix;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HmcMethod {
    pub sampler: HmcConfig,
    pub temperature: f64,
    /// Conjugate updates of σ_θ² and/or σ_u² between HMC proposals.
    pub gibbs: Option<GibbsConfig>,
    /// MAP optimization run before sampling, starting the chain at the optimum.
    pub warm_start: Option<TrainConfig>,
}

impl Default for HmcMethod {
    fn default() -> Self {
        Self {
            sampler: HmcConfig::default(),
            temperature: 1.0,
            gibbs: None,
            warm_start: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SwagMethod {
    pub schedule: CyclicalConfig,
    pub rank: usize,
    pub samples: usize,
}

impl Default for SwagMethod {
    fn default() -> Self {
        Self {
            schedule: CyclicalConfig::swag_defaults(),
            rank: 5,
            samples: 50,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GpMethod {
    /// Fixed hyperparameters; when absent the grid is searched on the validation split.
    pub kernel: Option<SeKernel>,
    pub noise_variance: Option<f64>,
    pub grid: GpGrid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "id", rename_all = "snake_case")]
pub enum MethodSpec {
    Hmc(HmcMethod),
    Ld(LangevinConfig),
    Mfvi(MfviConfig),
    Mcd(McdConfig),
    La(LaplaceConfig),
    Dens(DeepEnsembleConfig),
    Sens(CyclicalConfig),
    Swag(SwagMethod),
    Gp(GpMethod),
}

impl MethodSpec {
    pub const IDS: [&'static str; 9] = ["hmc", "ld", "mfvi", "mcd", "la", "dens", "sens", "swag", "gp"];

    /// Default hyperparameters for a method id.
    pub fn default_for(id: &str) -> Option<Self> {
        Some(match id {
            "hmc" => MethodSpec::Hmc(HmcMethod::default()),
            "ld" => MethodSpec::Ld(LangevinConfig::default()),
            "mfvi" => MethodSpec::Mfvi(MfviConfig::default()),
            "mcd" => MethodSpec::Mcd(McdConfig::default()),
            "la" => MethodSpec::La(LaplaceConfig::default()),
            "dens" => MethodSpec::Dens(DeepEnsembleConfig::default()),
            "sens" => MethodSpec::Sens(CyclicalConfig::snapshot_defaults()),
            "swag" => MethodSpec::Swag(SwagMethod::default()),
            "gp" => MethodSpec::Gp(GpMethod::default()),
            _ => return None,
        })
    }

    pub fn id(&self) -> &'static str {
        match self {
            MethodSpec::Hmc(_) => "hmc",
            MethodSpec::Ld(_) => "ld",
            MethodSpec::Mfvi(_) => "mfvi",
            MethodSpec::Mcd(_) => "mcd",
            MethodSpec::La(_) => "la",
            MethodSpec::Dens(_) => "dens",
            MethodSpec::Sens(_) => "sens",
            MethodSpec::Swag(_) => "swag",
            MethodSpec::Gp(_) => "gp",
        }
    }
}

/// A trained posterior in whichever form its method produces.
#[derive(Clone, Debug)]
pub enum Fitted {
    Ensemble(PosteriorEnsemble),
    /// Linearized predictions use `fit`; `samples` serve models without a linearized summary.
    Laplace {
        fit: LaplaceFit,
        samples: Option<PosteriorEnsemble>,
    },
    Gp(GpModel),
}

#[derive(Serialize, Deserialize)]
struct FittedManifest {
    kind: String,
    method: String,
}

impl Fitted {
    pub fn method(&self) -> String {
        match self {
            Fitted::Ensemble(e) => e.provenance.method.clone(),
            Fitted::Laplace { .. } => "la".into(),
            Fitted::Gp(_) => "gp".into(),
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let kind = match self {
            Fitted::Ensemble(e) => {
                e.save(&dir.join("ensemble"))?;
                "ensemble"
            }
            Fitted::Laplace { fit, samples } => {
                fit.save(&dir.join("laplace"))?;
                if let Some(s) = samples {
                    s.save(&dir.join("ensemble"))?;
                }
                "laplace"
            }
            Fitted::Gp(g) => {
                g.save(&dir.join("gp"))?;
                "gp"
            }
        };
        let m = FittedManifest {
            kind: kind.into(),
            method: self.method(),
        };
        std::fs::write(dir.join("snapshot.json"), serde_json::to_string_pretty(&m)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let m: FittedManifest = serde_json::from_str(&std::fs::read_to_string(dir.join("snapshot.json"))?)?;
        match m.kind.as_str() {
            "ensemble" => Ok(Fitted::Ensemble(PosteriorEnsemble::load(&dir.join("ensemble"))?)),
            "laplace" => {
                let samples = if dir.join("ensemble").is_dir() {
                    Some(PosteriorEnsemble::load(&dir.join("ensemble"))?)
                } else {
                    None
                };
                Ok(Fitted::Laplace {
                    fit: LaplaceFit::load(&dir.join("laplace"))?,
                    samples,
                })
            }
            "gp" => Ok(Fitted::Gp(GpModel::load(&dir.join("gp"))?)),
            other => Err(UqError::Config(format!("unknown snapshot kind `{other}`"))),
        }
    }
}

/// Problem-specific signals used by some methods during fitting.
#[derive(Default)]
pub struct FitHooks<'a> {
    /// Validation loss of a parameter vector (lower is better); drives MFVI early stopping.
    pub validation_loss: Option<&'a dyn Fn(&[f64]) -> Result<f64>>,
    /// Validation score of a Laplace fit (higher is better); drives the prior-variance search.
    pub laplace_score: Option<&'a dyn Fn(&LaplaceFit) -> Result<f64>>,
}

fn map_point<T: BayesTarget>(target: &T, theta0: &[f64], cfg: &TrainConfig, rng: &mut dyn RngCore) -> Result<Vec<f64>> {
    let obj = NegLogPosterior {
        target,
        include_prior: true,
    };
    Ok(train(&obj, theta0, cfg, rng, |_, _| Ok(true))?.theta)
}

/// Every parametric method for a target with Gaussian observations. GP and
/// Gibbs-coupled HMC are problem-specific and rejected here.
pub fn fit_parametric<T, I>(target: &T, init: I, spec: &MethodSpec, seed: u64, hooks: &FitHooks<'_>, laplace_samples: bool) -> Result<Fitted>
where
    T: BayesTarget + LinearizedTarget,
    I: Fn(&mut dyn RngCore) -> Vec<f64> + Sync,
{
    let theta0 = init(&mut stream(seed, Purpose::Init));
    let mut batch_rng = stream(seed, Purpose::Minibatch);
    let mut sampler_rng = stream(seed, Purpose::Sampler);
    let mut predict_rng = stream(seed, Purpose::Predict);
    let ens = match spec {
        MethodSpec::Hmc(h) => {
            if h.gibbs.is_some() {
                return Err(UqError::Config("Gibbs hyperparameter updates need a regression target".into()));
            }
            let start = match &h.warm_start {
                Some(cfg) => map_point(target, &theta0, cfg, &mut batch_rng)?,
                None => theta0,
            };
            let post = LogPosterior::new(target, h.temperature)?;
            let mut ens = hmc_sample(&post, &start, &h.sampler, seed, &mut sampler_rng)?;
            ens.provenance.hyperparameters = serde_json::to_value(h)?;
            ens
        }
        MethodSpec::Ld(cfg) => langevin_sample(target, &theta0, cfg, seed, &mut sampler_rng)?,
        MethodSpec::Mfvi(cfg) => {
            let val = hooks.validation_loss.map(|f| move |q: &crate::approx::MeanFieldPosterior| f(&q.mu));
            let val_ref: Option<&dyn Fn(&crate::approx::MeanFieldPosterior) -> Result<f64>> = val.as_ref().map(|f| f as _);
            let out = mfvi_fit(target, theta0, cfg, &mut batch_rng, val_ref)?;
            let mut ens = out
                .posterior
                .sample_ensemble(cfg.samples, seed, &mut predict_rng, serde_json::to_value(cfg)?);
            if out.stopped_early {
                ens.diagnostics.warnings.push(format!("early stop; best iterate at step {}", out.best_step));
            }
            ens
        }
        MethodSpec::Mcd(cfg) => {
            let out = mcd_train(target, &theta0, cfg, &mut batch_rng)?;
            let mut drop_rng = stream(seed, Purpose::Dropout);
            let mut ens = mcd_ensemble(target, &out.theta, cfg.rate, cfg.samples, seed, &mut drop_rng)?;
            ens.provenance.hyperparameters = serde_json::to_value(cfg)?;
            ens
        }
        MethodSpec::La(cfg) => {
            let (mut fit, _) = laplace_train(target, &theta0, cfg, &mut batch_rng)?;
            if let (false, Some(score)) = (cfg.prior_grid.is_empty(), hooks.laplace_score) {
                let (best, s) = fit.select_prior_variance(&cfg.prior_grid, score)?;
                log::info!("laplace: prior variance {} selected (score {s:.4})", best.prior_variance);
                fit = best;
            }
            let samples = laplace_samples.then(|| fit.sample_ensemble(cfg.samples, seed, &mut predict_rng));
            return Ok(Fitted::Laplace { fit, samples });
        }
        MethodSpec::Dens(cfg) => {
            let obj = NegLogPosterior {
                target,
                include_prior: false,
            };
            deep_ensemble_fit(&obj, init, cfg, seed)?
        }
        MethodSpec::Sens(cfg) => {
            let obj = NegLogPosterior {
                target,
                include_prior: true,
            };
            snapshot_ensemble_fit(&obj, &theta0, cfg, seed, &mut batch_rng)?
        }
        MethodSpec::Swag(cfg) => {
            let obj = NegLogPosterior {
                target,
                include_prior: true,
            };
            let fit = swag_fit(&obj, &theta0, &cfg.schedule, cfg.rank, &mut batch_rng)?;
            let mut ens = swag_sample(&fit, cfg.samples, seed, &mut predict_rng);
            ens.provenance.hyperparameters = serde_json::to_value(cfg)?;
            ens
        }
        MethodSpec::Gp(_) => return Err(UqError::Config("the GP baseline only applies to function regression".into())),
    };
    Ok(Fitted::Ensemble(ens))
}

/// Network and likelihood for function regression.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkSpec {
    pub hidden: Vec<usize>,
    /// A second output predicts the log-scale of an input-dependent noise variance.
    pub heteroscedastic: bool,
    /// Likelihood σ_u of a homoscedastic network; defaults to the data-generating noise scale.
    pub noise_sigma: Option<f64>,
    pub prior: PriorSpec,
}

impl Default for NetworkSpec {
    fn default() -> Self {
        Self {
            hidden: vec![50, 50],
            heteroscedastic: false,
            noise_sigma: None,
            prior: PriorSpec::standard_normal(),
        }
    }
}

impl NetworkSpec {
    /// Regression target on `data`; `data_sigma` is the generating noise scale when known.
    pub fn target(&self, data: LabeledDataset, data_sigma: Option<f64>) -> Result<RegressionTarget<MlpModel>> {
        let (out, likelihood) = if self.heteroscedastic {
            (2, GaussianLikelihood::heteroscedastic())
        } else {
            let sigma = self.noise_sigma.or(data_sigma).ok_or_else(|| {
                UqError::Config("a homoscedastic network needs `noise_sigma` when the data noise is not Gaussian".into())
            })?;
            (1, GaussianLikelihood::homoscedastic(sigma)?)
        };
        let model = MlpModel::new(Architecture::tanh(data.in_dim(), &self.hidden, out));
        RegressionTarget::new(model, data, likelihood, self.prior)
    }
}

/// Fits `spec` on a regression target; `validation` feeds MFVI early stopping,
/// the Laplace prior search and the GP grid search.
pub fn fit_regression(target: &RegressionTarget<MlpModel>, validation: Option<&LabeledDataset>, spec: &MethodSpec, seed: u64) -> Result<Fitted> {
    let val_loss = |theta: &[f64]| -> Result<f64> {
        let v = validation.expect("validation hook installed only with data");
        Ok(-target.log_likelihood_of(theta, v)? / v.len().max(1) as f64)
    };
    let la_score = |fit: &LaplaceFit| -> Result<f64> {
        let v = validation.expect("validation hook installed only with data");
        mpl(&fit.summarize(&target.model, &target.likelihood, &v.x)?, &v.u)
    };
    let has_val = validation.is_some_and(|v| !v.is_empty());
    let hooks = FitHooks {
        validation_loss: has_val.then_some(&val_loss as &dyn Fn(&[f64]) -> Result<f64>),
        laplace_score: has_val.then_some(&la_score as &dyn Fn(&LaplaceFit) -> Result<f64>),
    };
    let init = |rng: &mut dyn RngCore| target.model.init_params(rng).0;
    match spec {
        MethodSpec::Hmc(h) if h.gibbs.is_some() => {
            let gibbs = h.gibbs.as_ref().expect("checked above");
            let mut t = target.clone();
            let mut start = init(&mut stream(seed, Purpose::Init));
            if let Some(cfg) = &h.warm_start {
                start = map_point(&t, &start, cfg, &mut stream(seed, Purpose::Minibatch))?;
            }
            let mut ens = hmc_gibbs_sample(&mut t, h.temperature, &start, &h.sampler, gibbs, seed, &mut stream(seed, Purpose::Sampler))?;
            ens.provenance.hyperparameters["sampler"] = serde_json::to_value(&h.sampler)?;
            Ok(Fitted::Ensemble(ens))
        }
        MethodSpec::Gp(g) => {
            let d = &target.data;
            let model = match (g.kernel, g.noise_variance) {
                (Some(k), Some(nv)) => gp_fit(&d.x, &d.u, k, nv)?,
                _ => {
                    let v = validation
                        .filter(|v| !v.is_empty())
                        .ok_or_else(|| UqError::Config("GP grid search needs a validation split".into()))?;
                    gp_grid_search(&d.x, &d.u, &v.x, &v.u, &g.grid)?.0
                }
            };
            Ok(Fitted::Gp(model))
        }
        _ => fit_parametric(target, init, spec, seed, &hooks, false),
    }
}

pub fn summarize_regression(target: &RegressionTarget<MlpModel>, fitted: &Fitted, x: &DenseMatrix) -> Result<PredictiveSummary> {
    match fitted {
        Fitted::Ensemble(e) => predict_ensemble(&target.model, &target.likelihood, e, x),
        Fitted::Laplace { fit, .. } => fit.summarize(&target.model, &target.likelihood, x),
        Fitted::Gp(g) => g.summarize(x),
    }
}

pub fn fit_pinn(target: &UPinnTarget, spec: &MethodSpec, seed: u64) -> Result<Fitted> {
    let init = |rng: &mut dyn RngCore| target.model.init_params(rng).0;
    fit_parametric(target, init, spec, seed, &FitHooks::default(), true)
}

/// PINN predictions of `field` at `(t, x)`; Laplace fits predict through their posterior samples.
pub fn summarize_pinn(target: &UPinnTarget, fitted: &Fitted, field: PinnField, t: &[f64], x: &[f64]) -> Result<PredictiveSummary> {
    match fitted {
        Fitted::Ensemble(e) => target.summarize(e, field, t, x),
        Fitted::Laplace { samples: Some(e), .. } => target.summarize(e, field, t, x),
        Fitted::Laplace { samples: None, .. } => Err(UqError::Config("PINN Laplace snapshot carries no posterior samples".into())),
        Fitted::Gp(_) => Err(UqError::Config("a GP snapshot cannot predict PINN fields".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmarks::FunctionProblem;

    #[test]
    fn every_id_round_trips_through_toml() {
        for id in MethodSpec::IDS {
            let spec = MethodSpec::default_for(id).unwrap();
            assert_eq!(spec.id(), id);
            let text = toml::to_string(&spec).unwrap();
            let back: MethodSpec = toml::from_str(&text).unwrap();
            assert_eq!(back, spec, "{id}");
        }
        assert!(MethodSpec::default_for("bogus").is_none());
    }

    #[test]
    fn partial_tables_fill_defaults() {
        let spec: MethodSpec = toml::from_str("id = \"hmc\"\n[sampler]\nsamples = 7\n").unwrap();
        let MethodSpec::Hmc(h) = spec else { panic!() };
        assert_eq!(h.sampler.samples, 7);
        assert_eq!(h.sampler.step_size, 0.1);
        assert_eq!(h.sampler.leapfrog_steps, 50);
        assert_eq!(h.sampler.burn_in, 2000);
        let MethodSpec::Dens(d) = toml::from_str("id = \"dens\"\n").unwrap() else { panic!() };
        assert_eq!((d.members, d.train.weight_decay), (10, 5e-4));
    }

    #[test]
    fn snapshot_round_trip_preserves_predictions() {
        let p = FunctionProblem {
            n_train: 12,
            n_validation: 8,
            ..FunctionProblem::default()
        };
        let s = p.generate().unwrap();
        let net = NetworkSpec {
            hidden: vec![8],
            ..NetworkSpec::default()
        };
        let target = net.target(s.train.clone(), p.gaussian_sigma()).unwrap();
        let specs = [
            MethodSpec::La(LaplaceConfig {
                map: TrainConfig::adam(1e-2, 200),
                samples: 10,
                ..LaplaceConfig::default()
            }),
            MethodSpec::Gp(GpMethod::default()),
            MethodSpec::Ld(LangevinConfig {
                burn_in: 10,
                samples: 5,
                ..LangevinConfig::default()
            }),
        ];
        for spec in specs {
            let fitted = fit_regression(&target, Some(&s.validation), &spec, 3).unwrap();
            let dir = tempfile::tempdir().unwrap();
            fitted.save(dir.path()).unwrap();
            let back = Fitted::load(dir.path()).unwrap();
            let a = summarize_regression(&target, &fitted, &s.test.x).unwrap();
            let b = summarize_regression(&target, &back, &s.test.x).unwrap();
            assert_eq!(a.mean, b.mean, "{}", spec.id());
            for (x, y) in a.total.iter().zip(&b.total) {
                assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0), "{}: {x} vs {y}", spec.id());
            }
        }
    }

    #[test]
    fn student_t_data_needs_explicit_sigma_for_homoscedastic_net() {
        let s = FunctionProblem::student_t().generate().unwrap();
        assert!(NetworkSpec::default().target(s.train.clone(), None).is_err());
        let het = NetworkSpec {
            heteroscedastic: true,
            ..NetworkSpec::default()
        };
        assert_eq!(het.target(s.train, None).unwrap().model.out_dim(), 2);
    }

    #[test]
    fn gibbs_hmc_rejected_for_generic_targets() {
        let p = FunctionProblem {
            n_train: 4,
            ..FunctionProblem::default()
        };
        let s = p.generate().unwrap();
        let target = NetworkSpec::default().target(s.train, Some(0.1)).unwrap();
        let spec = MethodSpec::Hmc(HmcMethod {
            gibbs: Some(GibbsConfig::default()),
            ..HmcMethod::default()
        });
        let init = |rng: &mut dyn RngCore| target.model.init_params(rng).0;
        assert!(fit_parametric(&target, init, &spec, 0, &FitHooks::default(), false).is_err());
    }
}
