//! Function-approximation benchmarks: a 1D discontinuous target with
//! Gaussian or heteroscedastic Student-t noise.

use crate::data::{LabeledDataset, NoiseFamily, NoiseMeta};
use crate::error::{Result, UqError};
use crate::probmodel::student_t_noise;
use crate::rng::{indexed_stream, Purpose};
use crate::tensor::DenseMatrix;
use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FunctionId {
    /// Oscillatory on `x < 0`, shifted and faster-oscillating on `x ≥ 0`; jump of 1 at 0.
    Discontinuous,
    /// `sin(πx)`, for smoke runs.
    Sine,
}

impl FunctionId {
    pub fn eval(self, x: f64) -> f64 {
        match self {
            FunctionId::Discontinuous => {
                if x < 0.0 {
                    0.5 * (2.0 * PI * x).cos() - 0.5
                } else {
                    1.0 + 0.5 * (4.0 * PI * x).sin()
                }
            }
            FunctionId::Sine => (PI * x).sin(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FunctionProblem {
    pub function: FunctionId,
    pub noise: NoiseFamily,
    pub domain: (f64, f64),
    pub n_train: usize,
    pub n_validation: usize,
    pub n_calibration: usize,
    /// Test inputs form a uniform grid over the domain.
    pub n_test: usize,
    /// Out-of-distribution test interval (uniform grid); `None` disables the split.
    pub ood_domain: Option<(f64, f64)>,
    pub n_ood: usize,
    pub seed: u64,
}

impl Default for FunctionProblem {
    fn default() -> Self {
        Self {
            function: FunctionId::Discontinuous,
            noise: NoiseFamily::Gaussian { sigma: 0.1 },
            domain: (-1.0, 1.0),
            n_train: 32,
            n_validation: 32,
            n_calibration: 64,
            n_test: 200,
            ood_domain: Some((1.0, 1.5)),
            n_ood: 50,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FunctionSplits {
    pub train: LabeledDataset,
    pub validation: LabeledDataset,
    pub calibration: LabeledDataset,
    pub test: LabeledDataset,
    pub ood: Option<LabeledDataset>,
}

impl FunctionSplits {
    pub fn named(&self) -> Vec<(&'static str, &LabeledDataset)> {
        let mut out = vec![
            ("train", &self.train),
            ("validation", &self.validation),
            ("calibration", &self.calibration),
            ("test", &self.test),
        ];
        if let Some(o) = &self.ood {
            out.push(("ood", o));
        }
        out
    }
}

impl FunctionProblem {
    /// Student-t noise `0.5·|x|·t_5` on the discontinuous function.
    pub fn student_t() -> Self {
        Self {
            noise: NoiseFamily::StudentT { scale: 0.5, dof: 5.0 },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (a, b) = self.domain;
        if !(a < b) {
            return Err(UqError::Config(format!("empty domain ({a}, {b})")));
        }
        if self.n_train == 0 || self.n_test < 2 {
            return Err(UqError::Config("need at least one training point and two test points".into()));
        }
        match self.noise {
            NoiseFamily::Gaussian { sigma } if !(sigma >= 0.0) => Err(UqError::Config(format!("noise sigma must be nonnegative, got {sigma}"))),
            NoiseFamily::StudentT { scale, dof } if !(scale >= 0.0 && dof > 0.0) => {
                Err(UqError::Config("Student-t noise needs scale ≥ 0 and dof > 0".into()))
            }
            _ => Ok(()),
        }
    }

    /// Homoscedastic noise standard deviation, when the noise is Gaussian.
    pub fn gaussian_sigma(&self) -> Option<f64> {
        match self.noise {
            NoiseFamily::Gaussian { sigma } => Some(sigma),
            NoiseFamily::None => Some(0.0),
            NoiseFamily::StudentT { .. } => None,
        }
    }

    fn noise_at(&self, x: f64, rng: &mut dyn RngCore) -> f64 {
        match self.noise {
            NoiseFamily::None => 0.0,
            NoiseFamily::Gaussian { sigma } => sigma * rng.sample::<f64, _>(StandardNormal),
            NoiseFamily::StudentT { scale, dof } => student_t_noise(x, scale, dof, rng),
        }
    }

    fn labeled(&self, xs: Vec<f64>, split: u64) -> Result<LabeledDataset> {
        let mut rng = indexed_stream(self.seed, Purpose::Noise, split);
        let u: Vec<f64> = xs.iter().map(|&x| self.function.eval(x) + self.noise_at(x, &mut rng)).collect();
        let mut d = LabeledDataset::new(DenseMatrix::column(&xs), u)?;
        d.meta = NoiseMeta {
            noise: self.noise,
            seed: Some(self.seed),
            standardization: None,
        };
        Ok(d)
    }

    fn uniform_inputs(&self, n: usize, split: u64) -> Vec<f64> {
        let (a, b) = self.domain;
        let mut rng = indexed_stream(self.seed, Purpose::Data, split);
        let mut xs: Vec<f64> = (0..n).map(|_| rng.random_range(a..b)).collect();
        xs.sort_by(f64::total_cmp);
        xs
    }

    pub fn generate(&self) -> Result<FunctionSplits> {
        self.validate()?;
        let grid = |(a, b): (f64, f64), n: usize| -> Vec<f64> { (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect() };
        Ok(FunctionSplits {
            train: self.labeled(self.uniform_inputs(self.n_train, 0), 0)?,
            validation: self.labeled(self.uniform_inputs(self.n_validation, 1), 1)?,
            calibration: self.labeled(self.uniform_inputs(self.n_calibration, 2), 2)?,
            test: self.labeled(grid(self.domain, self.n_test), 3)?,
            ood: match self.ood_domain {
                Some(d) if self.n_ood >= 2 => Some(self.labeled(grid(d, self.n_ood), 4)?),
                _ => None,
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn discontinuity_at_zero() {
        let f = FunctionId::Discontinuous;
        assert!((f.eval(-1e-12) - 0.0).abs() < 1e-9);
        assert_eq!(f.eval(0.0), 1.0);
    }

    #[test]
    fn noise_free_data_equals_function() {
        let p = FunctionProblem {
            noise: NoiseFamily::None,
            ..FunctionProblem::default()
        };
        let s = p.generate().unwrap();
        for (_, d) in s.named() {
            for i in 0..d.len() {
                assert_eq!(d.u[i], p.function.eval(d.x.get(i, 0)));
            }
        }
    }

    #[test]
    fn generation_is_deterministic_and_seed_dependent() {
        let p = FunctionProblem::default();
        assert_eq!(p.generate().unwrap(), p.generate().unwrap());
        let q = FunctionProblem { seed: 1, ..p.clone() };
        assert_ne!(p.generate().unwrap().train, q.generate().unwrap().train);
    }

    #[test]
    fn student_t_noise_vanishes_at_origin() {
        let p = FunctionProblem {
            domain: (0.0, 1.0),
            n_test: 11,
            ..FunctionProblem::student_t()
        };
        let s = p.generate().unwrap();
        assert_eq!(s.test.u[0], p.function.eval(0.0));
    }
}
