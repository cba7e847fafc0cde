use crate::data::fmt_f64;
use crate::error::{shape_err, Result, UqError};
use crate::model::DiffModel;
use crate::posterior::PosteriorEnsemble;
use crate::probmodel::GaussianLikelihood;
use crate::tensor::DenseMatrix;
use rayon::prelude::*;
use std::path::Path;

fn sorted_column(m: &DenseMatrix, i: usize) -> Vec<f64> {
    let mut c = m.col_to_vec(i);
    c.sort_by(f64::total_cmp);
    c
}

/// Per-point predictive moments with `total = aleatoric + epistemic`.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictiveSummary {
    pub mean: Vec<f64>,
    pub aleatoric: Vec<f64>,
    pub epistemic: Vec<f64>,
    pub total: Vec<f64>,
    /// Raw `M × n` predictions when the method is sample-based.
    pub samples: Option<DenseMatrix>,
}

/// How the aleatoric variance of each prediction is known.
#[derive(Clone, Copy, Debug)]
pub enum Aleatoric<'a> {
    Homoscedastic(f64),
    /// `M × n`, one variance per member and point.
    PerSample(&'a DenseMatrix),
    PerPoint(&'a [f64]),
}

impl PredictiveSummary {
    /// Mean and epistemic variance of the samples (population form), plus aleatoric.
    pub fn from_samples(samples: DenseMatrix, aleatoric: Aleatoric<'_>) -> Result<Self> {
        let (m, n) = samples.shape();
        if m == 0 {
            return Err(UqError::Empty("prediction samples"));
        }
        // columns are summed in sorted order so member order cannot change the result
        let mut mean = vec![0.0; n];
        let mut epistemic = vec![0.0; n];
        for i in 0..n {
            let col = sorted_column(&samples, i);
            let mu = col.iter().sum::<f64>() / m as f64;
            mean[i] = mu;
            epistemic[i] = col.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / m as f64;
        }
        let aleatoric = match aleatoric {
            Aleatoric::Homoscedastic(v) => vec![v; n],
            Aleatoric::PerPoint(v) => {
                if v.len() != n {
                    return Err(shape_err("aleatoric variances", n, v.len()));
                }
                v.to_vec()
            }
            Aleatoric::PerSample(v) => {
                if v.shape() != (m, n) {
                    return Err(shape_err("aleatoric samples", format!("{m}x{n}"), format!("{:?}", v.shape())));
                }
                (0..n).map(|i| sorted_column(v, i).iter().sum::<f64>() / m as f64).collect()
            }
        };
        let mut s = Self::from_moments(mean, aleatoric, epistemic)?;
        s.samples = Some(samples);
        Ok(s)
    }

    pub fn from_moments(mean: Vec<f64>, aleatoric: Vec<f64>, epistemic: Vec<f64>) -> Result<Self> {
        let n = mean.len();
        if aleatoric.len() != n || epistemic.len() != n {
            return Err(shape_err("predictive moments", n, aleatoric.len().max(epistemic.len())));
        }
        for (i, (&a, &e)) in aleatoric.iter().zip(&epistemic).enumerate() {
            if !(a >= 0.0 && e >= 0.0) {
                return Err(UqError::NonPositiveVariance {
                    index: i,
                    value: a.min(e),
                });
            }
        }
        let total = aleatoric.iter().zip(&epistemic).map(|(a, e)| a + e).collect();
        Ok(Self {
            mean,
            aleatoric,
            epistemic,
            total,
            samples: None,
        })
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn std_total(&self) -> Vec<f64> {
        self.total.iter().map(|v| v.sqrt()).collect()
    }

    /// Bitwise check of `total = aleatoric + epistemic`.
    pub fn decomposition_holds(&self) -> bool {
        self.total
            .iter()
            .zip(self.aleatoric.iter().zip(&self.epistemic))
            .all(|(t, (a, e))| *t == a + e)
    }

    /// Rows `x, mean, sigma_a, sigma_e, sigma_total` (multi-dimensional inputs use `x0, x1, ...`).
    pub fn write_csv(&self, x: &DenseMatrix, path: &Path) -> Result<()> {
        let names: Vec<String> = if x.cols() == 1 {
            vec!["x".into()]
        } else {
            (0..x.cols()).map(|j| format!("x{j}")).collect()
        };
        let names: Vec<&str> = names.iter().map(String::as_str).collect();
        self.write_csv_named(&names, x, path)
    }

    /// As [`Self::write_csv`] with explicit input column names.
    pub fn write_csv_named(&self, names: &[&str], x: &DenseMatrix, path: &Path) -> Result<()> {
        if x.rows() != self.len() {
            return Err(shape_err("prediction inputs", self.len(), x.rows()));
        }
        if names.len() != x.cols() {
            return Err(shape_err("input column names", x.cols(), names.len()));
        }
        let mut w = csv::Writer::from_path(path)?;
        let mut header: Vec<String> = names.iter().map(|n| n.to_string()).collect();
        header.extend(["mean", "sigma_a", "sigma_e", "sigma_total"].map(String::from));
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec: Vec<String> = x.row(i).iter().map(|v| fmt_f64(*v)).collect();
            rec.push(fmt_f64(self.mean[i]));
            rec.push(fmt_f64(self.aleatoric[i].sqrt()));
            rec.push(fmt_f64(self.epistemic[i].sqrt()));
            rec.push(fmt_f64(self.total[i].sqrt()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Pushes every ensemble member through the model. Learned homoscedastic noise
/// (per-member σ_u²) and heteroscedastic heads are averaged over members.
pub fn predict_ensemble<M: DiffModel + ?Sized>(
    model: &M,
    likelihood: &GaussianLikelihood,
    ensemble: &PosteriorEnsemble,
    x: &DenseMatrix,
) -> Result<PredictiveSummary> {
    if ensemble.is_empty() {
        return Err(UqError::Empty("posterior ensemble"));
    }
    let per: Vec<(Vec<f64>, Vec<f64>)> = ensemble
        .members
        .par_iter()
        .map(|theta| {
            let pred = model.forward(theta, x)?;
            likelihood.split_outputs(&pred)
        })
        .collect::<Result<_>>()?;
    let (m, n) = (per.len(), x.rows());
    let samples = DenseMatrix::from_fn(m, n, |j, i| per[j].0[i]);
    let noise = match (&ensemble.noise_variances, likelihood.is_heteroscedastic()) {
        (Some(nv), false) => {
            if nv.len() != m {
                return Err(shape_err("member noise variances", m, nv.len()));
            }
            DenseMatrix::from_fn(m, n, |j, _| nv[j])
        }
        _ => DenseMatrix::from_fn(m, n, |j, i| per[j].1[i]),
    };
    PredictiveSummary::from_samples(samples, Aleatoric::PerSample(&noise))
}
