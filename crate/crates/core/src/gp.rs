//! Exact Gaussian-process regression with a squared-exponential kernel.

use crate::error::{shape_err, Result, UqError};
use crate::eval::{mpl, PredictiveSummary};
use crate::tensor::DenseMatrix;
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const JITTER_LADDER: [f64; 7] = [1e-12, 1e-11, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6];

/// `k(x, x') = s² exp(−‖x − x'‖² / (2ℓ²))`
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeKernel {
    pub lengthscale: f64,
    pub signal_variance: f64,
}

impl SeKernel {
    pub fn validate(&self) -> Result<()> {
        if !(self.lengthscale > 0.0 && self.signal_variance > 0.0) {
            return Err(UqError::Config(format!(
                "kernel needs positive lengthscale and signal variance, got {self:?}"
            )));
        }
        Ok(())
    }

    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
        self.signal_variance * (-d2 / (2.0 * self.lengthscale * self.lengthscale)).exp()
    }

    pub fn matrix(&self, a: &DenseMatrix, b: &DenseMatrix) -> DMatrix<f64> {
        DMatrix::from_fn(a.rows(), b.rows(), |i, j| self.eval(a.row(i), b.row(j)))
    }
}

#[derive(Clone, Debug)]
pub struct GpModel {
    pub kernel: SeKernel,
    pub noise_variance: f64,
    pub x: DenseMatrix,
    pub u: Vec<f64>,
    pub alpha: DVector<f64>,
    /// Diagonal jitter added on top of σ_u² (0 when none was needed).
    pub jitter: f64,
    chol: Cholesky<f64, Dyn>,
}

#[derive(Serialize, Deserialize)]
struct GpSnapshot {
    kernel: SeKernel,
    noise_variance: f64,
    x: Vec<Vec<f64>>,
    u: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct GpPrediction {
    pub mean: Vec<f64>,
    /// Epistemic covariance `K** − K*ᵀ(K + σ_u²I)⁻¹K*`.
    pub cov: DenseMatrix,
    /// `diag(cov) + σ_u²`
    pub total_variance: Vec<f64>,
}

pub fn gp_fit(x: &DenseMatrix, u: &[f64], kernel: SeKernel, noise_variance: f64) -> Result<GpModel> {
    kernel.validate()?;
    if x.rows() == 0 {
        return Err(UqError::Empty("GP training set"));
    }
    if x.rows() != u.len() {
        return Err(shape_err("GP targets", x.rows(), u.len()));
    }
    if !(noise_variance >= 0.0 && noise_variance.is_finite()) {
        return Err(UqError::Config(format!("noise variance must be non-negative, got {noise_variance}")));
    }
    let n = x.rows();
    let mut k = kernel.matrix(x, x);
    for i in 0..n {
        k[(i, i)] += noise_variance;
    }
    let (chol, jitter) = match k.clone().cholesky() {
        Some(c) => (c, 0.0),
        None => {
            let mut found = None;
            for j in JITTER_LADDER {
                let mut kj = k.clone();
                for i in 0..n {
                    kj[(i, i)] += j;
                }
                if let Some(c) = kj.cholesky() {
                    found = Some((c, j));
                    break;
                }
            }
            found.ok_or(UqError::Cholesky {
                jitter: JITTER_LADDER[JITTER_LADDER.len() - 1],
            })?
        }
    };
    if jitter > 0.0 {
        log::warn!("GP covariance needed jitter {jitter:e}");
    }
    let alpha = chol.solve(&DVector::from_column_slice(u));
    Ok(GpModel {
        kernel,
        noise_variance,
        x: x.clone(),
        u: u.to_vec(),
        alpha,
        jitter,
        chol,
    })
}

impl GpModel {
    pub fn predict(&self, xs: &DenseMatrix) -> Result<GpPrediction> {
        if xs.cols() != self.x.cols() {
            return Err(shape_err("GP query inputs", self.x.cols(), xs.cols()));
        }
        let ks = self.kernel.matrix(&self.x, xs);
        let mean = (ks.transpose() * &self.alpha).iter().copied().collect();
        let v = self
            .chol
            .l()
            .solve_lower_triangular(&ks)
            .ok_or_else(|| UqError::Solver("singular GP factor".into()))?;
        let mut cov = self.kernel.matrix(xs, xs) - v.transpose() * v;
        cov = (&cov + cov.transpose()) * 0.5;
        let total_variance = (0..xs.rows())
            .map(|i| cov[(i, i)].max(0.0) + self.noise_variance)
            .collect();
        Ok(GpPrediction {
            mean,
            cov: DenseMatrix::from_nalgebra(&cov),
            total_variance,
        })
    }

    /// Same moments in the shared summary form; epistemic clamped at 0 against round-off.
    pub fn summarize(&self, xs: &DenseMatrix) -> Result<PredictiveSummary> {
        let p = self.predict(xs)?;
        let epistemic = (0..xs.rows()).map(|i| p.cov.get(i, i).max(0.0)).collect();
        PredictiveSummary::from_moments(p.mean, vec![self.noise_variance; xs.rows()], epistemic)
    }

    /// Writes `gp.json` with the kernel, noise and training set; loading refits.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let snap = GpSnapshot {
            kernel: self.kernel,
            noise_variance: self.noise_variance,
            x: (0..self.x.rows()).map(|i| self.x.row(i).to_vec()).collect(),
            u: self.u.clone(),
        };
        std::fs::write(dir.join("gp.json"), serde_json::to_string_pretty(&snap)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let snap: GpSnapshot = serde_json::from_str(&std::fs::read_to_string(dir.join("gp.json"))?)?;
        let cols = snap.x.first().map_or(0, Vec::len);
        let x = DenseMatrix::from_fn(snap.x.len(), cols, |i, j| snap.x[i][j]);
        gp_fit(&x, &snap.u, snap.kernel, snap.noise_variance)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpGrid {
    pub lengthscales: Vec<f64>,
    pub signal_variances: Vec<f64>,
    pub noise_variances: Vec<f64>,
}

impl Default for GpGrid {
    fn default() -> Self {
        Self {
            lengthscales: vec![0.05, 0.1, 0.2, 0.4, 0.8, 1.6],
            signal_variances: vec![0.25, 1.0, 4.0],
            noise_variances: vec![1e-4, 1e-3, 1e-2, 0.1],
        }
    }
}

/// Exhaustive search for the hyperparameters with the highest validation MPL.
pub fn gp_grid_search(
    x: &DenseMatrix,
    u: &[f64],
    x_val: &DenseMatrix,
    u_val: &[f64],
    grid: &GpGrid,
) -> Result<(GpModel, f64)> {
    let mut best: Option<(GpModel, f64)> = None;
    for &l in &grid.lengthscales {
        for &s in &grid.signal_variances {
            for &nv in &grid.noise_variances {
                let kernel = SeKernel {
                    lengthscale: l,
                    signal_variance: s,
                };
                let Ok(m) = gp_fit(x, u, kernel, nv) else { continue };
                let score = mpl(&m.summarize(x_val)?, u_val)?;
                if best.as_ref().is_none_or(|(_, b)| score > *b) {
                    best = Some((m, score));
                }
            }
        }
    }
    best.ok_or(UqError::Empty("GP hyperparameter grid"))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Gauss-Jordan elimination with partial pivoting; returns `A⁻¹ B`.
    pub(crate) fn naive_solve(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let n = a.len();
        let m = b[0].len();
        let mut aug: Vec<Vec<f64>> = (0..n).map(|i| a[i].iter().chain(&b[i]).copied().collect()).collect();
        for c in 0..n {
            let p = (c..n).max_by(|&i, &j| aug[i][c].abs().total_cmp(&aug[j][c].abs())).unwrap();
            aug.swap(c, p);
            let piv = aug[c][c];
            for v in aug[c].iter_mut() {
                *v /= piv;
            }
            for r in 0..n {
                if r != c {
                    let f = aug[r][c];
                    let row_c = aug[c].clone();
                    for (v, w) in aug[r].iter_mut().zip(&row_c) {
                        *v -= f * w;
                    }
                }
            }
        }
        aug.into_iter().map(|r| r[n..n + m].to_vec()).collect()
    }

    fn naive_predict(x: &[f64], u: &[f64], k: SeKernel, nv: f64, xs: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
        let kf = |a: f64, b: f64| k.signal_variance * (-(a - b).powi(2) / (2.0 * k.lengthscale.powi(2))).exp();
        let n = x.len();
        let a: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| kf(x[i], x[j]) + if i == j { nv } else { 0.0 }).collect())
            .collect();
        let ks: Vec<Vec<f64>> = (0..n).map(|i| xs.iter().map(|&s| kf(x[i], s)).collect()).collect();
        let mut rhs = ks.clone();
        for (r, ui) in rhs.iter_mut().zip(u) {
            r.push(*ui);
        }
        let sol = naive_solve(&a, &rhs);
        let q = xs.len();
        let mean = (0..q).map(|c| (0..n).map(|i| ks[i][c] * sol[i][q]).sum()).collect();
        let cov = (0..q)
            .map(|p| {
                (0..q)
                    .map(|c| kf(xs[p], xs[c]) - (0..n).map(|i| ks[i][p] * sol[i][c]).sum::<f64>())
                    .collect()
            })
            .collect();
        (mean, cov)
    }

    fn col(v: &[f64]) -> DenseMatrix {
        DenseMatrix::column(v)
    }

    #[test]
    fn interpolates_single_point() {
        let k = SeKernel {
            lengthscale: 0.3,
            signal_variance: 1.0,
        };
        let m = gp_fit(&col(&[0.4]), &[1.7], k, 0.0).unwrap();
        let p = m.predict(&col(&[0.4])).unwrap();
        assert!((p.mean[0] - 1.7).abs() < 1e-14);
        assert!(p.cov.get(0, 0).abs() < 1e-12);
    }

    #[test]
    fn huge_noise_reverts_to_prior_mean() {
        let k = SeKernel {
            lengthscale: 0.3,
            signal_variance: 1.0,
        };
        let m = gp_fit(&col(&[0.0, 0.5]), &[1.0, -2.0], k, 1e12).unwrap();
        assert!(m.predict(&col(&[0.1, 0.3])).unwrap().mean.iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn matches_dense_solve_oracle() {
        let x = [-0.9, -0.3, 0.1, 0.45, 0.8];
        let u = [0.3, -1.0, 0.5, 0.2, 1.1];
        let k = SeKernel {
            lengthscale: 0.4,
            signal_variance: 1.3,
        };
        let xs = [-1.0, 0.0, 0.2, 0.6];
        let m = gp_fit(&col(&x), &u, k, 0.01).unwrap();
        let p = m.predict(&col(&xs)).unwrap();
        let (mean, cov) = naive_predict(&x, &u, k, 0.01, &xs);
        for i in 0..4 {
            assert!((p.mean[i] - mean[i]).abs() < 1e-10);
            for j in 0..4 {
                assert!((p.cov.get(i, j) - cov[i][j]).abs() < 1e-10);
            }
            assert!((p.total_variance[i] - cov[i][i] - 0.01).abs() < 1e-10);
        }
    }

    #[test]
    fn far_field_and_midpoint() {
        let k = SeKernel {
            lengthscale: 0.2,
            signal_variance: 2.0,
        };
        let m = gp_fit(&col(&[-0.5, 0.5]), &[1.0, 1.0], k, 0.0).unwrap();
        let p = m.predict(&col(&[50.0, 0.0])).unwrap();
        assert!((p.cov.get(0, 0) - 2.0).abs() < 1e-12);
        let (_, cov) = naive_predict(&[-0.5, 0.5], &[1.0, 1.0], k, 0.0, &[0.0]);
        assert!((p.cov.get(1, 1) - cov[0][0]).abs() < 1e-10);
        let at_data = m.predict(&col(&[-0.5, 0.5])).unwrap();
        assert!(at_data.cov.get(0, 0).abs() < 1e-10 && at_data.cov.get(1, 1).abs() < 1e-10);
    }

    #[test]
    fn epistemic_variance_grows_with_noise() {
        let k = SeKernel {
            lengthscale: 0.3,
            signal_variance: 1.0,
        };
        let x = col(&[-0.4, 0.0, 0.3]);
        let mut prev = -1.0;
        for nv in [0.0, 1e-3, 1e-2, 0.1, 1.0] {
            let v = gp_fit(&x, &[0.1, 0.2, 0.3], k, nv).unwrap().predict(&col(&[0.0])).unwrap().cov.get(0, 0);
            assert!(v > prev);
            prev = v;
        }
    }

    #[test]
    fn covariance_is_symmetric_psd() {
        let k = SeKernel {
            lengthscale: 0.25,
            signal_variance: 1.0,
        };
        let xs: Vec<f64> = (0..30).map(|i| -1.2 + i as f64 * 0.08).collect();
        let m = gp_fit(&col(&[-0.5, -0.1, 0.2, 0.7]), &[0.0, 1.0, 0.5, -0.3], k, 1e-4).unwrap();
        let cov = m.predict(&col(&xs)).unwrap().cov.to_nalgebra();
        assert_eq!(cov, cov.transpose());
        let min = cov.symmetric_eigen().eigenvalues.min();
        assert!(min > -1e-8, "{min}");
    }

    #[test]
    fn grid_search_prefers_sensible_fit() {
        let x: Vec<f64> = (0..20).map(|i| -1.0 + i as f64 * 0.1).collect();
        let u: Vec<f64> = x.iter().map(|v| (3.0 * v).sin()).collect();
        let xv: Vec<f64> = (0..10).map(|i| -0.95 + i as f64 * 0.2).collect();
        let uv: Vec<f64> = xv.iter().map(|v| (3.0 * v).sin()).collect();
        let (m, score) = gp_grid_search(&col(&x), &u, &col(&xv), &uv, &GpGrid::default()).unwrap();
        assert!(score > 1.0);
        assert!(m.kernel.lengthscale >= 0.1);
    }

    #[test]
    fn snapshot_round_trip_predicts_identically() {
        let k = SeKernel {
            lengthscale: 0.3,
            signal_variance: 1.5,
        };
        let m = gp_fit(&col(&[-0.5, -0.1, 0.2, 0.7]), &[0.0, 1.0, 0.5, -0.3], k, 1e-3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        m.save(dir.path()).unwrap();
        let back = GpModel::load(dir.path()).unwrap();
        let xs = col(&[-0.3, 0.0, 0.4]);
        assert_eq!(m.summarize(&xs).unwrap(), back.summarize(&xs).unwrap());
    }
}
