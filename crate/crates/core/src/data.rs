//! Labeled regression datasets and their file formats.
//!
//! Function-approximation data is stored as CSV with header `x,u` (one column
//! per input dimension named `x`, `x1`, `x2`, ... followed by `u`). Noise
//! metadata lives in a JSON sidecar next to the CSV (`<name>.noise.json`).

use crate::error::{shape_err, Result, UqError};
use crate::tensor::DenseMatrix;
use rand::seq::SliceRandom;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum NoiseFamily {
    #[default]
    None,
    Gaussian {
        sigma: f64,
    },
    /// `ε = scale·|x|·t_ν`
    StudentT {
        scale: f64,
        dof: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
pub struct NoiseMeta {
    pub noise: NoiseFamily,
    pub seed: Option<u64>,
    /// Per-dimension `(mean, std)` when inputs were z-scored.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub standardization: Option<Vec<(f64, f64)>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    pub x: DenseMatrix,
    pub u: Vec<f64>,
    pub meta: NoiseMeta,
}

impl LabeledDataset {
    pub fn new(x: DenseMatrix, u: Vec<f64>) -> Result<Self> {
        if x.rows() != u.len() {
            return Err(shape_err("dataset targets", x.rows(), u.len()));
        }
        Ok(Self {
            x,
            u,
            meta: NoiseMeta::default(),
        })
    }

    /// 1D inputs from a slice.
    pub fn from_1d(x: &[f64], u: &[f64]) -> Result<Self> {
        Self::new(DenseMatrix::column(x), u.to_vec())
    }

    pub fn empty(in_dim: usize) -> Self {
        Self {
            x: DenseMatrix::zeros(0, in_dim),
            u: Vec::new(),
            meta: NoiseMeta::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    pub fn in_dim(&self) -> usize {
        self.x.cols()
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        let cols = self.x.cols();
        let x = DenseMatrix::from_fn(idx.len(), cols, |i, j| self.x.get(idx[i], j));
        Self {
            x,
            u: idx.iter().map(|&i| self.u[i]).collect(),
            meta: self.meta.clone(),
        }
    }

    /// Random split into `(first, rest)` with `n_first` points in the first part.
    pub fn split(&self, n_first: usize, rng: &mut dyn RngCore) -> Result<(Self, Self)> {
        if n_first > self.len() {
            return Err(UqError::Config(format!(
                "cannot split {} points off a dataset of {}",
                n_first,
                self.len()
            )));
        }
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(rng);
        Ok((self.subset(&idx[..n_first]), self.subset(&idx[n_first..])))
    }

    /// Z-scores every input dimension in place and records the transform.
    pub fn standardize(&mut self) {
        let (n, d) = self.x.shape();
        let mut stats = Vec::with_capacity(d);
        for j in 0..d {
            let col = self.x.col_to_vec(j);
            let mean = col.iter().sum::<f64>() / n.max(1) as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n.max(1) as f64;
            let std = if var > 0.0 { var.sqrt() } else { 1.0 };
            for i in 0..n {
                self.x.set(i, j, (self.x.get(i, j) - mean) / std);
            }
            stats.push((mean, std));
        }
        self.meta.standardization = Some(stats);
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = column_names(self.in_dim());
        header.push("u".into());
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec: Vec<String> = self.x.row(i).iter().map(|v| fmt_f64(*v)).collect();
            rec.push(fmt_f64(self.u[i]));
            w.write_record(&rec)?;
        }
        w.flush()?;
        let sidecar = sidecar_path(path);
        std::fs::write(sidecar, serde_json::to_string_pretty(&self.meta)?)?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let headers = r.headers()?.clone();
        let n_cols = headers.len();
        if n_cols < 2 || &headers[n_cols - 1] != "u" || !headers[0].starts_with('x') {
            return Err(UqError::Config(format!(
                "{}: expected header `x,...,u`, got `{}`",
                path.display(),
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let d = n_cols - 1;
        let mut xs = Vec::new();
        let mut us = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            for j in 0..d {
                xs.push(parse_field(&rec[j], path)?);
            }
            us.push(parse_field(&rec[d], path)?);
        }
        let x = DenseMatrix::from_vec(us.len(), d, xs)?;
        let meta = match std::fs::read_to_string(sidecar_path(path)) {
            Ok(s) => serde_json::from_str(&s)?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => NoiseMeta::default(),
            Err(e) => return Err(e.into()),
        };
        Ok(Self { x, u: us, meta })
    }
}

fn column_names(d: usize) -> Vec<String> {
    if d == 1 {
        vec!["x".into()]
    } else {
        (0..d).map(|j| format!("x{j}")).collect()
    }
}

pub(crate) fn parse_field(s: &str, path: &Path) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| UqError::Config(format!("{}: cannot parse `{s}` as a number", path.display())))
}

/// Shortest round-tripping representation.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("data");
    path.with_file_name(format!("{stem}.noise.json"))
}
