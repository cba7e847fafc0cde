//! Parametric models that can be evaluated plainly or recorded on a tape.

use crate::autodiff::{Tape, Var};
use crate::error::{shape_err, Result};
use crate::tensor::DenseMatrix;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};
use std::ops::{Deref, DerefMut};

/// Flat parameter vector θ in a model-defined layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
pub struct ParamVector(pub Vec<f64>);

impl ParamVector {
    pub fn zeros(k: usize) -> Self {
        Self(vec![0.0; k])
    }

    pub fn norm_sq(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum()
    }
}

impl Deref for ParamVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ParamVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

/// A model `u_θ(x)` mapping `batch × in_dim` inputs to `batch × out_dim` outputs.
pub trait DiffModel: Send + Sync {
    fn n_params(&self) -> usize;
    fn in_dim(&self) -> usize;
    fn out_dim(&self) -> usize;

    fn forward(&self, params: &[f64], x: &DenseMatrix) -> Result<DenseMatrix>;

    /// Records the forward pass; `params` is a `K × 1` node.
    fn forward_tape<'t>(&self, tape: &'t Tape, params: Var<'t>, x: &DenseMatrix) -> Result<Var<'t>>;

    fn init_params(&self, rng: &mut dyn RngCore) -> ParamVector;

    /// Multiplicative 0/1 mask over θ that drops units with probability `rate`.
    fn dropout_mask(&self, rate: f64, rng: &mut dyn RngCore) -> Vec<f64>;

    fn check_input(&self, x: &DenseMatrix, params: &[f64]) -> Result<()> {
        if x.cols() != self.in_dim() {
            return Err(shape_err(
                "model input",
                format!("{} columns", self.in_dim()),
                format!("{}x{}", x.rows(), x.cols()),
            ));
        }
        if params.len() != self.n_params() {
            return Err(shape_err("parameter vector", self.n_params(), params.len()));
        }
        Ok(())
    }
}

/// Rows of `∂u_θ(x_i)[output] / ∂θ`, one `K`-vector per input row.
pub fn output_jacobian<M: DiffModel + ?Sized>(model: &M, params: &[f64], x: &DenseMatrix, output: usize) -> Result<DenseMatrix> {
    use rayon::prelude::*;
    model.check_input(x, params)?;
    if output >= model.out_dim() {
        return Err(shape_err("jacobian output index", model.out_dim(), output));
    }
    let rows: Vec<Vec<f64>> = (0..x.rows())
        .into_par_iter()
        .map(|i| {
            let tape = Tape::new();
            let p = tape.variable(DenseMatrix::column(params));
            let xi = x.row_block(i, 1);
            let pred = model.forward_tape(&tape, p, &xi)?;
            let out = if pred.shape().1 == 1 { pred } else { pred.column(output) };
            Ok(tape.gradients(out).wrt_or_zeros(p).into_vec())
        })
        .collect::<Result<_>>()?;
    let k = params.len();
    Ok(DenseMatrix::from_fn(x.rows(), k, |i, j| rows[i][j]))
}

/// Bias-free linear map `u = x · θ`, the canonical conjugate toy.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LinearModel {
    pub in_dim: usize,
}

impl LinearModel {
    pub fn new(in_dim: usize) -> Self {
        Self { in_dim }
    }
}

impl DiffModel for LinearModel {
    fn n_params(&self) -> usize {
        self.in_dim
    }

    fn in_dim(&self) -> usize {
        self.in_dim
    }

    fn out_dim(&self) -> usize {
        1
    }

    fn forward(&self, params: &[f64], x: &DenseMatrix) -> Result<DenseMatrix> {
        self.check_input(x, params)?;
        x.matmul(&DenseMatrix::column(params))
    }

    fn forward_tape<'t>(&self, tape: &'t Tape, params: Var<'t>, x: &DenseMatrix) -> Result<Var<'t>> {
        if x.cols() != self.in_dim {
            return Err(shape_err("model input", self.in_dim, x.cols()));
        }
        Ok(tape.constant(x.clone()).matmul(params))
    }

    fn init_params(&self, rng: &mut dyn RngCore) -> ParamVector {
        let std = (2.0 / (self.in_dim as f64 + 1.0)).sqrt();
        (0..self.in_dim)
            .map(|_| std * rng.sample::<f64, _>(rand_distr::StandardNormal))
            .collect::<Vec<_>>()
            .into()
    }

    /// Drops input features; there are no hidden units.
    fn dropout_mask(&self, rate: f64, rng: &mut dyn RngCore) -> Vec<f64> {
        (0..self.in_dim)
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { 1.0 })
            .collect()
    }
}
