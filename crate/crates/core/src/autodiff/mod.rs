//! Reverse-mode tape plus forward Taylor jets.

pub mod jet;
pub mod tape;

pub use jet::JetValue;
pub use tape::{Gradients, Tape, Var};

use crate::error::{Result, UqError};
use crate::model::ParamVector;
use crate::tensor::DenseMatrix;

/// Evaluates a scalar loss built on a fresh tape and returns `(loss, ∇_θ loss)`.
///
/// The closure receives the tape and θ as a `K × 1` node.
pub fn grad_params<F>(params: &[f64], loss: F) -> Result<(f64, ParamVector)>
where
    F: for<'t> FnOnce(&'t Tape, Var<'t>) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let theta = tape.variable(DenseMatrix::column(params));
    let out = loss(&tape, theta)?;
    if out.shape() != (1, 1) {
        return Err(crate::error::shape_err("loss", "1x1", format!("{:?}", out.shape())));
    }
    let value = out.scalar();
    if !value.is_finite() {
        return Err(UqError::NonFinite {
            context: "loss".into(),
            value,
        });
    }
    let grads = tape.gradients(out);
    Ok((value, ParamVector(grads.wrt_or_zeros(theta).into_vec())))
}
