//! Dense feed-forward networks.
//!
//! Parameter layout is layer-major with weights before biases: for every layer
//! `l` the `fan_in × fan_out` weight matrix (row-major, row `i` holds the
//! weights leaving input unit `i`) is followed by the `fan_out` biases. The
//! layout is part of the snapshot format and must not change.

use crate::autodiff::{JetValue, Tape, Var};
use crate::error::{shape_err, Result};
use crate::model::{DiffModel, ParamVector};
use crate::tensor::DenseMatrix;
use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Identity,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub output: usize,
    pub activation: Activation,
}

impl Architecture {
    pub fn tanh(input: usize, hidden: &[usize], output: usize) -> Self {
        Self {
            input,
            hidden: hidden.to_vec(),
            output,
            activation: Activation::Tanh,
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Layer {
    fan_in: usize,
    fan_out: usize,
    w_offset: usize,
    b_offset: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(from = "Architecture", into = "Architecture")]
pub struct MlpModel {
    arch: Architecture,
    layers: Vec<Layer>,
    n_params: usize,
}

/// Outputs of a jet-augmented forward pass recorded on a tape.
pub struct TapeJet<'t> {
    pub value: Var<'t>,
    /// ∂/∂x along the designated coordinate.
    pub d1: Var<'t>,
    /// ∂²/∂x² along the designated coordinate.
    pub d2: Var<'t>,
    /// First derivatives along the extra coordinates, in request order.
    pub extra: Vec<Var<'t>>,
}

impl From<Architecture> for MlpModel {
    fn from(arch: Architecture) -> Self {
        Self::new(arch)
    }
}

impl From<MlpModel> for Architecture {
    fn from(m: MlpModel) -> Self {
        m.arch
    }
}

impl MlpModel {
    pub fn new(arch: Architecture) -> Self {
        let mut widths = vec![arch.input];
        widths.extend(&arch.hidden);
        widths.push(arch.output);
        let mut layers = Vec::with_capacity(widths.len() - 1);
        let mut offset = 0;
        for w in widths.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            layers.push(Layer {
                fan_in,
                fan_out,
                w_offset: offset,
                b_offset: offset + fan_in * fan_out,
            });
            offset += fan_in * fan_out + fan_out;
        }
        Self {
            arch,
            layers,
            n_params: offset,
        }
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    fn is_hidden(&self, l: usize) -> bool {
        l + 1 < self.layers.len()
    }

    fn activate(&self, z: f64) -> f64 {
        match self.arch.activation {
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Splits θ into `(W_l, b_l)` pairs.
    pub fn unpack(&self, params: &[f64]) -> Result<Vec<(DenseMatrix, Vec<f64>)>> {
        if params.len() != self.n_params {
            return Err(shape_err("parameter vector", self.n_params, params.len()));
        }
        self.layers
            .iter()
            .map(|l| {
                let w = DenseMatrix::from_vec(
                    l.fan_in,
                    l.fan_out,
                    params[l.w_offset..l.b_offset].to_vec(),
                )?;
                let b = params[l.b_offset..l.b_offset + l.fan_out].to_vec();
                Ok((w, b))
            })
            .collect()
    }

    pub fn pack(&self, layers: &[(DenseMatrix, Vec<f64>)]) -> Result<ParamVector> {
        if layers.len() != self.layers.len() {
            return Err(shape_err("layer count", self.layers.len(), layers.len()));
        }
        let mut out = Vec::with_capacity(self.n_params);
        for (shape, (w, b)) in self.layers.iter().zip(layers) {
            if w.shape() != (shape.fan_in, shape.fan_out) || b.len() != shape.fan_out {
                return Err(shape_err(
                    "layer",
                    format!("{}x{} + {}", shape.fan_in, shape.fan_out, shape.fan_out),
                    format!("{}x{} + {}", w.rows(), w.cols(), b.len()),
                ));
            }
            out.extend_from_slice(w.as_slice());
            out.extend_from_slice(b);
        }
        Ok(ParamVector(out))
    }

    /// Single-point forward pass.
    pub fn forward_point(&self, params: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        let m = DenseMatrix::from_vec(1, x.len(), x.to_vec())?;
        Ok(self.forward(params, &m)?.into_vec())
    }

    /// `(u, ∂u/∂x_c, ∂²u/∂x_c²)` per output at one point, using scalar jets.
    pub fn input_jet(&self, params: &[f64], point: &[f64], coord: usize) -> Result<Vec<JetValue>> {
        if point.len() != self.arch.input {
            return Err(shape_err("input point", self.arch.input, point.len()));
        }
        if coord >= point.len() {
            return Err(shape_err("jet coordinate", format!("< {}", point.len()), coord));
        }
        if params.len() != self.n_params {
            return Err(shape_err("parameter vector", self.n_params, params.len()));
        }
        let mut h: Vec<JetValue> = point
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                if i == coord {
                    JetValue::variable(v)
                } else {
                    JetValue::constant(v)
                }
            })
            .collect();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = vec![JetValue::constant(0.0); layer.fan_out];
            for (j, zj) in z.iter_mut().enumerate() {
                let mut acc = JetValue::constant(params[layer.b_offset + j]);
                for (i, hi) in h.iter().enumerate() {
                    acc = acc + *hi * params[layer.w_offset + i * layer.fan_out + j];
                }
                *zj = acc;
            }
            if self.is_hidden(l) && self.arch.activation == Activation::Tanh {
                z.iter_mut().for_each(|v| *v = v.tanh());
            }
            h = z;
        }
        Ok(h)
    }

    fn layer_vars<'t>(&self, params: Var<'t>, l: usize) -> (Var<'t>, Var<'t>) {
        let layer = self.layers[l];
        let w = params.slice(layer.w_offset, layer.fan_in, layer.fan_out);
        let b = params.slice(layer.b_offset, 1, layer.fan_out);
        (w, b)
    }

    fn check_tape_params(&self, params: Var<'_>, x: &DenseMatrix) -> Result<()> {
        if params.shape() != (self.n_params, 1) {
            return Err(shape_err(
                "parameter node",
                format!("{}x1", self.n_params),
                format!("{:?}", params.shape()),
            ));
        }
        if x.cols() != self.arch.input {
            return Err(shape_err(
                "model input",
                format!("{} columns", self.arch.input),
                format!("{}x{}", x.rows(), x.cols()),
            ));
        }
        Ok(())
    }

    /// Forward pass carrying first derivatives along `coord` and `extra`
    /// coordinates plus the second derivative along `coord`.
    pub fn forward_jet_tape<'t>(
        &self,
        tape: &'t Tape,
        params: Var<'t>,
        x: &DenseMatrix,
        coord: usize,
        extra: &[usize],
    ) -> Result<TapeJet<'t>> {
        self.check_tape_params(params, x)?;
        let n = x.rows();
        let unit = |c: usize| {
            let mut e = DenseMatrix::zeros(n, self.arch.input);
            for i in 0..n {
                e.set(i, c, 1.0);
            }
            tape.constant(e)
        };
        for &c in std::iter::once(&coord).chain(extra) {
            if c >= self.arch.input {
                return Err(shape_err("jet coordinate", format!("< {}", self.arch.input), c));
            }
        }
        let mut h = tape.constant(x.clone());
        let mut d1 = unit(coord);
        let mut d2: Option<Var<'t>> = None;
        let mut ex: Vec<Var<'t>> = extra.iter().map(|&c| unit(c)).collect();

        for l in 0..self.layers.len() {
            let (w, b) = self.layer_vars(params, l);
            let z = h.matmul(w).add_row(b);
            let z1 = d1.matmul(w);
            let z2 = d2.map(|v| v.matmul(w));
            let zex: Vec<Var<'t>> = ex.iter().map(|v| v.matmul(w)).collect();
            if self.is_hidden(l) && self.arch.activation == Activation::Tanh {
                let a = z.tanh();
                let s = (-(a * a)).add_const(1.0);
                let curv = (a * s * z1 * z1).scale(-2.0);
                d2 = Some(match z2 {
                    Some(z2) => s * z2 + curv,
                    None => curv,
                });
                d1 = s * z1;
                ex = zex.into_iter().map(|v| s * v).collect();
                h = a;
            } else {
                h = z;
                d1 = z1;
                d2 = z2;
                ex = zex;
            }
        }
        let d2 = match d2 {
            Some(v) => v,
            None => tape.constant(DenseMatrix::zeros(n, self.arch.output)),
        };
        Ok(TapeJet {
            value: h,
            d1,
            d2,
            extra: ex,
        })
    }

    /// Indices of θ holding the weights that leave each hidden unit, grouped per unit.
    pub fn hidden_unit_outgoing(&self) -> Vec<Vec<usize>> {
        let mut groups = Vec::new();
        for l in 1..self.layers.len() {
            let layer = self.layers[l];
            for i in 0..layer.fan_in {
                let start = layer.w_offset + i * layer.fan_out;
                groups.push((start..start + layer.fan_out).collect());
            }
        }
        groups
    }
}

impl DiffModel for MlpModel {
    fn n_params(&self) -> usize {
        self.n_params
    }

    fn in_dim(&self) -> usize {
        self.arch.input
    }

    fn out_dim(&self) -> usize {
        self.arch.output
    }

    fn forward(&self, params: &[f64], x: &DenseMatrix) -> Result<DenseMatrix> {
        self.check_input(x, params)?;
        let mut h = x.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            let w = DenseMatrix::from_vec(
                layer.fan_in,
                layer.fan_out,
                params[layer.w_offset..layer.b_offset].to_vec(),
            )?;
            let b = &params[layer.b_offset..layer.b_offset + layer.fan_out];
            let mut z = h.matmul(&w)?;
            let hidden = self.is_hidden(l);
            for i in 0..z.rows() {
                for (j, bj) in b.iter().enumerate() {
                    let v = z.get(i, j) + bj;
                    z.set(i, j, if hidden { self.activate(v) } else { v });
                }
            }
            h = z;
        }
        Ok(h)
    }

    fn forward_tape<'t>(&self, tape: &'t Tape, params: Var<'t>, x: &DenseMatrix) -> Result<Var<'t>> {
        self.check_tape_params(params, x)?;
        let mut h = tape.constant(x.clone());
        for l in 0..self.layers.len() {
            let (w, b) = self.layer_vars(params, l);
            let z = h.matmul(w).add_row(b);
            h = if self.is_hidden(l) && self.arch.activation == Activation::Tanh {
                z.tanh()
            } else {
                z
            };
        }
        Ok(h)
    }

    /// Xavier-normal weights, zero biases.
    fn init_params(&self, rng: &mut dyn RngCore) -> ParamVector {
        let mut theta = vec![0.0; self.n_params];
        for layer in &self.layers {
            let std = (2.0 / (layer.fan_in + layer.fan_out) as f64).sqrt();
            for v in &mut theta[layer.w_offset..layer.b_offset] {
                *v = std * rng.sample::<f64, _>(StandardNormal);
            }
        }
        ParamVector(theta)
    }

    /// Zeroes the outgoing weights of dropped hidden units; the output layer is never dropped.
    fn dropout_mask(&self, rate: f64, rng: &mut dyn RngCore) -> Vec<f64> {
        let mut mask = vec![1.0; self.n_params];
        for group in self.hidden_unit_outgoing() {
            if rng.random::<f64>() < rate {
                for i in group {
                    mask[i] = 0.0;
                }
            }
        }
        mask
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};

    /// Straightforward loop implementation used as an oracle.
    fn naive_forward(model: &MlpModel, params: &[f64], x: &[f64]) -> Vec<f64> {
        let layers = model.unpack(params).unwrap();
        let mut h = x.to_vec();
        let last = layers.len() - 1;
        for (l, (w, b)) in layers.iter().enumerate() {
            let mut z = b.clone();
            for j in 0..w.cols() {
                for i in 0..w.rows() {
                    z[j] += h[i] * w.get(i, j);
                }
            }
            if l < last {
                z.iter_mut().for_each(|v| *v = v.tanh());
            }
            h = z;
        }
        h
    }

    #[test]
    fn zero_network_outputs_zero() {
        let m = MlpModel::new(Architecture::tanh(2, &[5, 5], 3));
        let out = m.forward_point(&vec![0.0; m.n_params()], &[0.4, -1.2]).unwrap();
        assert_eq!(out, vec![0.0; 3]);
    }

    #[test]
    fn identity_net() {
        let m = MlpModel::new(Architecture {
            input: 1,
            hidden: vec![1],
            output: 1,
            activation: Activation::Identity,
        });
        let theta = m
            .pack(&[
                (DenseMatrix::identity(1), vec![0.0]),
                (DenseMatrix::identity(1), vec![0.0]),
            ])
            .unwrap();
        assert_eq!(m.forward_point(&theta, &[0.3]).unwrap(), vec![0.3]);
    }

    #[test]
    fn forward_matches_naive_oracle() {
        let m = MlpModel::new(Architecture::tanh(2, &[50, 50], 2));
        let mut rng = stream(7, Purpose::Init);
        let theta = m.init_params(&mut rng);
        let theta: Vec<f64> = theta.iter().map(|v| v + 0.1).collect();
        for x in [[0.1, -0.4], [0.9, 0.2], [-1.0, 1.0]] {
            let fast = m.forward_point(&theta, &x).unwrap();
            let slow = naive_forward(&m, &theta, &x);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let m = MlpModel::new(Architecture::tanh(2, &[4], 1));
        let err = m
            .forward(&vec![0.0; m.n_params()], &DenseMatrix::zeros(3, 1))
            .unwrap_err()
            .to_string();
        assert!(err.contains("2 columns") && err.contains("3x1"), "{err}");
    }

    #[test]
    fn pack_unpack_round_trip() {
        let m = MlpModel::new(Architecture::tanh(3, &[4, 2], 2));
        let theta: Vec<f64> = (0..m.n_params()).map(|i| i as f64).collect();
        let layers = m.unpack(&theta).unwrap();
        assert_eq!(m.pack(&layers).unwrap().0, theta);
        // first layer weights then biases
        assert_eq!(layers[0].0.get(0, 0), 0.0);
        assert_eq!(layers[0].1[0], 12.0);
        assert_eq!(m.n_params(), 3 * 4 + 4 + 4 * 2 + 2 + 2 * 2 + 2);
    }

    #[test]
    fn linear_net_jets() {
        // u = 3x + 1 through an identity-activation hidden layer
        let m = MlpModel::new(Architecture {
            input: 1,
            hidden: vec![1],
            output: 1,
            activation: Activation::Identity,
        });
        let theta = m
            .pack(&[
                (DenseMatrix::scalar(3.0), vec![0.5]),
                (DenseMatrix::scalar(1.0), vec![0.5]),
            ])
            .unwrap();
        for x in [-2.0, 0.0, 0.7] {
            let j = m.input_jet(&theta, &[x], 0).unwrap()[0];
            assert!((j.value - (3.0 * x + 1.0)).abs() < 1e-14);
            assert_eq!((j.d1, j.d2), (3.0, 0.0));
        }
    }

    #[test]
    fn tape_jets_agree_with_scalar_jets() {
        let m = MlpModel::new(Architecture::tanh(2, &[8, 8], 2));
        let mut rng = stream(3, Purpose::Init);
        let theta = m.init_params(&mut rng);
        let x = DenseMatrix::from_vec(3, 2, vec![0.1, 0.2, -0.5, 0.9, 0.3, -0.7]).unwrap();
        let tape = Tape::new();
        let p = tape.variable(DenseMatrix::column(&theta));
        let jet = m.forward_jet_tape(&tape, p, &x, 1, &[0]).unwrap();
        let (v, d1, d2, dt) = (jet.value.value(), jet.d1.value(), jet.d2.value(), jet.extra[0].value());
        for i in 0..3 {
            let pt = x.row(i);
            let sx = m.input_jet(&theta, pt, 1).unwrap();
            let st = m.input_jet(&theta, pt, 0).unwrap();
            for o in 0..2 {
                assert!((v.get(i, o) - sx[o].value).abs() < 1e-14);
                assert!((d1.get(i, o) - sx[o].d1).abs() < 1e-14);
                assert!((d2.get(i, o) - sx[o].d2).abs() < 1e-13);
                assert!((dt.get(i, o) - st[o].d1).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn dropout_mask_spares_output_biases_and_first_layer() {
        let m = MlpModel::new(Architecture::tanh(1, &[3, 3], 1));
        let mut rng = stream(1, Purpose::Dropout);
        let mask = m.dropout_mask(0.999_999, &mut rng);
        // first layer (1x3 + 3) untouched, every hidden→next weight dropped
        assert!(mask[..6].iter().all(|&v| v == 1.0));
        let groups = m.hidden_unit_outgoing();
        assert_eq!(groups.len(), 6);
        for g in groups {
            assert!(g.iter().all(|&i| mask[i] == 0.0));
        }
        assert_eq!(m.dropout_mask(0.0, &mut rng), vec![1.0; m.n_params()]);
    }
}
