//! Reverse-mode automatic differentiation over matrix-valued nodes.
//!
//! A [`Tape`] is built fresh for every loss evaluation: leaves are registered
//! with [`Tape::variable`] (differentiable) or [`Tape::constant`], operations on
//! [`Var`] handles append nodes, and [`Tape::gradients`] runs one backward
//! sweep. Elementwise arithmetic requires equal shapes; broadcasting only
//! happens through [`Var::add_row`].
//!
//! Shape misuse inside a tape is a programming error and panics; callers that
//! accept user data validate shapes before recording.

use crate::tensor::DenseMatrix;
use std::cell::RefCell;

#[derive(Clone, Copy, Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    AddRow(usize, usize),
    MatMul(usize, usize),
    Scale(usize, f64),
    AddConst(usize),
    Neg(usize),
    Tanh(usize),
    Exp(usize),
    Log(usize),
    Sin(usize),
    Cos(usize),
    PowI(usize, i32),
    Sum(usize),
    /// Contiguous range of the parent's row-major data, reshaped.
    Slice(usize, usize),
    Column(usize, usize),
}

struct Node {
    value: DenseMatrix,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    idx: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.idx, self.shape())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: DenseMatrix, op: Op, needs_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var {
            tape: self,
            idx: nodes.len() - 1,
        }
    }

    pub fn variable(&self, value: DenseMatrix) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    pub fn constant(&self, value: DenseMatrix) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    pub fn scalar_constant(&self, value: f64) -> Var<'_> {
        self.constant(DenseMatrix::scalar(value))
    }

    fn needs(&self, idx: usize) -> bool {
        self.nodes.borrow()[idx].needs_grad
    }

    fn unary(&self, a: usize, op: Op, f: impl Fn(&DenseMatrix) -> DenseMatrix) -> Var<'_> {
        let value = f(&self.nodes.borrow()[a].value);
        let ng = self.needs(a);
        self.push(value, op, ng)
    }

    fn binary(
        &self,
        a: usize,
        b: usize,
        op: Op,
        f: impl Fn(&DenseMatrix, &DenseMatrix) -> DenseMatrix,
    ) -> Var<'_> {
        let value = {
            let nodes = self.nodes.borrow();
            f(&nodes[a].value, &nodes[b].value)
        };
        let ng = self.needs(a) || self.needs(b);
        self.push(value, op, ng)
    }

    /// Backward sweep seeded with ones at `output`.
    pub fn gradients(&self, output: Var<'_>) -> Gradients {
        let (r, c) = output.shape();
        self.gradients_seeded(output, DenseMatrix::filled(r, c, 1.0))
    }

    /// Vector-Jacobian product: back-propagates `seed` (shaped like `output`).
    pub fn gradients_seeded(&self, output: Var<'_>, seed: DenseMatrix) -> Gradients {
        let nodes = self.nodes.borrow();
        let n = output.idx + 1;
        let mut adj: Vec<Option<DenseMatrix>> = (0..n).map(|_| None).collect();
        assert_eq!(seed.shape(), nodes[output.idx].value.shape(), "seed shape mismatch");
        adj[output.idx] = Some(seed);

        fn acc(slot: &mut Option<DenseMatrix>, g: DenseMatrix) {
            match slot {
                Some(existing) => existing
                    .add_assign(&g)
                    .expect("adjoint shape mismatch"),
                None => *slot = Some(g),
            }
        }

        for i in (0..n).rev() {
            let Some(g) = adj[i].take() else { continue };
            if !nodes[i].needs_grad {
                continue;
            }
            let needs = |j: usize| nodes[j].needs_grad;
            match nodes[i].op {
                Op::Leaf => {
                    adj[i] = Some(g);
                    continue;
                }
                Op::Add(a, b) => {
                    if needs(a) {
                        acc(&mut adj[a], g.clone());
                    }
                    if needs(b) {
                        acc(&mut adj[b], g);
                    }
                }
                Op::Sub(a, b) => {
                    if needs(a) {
                        acc(&mut adj[a], g.clone());
                    }
                    if needs(b) {
                        acc(&mut adj[b], g.scale(-1.0));
                    }
                }
                Op::Mul(a, b) => {
                    if needs(a) {
                        acc(&mut adj[a], g.zip_map(&nodes[b].value, |x, y| x * y).unwrap());
                    }
                    if needs(b) {
                        acc(&mut adj[b], g.zip_map(&nodes[a].value, |x, y| x * y).unwrap());
                    }
                }
                Op::Div(a, b) => {
                    let bv = &nodes[b].value;
                    if needs(a) {
                        acc(&mut adj[a], g.zip_map(bv, |x, y| x / y).unwrap());
                    }
                    if needs(b) {
                        // d(a/b)/db = -out/b
                        let out = &nodes[i].value;
                        let t = g.zip_map(out, |x, o| x * o).unwrap();
                        acc(&mut adj[b], t.zip_map(bv, |x, y| -x / y).unwrap());
                    }
                }
                Op::AddRow(a, row) => {
                    if needs(row) {
                        acc(&mut adj[row], g.sum_rows());
                    }
                    if needs(a) {
                        acc(&mut adj[a], g);
                    }
                }
                Op::MatMul(a, b) => {
                    if needs(a) {
                        acc(&mut adj[a], g.matmul_bt(&nodes[b].value).unwrap());
                    }
                    if needs(b) {
                        acc(&mut adj[b], nodes[a].value.matmul_at(&g).unwrap());
                    }
                }
                Op::Scale(a, c) => acc(&mut adj[a], g.scale(c)),
                Op::AddConst(a) => acc(&mut adj[a], g),
                Op::Neg(a) => acc(&mut adj[a], g.scale(-1.0)),
                Op::Tanh(a) => {
                    let d = g
                        .zip_map(&nodes[i].value, |x, y| x * (1.0 - y * y))
                        .unwrap();
                    acc(&mut adj[a], d);
                }
                Op::Exp(a) => acc(&mut adj[a], g.zip_map(&nodes[i].value, |x, y| x * y).unwrap()),
                Op::Log(a) => acc(&mut adj[a], g.zip_map(&nodes[a].value, |x, y| x / y).unwrap()),
                Op::Sin(a) => acc(
                    &mut adj[a],
                    g.zip_map(&nodes[a].value, |x, y| x * y.cos()).unwrap(),
                ),
                Op::Cos(a) => acc(
                    &mut adj[a],
                    g.zip_map(&nodes[a].value, |x, y| -x * y.sin()).unwrap(),
                ),
                Op::PowI(a, p) => {
                    let d = g
                        .zip_map(&nodes[a].value, |x, y| x * p as f64 * y.powi(p - 1))
                        .unwrap();
                    acc(&mut adj[a], d);
                }
                Op::Sum(a) => {
                    let (r, c) = nodes[a].value.shape();
                    acc(&mut adj[a], DenseMatrix::filled(r, c, g.get(0, 0)));
                }
                Op::Slice(a, offset) => {
                    let (r, c) = nodes[a].value.shape();
                    let mut full = DenseMatrix::zeros(r, c);
                    let len = g.as_slice().len();
                    full.as_mut_slice()[offset..offset + len].copy_from_slice(g.as_slice());
                    acc(&mut adj[a], full);
                }
                Op::Column(a, j) => {
                    let (r, c) = nodes[a].value.shape();
                    let mut full = DenseMatrix::zeros(r, c);
                    for k in 0..r {
                        full.set(k, j, g.get(k, 0));
                    }
                    acc(&mut adj[a], full);
                }
            }
        }
        Gradients { adj }
    }
}

/// Adjoints produced by [`Tape::gradients`].
pub struct Gradients {
    adj: Vec<Option<DenseMatrix>>,
}

impl Gradients {
    /// Gradient with respect to `v`, or `None` if the output does not depend on it.
    pub fn wrt(&self, v: Var<'_>) -> Option<&DenseMatrix> {
        self.adj.get(v.idx).and_then(|g| g.as_ref())
    }

    /// Gradient with respect to `v`, zero-filled when unreached.
    pub fn wrt_or_zeros(&self, v: Var<'_>) -> DenseMatrix {
        match self.wrt(v) {
            Some(g) => g.clone(),
            None => {
                let (r, c) = v.shape();
                DenseMatrix::zeros(r, c)
            }
        }
    }
}

fn same_shape(op: &str, a: &DenseMatrix, b: &DenseMatrix) {
    assert_eq!(
        a.shape(),
        b.shape(),
        "{op}: shape mismatch {:?} vs {:?}",
        a.shape(),
        b.shape()
    );
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> DenseMatrix {
        self.tape.nodes.borrow()[self.idx].value.clone()
    }

    /// Value of a `1 × 1` node.
    pub fn scalar(&self) -> f64 {
        let nodes = self.tape.nodes.borrow();
        let v = &nodes[self.idx].value;
        assert_eq!(v.shape(), (1, 1), "scalar() on non-scalar node");
        v.get(0, 0)
    }

    pub fn shape(&self) -> (usize, usize) {
        self.tape.nodes.borrow()[self.idx].value.shape()
    }

    pub fn matmul(self, rhs: Var<'t>) -> Var<'t> {
        self.tape.binary(self.idx, rhs.idx, Op::MatMul(self.idx, rhs.idx), |a, b| {
            a.matmul(b).expect("matmul shape mismatch")
        })
    }

    /// Adds a `1 × cols` row to every row of `self`.
    pub fn add_row(self, row: Var<'t>) -> Var<'t> {
        self.tape.binary(self.idx, row.idx, Op::AddRow(self.idx, row.idx), |a, r| {
            assert_eq!(r.rows(), 1, "add_row: bias must be a single row");
            assert_eq!(r.cols(), a.cols(), "add_row: width mismatch");
            let mut out = a.clone();
            for i in 0..a.rows() {
                for j in 0..a.cols() {
                    out.set(i, j, a.get(i, j) + r.get(0, j));
                }
            }
            out
        })
    }

    pub fn tanh(self) -> Var<'t> {
        self.tape
            .unary(self.idx, Op::Tanh(self.idx), |a| a.map(f64::tanh))
    }

    pub fn exp(self) -> Var<'t> {
        self.tape.unary(self.idx, Op::Exp(self.idx), |a| a.map(f64::exp))
    }

    pub fn ln(self) -> Var<'t> {
        self.tape.unary(self.idx, Op::Log(self.idx), |a| a.map(f64::ln))
    }

    pub fn sin(self) -> Var<'t> {
        self.tape.unary(self.idx, Op::Sin(self.idx), |a| a.map(f64::sin))
    }

    pub fn cos(self) -> Var<'t> {
        self.tape.unary(self.idx, Op::Cos(self.idx), |a| a.map(f64::cos))
    }

    pub fn powi(self, p: i32) -> Var<'t> {
        self.tape
            .unary(self.idx, Op::PowI(self.idx, p), |a| a.map(|v| v.powi(p)))
    }

    pub fn square(self) -> Var<'t> {
        self.powi(2)
    }

    pub fn sum(self) -> Var<'t> {
        self.tape
            .unary(self.idx, Op::Sum(self.idx), |a| DenseMatrix::scalar(a.sum()))
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        self.tape
            .unary(self.idx, Op::Scale(self.idx, c), |a| a.scale(c))
    }

    pub fn add_const(self, c: f64) -> Var<'t> {
        self.tape
            .unary(self.idx, Op::AddConst(self.idx), |a| a.map(|v| v + c))
    }

    /// `len` consecutive entries starting at `offset`, reshaped to `rows × cols`.
    pub fn slice(self, offset: usize, rows: usize, cols: usize) -> Var<'t> {
        self.tape.unary(self.idx, Op::Slice(self.idx, offset), |a| {
            let data = &a.as_slice()[offset..offset + rows * cols];
            DenseMatrix::from_vec(rows, cols, data.to_vec()).expect("slice")
        })
    }

    pub fn column(self, j: usize) -> Var<'t> {
        self.tape.unary(self.idx, Op::Column(self.idx, j), |a| {
            DenseMatrix::column(&a.col_to_vec(j))
        })
    }

    /// `log(1 + exp(x))` composed from primitives.
    pub fn softplus(self) -> Var<'t> {
        self.exp().add_const(1.0).ln()
    }
}

macro_rules! binop {
    ($trait:ident, $method:ident, $variant:ident, $f:expr) => {
        impl<'t> std::ops::$trait for Var<'t> {
            type Output = Var<'t>;
            fn $method(self, rhs: Var<'t>) -> Var<'t> {
                self.tape
                    .binary(self.idx, rhs.idx, Op::$variant(self.idx, rhs.idx), |a, b| {
                        same_shape(stringify!($method), a, b);
                        a.zip_map(b, $f).unwrap()
                    })
            }
        }
    };
}

binop!(Add, add, Add, |x, y| x + y);
binop!(Sub, sub, Sub, |x, y| x - y);
binop!(Mul, mul, Mul, |x, y| x * y);
binop!(Div, div, Div, |x, y| x / y);

impl<'t> std::ops::Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.tape.unary(self.idx, Op::Neg(self.idx), |a| a.scale(-1.0))
    }
}

impl<'t> std::ops::Mul<f64> for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, c: f64) -> Var<'t> {
        self.scale(c)
    }
}

impl<'t> std::ops::Add<f64> for Var<'t> {
    type Output = Var<'t>;
    fn add(self, c: f64) -> Var<'t> {
        self.add_const(c)
    }
}
