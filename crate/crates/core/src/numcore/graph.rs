//! Tape-based reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! Every operation appends a node to the [`Graph`]. Nodes only ever refer to
//! nodes recorded before them, so the tape order is a topological order and
//! [`Graph::backward`] is a single reverse sweep that visits each node once.
//!
//! ```
//! use lpkm_core::numcore::{Graph, Tensor};
//!
//! let mut g = Graph::new();
//! let x = g.param(Tensor::scalar(3.0));
//! let y = g.mul(x, x).unwrap();
//! let grads = g.backward(y).unwrap();
//! assert_eq!(grads.wrt(x).unwrap().item().unwrap(), 6.0);
//! ```

use std::fmt;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule for an operation defined outside this module.
///
/// `backward` receives the input values, the forward output and the gradient
/// of the loss with respect to that output, and returns one gradient per input
/// (or `None` where `needs_grad[i]` is false).
pub trait CustomOp {
    fn name(&self) -> &'static str;

    fn backward(
        &self,
        inputs: &[&Tensor],
        output: &Tensor,
        grad_output: &Tensor,
        needs_grad: &[bool],
    ) -> Vec<Option<Tensor>>;
}

enum Op {
    Constant,
    Param,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Abs(Var),
    Sqrt(Var),
    Sum(Var),
    MatMul(Var, Var),
    AddRow(Var, Var),
    Slice { src: Var, offset: usize },
    Gather { src: Var, indices: Vec<usize> },
    Concat(Vec<Var>),
    Reshape(Var),
    Custom { inputs: Vec<Var>, rule: Box<dyn CustomOp> },
}

impl Op {
    fn parents(&self) -> Vec<Var> {
        match self {
            Op::Constant | Op::Param => Vec::new(),
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) => vec![*a, *b],
            Op::MatMul(a, b) | Op::AddRow(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::Relu(a)
            | Op::Abs(a)
            | Op::Sqrt(a)
            | Op::Sum(a)
            | Op::Reshape(a) => vec![*a],
            Op::Slice { src, .. } | Op::Gather { src, .. } => vec![*src],
            Op::Concat(vs) => vs.clone(),
            Op::Custom { inputs, .. } => inputs.clone(),
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Op::Constant => "constant",
            Op::Param => "param",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Relu(..) => "relu",
            Op::Abs(..) => "abs",
            Op::Sqrt(..) => "sqrt",
            Op::Sum(..) => "sum",
            Op::MatMul(..) => "matmul",
            Op::AddRow(..) => "add_row",
            Op::Slice { .. } => "slice",
            Op::Gather { .. } => "gather",
            Op::Concat(..) => "concat",
            Op::Reshape(..) => "reshape",
            Op::Custom { rule, .. } => rule.name(),
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// A recorded computation.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl fmt::Debug for Graph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Graph")
            .field("nodes", &self.nodes.len())
            .finish()
    }
}

fn same_shape(op: &str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!(
            "{op}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("shapes checked by caller")
}

/// `a [m,k] x b [k,n]`.
fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for (p, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            for (o, &bv) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += av * bv;
            }
        }
    }
    out
}

fn matrix_dims(t: &Tensor) -> Option<(usize, usize)> {
    match *t.shape() {
        [r, c] => Some((r, c)),
        _ => None,
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let needs_grad = match &op {
            Op::Constant => false,
            Op::Param => true,
            other => other.parents().iter().any(|p| self.nodes[p.0].needs_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A value that gradients do not flow into.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant)
    }

    /// A differentiable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Param)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape("add", x, y)?;
        let out = zip_map(x, y, |p, q| p + q);
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape("sub", x, y)?;
        let out = zip_map(x, y, |p, q| p - q);
        Ok(self.push(out, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape("mul", x, y)?;
        let out = zip_map(x, y, |p, q| p * q);
        Ok(self.push(out, Op::Mul(a, b)))
    }

    /// Elementwise quotient. Division by zero is a numeric failure.
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape("div", x, y)?;
        if y.data().contains(&0.0) {
            return Err(Error::NumericFailure("division by zero".into()));
        }
        let out = zip_map(x, y, |p, q| p / q);
        Ok(self.push(out, Op::Div(a, b)))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let out = self.value(a).map(|v| v * factor);
        self.push(out, Op::Scale(a, factor))
    }

    pub fn add_scalar(&mut self, a: Var, offset: f64) -> Var {
        let out = self.value(a).map(|v| v + offset);
        self.push(out, Op::AddScalar(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| v.max(0.0));
        self.push(out, Op::Relu(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::abs);
        self.push(out, Op::Abs(a))
    }

    /// Elementwise square root. Negative inputs are a domain error; the
    /// derivative at exactly zero is taken as zero.
    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if x.data().iter().any(|&v| v < 0.0) {
            return Err(Error::domain("sqrt of negative value"));
        }
        let out = x.map(f64::sqrt);
        Ok(self.push(out, Op::Sqrt(a)))
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        self.push(out, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1) as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Matrix product `a [m,k] x b [k,n] -> [m,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        let ((m, k), (k2, n)) = match (matrix_dims(x), matrix_dims(y)) {
            (Some(l), Some(r)) => (l, r),
            _ => {
                return Err(Error::shape(format!(
                    "matmul needs rank-2 operands, got {:?} and {:?}",
                    x.shape(),
                    y.shape()
                )))
            }
        };
        if k != k2 {
            return Err(Error::shape(format!(
                "matmul inner dims: {:?} x {:?}",
                x.shape(),
                y.shape()
            )));
        }
        let out = Tensor::new(vec![m, n], matmul(x.data(), y.data(), m, k, n))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    /// Adds the vector `row [n]` to every row of `a [m,n]`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (x, r) = (self.value(a), self.value(row));
        let (m, n) = matrix_dims(x)
            .ok_or_else(|| Error::shape(format!("add_row on {:?}", x.shape())))?;
        if r.shape() != [n] {
            return Err(Error::shape(format!(
                "add_row: {:?} + {:?}",
                x.shape(),
                r.shape()
            )));
        }
        let mut data = x.data().to_vec();
        for i in 0..m {
            for (o, &b) in data[i * n..(i + 1) * n].iter_mut().zip(r.data()) {
                *o += b;
            }
        }
        let out = Tensor::new(vec![m, n], data)?;
        Ok(self.push(out, Op::AddRow(a, row)))
    }

    /// Contiguous range of the flattened tensor starting at `offset`, viewed
    /// with `shape`.
    pub fn slice(&mut self, src: Var, offset: usize, shape: &[usize]) -> Result<Var> {
        let n: usize = shape.iter().product();
        let x = self.value(src);
        if offset + n > x.len() {
            return Err(Error::shape(format!(
                "slice {offset}..{} out of {} elements",
                offset + n,
                x.len()
            )));
        }
        let out = Tensor::new(shape.to_vec(), x.data()[offset..offset + n].to_vec())?;
        Ok(self.push(out, Op::Slice { src, offset }))
    }

    /// Row `i` of a rank-2 tensor, as a vector.
    pub fn row(&mut self, src: Var, i: usize) -> Result<Var> {
        let (m, n) = matrix_dims(self.value(src))
            .ok_or_else(|| Error::shape("row() needs a matrix"))?;
        if i >= m {
            return Err(Error::shape(format!("row {i} of {m}")));
        }
        self.slice(src, i * n, &[n])
    }

    /// Picks flat entries by index into a vector.
    pub fn gather(&mut self, src: Var, indices: &[usize]) -> Result<Var> {
        let x = self.value(src);
        if let Some(&bad) = indices.iter().find(|&&i| i >= x.len()) {
            return Err(Error::shape(format!(
                "gather index {bad} out of {} elements",
                x.len()
            )));
        }
        let out = Tensor::vector(indices.iter().map(|&i| x.data()[i]).collect());
        Ok(self.push(
            out,
            Op::Gather {
                src,
                indices: indices.to_vec(),
            },
        ))
    }

    /// Flattened concatenation.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let data: Vec<f64> = parts
            .iter()
            .flat_map(|&p| self.value(p).data().iter().copied())
            .collect();
        self.push(Tensor::vector(data), Op::Concat(parts.to_vec()))
    }

    pub fn reshape(&mut self, src: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(src).clone().reshape(shape)?;
        Ok(self.push(out, Op::Reshape(src)))
    }

    /// Records an operation whose forward value was computed by the caller.
    pub fn custom(&mut self, inputs: &[Var], output: Tensor, rule: Box<dyn CustomOp>) -> Var {
        self.push(
            output,
            Op::Custom {
                inputs: inputs.to_vec(),
                rule,
            },
        )
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::new(lv.shape().to_vec(), vec![1.0])?);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(gout) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &gout, &mut grads)?;
            grads[idx] = Some(gout);
        }

        for (idx, node) in self.nodes.iter().enumerate() {
            if !matches!(node.op, Op::Param) {
                grads[idx] = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], target: Var, g: Tensor) {
        if !self.nodes[target.0].needs_grad {
            return;
        }
        match &mut grads[target.0] {
            Some(acc) => acc.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node, gout: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let val = |v: Var| &self.nodes[v.0].value;
        let needs = |v: Var| self.nodes[v.0].needs_grad;
        match &node.op {
            Op::Constant | Op::Param => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, gout.clone());
                self.accumulate(grads, *b, gout.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, gout.clone());
                self.accumulate(grads, *b, gout.map(|v| -v));
            }
            Op::Mul(a, b) => {
                if needs(*a) {
                    self.accumulate(grads, *a, zip_map(gout, val(*b), |g, y| g * y));
                }
                if needs(*b) {
                    self.accumulate(grads, *b, zip_map(gout, val(*a), |g, x| g * x));
                }
            }
            Op::Div(a, b) => {
                let y = val(*b);
                if needs(*a) {
                    self.accumulate(grads, *a, zip_map(gout, y, |g, q| g / q));
                }
                if needs(*b) {
                    let q = &node.value;
                    let gb = zip_map(&zip_map(gout, q, |g, o| -g * o), y, |t, d| t / d);
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Scale(a, f) => self.accumulate(grads, *a, gout.map(|g| g * f)),
            Op::AddScalar(a) | Op::Reshape(a) => {
                let g = Tensor::new(val(*a).shape().to_vec(), gout.data().to_vec())?;
                self.accumulate(grads, *a, g);
            }
            Op::Relu(a) => {
                let g = zip_map(gout, val(*a), |g, x| if x > 0.0 { g } else { 0.0 });
                self.accumulate(grads, *a, g);
            }
            Op::Abs(a) => {
                let g = zip_map(gout, val(*a), |g, x| g * sign(x));
                self.accumulate(grads, *a, g);
            }
            Op::Sqrt(a) => {
                let g = zip_map(gout, &node.value, |g, r| if r > 0.0 { g / (2.0 * r) } else { 0.0 });
                self.accumulate(grads, *a, g);
            }
            Op::Sum(a) => {
                let g = gout.item()?;
                self.accumulate(grads, *a, Tensor::full(val(*a).shape(), g));
            }
            Op::MatMul(a, b) => {
                let (x, y) = (val(*a), val(*b));
                let (m, k) = matrix_dims(x).expect("checked in forward");
                let n = y.shape()[1];
                if needs(*a) {
                    // dA = dC [m,n] x B^T [n,k]
                    let bt = transpose(y.data(), k, n);
                    let ga = matmul(gout.data(), &bt, m, n, k);
                    self.accumulate(grads, *a, Tensor::new(vec![m, k], ga)?);
                }
                if needs(*b) {
                    // dB = A^T [k,m] x dC [m,n]
                    let at = transpose(x.data(), m, k);
                    let gb = matmul(&at, gout.data(), k, m, n);
                    self.accumulate(grads, *b, Tensor::new(vec![k, n], gb)?);
                }
            }
            Op::AddRow(a, r) => {
                self.accumulate(grads, *a, gout.clone());
                if needs(*r) {
                    let n = val(*r).len();
                    let mut gr = vec![0.0; n];
                    for chunk in gout.data().chunks(n) {
                        for (o, g) in gr.iter_mut().zip(chunk) {
                            *o += g;
                        }
                    }
                    self.accumulate(grads, *r, Tensor::vector(gr));
                }
            }
            Op::Slice { src, offset } => {
                let x = val(*src);
                let mut g = Tensor::zeros(x.shape());
                g.data_mut()[*offset..*offset + gout.len()].copy_from_slice(gout.data());
                self.accumulate(grads, *src, g);
            }
            Op::Gather { src, indices } => {
                let mut g = Tensor::zeros(val(*src).shape());
                for (&i, &gv) in indices.iter().zip(gout.data()) {
                    g.data_mut()[i] += gv;
                }
                self.accumulate(grads, *src, g);
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let x = val(p);
                    let piece = gout.data()[offset..offset + x.len()].to_vec();
                    offset += x.len();
                    if needs(p) {
                        self.accumulate(grads, p, Tensor::new(x.shape().to_vec(), piece)?);
                    }
                }
            }
            Op::Custom { inputs, rule } => {
                let values: Vec<&Tensor> = inputs.iter().map(|&v| val(v)).collect();
                let flags: Vec<bool> = inputs.iter().map(|&v| needs(v)).collect();
                let gs = rule.backward(&values, &node.value, gout, &flags);
                for ((&input, g), x) in inputs.iter().zip(gs).zip(&values) {
                    if let Some(g) = g {
                        if g.shape() != x.shape() {
                            return Err(Error::shape(format!(
                                "{} backward returned {:?} for input {:?}",
                                node.op.name(),
                                g.shape(),
                                x.shape()
                            )));
                        }
                        self.accumulate(grads, input, g);
                    }
                }
            }
        }
        Ok(())
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; a.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

/// Gradients of a scalar with respect to every [`Graph::param`] it reaches.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `param`, or `None` when the loss does not depend on it.
    pub fn wrt(&self, param: Var) -> Option<&Tensor> {
        self.grads.get(param.0).and_then(Option::as_ref)
    }

    /// Like [`Gradients::wrt`], but an unreached parameter gets zeros shaped
    /// like `like`.
    pub fn wrt_or_zeros(&self, param: Var, like: &Tensor) -> Tensor {
        self.wrt(param)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(like.shape()))
    }

    /// Parameters with a recorded gradient, in tape order.
    pub fn params(&self) -> impl Iterator<Item = (Var, &Tensor)> {
        self.grads
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.as_ref().map(|g| (Var(i), g)))
    }
}
