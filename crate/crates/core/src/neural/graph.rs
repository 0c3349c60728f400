//! Reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every operation of one forward pass. Parameters enter
//! through [`Graph::param`]; [`Graph::backward`] returns their gradients,
//! which callers add into a [`ParamSet`].

use std::collections::HashMap;

use super::special::{digamma, ln_gamma, trigamma};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Identifies a parameter tensor: the owning set's tag and its index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamKey {
    pub set: u32,
    pub index: usize,
}

/// Named parameter tensors with gradient buffers of the same shapes.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet {
    tag: u32,
    pub names: Vec<String>,
    pub values: Vec<Tensor>,
    pub grads: Vec<Tensor>,
}

impl ParamSet {
    /// `tag` distinguishes sets used in the same graph.
    pub fn new(tag: u32) -> Self {
        ParamSet {
            tag,
            names: Vec::new(),
            values: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn tag(&self) -> u32 {
        self.tag
    }

    pub fn push(&mut self, name: impl Into<String>, value: Tensor) -> usize {
        self.grads.push(Tensor::zeros(value.rows, value.cols));
        self.values.push(value);
        self.names.push(name.into());
        self.values.len() - 1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.grads {
            g.data.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    /// Adds this set's entries of `grads` into the gradient buffers.
    pub fn accumulate(&mut self, grads: &Gradients) {
        for (key, g) in &grads.params {
            if key.set == self.tag {
                self.grads[key.index].add_assign(g);
            }
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.grads.iter().map(Tensor::norm_sq).sum::<f64>().sqrt()
    }

    /// Rescales gradients so their global L2 norm is at most `max_norm`.
    /// Returns the norm before clipping.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.grad_norm();
        if norm > max_norm && norm > 0.0 {
            let s = max_norm / norm;
            for g in &mut self.grads {
                g.data.iter_mut().for_each(|x| *x *= s);
            }
        }
        norm
    }

    /// Replaces all values from `(name, tensor)` pairs, which must match this
    /// set's names and shapes in order.
    pub fn load_values(&mut self, named: Vec<(String, Tensor)>) -> Result<()> {
        if named.len() != self.values.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                self.values.len(),
                named.len()
            )));
        }
        for (k, (name, t)) in named.iter().enumerate() {
            if *name != self.names[k] || t.shape() != self.values[k].shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor {k}: expected {} {:?}, found {name} {:?}",
                    self.names[k],
                    self.values[k].shape(),
                    t.shape()
                )));
            }
        }
        for (slot, (_, t)) in self.values.iter_mut().zip(named) {
            *slot = t;
        }
        Ok(())
    }
}

/// Gradients of a scalar loss with respect to every parameter it reached.
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    pub params: Vec<(ParamKey, Tensor)>,
    inputs: HashMap<Var, Tensor>,
}

impl Gradients {
    /// Gradient with respect to a non-parameter leaf created with
    /// [`Graph::input_tracked`].
    pub fn input(&self, v: Var) -> Option<&Tensor> {
        self.inputs.get(&v)
    }
}

#[derive(Clone, Debug)]
enum Op {
    Input,
    TrackedInput,
    Param(ParamKey),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `m x n` plus a broadcast `1 x n` row
    AddRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MulConst(Var, Tensor),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Softplus(Var),
    Exp(Var),
    Ln(Var),
    LnGamma(Var),
    Digamma(Var),
    ConcatCols(Var, Var),
    Sum(Var),
    Detach,
}

struct Node {
    value: Tensor,
    op: Op,
    /// Whether any parameter or tracked input is upstream.
    live: bool,
}

/// One forward pass worth of recorded operations.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamKey, Var>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, live: bool) -> Var {
        self.nodes.push(Node { value, op, live });
        Var(self.nodes.len() - 1)
    }

    fn live(&self, v: Var) -> bool {
        self.nodes[v.0].live
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Constant input; no gradient flows into it.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input, false)
    }

    /// Input whose gradient is reported by [`Gradients::input`].
    pub fn input_tracked(&mut self, t: Tensor) -> Var {
        self.push(t, Op::TrackedInput, true)
    }

    /// Parameter `index` of `set`. Repeated calls return the same node.
    pub fn param(&mut self, set: &ParamSet, index: usize) -> Var {
        let key = ParamKey {
            set: set.tag,
            index,
        };
        if let Some(&v) = self.params.get(&key) {
            return v;
        }
        let v = self.push(set.values[index].clone(), Op::Param(key), true);
        self.params.insert(key, v);
        v
    }

    /// Same value as `v`, but gradients stop here.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.push(t, Op::Detach, false)
    }

    fn shape_err(&self, op: &str, a: Var, b: Var) -> Error {
        Error::Dimension(format!(
            "{op}: incompatible shapes {:?} and {:?}",
            self.value(a).shape(),
            self.value(b).shape()
        ))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).cols != self.value(b).rows {
            return Err(self.shape_err("matmul", a, b));
        }
        let t = self.value(a).matmul(self.value(b));
        let live = self.live(a) || self.live(b);
        Ok(self.push(t, Op::MatMul(a, b), live))
    }

    fn same_shape(&self, op: &str, a: Var, b: Var) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(self.shape_err(op, a, b));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let t = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let live = self.live(a) || self.live(b);
        Ok(self.push(t, Op::Add(a, b), live))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let t = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let live = self.live(a) || self.live(b);
        Ok(self.push(t, Op::Sub(a, b), live))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let t = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let live = self.live(a) || self.live(b);
        Ok(self.push(t, Op::Mul(a, b), live))
    }

    /// Adds the `1 x n` row `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if tb.rows != 1 || tb.cols != ta.cols {
            return Err(self.shape_err("add_row", a, b));
        }
        let mut t = ta.clone();
        for r in 0..t.rows {
            for (x, y) in t.data[r * t.cols..(r + 1) * t.cols].iter_mut().zip(&tb.data) {
                *x += y;
            }
        }
        let live = self.live(a) || self.live(b);
        Ok(self.push(t, Op::AddRow(a, b), live))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let t = self.value(a).map(|x| k * x);
        let live = self.live(a);
        self.push(t, Op::Scale(a, k), live)
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        let t = self.value(a).map(|x| x + k);
        let live = self.live(a);
        self.push(t, Op::AddScalar(a), live)
    }

    /// Elementwise product with a constant.
    pub fn mul_const(&mut self, a: Var, c: Tensor) -> Result<Var> {
        if self.value(a).shape() != c.shape() {
            return Err(Error::Dimension(format!(
                "mul_const: incompatible shapes {:?} and {:?}",
                self.value(a).shape(),
                c.shape()
            )));
        }
        let t = self.value(a).zip_map(&c, |x, y| x * y);
        let live = self.live(a);
        Ok(self.push(t, Op::MulConst(a, c), live))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let t = self.value(a).map(f);
        let live = self.live(a);
        self.push(t, op, live)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, softplus, Op::Softplus(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Ln(a))
    }

    pub fn ln_gamma(&mut self, a: Var) -> Var {
        self.unary(a, ln_gamma, Op::LnGamma(a))
    }

    pub fn digamma(&mut self, a: Var) -> Var {
        self.unary(a, digamma, Op::Digamma(a))
    }

    /// `[a | b]`
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rows != tb.rows {
            return Err(self.shape_err("concat_cols", a, b));
        }
        let cols = ta.cols + tb.cols;
        let mut data = Vec::with_capacity(ta.rows * cols);
        for r in 0..ta.rows {
            data.extend_from_slice(&ta.data[r * ta.cols..(r + 1) * ta.cols]);
            data.extend_from_slice(&tb.data[r * tb.cols..(r + 1) * tb.cols]);
        }
        let t = Tensor::from_vec(ta.rows, cols, data);
        let live = self.live(a) || self.live(b);
        Ok(self.push(t, Op::ConcatCols(a, b), live))
    }

    /// Sum of all entries, as a `1 x 1` tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let t = Tensor::scalar(self.value(a).sum());
        let live = self.live(a);
        self.push(t, Op::Sum(a), live)
    }

    /// Gradients of the scalar `loss` with respect to all parameters and
    /// tracked inputs it depends on.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(Error::Dimension(format!(
                "backward requires a scalar loss, got shape {:?}",
                lt.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::scalar(1.0));
        let mut out = Gradients::default();

        fn acc(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.live {
                continue;
            }
            let y = &node.value;
            match &node.op {
                Op::Input | Op::Detach => {}
                Op::TrackedInput => {
                    out.inputs.insert(Var(idx), g);
                }
                Op::Param(key) => out.params.push((*key, g)),
                Op::MatMul(a, b) => {
                    if self.live(*a) {
                        acc(&mut grads, *a, g.matmul_t(self.value(*b)));
                    }
                    if self.live(*b) {
                        acc(&mut grads, *b, self.value(*a).t_matmul(&g));
                    }
                }
                Op::Add(a, b) => {
                    if self.live(*b) {
                        acc(&mut grads, *b, g.clone());
                    }
                    if self.live(*a) {
                        acc(&mut grads, *a, g);
                    }
                }
                Op::Sub(a, b) => {
                    if self.live(*b) {
                        acc(&mut grads, *b, g.map(|x| -x));
                    }
                    if self.live(*a) {
                        acc(&mut grads, *a, g);
                    }
                }
                Op::Mul(a, b) => {
                    if self.live(*a) {
                        acc(&mut grads, *a, g.zip_map(self.value(*b), |x, y| x * y));
                    }
                    if self.live(*b) {
                        acc(&mut grads, *b, g.zip_map(self.value(*a), |x, y| x * y));
                    }
                }
                Op::AddRow(a, b) => {
                    if self.live(*b) {
                        let mut row = Tensor::zeros(1, g.cols);
                        for r in 0..g.rows {
                            for (s, x) in row.data.iter_mut().zip(&g.data[r * g.cols..(r + 1) * g.cols]) {
                                *s += x;
                            }
                        }
                        acc(&mut grads, *b, row);
                    }
                    if self.live(*a) {
                        acc(&mut grads, *a, g);
                    }
                }
                Op::Scale(a, k) => acc(&mut grads, *a, g.map(|x| k * x)),
                Op::AddScalar(a) => acc(&mut grads, *a, g),
                Op::MulConst(a, c) => acc(&mut grads, *a, g.zip_map(c, |x, y| x * y)),
                Op::Relu(a) => {
                    let d = self.value(*a).zip_map(&g, |x, gx| if x > 0.0 { gx } else { 0.0 });
                    acc(&mut grads, *a, d);
                }
                Op::Sigmoid(a) => acc(&mut grads, *a, y.zip_map(&g, |s, gx| gx * s * (1.0 - s))),
                Op::Tanh(a) => acc(&mut grads, *a, y.zip_map(&g, |t, gx| gx * (1.0 - t * t))),
                Op::Softplus(a) => {
                    acc(&mut grads, *a, self.value(*a).zip_map(&g, |x, gx| gx * sigmoid(x)))
                }
                Op::Exp(a) => acc(&mut grads, *a, y.zip_map(&g, |e, gx| gx * e)),
                Op::Ln(a) => acc(&mut grads, *a, self.value(*a).zip_map(&g, |x, gx| gx / x)),
                Op::LnGamma(a) => {
                    acc(&mut grads, *a, self.value(*a).zip_map(&g, |x, gx| gx * digamma(x)))
                }
                Op::Digamma(a) => {
                    acc(&mut grads, *a, self.value(*a).zip_map(&g, |x, gx| gx * trigamma(x)))
                }
                Op::ConcatCols(a, b) => {
                    let ca = self.value(*a).cols;
                    let cb = self.value(*b).cols;
                    let mut ga = Vec::with_capacity(g.rows * ca);
                    let mut gb = Vec::with_capacity(g.rows * cb);
                    for r in 0..g.rows {
                        let row = &g.data[r * g.cols..(r + 1) * g.cols];
                        ga.extend_from_slice(&row[..ca]);
                        gb.extend_from_slice(&row[ca..]);
                    }
                    if self.live(*a) {
                        acc(&mut grads, *a, Tensor::from_vec(g.rows, ca, ga));
                    }
                    if self.live(*b) {
                        acc(&mut grads, *b, Tensor::from_vec(g.rows, cb, gb));
                    }
                }
                Op::Sum(a) => {
                    let s = g.item();
                    let t = self.value(*a);
                    acc(&mut grads, *a, Tensor::from_vec(t.rows, t.cols, vec![s; t.len()]));
                }
            }
        }
        out.params.sort_by_key(|(k, _)| *k);
        Ok(out)
    }
}
