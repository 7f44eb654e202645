//! Tape-based reverse-mode differentiation.
//!
//! Every op evaluates eagerly and appends a node; node ids are therefore a
//! topological order and [`Tape::backward`] replays them in reverse.

use std::cell::{Ref, RefCell};

use crate::error::{shape_err, Error, Result};
use crate::numerics::kernels::{self, Conv1dSpec};
use crate::numerics::tensor::{dot, Tensor};
use crate::scalar::Scalar;

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Scale(usize, T),
    MulScalar { x: usize, s: usize },
    Relu(usize),
    Reshape(usize),
    Concat { a: usize, b: usize },
    Conv1d { x: usize, w: usize, bias: Option<usize>, spec: Conv1dSpec },
    ConvTranspose1d { x: usize, w: usize, bias: Option<usize>, stride: usize },
    Linear { x: usize, w: usize, bias: Option<usize> },
    Matmul(usize, usize),
    TransposeLast(usize),
    Softmax(usize),
    MeanSquares(usize),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape<T> {
    nodes: RefCell<Vec<Node<T>>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var({})", self.id)
    }
}

/// Gradients produced by one backward pass, indexed by the vars of the tape.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var<'_, T>) -> Option<&Tensor<T>> {
        self.grads.get(v.id).and_then(|g| g.as_ref())
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor<T>, op: Op<T>, needs_grad: bool, name: &str) -> Result<Var<'_, T>> {
        value.check_finite(name)?;
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Ok(Var {
            tape: self,
            id: nodes.len() - 1,
        })
    }

    /// Input that does not receive a gradient.
    pub fn constant(&self, value: Tensor<T>) -> Result<Var<'_, T>> {
        self.push(value, Op::Leaf, false, "constant")
    }

    /// Differentiable leaf.
    pub fn leaf(&self, value: Tensor<T>) -> Result<Var<'_, T>> {
        self.push(value, Op::Leaf, true, "leaf")
    }

    fn needs(&self, id: usize) -> bool {
        self.nodes.borrow()[id].needs_grad
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Gradients<T>> {
        let nodes = self.nodes.borrow();
        if nodes[loss.id].value.len() != 1 {
            return Err(shape_err!(
                "backward needs a scalar loss, got shape {:?}",
                nodes[loss.id].value.shape()
            ));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.id] = Some(Tensor::full(nodes[loss.id].value.shape(), T::one()));

        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if !node.needs_grad {
                continue;
            }
            if !g.is_finite() {
                return Err(Error::Numerical(format!("non-finite gradient at node {id}")));
            }
            let need = |i: usize| nodes[i].needs_grad;
            let mut acc = |i: usize, t: Tensor<T>| -> Result<()> {
                match grads[i].as_mut() {
                    Some(e) => e.add_assign(&t),
                    None => {
                        grads[i] = Some(t);
                        Ok(())
                    }
                }
            };
            let val = |i: usize| &nodes[i].value;
            match &node.op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    if need(*a) {
                        acc(*a, g.clone())?;
                    }
                    if need(*b) {
                        acc(*b, g.clone())?;
                    }
                }
                Op::Sub(a, b) => {
                    if need(*a) {
                        acc(*a, g.clone())?;
                    }
                    if need(*b) {
                        acc(*b, g.map(|v| -v))?;
                    }
                }
                Op::Scale(a, c) => {
                    let c = *c;
                    acc(*a, g.map(|v| v * c))?;
                }
                Op::MulScalar { x, s } => {
                    let sv = val(*s).data()[0];
                    if need(*x) {
                        acc(*x, g.map(|v| v * sv))?;
                    }
                    if need(*s) {
                        let d = dot(g.data(), val(*x).data());
                        acc(*s, Tensor::from_vec(val(*s).shape(), vec![d])?)?;
                    }
                }
                Op::Relu(a) => {
                    let x = val(*a);
                    let mut gx = g.clone();
                    for (gv, &xv) in gx.data_mut().iter_mut().zip(x.data()) {
                        if xv <= T::zero() {
                            *gv = T::zero();
                        }
                    }
                    acc(*a, gx)?;
                }
                Op::Reshape(a) => {
                    acc(*a, g.clone().reshape(val(*a).shape())?)?;
                }
                Op::Concat { a, b } => {
                    let (va, vb) = (val(*a), val(*b));
                    let batch = va.shape()[0];
                    let (na, nb) = (va.len() / batch, vb.len() / batch);
                    let mut ga = Vec::with_capacity(va.len());
                    let mut gb = Vec::with_capacity(vb.len());
                    for row in g.data().chunks(na + nb) {
                        ga.extend_from_slice(&row[..na]);
                        gb.extend_from_slice(&row[na..]);
                    }
                    if need(*a) {
                        acc(*a, Tensor::from_vec(va.shape(), ga)?)?;
                    }
                    if need(*b) {
                        acc(*b, Tensor::from_vec(vb.shape(), gb)?)?;
                    }
                }
                Op::Conv1d { x, w, bias, spec } => {
                    let nb = bias.is_some_and(need);
                    let r = kernels::conv1d_backward(val(*x), val(*w), spec, &g, [need(*x), need(*w), nb])?;
                    if let Some(t) = r.x {
                        acc(*x, t)?;
                    }
                    if let Some(t) = r.w {
                        acc(*w, t)?;
                    }
                    if let (Some(bi), Some(t)) = (bias, r.bias) {
                        acc(*bi, t)?;
                    }
                }
                Op::ConvTranspose1d { x, w, bias, stride } => {
                    let nb = bias.is_some_and(need);
                    let r = kernels::conv1d_transpose_backward(val(*x), val(*w), *stride, &g, [need(*x), need(*w), nb])?;
                    if let Some(t) = r.x {
                        acc(*x, t)?;
                    }
                    if let Some(t) = r.w {
                        acc(*w, t)?;
                    }
                    if let (Some(bi), Some(t)) = (bias, r.bias) {
                        acc(*bi, t)?;
                    }
                }
                Op::Linear { x, w, bias } => {
                    let nb = bias.is_some_and(need);
                    let r = kernels::linear_backward(val(*x), val(*w), &g, [need(*x), need(*w), nb])?;
                    if let Some(t) = r.x {
                        acc(*x, t)?;
                    }
                    if let Some(t) = r.w {
                        acc(*w, t)?;
                    }
                    if let (Some(bi), Some(t)) = (bias, r.bias) {
                        acc(*bi, t)?;
                    }
                }
                Op::Matmul(a, b) => {
                    if need(*a) {
                        let bt = kernels::transpose_last(val(*b))?;
                        acc(*a, kernels::batched_matmul(&g, &bt)?)?;
                    }
                    if need(*b) {
                        let at = kernels::transpose_last(val(*a))?;
                        acc(*b, kernels::batched_matmul(&at, &g)?)?;
                    }
                }
                Op::TransposeLast(a) => {
                    acc(*a, kernels::transpose_last(&g)?)?;
                }
                Op::Softmax(a) => {
                    acc(*a, kernels::softmax_rows_backward(&node.value, &g))?;
                }
                Op::MeanSquares(a) => {
                    let x = val(*a);
                    let c = g.data()[0] * (T::one() + T::one()) / T::from_usize(x.len()).unwrap();
                    acc(*a, x.map(|v| v * c))?;
                }
            }
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn value(&self) -> Ref<'t, Tensor<T>> {
        Ref::map(self.tape.nodes.borrow(), |n| &n[self.id].value)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    fn same_tape(&self, other: &Var<'t, T>) -> Result<()> {
        if std::ptr::eq(self.tape, other.tape) {
            Ok(())
        } else {
            Err(shape_err!("vars belong to different tapes"))
        }
    }

    fn binary(
        &self,
        other: Var<'t, T>,
        name: &str,
        f: impl Fn(T, T) -> T,
        op: Op<T>,
    ) -> Result<Var<'t, T>> {
        self.same_tape(&other)?;
        let out = {
            let (a, b) = (self.value(), other.value());
            if a.shape() != b.shape() {
                return Err(shape_err!("{name}: {:?} vs {:?}", a.shape(), b.shape()));
            }
            let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
            Tensor::from_vec(a.shape(), data)?
        };
        let ng = self.tape.needs(self.id) || self.tape.needs(other.id);
        self.tape.push(out, op, ng, name)
    }

    pub fn add(&self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(other, "add", |a, b| a + b, Op::Add(self.id, other.id))
    }

    pub fn sub(&self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(other, "sub", |a, b| a - b, Op::Sub(self.id, other.id))
    }

    pub fn scale(&self, c: T) -> Result<Var<'t, T>> {
        let out = self.value().map(|v| v * c);
        self.tape.push(out, Op::Scale(self.id, c), self.tape.needs(self.id), "scale")
    }

    /// Multiplies every element by the single value held in `s`.
    pub fn mul_scalar(&self, s: Var<'t, T>) -> Result<Var<'t, T>> {
        self.same_tape(&s)?;
        let out = {
            let sv = s.value().item()?;
            self.value().map(|v| v * sv)
        };
        let ng = self.tape.needs(self.id) || self.tape.needs(s.id);
        self.tape.push(out, Op::MulScalar { x: self.id, s: s.id }, ng, "mul_scalar")
    }

    pub fn relu(&self) -> Result<Var<'t, T>> {
        let out = self.value().map(|v| if v > T::zero() { v } else { T::zero() });
        self.tape.push(out, Op::Relu(self.id), self.tape.needs(self.id), "relu")
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t, T>> {
        let out = self.value().clone().reshape(shape)?;
        self.tape.push(out, Op::Reshape(self.id), self.tape.needs(self.id), "reshape")
    }

    /// Concatenates along axis 1; leading axis is the batch.
    pub fn concat(&self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.same_tape(&other)?;
        let out = {
            let (a, b) = (self.value(), other.value());
            if a.rank() < 2 || a.rank() != b.rank() || a.shape()[0] != b.shape()[0] || a.shape()[2..] != b.shape()[2..] {
                return Err(shape_err!("concat {:?} with {:?}", a.shape(), b.shape()));
            }
            let batch = a.shape()[0];
            let (na, nb) = (a.len() / batch, b.len() / batch);
            let mut data = Vec::with_capacity(a.len() + b.len());
            for i in 0..batch {
                data.extend_from_slice(&a.data()[i * na..(i + 1) * na]);
                data.extend_from_slice(&b.data()[i * nb..(i + 1) * nb]);
            }
            let mut shape = a.shape().to_vec();
            shape[1] += b.shape()[1];
            Tensor::from_vec(&shape, data)?
        };
        let ng = self.tape.needs(self.id) || self.tape.needs(other.id);
        self.tape.push(out, Op::Concat { a: self.id, b: other.id }, ng, "concat")
    }

    pub fn conv1d(&self, w: Var<'t, T>, bias: Option<Var<'t, T>>, spec: Conv1dSpec) -> Result<Var<'t, T>> {
        self.same_tape(&w)?;
        let out = {
            let b = bias.map(|b| b.value());
            kernels::conv1d(&self.value(), &w.value(), b.as_deref(), &spec)?
        };
        let ng = self.tape.needs(self.id) || self.tape.needs(w.id) || bias.is_some_and(|b| self.tape.needs(b.id));
        let op = Op::Conv1d {
            x: self.id,
            w: w.id,
            bias: bias.map(|b| b.id),
            spec,
        };
        self.tape.push(out, op, ng, "conv1d")
    }

    pub fn conv1d_transpose(&self, w: Var<'t, T>, bias: Option<Var<'t, T>>, stride: usize) -> Result<Var<'t, T>> {
        self.same_tape(&w)?;
        let out = {
            let b = bias.map(|b| b.value());
            kernels::conv1d_transpose(&self.value(), &w.value(), b.as_deref(), stride)?
        };
        let ng = self.tape.needs(self.id) || self.tape.needs(w.id) || bias.is_some_and(|b| self.tape.needs(b.id));
        let op = Op::ConvTranspose1d {
            x: self.id,
            w: w.id,
            bias: bias.map(|b| b.id),
            stride,
        };
        self.tape.push(out, op, ng, "conv1d_transpose")
    }

    pub fn linear(&self, w: Var<'t, T>, bias: Option<Var<'t, T>>) -> Result<Var<'t, T>> {
        self.same_tape(&w)?;
        let out = {
            let b = bias.map(|b| b.value());
            kernels::linear(&self.value(), &w.value(), b.as_deref())?
        };
        let ng = self.tape.needs(self.id) || self.tape.needs(w.id) || bias.is_some_and(|b| self.tape.needs(b.id));
        let op = Op::Linear {
            x: self.id,
            w: w.id,
            bias: bias.map(|b| b.id),
        };
        self.tape.push(out, op, ng, "linear")
    }

    pub fn matmul(&self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.same_tape(&other)?;
        let out = kernels::batched_matmul(&self.value(), &other.value())?;
        let ng = self.tape.needs(self.id) || self.tape.needs(other.id);
        self.tape.push(out, Op::Matmul(self.id, other.id), ng, "matmul")
    }

    pub fn transpose_last(&self) -> Result<Var<'t, T>> {
        let out = kernels::transpose_last(&self.value())?;
        self.tape.push(out, Op::TransposeLast(self.id), self.tape.needs(self.id), "transpose")
    }

    pub fn softmax_rows(&self) -> Result<Var<'t, T>> {
        let out = kernels::softmax_rows(&self.value())?;
        self.tape.push(out, Op::Softmax(self.id), self.tape.needs(self.id), "softmax")
    }

    /// Scalar mean of squared entries.
    pub fn mean_squares(&self) -> Result<Var<'t, T>> {
        let out = {
            let v = self.value();
            if v.is_empty() {
                return Err(shape_err!("mean_squares of an empty tensor"));
            }
            Tensor::scalar(v.sum_squares() / T::from_usize(v.len()).unwrap())
        };
        self.tape.push(out, Op::MeanSquares(self.id), self.tape.needs(self.id), "mean_squares")
    }

    /// `mean((self - target)^2)`
    pub fn mse(&self, target: Var<'t, T>) -> Result<Var<'t, T>> {
        self.sub(target)?.mean_squares()
    }
}
