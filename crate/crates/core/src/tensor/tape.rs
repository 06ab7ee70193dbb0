use std::cell::{Cell, Ref, RefCell};
use std::fmt;
use std::rc::Rc;

use super::kernels::{self, Conv2dGeom, Conv3dGeom, ConvTranspose2dGeom};
use super::{check_shape, DiffTensor, Scalar};
use crate::error::{Error, Result};

/// Marker in a remap table for an output element that reads zero.
pub const REMAP_ZERO: usize = usize::MAX;

/// Deliberate backward corruption, used to prove that gradchecks bite.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Scale the conv2d weight gradient by 1.01.
    Conv2dWeightGrad,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, T),
    ScaleBy { x: usize, s: usize },
    Relu(usize),
    Gelu(usize),
    Softplus(usize),
    Bmm { a: usize, b: usize, batch: usize, m: usize, k: usize, n: usize },
    AddRowBias { x: usize, bias: usize },
    Remap { x: usize, map: Rc<[usize]> },
    Concat(Vec<usize>),
    Softmax { x: usize, n: usize },
    LayerNorm { x: usize, gamma: usize, beta: usize, xhat: Vec<T>, rstd: Vec<T> },
    Sum(usize),
    Mean(usize),
    L1(usize),
    Conv2d { x: usize, w: usize, b: Option<usize>, geom: Conv2dGeom },
    ConvTranspose2d { x: usize, w: usize, b: Option<usize>, geom: ConvTranspose2dGeom },
    Conv3d { x: usize, w: usize, b: Option<usize>, geom: Conv3dGeom },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::ScaleBy { .. } => "scale_by",
            Op::Relu(_) => "relu",
            Op::Gelu(_) => "gelu",
            Op::Softplus(_) => "softplus",
            Op::Bmm { .. } => "matmul",
            Op::AddRowBias { .. } => "add_row_bias",
            Op::Remap { .. } => "remap",
            Op::Concat(_) => "concat",
            Op::Softmax { .. } => "softmax",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::L1(_) => "l1",
            Op::Conv2d { .. } => "conv2d",
            Op::ConvTranspose2d { .. } => "conv_transpose2d",
            Op::Conv3d { .. } => "conv3d",
        }
    }
}

struct Node<T> {
    shape: Vec<usize>,
    value: Vec<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Record of executed differentiable ops. One tape backs one graph and
/// supports exactly one backward pass.
pub struct Tape<T: Scalar> {
    nodes: RefCell<Vec<Node<T>>>,
    consumed: Cell<bool>,
    fault: Option<Fault>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to a value recorded on a [`Tape`].
pub struct Var<'t, T: Scalar> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T: Scalar> Clone for Var<'_, T> {
    fn clone(&self) -> Self {
        *self
    }
}
impl<T: Scalar> Copy for Var<'_, T> {}

impl<T: Scalar> fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

/// Leaf gradients produced by [`Tape::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var<'_, T>) -> Option<&[T]> {
        self.grads.get(v.id).and_then(|g| g.as_deref())
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: RefCell::new(Vec::new()), consumed: Cell::new(false), fault: None }
    }

    pub fn with_fault(fault: Fault) -> Self {
        Tape { fault: Some(fault), ..Self::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, shape: Vec<usize>, value: Vec<T>, op: Op<T>, needs_grad: bool) -> Result<Var<'_, T>> {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        if let Some(pos) = value.iter().position(|v| !v.is_finite()) {
            return Err(Error::numerics(format!(
                "{} produced a non-finite value at element {pos}",
                op.name()
            )));
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { shape, value, op, needs_grad });
        Ok(Var { tape: self, id: nodes.len() - 1 })
    }

    fn leaf_impl(&self, shape: Vec<usize>, value: Vec<T>, needs_grad: bool) -> Result<Var<'_, T>> {
        check_shape(&shape, value.len())?;
        self.push(shape, value, Op::Leaf, needs_grad)
    }

    /// A constant input that takes no gradient.
    pub fn constant(&self, shape: Vec<usize>, value: Vec<T>) -> Result<Var<'_, T>> {
        self.leaf_impl(shape, value, false)
    }

    /// A leaf that accumulates gradient.
    pub fn variable(&self, shape: Vec<usize>, value: Vec<T>) -> Result<Var<'_, T>> {
        self.leaf_impl(shape, value, true)
    }

    pub fn param(&self, t: &DiffTensor<T>) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            shape: t.shape().to_vec(),
            value: t.data().to_vec(),
            op: Op::Leaf,
            needs_grad: t.requires_grad,
        });
        Var { tape: self, id: nodes.len() - 1 }
    }

    fn node(&self, id: usize) -> Ref<'_, Node<T>> {
        Ref::map(self.nodes.borrow(), |n| &n[id])
    }

    /// Reverse sweep from a scalar `loss`. Each recorded op is visited once,
    /// in reverse execution order.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Gradients<T>> {
        if self.consumed.get() {
            return Err(Error::State("backward already ran on this tape".into()));
        }
        if !std::ptr::eq(loss.tape, self) {
            return Err(Error::State("loss was recorded on a different tape".into()));
        }
        if loss.numel() != 1 {
            return Err(Error::shape(format!("loss must be a scalar, got shape {:?}", loss.shape())));
        }
        self.consumed.set(true);
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Vec<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.id] = Some(vec![T::one()]);
        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.propagate(&nodes, id, &g, &mut grads);
            if matches!(node.op, Op::Leaf) {
                grads[id] = Some(g);
            }
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, nodes: &[Node<T>], id: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let val = |i: usize| nodes[i].value.as_slice();
        let wants = |i: usize| nodes[i].needs_grad;
        let mut acc = |i: usize, contrib: Vec<T>| {
            if !nodes[i].needs_grad {
                return;
            }
            match &mut grads[i] {
                Some(a) => a.iter_mut().zip(contrib).for_each(|(a, c)| *a += c),
                slot @ None => *slot = Some(contrib),
            }
        };
        let out = val(id);
        match &nodes[id].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, g.to_vec());
                acc(*b, g.to_vec());
            }
            Op::Sub(a, b) => {
                acc(*a, g.to_vec());
                acc(*b, g.iter().map(|&v| -v).collect());
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                if wants(*a) {
                    acc(*a, g.iter().zip(bv).map(|(&d, &y)| d * y).collect());
                }
                if wants(*b) {
                    acc(*b, g.iter().zip(av).map(|(&d, &x)| d * x).collect());
                }
            }
            Op::Scale(x, s) => acc(*x, g.iter().map(|&d| d * *s).collect()),
            Op::ScaleBy { x, s } => {
                let sv = val(*s)[0];
                if wants(*x) {
                    acc(*x, g.iter().map(|&d| d * sv).collect());
                }
                if wants(*s) {
                    acc(*s, vec![g.iter().zip(val(*x)).map(|(&d, &v)| d * v).sum()]);
                }
            }
            Op::Relu(x) => {
                acc(*x, g.iter().zip(val(*x)).map(|(&d, &v)| if v > T::zero() { d } else { T::zero() }).collect())
            }
            Op::Gelu(x) => acc(*x, g.iter().zip(val(*x)).map(|(&d, &v)| d * gelu_grad(v)).collect()),
            Op::Softplus(x) => acc(*x, g.iter().zip(val(*x)).map(|(&d, &v)| d * sigmoid(v)).collect()),
            Op::Bmm { a, b, batch, m, k, n } => {
                if wants(*a) {
                    acc(*a, kernels::bmm_grad_a(g, val(*b), *batch, *m, *k, *n));
                }
                if wants(*b) {
                    acc(*b, kernels::bmm_grad_b(val(*a), g, *batch, *m, *k, *n));
                }
            }
            Op::AddRowBias { x, bias } => {
                acc(*x, g.to_vec());
                if wants(*bias) {
                    let n = nodes[*bias].value.len();
                    let mut db = vec![T::zero(); n];
                    for row in g.chunks(n) {
                        db.iter_mut().zip(row).for_each(|(a, &d)| *a += d);
                    }
                    acc(*bias, db);
                }
            }
            Op::Remap { x, map } => {
                let mut dx = vec![T::zero(); nodes[*x].value.len()];
                for (&src, &d) in map.iter().zip(g) {
                    if src != REMAP_ZERO {
                        dx[src] += d;
                    }
                }
                acc(*x, dx);
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = nodes[p].value.len();
                    acc(p, g[off..off + n].to_vec());
                    off += n;
                }
            }
            Op::Softmax { n, x } => acc(*x, kernels::softmax_backward(out, g, *n)),
            Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                let dim = nodes[*gamma].value.len();
                let (dx, dg, db) = kernels::layer_norm_backward(g, xhat, rstd, val(*gamma), dim);
                acc(*x, dx);
                acc(*gamma, dg);
                acc(*beta, db);
            }
            Op::Sum(x) => acc(*x, vec![g[0]; nodes[*x].value.len()]),
            Op::Mean(x) => {
                let n = nodes[*x].value.len();
                acc(*x, vec![g[0] / T::from_f64(n as f64); n])
            }
            Op::L1(x) => {
                let xv = val(*x);
                let scale = g[0] / T::from_f64(xv.len() as f64);
                acc(*x, xv.iter().map(|&v| sign(v) * scale).collect())
            }
            Op::Conv2d { x, w, b, geom } => {
                let (dx, dw, db) = kernels::conv2d_backward(geom, val(*x), val(*w), g, wants(*x), wants(*w));
                if let Some(dx) = dx {
                    acc(*x, dx);
                }
                if let Some(mut dw) = dw {
                    if self.fault == Some(Fault::Conv2dWeightGrad) {
                        dw.iter_mut().for_each(|v| *v *= T::from_f64(1.01));
                    }
                    acc(*w, dw);
                }
                if let Some(b) = b {
                    acc(*b, db);
                }
            }
            Op::ConvTranspose2d { x, w, b, geom } => {
                let (dx, dw, db) =
                    kernels::conv_transpose2d_backward(geom, val(*x), val(*w), g, wants(*x), wants(*w));
                if let Some(dx) = dx {
                    acc(*x, dx);
                }
                if let Some(dw) = dw {
                    acc(*w, dw);
                }
                if let Some(b) = b {
                    acc(*b, db);
                }
            }
            Op::Conv3d { x, w, b, geom } => {
                let (dx, dw, db) = kernels::conv3d_backward(geom, val(*x), val(*w), g, wants(*x), wants(*w));
                if let Some(dx) = dx {
                    acc(*x, dx);
                }
                if let Some(dw) = dw {
                    acc(*w, dw);
                }
                if let Some(b) = b {
                    acc(*b, db);
                }
            }
        }
    }
}

fn sign<T: Scalar>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

fn sigmoid<T: Scalar>(v: T) -> T {
    T::one() / (T::one() + (-v).exp())
}

/// Exact (erf-based) GELU.
pub(crate) fn gelu<T: Scalar>(v: T) -> T {
    T::from_f64(0.5) * v * (T::one() + (v * T::from_f64(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

fn gelu_grad<T: Scalar>(v: T) -> T {
    let cdf = T::from_f64(0.5) * (T::one() + (v * T::from_f64(std::f64::consts::FRAC_1_SQRT_2)).erf());
    let pdf = T::from_f64(1.0 / (2.0 * std::f64::consts::PI).sqrt()) * (T::from_f64(-0.5) * v * v).exp();
    cdf + v * pdf
}

pub(crate) fn softplus<T: Scalar>(v: T) -> T {
    // log(1 + e^v) without overflow for large v
    let z = T::zero();
    v.max(z) + (-(v.abs())).exp().ln_1p()
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.node(self.id).shape.clone()
    }

    pub fn numel(&self) -> usize {
        self.tape.node(self.id).value.len()
    }

    pub fn value(&self) -> Vec<T> {
        self.tape.node(self.id).value.clone()
    }

    /// The single element of a one-element tensor.
    pub fn item(&self) -> T {
        self.tape.node(self.id).value[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.node(self.id).needs_grad
    }

    fn same_tape(&self, other: &Var<'t, T>) -> Result<()> {
        if std::ptr::eq(self.tape, other.tape) {
            Ok(())
        } else {
            Err(Error::State("operands live on different tapes".into()))
        }
    }

    fn binary(self, other: Var<'t, T>, op: Op<T>, f: impl Fn(T, T) -> T) -> Result<Var<'t, T>> {
        self.same_tape(&other)?;
        let (shape, value, ng) = {
            let a = self.tape.node(self.id);
            let b = self.tape.node(other.id);
            if a.shape != b.shape {
                return Err(Error::shape(format!(
                    "{}: operand shapes differ, {:?} vs {:?}",
                    op.name(),
                    a.shape,
                    b.shape
                )));
            }
            let value = a.value.iter().zip(&b.value).map(|(&x, &y)| f(x, y)).collect();
            (a.shape.clone(), value, a.needs_grad || b.needs_grad)
        };
        self.tape.push(shape, value, op, ng)
    }

    fn unary(self, op: Op<T>, f: impl Fn(T) -> T) -> Result<Var<'t, T>> {
        let (shape, value, ng) = {
            let a = self.tape.node(self.id);
            (a.shape.clone(), a.value.iter().map(|&x| f(x)).collect(), a.needs_grad)
        };
        self.tape.push(shape, value, op, ng)
    }

    pub fn add(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(other, Op::Add(self.id, other.id), |a, b| a + b)
    }

    pub fn sub(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(other, Op::Sub(self.id, other.id), |a, b| a - b)
    }

    pub fn mul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(other, Op::Mul(self.id, other.id), |a, b| a * b)
    }

    pub fn scale(self, s: T) -> Result<Var<'t, T>> {
        self.unary(Op::Scale(self.id, s), |a| a * s)
    }

    /// Multiply every element by a one-element tensor `s`.
    pub fn scale_by(self, s: Var<'t, T>) -> Result<Var<'t, T>> {
        self.same_tape(&s)?;
        if s.numel() != 1 {
            return Err(Error::shape(format!("scale_by expects a scalar, got {:?}", s.shape())));
        }
        let sv = s.item();
        let ng = s.requires_grad();
        let (shape, value, xng) = {
            let a = self.tape.node(self.id);
            (a.shape.clone(), a.value.iter().map(|&x| x * sv).collect(), a.needs_grad)
        };
        self.tape.push(shape, value, Op::ScaleBy { x: self.id, s: s.id }, xng || ng)
    }

    pub fn relu(self) -> Result<Var<'t, T>> {
        self.unary(Op::Relu(self.id), |a| if a > T::zero() { a } else { T::zero() })
    }

    pub fn gelu(self) -> Result<Var<'t, T>> {
        self.unary(Op::Gelu(self.id), gelu)
    }

    pub fn softplus(self) -> Result<Var<'t, T>> {
        self.unary(Op::Softplus(self.id), softplus)
    }

    /// `[m,k] · [k,n]`.
    pub fn matmul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let (sa, sb) = (self.shape(), other.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape(format!("matmul: incompatible shapes {sa:?} and {sb:?}")));
        }
        self.bmm(other, 1, sa[0], sa[1], sb[1], vec![sa[0], sb[1]])
    }

    /// Batched matmul of `[batch,m,k]` by `[batch,k,n]`.
    pub fn batch_matmul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let (sa, sb) = (self.shape(), other.shape());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(Error::shape(format!("batch_matmul: incompatible shapes {sa:?} and {sb:?}")));
        }
        self.bmm(other, sa[0], sa[1], sa[2], sb[2], vec![sa[0], sa[1], sb[2]])
    }

    fn bmm(self, other: Var<'t, T>, batch: usize, m: usize, k: usize, n: usize, shape: Vec<usize>) -> Result<Var<'t, T>> {
        self.same_tape(&other)?;
        let (value, ng) = {
            let a = self.tape.node(self.id);
            let b = self.tape.node(other.id);
            (kernels::bmm(&a.value, &b.value, batch, m, k, n), a.needs_grad || b.needs_grad)
        };
        self.tape.push(shape, value, Op::Bmm { a: self.id, b: other.id, batch, m, k, n }, ng)
    }

    /// Add a bias vector to every row, where rows have the bias's length.
    pub fn add_row_bias(self, bias: Var<'t, T>) -> Result<Var<'t, T>> {
        self.same_tape(&bias)?;
        let (shape, value, ng) = {
            let a = self.tape.node(self.id);
            let b = self.tape.node(bias.id);
            let n = b.value.len();
            if !a.value.len().is_multiple_of(n) {
                return Err(Error::shape(format!(
                    "add_row_bias: bias of {n} does not tile shape {:?}",
                    a.shape
                )));
            }
            let value = a.value.chunks(n).flat_map(|row| row.iter().zip(&b.value).map(|(&x, &y)| x + y)).collect();
            (a.shape.clone(), value, a.needs_grad || b.needs_grad)
        };
        self.tape.push(shape, value, Op::AddRowBias { x: self.id, bias: bias.id }, ng)
    }

    /// Gather `out[i] = x[map[i]]` (zero where `map[i] == REMAP_ZERO`).
    /// Backward scatters into the sources.
    pub fn remap(self, map: Rc<[usize]>, shape: Vec<usize>) -> Result<Var<'t, T>> {
        check_shape(&shape, map.len())?;
        let (value, ng) = {
            let a = self.tape.node(self.id);
            let n = a.value.len();
            if let Some(&bad) = map.iter().find(|&&m| m != REMAP_ZERO && m >= n) {
                return Err(Error::shape(format!("remap index {bad} out of range for {n} elements")));
            }
            let value =
                map.iter().map(|&m| if m == REMAP_ZERO { T::zero() } else { a.value[m] }).collect();
            (value, a.needs_grad)
        };
        self.tape.push(shape, value, Op::Remap { x: self.id, map }, ng)
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Var<'t, T>> {
        check_shape(&shape, self.numel())?;
        let map: Rc<[usize]> = (0..self.numel()).collect();
        self.remap(map, shape)
    }

    /// Reorder axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(self, axes: &[usize]) -> Result<Var<'t, T>> {
        let shape = self.shape();
        let (map, out_shape) = permute_map(&shape, axes)?;
        self.remap(map.into(), out_shape)
    }

    /// Concatenate along the leading axis; trailing extents must agree.
    pub fn concat(parts: &[Var<'t, T>]) -> Result<Var<'t, T>> {
        let first = parts.first().ok_or_else(|| Error::shape("concat of nothing"))?;
        let tape = first.tape;
        let tail = first.shape()[1..].to_vec();
        let mut lead = 0;
        let mut value = Vec::new();
        let mut ng = false;
        for p in parts {
            first.same_tape(p)?;
            let node = tape.node(p.id);
            if node.shape[1..] != tail[..] {
                return Err(Error::shape(format!("concat: trailing shape {:?} vs {:?}", node.shape, tail)));
            }
            lead += node.shape[0];
            value.extend_from_slice(&node.value);
            ng |= node.needs_grad;
        }
        let mut shape = vec![lead];
        shape.extend(tail);
        tape.push(shape, value, Op::Concat(parts.iter().map(|p| p.id).collect()), ng)
    }

    /// Softmax over the last axis. `mask`, when given, has one flag per
    /// element; flagged entries are excluded and receive probability 0.
    pub fn softmax(self, mask: Option<&[bool]>) -> Result<Var<'t, T>> {
        let shape = self.shape();
        let n = *shape.last().unwrap();
        if let Some(m) = mask {
            if m.len() != self.numel() {
                return Err(Error::shape("softmax mask must match the input size"));
            }
        }
        let (value, ng) = {
            let a = self.tape.node(self.id);
            (kernels::softmax_forward(&a.value, n, mask), a.needs_grad)
        };
        self.tape.push(shape, value, Op::Softmax { x: self.id, n }, ng)
    }

    /// Normalize over the last axis, then apply `gamma`/`beta`.
    pub fn layer_norm(self, gamma: Var<'t, T>, beta: Var<'t, T>) -> Result<Var<'t, T>> {
        let shape = self.shape();
        let dim = *shape.last().unwrap();
        if gamma.numel() != dim || beta.numel() != dim {
            return Err(Error::shape(format!("layer_norm: affine params must have length {dim}")));
        }
        let (y, xhat, rstd, ng) = {
            let a = self.tape.node(self.id);
            let g = self.tape.node(gamma.id);
            let b = self.tape.node(beta.id);
            let (y, xhat, rstd) = kernels::layer_norm_forward(&a.value, &g.value, &b.value, dim);
            (y, xhat, rstd, a.needs_grad || g.needs_grad || b.needs_grad)
        };
        self.tape.push(
            shape,
            y,
            Op::LayerNorm { x: self.id, gamma: gamma.id, beta: beta.id, xhat, rstd },
            ng,
        )
    }

    fn reduce(self, op: Op<T>, f: impl Fn(&[T]) -> T) -> Result<Var<'t, T>> {
        let (value, ng) = {
            let a = self.tape.node(self.id);
            if a.value.is_empty() {
                return Err(Error::shape("cannot reduce an empty tensor"));
            }
            (vec![f(&a.value)], a.needs_grad)
        };
        self.tape.push(vec![1], value, op, ng)
    }

    pub fn sum(self) -> Result<Var<'t, T>> {
        self.reduce(Op::Sum(self.id), |v| v.iter().copied().sum())
    }

    pub fn mean(self) -> Result<Var<'t, T>> {
        self.reduce(Op::Mean(self.id), |v| v.iter().copied().sum::<T>() / T::from_f64(v.len() as f64))
    }

    /// Mean absolute value.
    pub fn l1(self) -> Result<Var<'t, T>> {
        self.reduce(Op::L1(self.id), |v| v.iter().map(|x| x.abs()).sum::<T>() / T::from_f64(v.len() as f64))
    }

    pub fn conv2d(self, w: Var<'t, T>, b: Option<Var<'t, T>>, geom: Conv2dGeom) -> Result<Var<'t, T>> {
        if !geom.valid() {
            return Err(Error::shape(format!("invalid conv2d geometry {geom:?}")));
        }
        let expect_x = vec![geom.in_ch, geom.height, geom.width];
        let expect_w = vec![geom.out_ch, geom.in_ch, geom.kh, geom.kw];
        self.check_conv(&expect_x, w, &expect_w, b, geom.out_ch)?;
        let (oh, ow) = geom.out_hw();
        let (value, ng) = {
            let x = self.tape.node(self.id);
            let wn = self.tape.node(w.id);
            let bn = b.map(|b| self.tape.node(b.id));
            let v = kernels::conv2d_forward(&geom, &x.value, &wn.value, bn.as_ref().map(|n| n.value.as_slice()));
            (v, x.needs_grad || wn.needs_grad || bn.is_some_and(|n| n.needs_grad))
        };
        self.tape.push(
            vec![geom.out_ch, oh, ow],
            value,
            Op::Conv2d { x: self.id, w: w.id, b: b.map(|b| b.id), geom },
            ng,
        )
    }

    pub fn conv_transpose2d(
        self,
        w: Var<'t, T>,
        b: Option<Var<'t, T>>,
        geom: ConvTranspose2dGeom,
    ) -> Result<Var<'t, T>> {
        if geom.stride == 0
            || (geom.height - 1) * geom.stride + geom.kh <= 2 * geom.padding
            || (geom.width - 1) * geom.stride + geom.kw <= 2 * geom.padding
        {
            return Err(Error::shape(format!("invalid conv_transpose2d geometry {geom:?}")));
        }
        let expect_x = vec![geom.in_ch, geom.height, geom.width];
        let expect_w = vec![geom.in_ch, geom.out_ch, geom.kh, geom.kw];
        self.check_conv(&expect_x, w, &expect_w, b, geom.out_ch)?;
        let (oh, ow) = geom.out_hw();
        let (value, ng) = {
            let x = self.tape.node(self.id);
            let wn = self.tape.node(w.id);
            let bn = b.map(|b| self.tape.node(b.id));
            let v = kernels::conv_transpose2d_forward(
                &geom,
                &x.value,
                &wn.value,
                bn.as_ref().map(|n| n.value.as_slice()),
            );
            (v, x.needs_grad || wn.needs_grad || bn.is_some_and(|n| n.needs_grad))
        };
        self.tape.push(
            vec![geom.out_ch, oh, ow],
            value,
            Op::ConvTranspose2d { x: self.id, w: w.id, b: b.map(|b| b.id), geom },
            ng,
        )
    }

    pub fn conv3d(self, w: Var<'t, T>, b: Option<Var<'t, T>>, geom: Conv3dGeom) -> Result<Var<'t, T>> {
        if geom.kd.is_multiple_of(2) || geom.kh.is_multiple_of(2) || geom.kw.is_multiple_of(2) {
            return Err(Error::shape("conv3d same-padding needs odd kernel extents"));
        }
        let expect_x = vec![geom.in_ch, geom.depth, geom.height, geom.width];
        let expect_w = vec![geom.out_ch, geom.in_ch, geom.kd, geom.kh, geom.kw];
        self.check_conv(&expect_x, w, &expect_w, b, geom.out_ch)?;
        let (value, ng) = {
            let x = self.tape.node(self.id);
            let wn = self.tape.node(w.id);
            let bn = b.map(|b| self.tape.node(b.id));
            let v = kernels::conv3d_forward(&geom, &x.value, &wn.value, bn.as_ref().map(|n| n.value.as_slice()));
            (v, x.needs_grad || wn.needs_grad || bn.is_some_and(|n| n.needs_grad))
        };
        self.tape.push(
            vec![geom.out_ch, geom.depth, geom.height, geom.width],
            value,
            Op::Conv3d { x: self.id, w: w.id, b: b.map(|b| b.id), geom },
            ng,
        )
    }

    fn check_conv(
        &self,
        expect_x: &[usize],
        w: Var<'t, T>,
        expect_w: &[usize],
        b: Option<Var<'t, T>>,
        out_ch: usize,
    ) -> Result<()> {
        self.same_tape(&w)?;
        let xs = self.shape();
        if xs != expect_x {
            return Err(Error::shape(format!("conv input has shape {xs:?}, expected {expect_x:?}")));
        }
        let ws = w.shape();
        if ws != expect_w {
            return Err(Error::shape(format!("conv weight has shape {ws:?}, expected {expect_w:?}")));
        }
        if let Some(b) = b {
            self.same_tape(&b)?;
            if b.numel() != out_ch {
                return Err(Error::shape(format!("conv bias has {} entries, expected {out_ch}", b.numel())));
            }
        }
        Ok(())
    }
}

/// Gather table and output shape for an axis permutation.
pub(crate) fn permute_map(shape: &[usize], axes: &[usize]) -> Result<(Vec<usize>, Vec<usize>)> {
    let nd = shape.len();
    let mut seen = vec![false; nd];
    if axes.len() != nd || axes.iter().any(|&a| a >= nd || std::mem::replace(&mut seen[a], true)) {
        return Err(Error::shape(format!("{axes:?} is not a permutation of {nd} axes")));
    }
    let mut in_strides = vec![1; nd];
    for i in (0..nd.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let total: usize = shape.iter().product();
    let mut map = Vec::with_capacity(total);
    let mut idx = vec![0usize; nd];
    for _ in 0..total {
        map.push(idx.iter().zip(axes).map(|(&i, &a)| i * in_strides[a]).sum());
        for d in (0..nd).rev() {
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    Ok((map, out_shape))
}
