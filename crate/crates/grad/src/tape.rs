//! Wengert-list reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Tape`] owns every intermediate value. Operations append a node holding
//! the forward value plus the identity of its operands; [`Tape::backward`]
//! replays the list in reverse and accumulates adjoints. Nodes downstream of
//! [`Tape::stop_grad`] or built only from constants never receive adjoints.

use std::rc::Rc;

use crate::error::GradError;
use crate::tensor::{shape_len, Tensor};

/// Gather index that produces a zero instead of reading the source.
pub const ZERO_INDEX: usize = usize::MAX;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug)]
enum Unary {
    Tanh,
    Sigmoid,
    Softplus,
    Gelu,
    Exp,
    Abs,
    Square,
    Huber(f64),
}

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Shift(Var),
    MatMul(Var, Var),
    Affine(Var, Var, Var),
    Unary(Var, Unary),
    Custom(Var, fn(f64) -> f64),
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    Concat(Vec<Var>, usize),
    Gather(Var, Rc<[usize]>),
    #[allow(dead_code)]
    StopGrad(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_C: f64 = 0.044_715;

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (SQRT_2_OVER_PI * (x + GELU_C * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let inner = SQRT_2_OVER_PI * (x + GELU_C * x * x * x);
    let th = inner.tanh();
    let dinner = SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_C * x * x);
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * dinner
}

fn huber(r: f64, delta: f64) -> f64 {
    let a = r.abs();
    if a <= delta {
        0.5 * r * r
    } else {
        delta * (a - 0.5 * delta)
    }
}

impl Unary {
    fn forward(self, x: f64) -> f64 {
        match self {
            Unary::Tanh => x.tanh(),
            Unary::Sigmoid => sigmoid(x),
            Unary::Softplus => softplus(x),
            Unary::Gelu => gelu(x),
            Unary::Exp => x.exp(),
            Unary::Abs => x.abs(),
            Unary::Square => x * x,
            Unary::Huber(d) => huber(x, d),
        }
    }

    /// Local derivative given input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Unary::Tanh => 1.0 - y * y,
            Unary::Sigmoid => y * (1.0 - y),
            Unary::Softplus => sigmoid(x),
            Unary::Gelu => gelu_grad(x),
            Unary::Exp => y,
            Unary::Abs => {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            Unary::Square => 2.0 * x,
            Unary::Huber(d) => x.clamp(-d, d),
        }
    }
}

/// `c (m×n) += a (m×k) · b (k×n)` with optional transposes expressed by strides.
#[allow(clippy::too_many_arguments)]
fn gemm_acc(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
) {
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    // a is stored m×k, or k×m when transposed; same for b.
    let (rsa, csa) = if a_t {
        (1, m as isize)
    } else {
        (k as isize, 1)
    };
    let (rsb, csb) = if b_t {
        (1, k as isize)
    } else {
        (n as isize, 1)
    };
    // SAFETY: slices are sized by the callers to match the given extents and strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            1.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn broadcast_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<Vec<usize>, GradError> {
    if a.shape() == b.shape() || b.len() == 1 {
        Ok(a.shape().to_vec())
    } else if a.len() == 1 {
        Ok(b.shape().to_vec())
    } else {
        Err(GradError::shape(op, a.shape(), b.shape()))
    }
}

#[inline]
fn bget(t: &Tensor, i: usize) -> f64 {
    if t.len() == 1 {
        t.data()[0]
    } else {
        t.data()[i]
    }
}

/// Sum a full-size adjoint down to the operand's size (identity unless the
/// operand was a broadcast scalar).
fn reduce_to(g: Tensor, operand: &Tensor) -> Tensor {
    if g.len() == operand.len() {
        g.reshape(operand.shape()).expect("same length")
    } else {
        Tensor::new(operand.shape().to_vec(), vec![g.sum()]).expect("scalar operand")
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// A differentiable input.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A constant: never receives an adjoint.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(Tensor::scalar(value))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Whether any differentiable input reaches `v`.
    pub fn requires_grad(&self, v: Var) -> bool {
        self.ng(v)
    }

    fn binary(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        make: fn(Var, Var) -> Op,
    ) -> Result<Var, GradError> {
        let (ta, tb) = (self.value(a), self.value(b));
        let shape = broadcast_shape(op, ta, tb)?;
        let n = shape_len(&shape);
        let data = (0..n).map(|i| f(bget(ta, i), bget(tb, i))).collect();
        let out = Tensor::new(shape, data)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, make(a, b), ng))
    }

    /// Elementwise sum; either operand may be a one-element tensor.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, GradError> {
        self.binary("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, GradError> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, GradError> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).scale(s);
        let ng = self.ng(a);
        self.push(out, Op::Scale(a, s), ng)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|x| x + s);
        let ng = self.ng(a);
        self.push(out, Op::Shift(a), ng)
    }

    /// `a[..., k] · b[k, n] -> [..., n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, GradError> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k, n, shape) = Self::mm_dims("matmul", ta, tb)?;
        let mut out = vec![0.0; m * n];
        gemm_acc(m, k, n, ta.data(), false, tb.data(), false, &mut out);
        let out = Tensor::new(shape, out)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::MatMul(a, b), ng))
    }

    /// `a[..., k] · w[k, n] + bias[n]`.
    pub fn affine(&mut self, a: Var, w: Var, bias: Var) -> Result<Var, GradError> {
        let (ta, tw, tb) = (self.value(a), self.value(w), self.value(bias));
        let (m, k, n, shape) = Self::mm_dims("affine", ta, tw)?;
        if tb.shape() != [n] {
            return Err(GradError::shape("affine", tw.shape(), tb.shape()));
        }
        let mut out: Vec<f64> = Vec::with_capacity(m * n);
        for _ in 0..m {
            out.extend_from_slice(tb.data());
        }
        gemm_acc(m, k, n, ta.data(), false, tw.data(), false, &mut out);
        let out = Tensor::new(shape, out)?;
        let ng = self.ng(a) || self.ng(w) || self.ng(bias);
        Ok(self.push(out, Op::Affine(a, w, bias), ng))
    }

    fn mm_dims(
        op: &'static str,
        a: &Tensor,
        b: &Tensor,
    ) -> Result<(usize, usize, usize, Vec<usize>), GradError> {
        if a.shape().is_empty()
            || b.shape().len() != 2
            || a.shape()[a.shape().len() - 1] != b.shape()[0]
        {
            return Err(GradError::shape(op, a.shape(), b.shape()));
        }
        let k = b.shape()[0];
        let n = b.shape()[1];
        let m = a.len() / k.max(1);
        let mut shape = a.shape().to_vec();
        *shape.last_mut().unwrap() = n;
        Ok((m, k, n, shape))
    }

    fn unary(&mut self, a: Var, kind: Unary) -> Var {
        let out = self.value(a).map(|x| kind.forward(x));
        let ng = self.ng(a);
        self.push(out, Op::Unary(a, kind), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Sigmoid)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Softplus)
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Gelu)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Exp)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Abs)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Square)
    }

    /// Elementwise Huber penalty with threshold `delta`.
    pub fn huber(&mut self, a: Var, delta: f64) -> Var {
        self.unary(a, Unary::Huber(delta))
    }

    /// Elementwise map with a caller-supplied derivative. The derivative is
    /// trusted as given; `grad_check` is how callers verify it.
    pub fn map_custom(&mut self, a: Var, f: fn(f64) -> f64, df: fn(f64) -> f64) -> Var {
        let out = self.value(a).map(f);
        let ng = self.ng(a);
        self.push(out, Op::Custom(a, df), ng)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, GradError> {
        let out = Tensor::scalar(self.value(a).sum());
        let ng = self.ng(a);
        Ok(self.push(out, Op::Sum(a), ng))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, GradError> {
        let t = self.value(a);
        if t.is_empty() {
            return Err(GradError::invalid("mean", "empty tensor"));
        }
        let out = Tensor::scalar(t.mean());
        let ng = self.ng(a);
        Ok(self.push(out, Op::Mean(a), ng))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, GradError> {
        let out = self.value(a).clone().reshape(shape)?;
        let ng = self.ng(a);
        Ok(self.push(out, Op::Reshape(a), ng))
    }

    /// Concatenate along `axis`; all other extents must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var, GradError> {
        let first = parts
            .first()
            .ok_or_else(|| GradError::invalid("concat", "no operands"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(GradError::invalid(
                "concat",
                format!("axis {axis} out of range for {base:?}"),
            ));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != base.len()
                || s.iter()
                    .zip(&base)
                    .enumerate()
                    .any(|(i, (x, y))| i != axis && x != y)
            {
                return Err(GradError::shape("concat", &base, s));
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut shape = base.clone();
        shape[axis] = total;
        let mut data = Vec::with_capacity(shape_len(&shape));
        for o in 0..outer {
            for &p in parts {
                let t = self.value(p);
                let chunk = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let out = Tensor::new(shape, data)?;
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(out, Op::Concat(parts.to_vec(), axis), ng))
    }

    /// `out[i] = a[index[i]]`, or 0 where `index[i] == ZERO_INDEX`.
    pub fn gather(
        &mut self,
        a: Var,
        index: Rc<[usize]>,
        shape: &[usize],
    ) -> Result<Var, GradError> {
        if shape_len(shape) != index.len() {
            return Err(GradError::shape("gather", shape, &[index.len()]));
        }
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(index.len());
        for &i in index.iter() {
            if i == ZERO_INDEX {
                data.push(0.0);
            } else if i < src.len() {
                data.push(src[i]);
            } else {
                return Err(GradError::invalid(
                    "gather",
                    format!("index {i} out of range for {} elements", src.len()),
                ));
            }
        }
        let out = Tensor::new(shape.to_vec(), data)?;
        let ng = self.ng(a);
        Ok(self.push(out, Op::Gather(a, index), ng))
    }

    /// Forward value passes through; no adjoint flows back.
    pub fn stop_grad(&mut self, a: Var) -> Var {
        let out = self.value(a).clone();
        self.push(out, Op::StopGrad(a), false)
    }

    /// Reverse sweep from a one-element output.
    pub fn backward(&self, output: Var) -> Result<Gradients, GradError> {
        let out = self.value(output);
        if out.len() != 1 {
            return Err(GradError::NotScalar(out.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..=output.0).map(|_| None).collect();
        grads[output.0] = Some(Tensor::ones(out.shape()));
        for id in (0..=output.0).rev() {
            let node = &self.nodes[id];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let mut acc = |v: Var, delta: Tensor, grads: &mut [Option<Tensor>]| {
            if !self.ng(v) {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => {
                    for (e, d) in existing.data_mut().iter_mut().zip(delta.data()) {
                        *e += d;
                    }
                }
                slot @ None => *slot = Some(delta),
            }
        };
        match &node.op {
            Op::Leaf | Op::StopGrad(_) => {}
            Op::Add(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                acc(*a, reduce_to(g.clone(), ta), grads);
                acc(*b, reduce_to(g.clone(), tb), grads);
            }
            Op::Sub(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                acc(*a, reduce_to(g.clone(), ta), grads);
                acc(*b, reduce_to(g.scale(-1.0), tb), grads);
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if self.ng(*a) {
                    let d: Vec<f64> = (0..g.len()).map(|i| g.data()[i] * bget(tb, i)).collect();
                    acc(*a, reduce_to(Tensor::from_vec(d), ta), grads);
                }
                if self.ng(*b) {
                    let d: Vec<f64> = (0..g.len()).map(|i| g.data()[i] * bget(ta, i)).collect();
                    acc(*b, reduce_to(Tensor::from_vec(d), tb), grads);
                }
            }
            Op::Scale(a, s) => acc(*a, g.scale(*s), grads),
            Op::Shift(a) => acc(*a, g.clone(), grads),
            Op::MatMul(a, b) => self.mm_backward(*a, *b, None, g, grads, &mut acc),
            Op::Affine(a, w, bias) => self.mm_backward(*a, *w, Some(*bias), g, grads, &mut acc),
            Op::Unary(a, kind) => {
                let x = self.value(*a);
                let d: Vec<f64> = x
                    .data()
                    .iter()
                    .zip(node.value.data())
                    .zip(g.data())
                    .map(|((&xi, &yi), &gi)| gi * kind.derivative(xi, yi))
                    .collect();
                acc(*a, Tensor::new(x.shape().to_vec(), d).unwrap(), grads);
            }
            Op::Custom(a, df) => {
                let x = self.value(*a);
                let d = x.zip_map(g, |xi, gi| gi * df(xi)).unwrap();
                acc(*a, d, grads);
            }
            Op::Sum(a) => {
                let x = self.value(*a);
                acc(*a, Tensor::full(x.shape(), g.item()), grads);
            }
            Op::Mean(a) => {
                let x = self.value(*a);
                acc(
                    *a,
                    Tensor::full(x.shape(), g.item() / x.len() as f64),
                    grads,
                );
            }
            Op::Reshape(a) => {
                let x = self.value(*a);
                acc(*a, g.clone().reshape(x.shape()).unwrap(), grads);
            }
            Op::Concat(parts, axis) => {
                let shape = node.value.shape();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let total_chunk = shape[*axis] * inner;
                let mut start = 0;
                for &p in parts {
                    let ps = self.shape(p);
                    let chunk = ps[*axis] * inner;
                    if self.ng(p) {
                        let mut d = Vec::with_capacity(outer * chunk);
                        for o in 0..outer {
                            let s = o * total_chunk + start;
                            d.extend_from_slice(&g.data()[s..s + chunk]);
                        }
                        acc(p, Tensor::new(ps.to_vec(), d).unwrap(), grads);
                    }
                    start += chunk;
                }
            }
            Op::Gather(a, index) => {
                let x = self.value(*a);
                let mut d = vec![0.0; x.len()];
                for (&i, &gi) in index.iter().zip(g.data()) {
                    if i != ZERO_INDEX {
                        d[i] += gi;
                    }
                }
                acc(*a, Tensor::new(x.shape().to_vec(), d).unwrap(), grads);
            }
        }
    }

    fn mm_backward(
        &self,
        a: Var,
        w: Var,
        bias: Option<Var>,
        g: &Tensor,
        grads: &mut [Option<Tensor>],
        acc: &mut impl FnMut(Var, Tensor, &mut [Option<Tensor>]),
    ) {
        let (ta, tw) = (self.value(a), self.value(w));
        let k = tw.shape()[0];
        let n = tw.shape()[1];
        let m = ta.len() / k.max(1);
        if self.ng(a) {
            // dA (m×k) = G (m×n) · Wᵀ
            let mut d = vec![0.0; m * k];
            gemm_acc(m, n, k, g.data(), false, tw.data(), true, &mut d);
            acc(a, Tensor::new(ta.shape().to_vec(), d).unwrap(), grads);
        }
        if self.ng(w) {
            // dW (k×n) = Aᵀ · G
            let mut d = vec![0.0; k * n];
            gemm_acc(k, m, n, ta.data(), true, g.data(), false, &mut d);
            acc(w, Tensor::new(vec![k, n], d).unwrap(), grads);
        }
        if let Some(b) = bias {
            if self.ng(b) {
                let mut d = vec![0.0; n];
                for row in g.data().chunks(n) {
                    for (di, gi) in d.iter_mut().zip(row) {
                        *di += gi;
                    }
                }
                acc(b, Tensor::from_vec(d), grads);
            }
        }
    }

    // ---- index helpers built on `gather` ----

    /// Reorder axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Result<Var, GradError> {
        let shape = self.shape(a).to_vec();
        let mut seen = vec![false; shape.len()];
        if perm.len() != shape.len()
            || perm
                .iter()
                .any(|&p| p >= shape.len() || std::mem::replace(&mut seen[p], true))
        {
            return Err(GradError::shape("permute", &shape, perm));
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
        let mut strides = vec![1usize; shape.len()];
        for i in (0..shape.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * shape[i + 1];
        }
        let out_strides: Vec<usize> = perm.iter().map(|&p| strides[p]).collect();
        let index = strided_index(&out_shape, &out_strides);
        self.gather(a, index.into(), &out_shape)
    }

    /// Select entries `indices` along `axis` (`ZERO_INDEX` yields zeros).
    pub fn take(&mut self, a: Var, axis: usize, indices: &[usize]) -> Result<Var, GradError> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || indices.iter().any(|&i| i != ZERO_INDEX && i >= shape[axis]) {
            return Err(GradError::shape("take", &shape, indices));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let mut out_shape = shape.clone();
        out_shape[axis] = indices.len();
        let mut index = Vec::with_capacity(shape_len(&out_shape));
        for o in 0..outer {
            for &i in indices {
                for r in 0..inner {
                    index.push(if i == ZERO_INDEX {
                        ZERO_INDEX
                    } else {
                        (o * shape[axis] + i) * inner + r
                    });
                }
            }
        }
        self.gather(a, index.into(), &out_shape)
    }

    /// Contiguous range along `axis`.
    pub fn slice(
        &mut self,
        a: Var,
        axis: usize,
        start: usize,
        len: usize,
    ) -> Result<Var, GradError> {
        let idx: Vec<usize> = (start..start + len).collect();
        self.take(a, axis, &idx)
    }

    /// Broadcast dimensions of extent 1 up to `shape` (ranks must match).
    pub fn expand(&mut self, a: Var, shape: &[usize]) -> Result<Var, GradError> {
        let src = self.shape(a).to_vec();
        if src.len() != shape.len() || src.iter().zip(shape).any(|(&s, &t)| s != t && s != 1) {
            return Err(GradError::shape("expand", &src, shape));
        }
        let mut strides = vec![1usize; src.len()];
        for i in (0..src.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * src[i + 1];
        }
        let eff: Vec<usize> = strides
            .iter()
            .zip(&src)
            .map(|(&st, &s)| if s == 1 { 0 } else { st })
            .collect();
        let index = strided_index(shape, &eff);
        self.gather(a, index.into(), shape)
    }
}

fn strided_index(shape: &[usize], strides: &[usize]) -> Vec<usize> {
    let n = shape_len(shape);
    let mut index = Vec::with_capacity(n);
    let mut counter = vec![0usize; shape.len()];
    let mut offset = 0usize;
    for _ in 0..n {
        index.push(offset);
        for d in (0..shape.len()).rev() {
            counter[d] += 1;
            offset += strides[d];
            if counter[d] < shape[d] {
                break;
            }
            offset -= strides[d] * shape[d];
            counter[d] = 0;
        }
    }
    index
}

/// Adjoints produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Adjoint of `v`, or `None` if nothing differentiable reached it.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Adjoint of `v`, zero-filled when absent.
    pub fn wrt(&self, tape: &Tape, v: Var) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(tape.shape(v)))
    }
}
