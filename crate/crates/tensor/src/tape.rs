//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every operation applied to its variables. Calling
//! [`Tape::backward`] on a scalar walks the records in reverse and returns
//! gradients for every `param` variable. A tape is single-threaded; run one
//! tape per worker and reduce the resulting gradients.

use std::cell::{Ref, RefCell};
use std::collections::HashMap;

use crate::activation::{axis_split, max_pool_forward, sigmoid_scalar};
use crate::conv::{conv2d_backward, conv2d_forward, depthwise_backward, depthwise_forward, ConvGeom};
use crate::error::{Result, TensorError};
use crate::norm::{check_group_norm, group_norm_backward, group_norm_forward, GroupStats};
use crate::scalar::{gemm, MatRef, Scalar};
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operation defined outside this crate. The caller computes the forward
/// value; the op supplies the vector-Jacobian product.
pub trait CustomOp<T: Scalar> {
    fn name(&self) -> &'static str;

    /// Returns one entry per input; `None` where `needs[i]` is false or the
    /// input has no gradient.
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        grad_out: &Tensor<T>,
        needs: &[bool],
    ) -> Vec<Option<Tensor<T>>>;
}

enum Op<T: Scalar> {
    Leaf,
    Conv2d { x: Var, w: Var, geom: ConvGeom },
    Depthwise { x: Var, w: Var, geom: ConvGeom },
    AddChannelBias { x: Var, b: Var },
    AddRowBias { x: Var, b: Var },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, c: T },
    LeakyRelu { x: Var, slope: T },
    Sigmoid { x: Var },
    Abs { x: Var },
    Softmax { x: Var, axis: usize },
    GroupNorm { x: Var, gamma: Var, beta: Var, groups: usize, stats: GroupStats<T> },
    GlobalAvgPool { x: Var },
    MaxPool { x: Var, arg: Vec<usize> },
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    Reshape { x: Var },
    Transpose { x: Var },
    Concat { parts: Vec<Var> },
    Slice { x: Var, start: usize },
    MulChannel { x: Var, a: Var },
    MulSpatial { x: Var, s: Var },
    Gather { x: Var, index: Vec<usize> },
    Sum { x: Var },
    Mean { x: Var },
    Custom { inputs: Vec<Var>, op: Box<dyn CustomOp<T>> },
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    is_param: bool,
}

/// Gradients of a scalar with respect to each parameter variable.
pub struct Gradients<T: Scalar> {
    grads: HashMap<Var, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(&v)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.remove(&v)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

pub struct Tape<T: Scalar = f64> {
    nodes: RefCell<Vec<Node<T>>>,
    record: bool,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(op: &'static str, a: &[usize], b: &[usize]) -> TensorError {
    TensorError::Shape { op, detail: format!("{:?} vs {:?}", a, b) }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: RefCell::new(Vec::new()), record: true }
    }

    /// Tape that evaluates values only; `param` variables do not require
    /// gradients and `backward` returns nothing useful.
    pub fn inference() -> Self {
        Tape { nodes: RefCell::new(Vec::new()), record: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        let (op, requires_grad) = if self.record && requires_grad { (op, true) } else { (Op::Leaf, false) };
        nodes.push(Node { value, op, requires_grad, is_param: false });
        Var(nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].requires_grad
    }

    pub fn constant(&self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn param(&self, t: Tensor<T>) -> Var {
        let v = self.push(t, Op::Leaf, true);
        self.nodes.borrow_mut()[v.0].is_param = self.record;
        v
    }

    pub fn value(&self, v: Var) -> Ref<'_, Tensor<T>> {
        Ref::map(self.nodes.borrow(), |n| &n[v.0].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.value(v).shape().to_vec()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.needs(v)
    }

    /// Records a value produced by an external operation.
    pub fn custom(&self, inputs: &[Var], output: Tensor<T>, op: impl CustomOp<T> + 'static) -> Var {
        let rg = inputs.iter().any(|&v| self.needs(v));
        self.push(output, Op::Custom { inputs: inputs.to_vec(), op: Box::new(op) }, rg)
    }

    // ---- convolution -------------------------------------------------------

    pub fn conv2d(&self, x: Var, w: Var, stride: usize, pad: usize) -> Result<Var> {
        let (out, geom) = {
            let (xv, wv) = (self.value(x), self.value(w));
            let geom = ConvGeom::new(xv.shape(), wv.shape(), stride, pad, false)?;
            (conv2d_forward(xv.data(), wv.data(), &geom), geom)
        };
        let t = Tensor::new([geom.c_out, geom.ho, geom.wo], out)?;
        let rg = self.needs(x) || self.needs(w);
        Ok(self.push(t, Op::Conv2d { x, w, geom }, rg))
    }

    pub fn depthwise_conv2d(&self, x: Var, w: Var, stride: usize, pad: usize) -> Result<Var> {
        let (out, geom) = {
            let (xv, wv) = (self.value(x), self.value(w));
            let geom = ConvGeom::new(xv.shape(), wv.shape(), stride, pad, true)?;
            (depthwise_forward(xv.data(), wv.data(), &geom), geom)
        };
        let t = Tensor::new([geom.c_out, geom.ho, geom.wo], out)?;
        let rg = self.needs(x) || self.needs(w);
        Ok(self.push(t, Op::Depthwise { x, w, geom }, rg))
    }

    // ---- element-wise and broadcasting --------------------------------------

    /// Adds `b[c]` to every element of channel `c` of an `[C, ...]` tensor.
    pub fn add_channel_bias(&self, x: Var, b: Var) -> Result<Var> {
        let t = {
            let (xv, bv) = (self.value(x), self.value(b));
            let c = xv.shape().first().copied().unwrap_or(0);
            if bv.shape() != [c] {
                return Err(shape_err("add_channel_bias", xv.shape(), bv.shape()));
            }
            let per = xv.len() / c.max(1);
            let mut t = xv.clone();
            for (ch, chunk) in t.data_mut().chunks_mut(per.max(1)).enumerate() {
                let bias = bv.data()[ch];
                chunk.iter_mut().for_each(|v| *v += bias);
            }
            t
        };
        let rg = self.needs(x) || self.needs(b);
        Ok(self.push(t, Op::AddChannelBias { x, b }, rg))
    }

    /// Adds `b[d]` to column `d` of an `[N, D]` matrix.
    pub fn add_row_bias(&self, x: Var, b: Var) -> Result<Var> {
        let t = {
            let (xv, bv) = (self.value(x), self.value(b));
            let (_, d) = xv.dims2("add_row_bias")?;
            if bv.shape() != [d] {
                return Err(shape_err("add_row_bias", xv.shape(), bv.shape()));
            }
            let mut t = xv.clone();
            for row in t.data_mut().chunks_mut(d) {
                for (v, &bb) in row.iter_mut().zip(bv.data()) {
                    *v += bb;
                }
            }
            t
        };
        let rg = self.needs(x) || self.needs(b);
        Ok(self.push(t, Op::AddRowBias { x, b }, rg))
    }

    fn binary(&self, a: Var, b: Var, name: &'static str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err(name, av.shape(), bv.shape()));
        }
        av.zip_map(&bv, f)
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "add", |p, q| p + q)?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(t, Op::Add { a, b }, rg))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "sub", |p, q| p - q)?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(t, Op::Sub { a, b }, rg))
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "mul", |p, q| p * q)?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(t, Op::Mul { a, b }, rg))
    }

    pub fn scale(&self, x: Var, c: T) -> Var {
        let t = self.value(x).map(|v| v * c);
        let rg = self.needs(x);
        self.push(t, Op::Scale { x, c }, rg)
    }

    pub fn leaky_relu(&self, x: Var, slope: T) -> Var {
        let t = crate::activation::leaky_relu(&self.value(x), slope);
        let rg = self.needs(x);
        self.push(t, Op::LeakyRelu { x, slope }, rg)
    }

    pub fn sigmoid(&self, x: Var) -> Var {
        let t = self.value(x).map(sigmoid_scalar);
        let rg = self.needs(x);
        self.push(t, Op::Sigmoid { x }, rg)
    }

    pub fn abs(&self, x: Var) -> Var {
        let t = self.value(x).map(|v| v.abs());
        let rg = self.needs(x);
        self.push(t, Op::Abs { x }, rg)
    }

    pub fn softmax(&self, x: Var, axis: usize) -> Result<Var> {
        let t = crate::activation::softmax(&self.value(x), axis)?;
        let rg = self.needs(x);
        Ok(self.push(t, Op::Softmax { x, axis }, rg))
    }

    pub fn group_norm(&self, x: Var, gamma: Var, beta: Var, groups: usize, eps: T) -> Result<Var> {
        let (t, stats) = {
            let (xv, gv, bv) = (self.value(x), self.value(gamma), self.value(beta));
            let dims = check_group_norm(&xv, groups, &gv, &bv)?;
            let (out, stats) = group_norm_forward(xv.data(), dims, groups, gv.data(), bv.data(), eps);
            (Tensor::new(xv.shape().to_vec(), out)?, stats)
        };
        let rg = self.needs(x) || self.needs(gamma) || self.needs(beta);
        Ok(self.push(t, Op::GroupNorm { x, gamma, beta, groups, stats }, rg))
    }

    pub fn global_avg_pool(&self, x: Var) -> Result<Var> {
        let t = crate::activation::global_avg_pool(&self.value(x))?;
        let rg = self.needs(x);
        Ok(self.push(t, Op::GlobalAvgPool { x }, rg))
    }

    pub fn max_pool(&self, x: Var, k: usize, stride: usize) -> Result<Var> {
        let (t, arg) = max_pool_forward(&self.value(x), k, stride)?;
        let rg = self.needs(x);
        Ok(self.push(t, Op::MaxPool { x, arg }, rg))
    }

    // ---- linear algebra and layout -----------------------------------------

    /// `op(a) * op(b)` for rank-2 operands, `op` transposing when the flag is set.
    pub fn matmul(&self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let t = {
            let (av, bv) = (self.value(a), self.value(b));
            let (ar, ac) = av.dims2("matmul")?;
            let (br, bc) = bv.dims2("matmul")?;
            let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
            let (k2, n) = if tb { (bc, br) } else { (br, bc) };
            if k != k2 {
                return Err(shape_err("matmul", av.shape(), bv.shape()));
            }
            let mut out = vec![T::zero(); m * n];
            let mut ma = MatRef::new(av.data(), ar, ac);
            let mut mb = MatRef::new(bv.data(), br, bc);
            if ta {
                ma = ma.t();
            }
            if tb {
                mb = mb.t();
            }
            gemm(ma, mb, &mut out, false);
            Tensor::new([m, n], out)?
        };
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(t, Op::MatMul { a, b, ta, tb }, rg))
    }

    pub fn reshape(&self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape.to_vec())?;
        let rg = self.needs(x);
        Ok(self.push(t, Op::Reshape { x }, rg))
    }

    pub fn transpose(&self, x: Var) -> Result<Var> {
        let t = {
            let xv = self.value(x);
            let (r, c) = xv.dims2("transpose")?;
            transpose_data(xv.data(), r, c, [c, r])
        };
        let rg = self.needs(x);
        Ok(self.push(t, Op::Transpose { x }, rg))
    }

    /// Concatenation along the leading axis.
    pub fn concat(&self, parts: &[Var]) -> Result<Var> {
        let t = {
            let first = self.value(parts[0]);
            let tail = first.shape()[1..].to_vec();
            let mut lead = 0;
            let mut data = Vec::new();
            for &p in parts {
                let pv = self.value(p);
                if pv.shape().len() != first.shape().len() || pv.shape()[1..] != tail[..] {
                    return Err(shape_err("concat", first.shape(), pv.shape()));
                }
                lead += pv.shape()[0];
                data.extend_from_slice(pv.data());
            }
            let mut shape = vec![lead];
            shape.extend(tail);
            Tensor::new(shape, data)?
        };
        let rg = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(t, Op::Concat { parts: parts.to_vec() }, rg))
    }

    /// Rows `start..end` of the leading axis.
    pub fn slice(&self, x: Var, start: usize, end: usize) -> Result<Var> {
        let t = {
            let xv = self.value(x);
            let lead = xv.shape()[0];
            if start >= end || end > lead {
                return Err(TensorError::invalid("slice", format!("{}..{} of {}", start, end, lead)));
            }
            let per = xv.len() / lead;
            let mut shape = xv.shape().to_vec();
            shape[0] = end - start;
            Tensor::new(shape, xv.data()[start * per..end * per].to_vec())?
        };
        let rg = self.needs(x);
        Ok(self.push(t, Op::Slice { x, start }, rg))
    }

    /// `x[c, ...] * a[c]`.
    pub fn mul_channel(&self, x: Var, a: Var) -> Result<Var> {
        let t = {
            let (xv, av) = (self.value(x), self.value(a));
            let c = xv.shape()[0];
            if av.shape() != [c] {
                return Err(shape_err("mul_channel", xv.shape(), av.shape()));
            }
            let per = xv.len() / c;
            let mut t = xv.clone();
            for (ch, chunk) in t.data_mut().chunks_mut(per).enumerate() {
                let s = av.data()[ch];
                chunk.iter_mut().for_each(|v| *v *= s);
            }
            t
        };
        let rg = self.needs(x) || self.needs(a);
        Ok(self.push(t, Op::MulChannel { x, a }, rg))
    }

    /// `x[c, h, w] * s[0, h, w]`.
    pub fn mul_spatial(&self, x: Var, s: Var) -> Result<Var> {
        let t = {
            let (xv, sv) = (self.value(x), self.value(s));
            let (c, h, w) = xv.dims3("mul_spatial")?;
            if sv.shape() != [1, h, w] {
                return Err(shape_err("mul_spatial", xv.shape(), sv.shape()));
            }
            let mut t = xv.clone();
            for ch in 0..c {
                for (v, &m) in t.data_mut()[ch * h * w..(ch + 1) * h * w].iter_mut().zip(sv.data()) {
                    *v *= m;
                }
            }
            t
        };
        let rg = self.needs(x) || self.needs(s);
        Ok(self.push(t, Op::MulSpatial { x, s }, rg))
    }

    /// `out[i] = x[index[i]]`, reshaped to `shape`. Repeated indices are
    /// allowed; their gradients accumulate.
    pub fn gather(&self, x: Var, index: Vec<usize>, shape: &[usize]) -> Result<Var> {
        let t = {
            let xv = self.value(x);
            if let Some(&bad) = index.iter().find(|&&i| i >= xv.len()) {
                return Err(TensorError::invalid("gather", format!("index {} out of {}", bad, xv.len())));
            }
            Tensor::new(shape.to_vec(), index.iter().map(|&i| xv.data()[i]).collect())?
        };
        let rg = self.needs(x);
        Ok(self.push(t, Op::Gather { x, index }, rg))
    }

    /// Nearest-neighbour resampling of a `[C,H,W]` map to `[C,ho,wo]`.
    pub fn resample_nearest(&self, x: Var, ho: usize, wo: usize) -> Result<Var> {
        let (c, h, w) = self.value(x).dims3("resample_nearest")?;
        if (h, w) == (ho, wo) {
            return Ok(x);
        }
        let mut index = Vec::with_capacity(c * ho * wo);
        for ch in 0..c {
            for y in 0..ho {
                let sy = (y * h) / ho;
                for xx in 0..wo {
                    let sx = (xx * w) / wo;
                    index.push((ch * h + sy) * w + sx);
                }
            }
        }
        self.gather(x, index, &[c, ho, wo])
    }

    /// Circular shift of a `[C,H,W]` map: `out[c, (y+dy)%H, (x+dx)%W] = x[c, y, x]`.
    pub fn roll(&self, x: Var, dy: usize, dx: usize) -> Result<Var> {
        let (c, h, w) = self.value(x).dims3("roll")?;
        let mut index = vec![0; c * h * w];
        for ch in 0..c {
            for y in 0..h {
                for xx in 0..w {
                    index[(ch * h + (y + dy) % h) * w + (xx + dx) % w] = (ch * h + y) * w + xx;
                }
            }
        }
        self.gather(x, index, &[c, h, w])
    }

    pub fn sum(&self, x: Var) -> Var {
        let t = Tensor::scalar(self.value(x).sum());
        let rg = self.needs(x);
        self.push(t, Op::Sum { x }, rg)
    }

    pub fn mean(&self, x: Var) -> Var {
        let t = Tensor::scalar(self.value(x).mean());
        let rg = self.needs(x);
        self.push(t, Op::Mean { x }, rg)
    }

    // ---- backward ----------------------------------------------------------

    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.0];
        if root.value.len() != 1 {
            return Err(TensorError::NonScalarLoss(root.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(root.value.shape().to_vec(), T::one()));
        let mut out = HashMap::new();

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &nodes[i];
            if !node.requires_grad {
                continue;
            }
            if node.is_param {
                out.insert(Var(i), g);
                continue;
            }
            let need = |v: Var| nodes[v.0].requires_grad;
            let val = |v: Var| &nodes[v.0].value;
            let mut acc = |v: Var, t: Tensor<T>| accumulate(&mut grads, v, t);
            match &node.op {
                Op::Leaf => {}
                Op::Conv2d { x, w, geom } | Op::Depthwise { x, w, geom } => {
                    let mut dx = need(*x).then(|| Tensor::zeros(val(*x).shape().to_vec()));
                    let mut dw = need(*w).then(|| Tensor::zeros(val(*w).shape().to_vec()));
                    let f = if matches!(node.op, Op::Conv2d { .. }) { conv2d_backward } else { depthwise_backward };
                    f(
                        val(*x).data(),
                        val(*w).data(),
                        g.data(),
                        geom,
                        dx.as_mut().map(|t| t.data_mut()),
                        dw.as_mut().map(|t| t.data_mut()),
                    );
                    if let Some(dx) = dx {
                        acc(*x, dx);
                    }
                    if let Some(dw) = dw {
                        acc(*w, dw);
                    }
                }
                Op::AddChannelBias { x, b } => {
                    if need(*b) {
                        let c = val(*b).len();
                        let per = g.len() / c;
                        let db = g.data().chunks(per).map(|ch| ch.iter().copied().sum::<T>()).collect();
                        acc(*b, Tensor::new([c], db).expect("bias"));
                    }
                    if need(*x) {
                        acc(*x, g);
                    }
                }
                Op::AddRowBias { x, b } => {
                    if need(*b) {
                        let d = val(*b).len();
                        let mut db = vec![T::zero(); d];
                        for row in g.data().chunks(d) {
                            for (s, &v) in db.iter_mut().zip(row) {
                                *s += v;
                            }
                        }
                        acc(*b, Tensor::new([d], db).expect("bias"));
                    }
                    if need(*x) {
                        acc(*x, g);
                    }
                }
                Op::Add { a, b } => {
                    if need(*a) {
                        acc(*a, g.clone());
                    }
                    if need(*b) {
                        acc(*b, g);
                    }
                }
                Op::Sub { a, b } => {
                    if need(*b) {
                        acc(*b, g.map(|v| -v));
                    }
                    if need(*a) {
                        acc(*a, g);
                    }
                }
                Op::Mul { a, b } => {
                    if need(*a) {
                        acc(*a, g.zip_map(val(*b), |p, q| p * q).expect("mul"));
                    }
                    if need(*b) {
                        acc(*b, g.zip_map(val(*a), |p, q| p * q).expect("mul"));
                    }
                }
                Op::Scale { x, c } => acc(*x, g.map(|v| v * *c)),
                Op::LeakyRelu { x, slope } => {
                    let d = g.zip_map(val(*x), |gv, xv| if xv >= T::zero() { gv } else { gv * *slope });
                    acc(*x, d.expect("leaky"));
                }
                Op::Sigmoid { x } => {
                    let d = g.zip_map(&node.value, |gv, y| gv * y * (T::one() - y));
                    acc(*x, d.expect("sigmoid"));
                }
                Op::Abs { x } => {
                    let d = g.zip_map(val(*x), |gv, xv| if xv >= T::zero() { gv } else { -gv });
                    acc(*x, d.expect("abs"));
                }
                Op::Softmax { x, axis } => {
                    let y = &node.value;
                    let (outer, n, inner) = axis_split(y.shape(), *axis);
                    let mut d = vec![T::zero(); y.len()];
                    for o in 0..outer {
                        for ii in 0..inner {
                            let idx = |k: usize| (o * n + k) * inner + ii;
                            let dot: T = (0..n).map(|k| g.data()[idx(k)] * y.data()[idx(k)]).sum();
                            for k in 0..n {
                                d[idx(k)] = y.data()[idx(k)] * (g.data()[idx(k)] - dot);
                            }
                        }
                    }
                    acc(*x, Tensor::new(y.shape().to_vec(), d).expect("softmax"));
                }
                Op::GroupNorm { x, gamma, beta, groups, stats } => {
                    let xv = val(*x);
                    let dims = xv.dims3("group_norm").expect("gn");
                    let mut dx = need(*x).then(|| Tensor::zeros(xv.shape().to_vec()));
                    let mut dg = need(*gamma).then(|| Tensor::zeros([dims.0]));
                    let mut db = need(*beta).then(|| Tensor::zeros([dims.0]));
                    group_norm_backward(
                        xv.data(),
                        dims,
                        *groups,
                        val(*gamma).data(),
                        stats,
                        g.data(),
                        dx.as_mut().map(|t| t.data_mut()),
                        dg.as_mut().map(|t| t.data_mut()),
                        db.as_mut().map(|t| t.data_mut()),
                    );
                    for (v, t) in [(*x, dx), (*gamma, dg), (*beta, db)] {
                        if let Some(t) = t {
                            acc(v, t);
                        }
                    }
                }
                Op::GlobalAvgPool { x } => {
                    let xv = val(*x);
                    let c = xv.shape()[0];
                    let hw = xv.len() / c;
                    let inv = T::one() / T::lit(hw as f64);
                    let d = Tensor::from_fn(xv.shape().to_vec(), |i| g.data()[i / hw] * inv);
                    acc(*x, d);
                }
                Op::MaxPool { x, arg } => {
                    let mut d = Tensor::zeros(val(*x).shape().to_vec());
                    for (&src, &gv) in arg.iter().zip(g.data()) {
                        d.data_mut()[src] += gv;
                    }
                    acc(*x, d);
                }
                Op::MatMul { a, b, ta, tb } => {
                    let (av, bv) = (val(*a), val(*b));
                    let (ar, ac) = (av.shape()[0], av.shape()[1]);
                    let (br, bc) = (bv.shape()[0], bv.shape()[1]);
                    let (gr, gc) = (g.shape()[0], g.shape()[1]);
                    let gm = MatRef::new(g.data(), gr, gc);
                    let mut am = MatRef::new(av.data(), ar, ac);
                    let mut bm = MatRef::new(bv.data(), br, bc);
                    if *ta {
                        am = am.t();
                    }
                    if *tb {
                        bm = bm.t();
                    }
                    if need(*a) {
                        let mut da = vec![T::zero(); ar * ac];
                        if *ta {
                            gemm(bm, gm.t(), &mut da, false);
                        } else {
                            gemm(gm, bm.t(), &mut da, false);
                        }
                        acc(*a, Tensor::new([ar, ac], da).expect("matmul"));
                    }
                    if need(*b) {
                        let mut db = vec![T::zero(); br * bc];
                        if *tb {
                            gemm(gm.t(), am, &mut db, false);
                        } else {
                            gemm(am.t(), gm, &mut db, false);
                        }
                        acc(*b, Tensor::new([br, bc], db).expect("matmul"));
                    }
                }
                Op::Reshape { x } => {
                    let shape = val(*x).shape().to_vec();
                    acc(*x, g.reshape(shape).expect("reshape"));
                }
                Op::Transpose { x } => {
                    let (r, c) = (g.shape()[0], g.shape()[1]);
                    acc(*x, transpose_data(g.data(), r, c, [c, r]));
                }
                Op::Concat { parts } => {
                    let mut off = 0;
                    for &p in parts {
                        let pv = val(p);
                        let n = pv.len();
                        if need(p) {
                            acc(p, Tensor::new(pv.shape().to_vec(), g.data()[off..off + n].to_vec()).expect("concat"));
                        }
                        off += n;
                    }
                }
                Op::Slice { x, start } => {
                    let xv = val(*x);
                    let per = xv.len() / xv.shape()[0];
                    let mut d = Tensor::zeros(xv.shape().to_vec());
                    d.data_mut()[start * per..start * per + g.len()].copy_from_slice(g.data());
                    acc(*x, d);
                }
                Op::MulChannel { x, a } => {
                    let (xv, av) = (val(*x), val(*a));
                    let c = av.len();
                    let per = xv.len() / c;
                    if need(*a) {
                        let da = (0..c)
                            .map(|ch| {
                                let r = ch * per..(ch + 1) * per;
                                g.data()[r.clone()].iter().zip(&xv.data()[r]).map(|(&p, &q)| p * q).sum()
                            })
                            .collect();
                        acc(*a, Tensor::new([c], da).expect("mul_channel"));
                    }
                    if need(*x) {
                        acc(*x, Tensor::from_fn(xv.shape().to_vec(), |i| g.data()[i] * av.data()[i / per]));
                    }
                }
                Op::MulSpatial { x, s } => {
                    let (xv, sv) = (val(*x), val(*s));
                    let hw = sv.len();
                    if need(*s) {
                        let mut ds = vec![T::zero(); hw];
                        for (i, (&gv, &xx)) in g.data().iter().zip(xv.data()).enumerate() {
                            ds[i % hw] += gv * xx;
                        }
                        acc(*s, Tensor::new(sv.shape().to_vec(), ds).expect("mul_spatial"));
                    }
                    if need(*x) {
                        acc(*x, Tensor::from_fn(xv.shape().to_vec(), |i| g.data()[i] * sv.data()[i % hw]));
                    }
                }
                Op::Gather { x, index } => {
                    let mut d = Tensor::zeros(val(*x).shape().to_vec());
                    for (&src, &gv) in index.iter().zip(g.data()) {
                        d.data_mut()[src] += gv;
                    }
                    acc(*x, d);
                }
                Op::Sum { x } => {
                    let gv = g.item();
                    acc(*x, Tensor::full(val(*x).shape().to_vec(), gv));
                }
                Op::Mean { x } => {
                    let xv = val(*x);
                    let gv = g.item() / T::lit(xv.len() as f64);
                    acc(*x, Tensor::full(xv.shape().to_vec(), gv));
                }
                Op::Custom { inputs, op } => {
                    let ins: Vec<&Tensor<T>> = inputs.iter().map(|&v| val(v)).collect();
                    let needs: Vec<bool> = inputs.iter().map(|&v| need(v)).collect();
                    let ds = op.backward(&ins, &node.value, &g, &needs);
                    for ((&v, d), &nd) in inputs.iter().zip(ds).zip(&needs) {
                        if let (Some(d), true) = (d, nd) {
                            assert_eq!(d.shape(), val(v).shape(), "custom op {} gradient shape", op.name());
                            acc(v, d);
                        }
                    }
                }
            }
        }
        Ok(Gradients { grads: out })
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Tensor<T>>], v: Var, t: Tensor<T>) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&t),
        slot @ None => *slot = Some(t),
    }
}

fn transpose_data<T: Scalar>(data: &[T], r: usize, c: usize, shape: [usize; 2]) -> Tensor<T> {
    let mut out = vec![T::zero(); r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = data[i * c + j];
        }
    }
    Tensor::new(shape, out).expect("transpose")
}
