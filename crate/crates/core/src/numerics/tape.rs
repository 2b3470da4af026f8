//! Reverse-mode automatic differentiation over row-major matrices.
//!
//! Every operation appends a node holding its forward value. Nodes record
//! whether any ancestor requires a gradient; [`Tape::backward`] only visits
//! those. A variable used several times accumulates the sum of its
//! contributions, which is what a dense layer shared across time steps needs.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::ops::{self, Activation, LayerNormCache};
use super::{ParamId, ParamStore, Scalar, Tensor};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Training mode carries the generator that draws dropout masks.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut ChaCha8Rng),
}

impl Mode<'_> {
    pub fn is_train(&self) -> bool {
        matches!(self, Mode::Train(_))
    }
}

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Passthrough(Var),
    MulConst(Var, Vec<T>),
    Affine(Var, T),
    Act(Var, Activation),
    Abs(Var),
    Log(Var),
    Clamp(Var, T, T),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        cache: LayerNormCache<T>,
        beta: Var,
    },
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    Sum(Var),
    Mean(Var),
    Linear(Vec<(Var, T)>),
    ScalarWithGrads(Vec<(Var, Vec<T>)>),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Tape variables for every parameter of a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }
}

pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads[v.0].as_deref()
    }

    /// Per-parameter gradients in store order; `None` for parameters that
    /// did not take part in the loss.
    pub fn for_params(mut self, bound: &Bound) -> Vec<Option<Vec<T>>> {
        bound.vars.iter().map(|v| self.grads[v.0].take()).collect()
    }
}

#[derive(Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.0].value.data()[0]
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn any(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        let t = &self.nodes[v.0].value;
        (t.rows(), t.cols())
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn variable(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Registers every parameter as a leaf; only trainable ones receive gradients.
    pub fn bind(&mut self, store: &ParamStore<T>) -> Bound {
        let vars = store
            .iter()
            .map(|(_, p)| self.push(p.tensor.clone(), Op::Leaf, p.trainable))
            .collect();
        Bound { vars }
    }

    /// Like [`Tape::bind`] but no parameter receives a gradient.
    pub fn bind_frozen(&mut self, store: &ParamStore<T>) -> Bound {
        let vars = store
            .iter()
            .map(|(_, p)| self.push(p.tensor.clone(), Op::Leaf, false))
            .collect();
        Bound { vars }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = ops::matmul(self.value(a), self.value(b))?;
        let ng = self.any(&[a, b]);
        Ok(self.push(v, Op::MatMul(a, b), ng))
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = ops::matmul_nt(self.value(a), self.value(b))?;
        let ng = self.any(&[a, b]);
        Ok(self.push(v, Op::MatMulNt(a, b), ng))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn zip(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
    ) -> Result<Tensor<T>> {
        self.same_shape(op, a, b)?;
        let (x, y) = (self.value(a), self.value(b));
        let data = x
            .data()
            .iter()
            .zip(y.data())
            .map(|(&p, &q)| f(p, q))
            .collect();
        Tensor::new(x.shape(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip("add", a, b, |p, q| p + q)?;
        let ng = self.any(&[a, b]);
        Ok(self.push(v, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip("sub", a, b, |p, q| p - q)?;
        let ng = self.any(&[a, b]);
        Ok(self.push(v, Op::Sub(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip("mul", a, b, |p, q| p * q)?;
        let ng = self.any(&[a, b]);
        Ok(self.push(v, Op::Mul(a, b), ng))
    }

    /// Adds the vector `b` (length c) to every row of `x` (r×c).
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let (r, c) = self.dims(x);
        if self.value(b).len() != c {
            return Err(Error::dim("add_row", self.shape(x), self.shape(b)));
        }
        let bias = self.value(b).data();
        let mut data = self.value(x).data().to_vec();
        for row in data.chunks_mut(c.max(1)) {
            row.iter_mut().zip(bias).for_each(|(v, &q)| *v = *v + q);
        }
        let v = Tensor::new(&[r, c], data)?;
        let ng = self.any(&[x, b]);
        Ok(self.push(v, Op::AddRow(x, b), ng))
    }

    /// Adds a constant tensor of the same shape; gradient passes to `x` unchanged.
    pub fn add_const(&mut self, x: Var, c: &Tensor<T>) -> Result<Var> {
        if self.value(x).len() != c.len() {
            return Err(Error::dim("add_const", self.shape(x), c.shape()));
        }
        let xv = self.value(x);
        let data = xv
            .data()
            .iter()
            .zip(c.data())
            .map(|(&p, &q)| p + q)
            .collect();
        let v = Tensor::new(xv.shape(), data)?;
        let ng = self.any(&[x]);
        Ok(self.push(v, Op::Passthrough(x), ng))
    }

    pub fn mul_const(&mut self, x: Var, c: Vec<T>) -> Result<Var> {
        if self.value(x).len() != c.len() {
            return Err(Error::dim("mul_const", self.shape(x), &[c.len()]));
        }
        let xv = self.value(x);
        let data = xv.data().iter().zip(&c).map(|(&p, &q)| p * q).collect();
        let v = Tensor::new(xv.shape(), data)?;
        let ng = self.any(&[x]);
        Ok(self.push(v, Op::MulConst(x, c), ng))
    }

    /// `scale · x + shift`.
    pub fn affine(&mut self, x: Var, scale: T, shift: T) -> Var {
        let v = self.value(x).map(|p| scale * p + shift);
        let ng = self.any(&[x]);
        self.push(v, Op::Affine(x, scale), ng)
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        self.affine(x, s, T::zero())
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Var {
        if kind == Activation::None {
            return x;
        }
        let v = ops::activation(self.value(x), kind);
        let ng = self.any(&[x]);
        self.push(v, Op::Act(x, kind), ng)
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|p| p.abs());
        let ng = self.any(&[x]);
        self.push(v, Op::Abs(x), ng)
    }

    pub fn ln(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|p| p.ln());
        let ng = self.any(&[x]);
        self.push(v, Op::Log(x), ng)
    }

    /// Clamps into `[lo, hi]`; clamped entries pass no gradient.
    pub fn clamp(&mut self, x: Var, lo: T, hi: T) -> Var {
        let v = self.value(x).map(|p| p.max(lo).min(hi));
        let ng = self.any(&[x]);
        self.push(v, Op::Clamp(x, lo, hi), ng)
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let v = ops::softmax_rows(self.value(x))?;
        let ng = self.any(&[x]);
        Ok(self.push(v, Op::Softmax(x), ng))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<Var> {
        let (v, cache) =
            ops::layer_norm_with_cache(self.value(x), self.value(gamma), self.value(beta), eps)?;
        let ng = self.any(&[x, gamma, beta]);
        Ok(self.push(
            v,
            Op::LayerNorm {
                x,
                gamma,
                cache,
                beta,
            },
            ng,
        ))
    }

    /// Inverted dropout; identity in eval mode or at rate 0.
    pub fn dropout(&mut self, x: Var, rate: f64, mode: &mut Mode<'_>) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
        }
        let rng = match mode {
            Mode::Train(rng) if rate > 0.0 => rng,
            _ => return Ok(x),
        };
        let keep = 1.0 - rate;
        let scale = T::from_f64(1.0 / keep);
        let mask = (0..self.value(x).len())
            .map(|_| {
                if rng.random::<f64>() < keep {
                    scale
                } else {
                    T::zero()
                }
            })
            .collect();
        self.mul_const(x, mask)
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.dims(x);
        if start + len > r {
            return Err(Error::dim("slice_rows", self.shape(x), &[start, len]));
        }
        let data = self.value(x).data()[start * c..(start + len) * c].to_vec();
        let v = Tensor::new(&[len, c], data)?;
        let ng = self.any(&[x]);
        Ok(self.push(v, Op::SliceRows(x, start), ng))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.dims(x);
        if start + len > c {
            return Err(Error::dim("slice_cols", self.shape(x), &[start, len]));
        }
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&src[i * c + start..i * c + start + len]);
        }
        let v = Tensor::new(&[r, len], data)?;
        let ng = self.any(&[x]);
        Ok(self.push(v, Op::SliceCols(x, start), ng))
    }

    pub fn gather_rows(&mut self, x: Var, idx: Vec<usize>) -> Result<Var> {
        let (r, c) = self.dims(x);
        if let Some(&bad) = idx.iter().find(|&&i| i >= r) {
            return Err(Error::dim("gather_rows", self.shape(x), &[bad]));
        }
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in &idx {
            data.extend_from_slice(&src[i * c..(i + 1) * c]);
        }
        let v = Tensor::new(&[idx.len(), c], data)?;
        let ng = self.any(&[x]);
        Ok(self.push(v, Op::GatherRows(x, idx), ng))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let c = parts.first().map_or(0, |&p| self.dims(p).1);
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let (r, pc) = self.dims(p);
            if pc != c {
                return Err(Error::dim("concat_rows", &[rows, c], self.shape(p)));
            }
            rows += r;
            data.extend_from_slice(self.value(p).data());
        }
        let v = Tensor::new(&[rows, c], data)?;
        let ng = self.any(parts);
        Ok(self.push(v, Op::ConcatRows(parts.to_vec()), ng))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let r = parts.first().map_or(0, |&p| self.dims(p).0);
        let widths: Vec<usize> = parts.iter().map(|&p| self.dims(p).1).collect();
        for &p in parts {
            if self.dims(p).0 != r {
                return Err(Error::dim("concat_cols", &[r], self.shape(p)));
            }
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(r * total);
        for i in 0..r {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        let v = Tensor::new(&[r, total], data)?;
        let ng = self.any(parts);
        Ok(self.push(v, Op::ConcatCols(parts.to_vec()), ng))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum();
        let ng = self.any(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), ng)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = t.data().iter().copied().sum::<T>() / T::from_f64(t.len() as f64);
        let ng = self.any(&[x]);
        self.push(Tensor::scalar(s), Op::Mean(x), ng)
    }

    /// `Σ wᵢ·xᵢ` over same-shaped inputs.
    pub fn linear_combination(&mut self, terms: &[(Var, T)]) -> Result<Var> {
        let first = terms
            .first()
            .ok_or(Error::EmptySequence("linear_combination"))?
            .0;
        let shape = self.shape(first).to_vec();
        let mut data = vec![T::zero(); self.value(first).len()];
        for &(v, w) in terms {
            if self.shape(v) != shape.as_slice() {
                return Err(Error::dim("linear_combination", &shape, self.shape(v)));
            }
            data.iter_mut()
                .zip(self.value(v).data())
                .for_each(|(a, &b)| *a = *a + w * b);
        }
        let vars: Vec<Var> = terms.iter().map(|t| t.0).collect();
        let ng = self.any(&vars);
        Ok(self.push(Tensor::new(&shape, data)?, Op::Linear(terms.to_vec()), ng))
    }

    /// A scalar whose gradients with respect to `inputs` were computed
    /// externally at forward time.
    pub fn scalar_with_grads(&mut self, value: T, inputs: Vec<(Var, Vec<T>)>) -> Result<Var> {
        for (v, g) in &inputs {
            if g.len() != self.value(*v).len() {
                return Err(Error::dim("scalar_with_grads", self.shape(*v), &[g.len()]));
            }
        }
        let vars: Vec<Var> = inputs.iter().map(|t| t.0).collect();
        let ng = self.any(&vars);
        Ok(self.push(Tensor::scalar(value), Op::ScalarWithGrads(inputs), ng))
    }

    /// Back-propagates from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::dim("backward", self.shape(loss), &[1]));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Vec<T>>], v: Var) -> Option<&'g mut Vec<T>> {
        let node = &self.nodes[v.0];
        if !node.needs_grad {
            return None;
        }
        Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); node.value.len()]))
    }

    fn backprop_node(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.dims(*a);
                let n = self.dims(*b).1;
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if let Some(da) = self.slot(grads, *a) {
                    T::gemm(m, n, k, g, n as isize, 1, bv, 1, n as isize, da, true);
                }
                if let Some(db) = self.slot(grads, *b) {
                    T::gemm(k, m, n, av, 1, k as isize, g, n as isize, 1, db, true);
                }
            }
            Op::MatMulNt(a, b) => {
                let (m, k) = self.dims(*a);
                let n = self.dims(*b).0;
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if let Some(da) = self.slot(grads, *a) {
                    T::gemm(m, n, k, g, n as isize, 1, bv, k as isize, 1, da, true);
                }
                if let Some(db) = self.slot(grads, *b) {
                    T::gemm(n, m, k, g, 1, n as isize, av, k as isize, 1, db, true);
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(d) = self.slot(grads, v) {
                        add_into(d, g);
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(d) = self.slot(grads, *a) {
                    add_into(d, g);
                }
                if let Some(d) = self.slot(grads, *b) {
                    d.iter_mut().zip(g).for_each(|(p, &q)| *p = *p - q);
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if let Some(d) = self.slot(grads, *a) {
                    for ((p, &q), &w) in d.iter_mut().zip(g).zip(bv) {
                        *p = *p + q * w;
                    }
                }
                if let Some(d) = self.slot(grads, *b) {
                    for ((p, &q), &w) in d.iter_mut().zip(g).zip(av) {
                        *p = *p + q * w;
                    }
                }
            }
            Op::AddRow(x, b) => {
                let c = out.cols();
                if let Some(d) = self.slot(grads, *x) {
                    add_into(d, g);
                }
                if let Some(d) = self.slot(grads, *b) {
                    for row in g.chunks(c.max(1)) {
                        add_into(d, row);
                    }
                }
            }
            Op::Passthrough(x) => {
                if let Some(d) = self.slot(grads, *x) {
                    add_into(d, g);
                }
            }
            Op::MulConst(x, c) => {
                if let Some(d) = self.slot(grads, *x) {
                    for ((p, &q), &w) in d.iter_mut().zip(g).zip(c) {
                        *p = *p + q * w;
                    }
                }
            }
            Op::Affine(x, s) => {
                if let Some(d) = self.slot(grads, *x) {
                    d.iter_mut().zip(g).for_each(|(p, &q)| *p = *p + q * *s);
                }
            }
            Op::Act(x, kind) => {
                if let Some(d) = self.slot(grads, *x) {
                    for ((p, &q), &y) in d.iter_mut().zip(g).zip(out.data()) {
                        *p = *p + q * kind.derivative_from_output(y);
                    }
                }
            }
            Op::Abs(x) => {
                let xv = self.value(*x).data();
                if let Some(d) = self.slot(grads, *x) {
                    for ((p, &q), &v) in d.iter_mut().zip(g).zip(xv) {
                        let s = if v > T::zero() {
                            T::one()
                        } else if v < T::zero() {
                            -T::one()
                        } else {
                            T::zero()
                        };
                        *p = *p + q * s;
                    }
                }
            }
            Op::Log(x) => {
                let xv = self.value(*x).data();
                if let Some(d) = self.slot(grads, *x) {
                    for ((p, &q), &v) in d.iter_mut().zip(g).zip(xv) {
                        *p = *p + q / v;
                    }
                }
            }
            Op::Clamp(x, lo, hi) => {
                let xv = self.value(*x).data();
                if let Some(d) = self.slot(grads, *x) {
                    for ((p, &q), &v) in d.iter_mut().zip(g).zip(xv) {
                        if v >= *lo && v <= *hi {
                            *p = *p + q;
                        }
                    }
                }
            }
            Op::Softmax(x) => {
                let c = out.cols();
                if let Some(d) = self.slot(grads, *x) {
                    for ((drow, grow), yrow) in
                        d.chunks_mut(c).zip(g.chunks(c)).zip(out.data().chunks(c))
                    {
                        let dot: T = grow.iter().zip(yrow).map(|(&a, &b)| a * b).sum();
                        for ((p, &q), &y) in drow.iter_mut().zip(grow).zip(yrow) {
                            *p = *p + y * (q - dot);
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                cache,
                beta,
            } => {
                let c = out.cols();
                let n = T::from_f64(c as f64);
                let gm = self.value(*gamma).data();
                if let Some(d) = self.slot(grads, *gamma) {
                    for (grow, xrow) in g.chunks(c).zip(cache.normalized.chunks(c)) {
                        for ((p, &q), &xh) in d.iter_mut().zip(grow).zip(xrow) {
                            *p = *p + q * xh;
                        }
                    }
                }
                if let Some(d) = self.slot(grads, *beta) {
                    for grow in g.chunks(c) {
                        add_into(d, grow);
                    }
                }
                if let Some(d) = self.slot(grads, *x) {
                    let rows = d
                        .chunks_mut(c)
                        .zip(g.chunks(c))
                        .zip(cache.normalized.chunks(c));
                    for (((drow, grow), xrow), &is) in rows.zip(&cache.inv_std) {
                        let dxh: Vec<T> = grow.iter().zip(gm).map(|(&a, &b)| a * b).collect();
                        let mean_dxh = dxh.iter().copied().sum::<T>() / n;
                        let mean_dxh_xh = dxh.iter().zip(xrow).map(|(&a, &b)| a * b).sum::<T>() / n;
                        for ((p, &dx), &xh) in drow.iter_mut().zip(&dxh).zip(xrow) {
                            *p = *p + is * (dx - mean_dxh - xh * mean_dxh_xh);
                        }
                    }
                }
            }
            Op::SliceRows(x, start) => {
                let c = out.cols();
                if let Some(d) = self.slot(grads, *x) {
                    add_into(&mut d[start * c..start * c + g.len()], g);
                }
            }
            Op::SliceCols(x, start) => {
                let w = out.cols();
                let c = self.dims(*x).1;
                if let Some(d) = self.slot(grads, *x) {
                    for (i, grow) in g.chunks(w.max(1)).enumerate() {
                        add_into(&mut d[i * c + start..i * c + start + w], grow);
                    }
                }
            }
            Op::GatherRows(x, idx) => {
                let c = out.cols();
                if let Some(d) = self.slot(grads, *x) {
                    for (grow, &i) in g.chunks(c.max(1)).zip(idx) {
                        add_into(&mut d[i * c..(i + 1) * c], grow);
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    if let Some(d) = self.slot(grads, p) {
                        add_into(d, &g[offset..offset + len]);
                    }
                    offset += len;
                }
            }
            Op::ConcatCols(parts) => {
                let total = out.cols();
                let mut col = 0;
                for &p in parts {
                    let (r, w) = self.dims(p);
                    if let Some(d) = self.slot(grads, p) {
                        for i in 0..r {
                            add_into(
                                &mut d[i * w..(i + 1) * w],
                                &g[i * total + col..i * total + col + w],
                            );
                        }
                    }
                    col += w;
                }
            }
            Op::Sum(x) => {
                if let Some(d) = self.slot(grads, *x) {
                    d.iter_mut().for_each(|p| *p = *p + g[0]);
                }
            }
            Op::Mean(x) => {
                let n = T::from_f64(self.value(*x).len() as f64);
                if let Some(d) = self.slot(grads, *x) {
                    d.iter_mut().for_each(|p| *p = *p + g[0] / n);
                }
            }
            Op::Linear(terms) => {
                for &(v, w) in terms {
                    if let Some(d) = self.slot(grads, v) {
                        d.iter_mut().zip(g).for_each(|(p, &q)| *p = *p + w * q);
                    }
                }
            }
            Op::ScalarWithGrads(inputs) => {
                for (v, local) in inputs {
                    if let Some(d) = self.slot(grads, *v) {
                        d.iter_mut()
                            .zip(local)
                            .for_each(|(p, &q)| *p = *p + g[0] * q);
                    }
                }
            }
        }
    }
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    dst.iter_mut().zip(src).for_each(|(p, &q)| *p = *p + q);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shared_use_accumulates() {
        let mut tape = Tape::<f64>::new();
        let w = tape.variable(Tensor::new(&[2], vec![1.0, 2.0]).unwrap());
        let sq = tape.mul(w, w).unwrap();
        let both = tape.add(sq, w).unwrap();
        let loss = tape.sum(both);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(w).unwrap(), &[3.0, 5.0]);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::<f64>::new();
        let c = tape.constant(Tensor::full(&[2, 2], 1.0));
        let w = tape.variable(Tensor::full(&[2, 2], 2.0));
        let p = tape.matmul(c, w).unwrap();
        let loss = tape.sum(p);
        let g = tape.backward(loss).unwrap();
        assert!(g.get(c).is_none());
        assert_eq!(g.get(w).unwrap(), &[2.0; 4]);
    }

    #[test]
    fn dropout_eval_and_zero_rate_are_identity() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::full(&[3, 3], 1.5));
        let y = tape.dropout(x, 0.5, &mut Mode::Eval).unwrap();
        assert_eq!(x, y);
        let mut rng = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(1);
        let y = tape.dropout(x, 0.0, &mut Mode::Train(&mut rng)).unwrap();
        assert_eq!(x, y);
        assert!(tape.dropout(x, 1.0, &mut Mode::Eval).is_err());
        assert!(tape.dropout(x, -0.1, &mut Mode::Eval).is_err());
    }

    #[test]
    fn dropout_keeps_expected_fraction() {
        let n = 100_000;
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::full(&[n], 1.0));
        let mut rng = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(3);
        let y = tape.dropout(x, 0.5, &mut Mode::Train(&mut rng)).unwrap();
        let vals = tape.value(y).data();
        let kept = vals.iter().filter(|&&v| v != 0.0).count() as f64 / n as f64;
        let mean = vals.iter().sum::<f64>() / n as f64;
        assert!((kept - 0.5).abs() <= 0.01, "kept {kept}");
        assert!((mean - 1.0).abs() <= 0.02, "mean {mean}");
    }
}
