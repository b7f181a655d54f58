//! Append-only reverse-mode tape.
//!
//! Every op evaluates eagerly, stores its value on the tape and returns a
//! [`Var`] handle. Inputs always precede their consumers, so append order
//! is a topological order and [`Tape::backward`] is a single reverse sweep.

use std::cell::{Ref, RefCell};

use rand::Rng;

use crate::error::{NumericsError, Result};
use crate::kernels;
use crate::tensor::shape_err;
use crate::{Real, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Elementwise op kinds accepted by [`Tape::elementwise`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Elementwise {
    Add,
    Sub,
    Mul,
    Sigmoid,
    Tanh,
    Relu,
}

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Linear {
        w: Var,
        x: Var,
        bias: Option<Var>,
        offset: usize,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    LeakyRelu(Var, T),
    OneMinus(Var),
    Scale(Var, T),
    Map(Var, fn(T) -> T),
    Concat(Vec<Var>),
    Stack(Vec<Var>),
    GatherRow(Var, usize),
    MeanRows(Vec<Var>),
    Dropout(Var, Vec<T>),
    Softmax(Var),
    SoftmaxXent {
        logits: Var,
        target: usize,
        probs: Vec<T>,
    },
    Bce {
        p: Var,
        label: T,
        clamped: T,
    },
    Sum(Vec<Var>),
    Dot(Var, Var),
}

struct Node<T> {
    op: Op<T>,
    value: Tensor<T>,
}

/// Clamp applied to probabilities before taking logarithms in [`Tape::bce`].
pub const BCE_EPS: f64 = 1e-7;

pub struct Tape<T> {
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
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

    fn push(&self, op: Op<T>, value: Tensor<T>) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { op, value });
        Var(nodes.len() - 1)
    }

    /// Records a differentiable input (parameter or constant).
    pub fn leaf(&self, value: Tensor<T>) -> Var {
        self.push(Op::Leaf, value)
    }

    pub fn scalar(&self, value: T) -> Var {
        self.leaf(Tensor::scalar(value))
    }

    pub fn value(&self, v: Var) -> Ref<'_, Tensor<T>> {
        Ref::map(self.nodes.borrow(), |n| &n[v.0].value)
    }

    pub fn item(&self, v: Var) -> T {
        self.value(v).item()
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.value(v).shape().to_vec()
    }

    fn map_value(&self, a: Var, f: impl Fn(T) -> T) -> Tensor<T> {
        let nodes = self.nodes.borrow();
        let av = &nodes[a.0].value;
        let data = av.data().iter().map(|&x| f(x)).collect();
        Tensor::new(av.shape().to_vec(), data).expect("shape preserved")
    }

    fn zip_value(
        &self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
    ) -> Result<Tensor<T>> {
        let nodes = self.nodes.borrow();
        let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
        if av.shape() != bv.shape() {
            return Err(shape_err(op, av, bv));
        }
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Ok(Tensor::new(av.shape().to_vec(), data).expect("shape preserved"))
    }

    // ---- linear algebra -------------------------------------------------

    /// `a · b` for `a: [m, k]` (or `[k]`) and `b: [k, n]`.
    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            nodes[a.0].value.matmul(&nodes[b.0].value)?
        };
        Ok(self.push(Op::MatMul(a, b), value))
    }

    /// `W[:, offset..offset+n] · x (+ bias)` where `x` is `[n]` or `[r, n]`.
    ///
    /// Multiplying a column block keeps `W · [h; x]` free of an explicit
    /// concatenation: it is the sum of two block products.
    pub fn linear(&self, w: Var, x: Var, bias: Option<Var>, offset: usize) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            let (wv, xv) = (&nodes[w.0].value, &nodes[x.0].value);
            let (h, c) = match wv.shape() {
                [h, c] => (*h, *c),
                _ => return Err(shape_err("linear", wv, xv)),
            };
            let n = xv.last_dim();
            if xv.rank() > 2 || offset + n > c {
                return Err(shape_err("linear", wv, xv));
            }
            let b = match bias {
                Some(b) => {
                    let bv = &nodes[b.0].value;
                    if bv.shape() != [h] {
                        return Err(shape_err("linear bias", wv, bv));
                    }
                    Some(bv.data())
                }
                None => None,
            };
            let rows = xv.outer();
            let mut out = vec![T::zero(); rows * h];
            let wd = wv.data();
            for r in 0..rows {
                let xr = xv.row(r);
                let orow = &mut out[r * h..(r + 1) * h];
                for (i, o) in orow.iter_mut().enumerate() {
                    let wrow = &wd[i * c + offset..i * c + offset + n];
                    *o = kernels::dot(wrow, xr);
                    if let Some(b) = b {
                        *o += b[i];
                    }
                }
            }
            let shape = if xv.rank() == 1 {
                vec![h]
            } else {
                vec![rows, h]
            };
            Tensor::from_parts(shape, out)
        };
        Ok(self.push(Op::Linear { w, x, bias, offset }, value))
    }

    pub fn dot(&self, a: Var, b: Var) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
            if av.shape() != bv.shape() {
                return Err(shape_err("dot", av, bv));
            }
            Tensor::scalar(kernels::dot(av.data(), bv.data()))
        };
        Ok(self.push(Op::Dot(a, b), value))
    }

    // ---- elementwise ----------------------------------------------------

    pub fn elementwise(&self, kind: Elementwise, a: Var, b: Option<Var>) -> Result<Var> {
        let need = |b: Option<Var>| {
            b.ok_or(NumericsError::Empty {
                op: "binary elementwise",
            })
        };
        match kind {
            Elementwise::Add => self.add(a, need(b)?),
            Elementwise::Sub => self.sub(a, need(b)?),
            Elementwise::Mul => self.mul(a, need(b)?),
            Elementwise::Sigmoid => Ok(self.sigmoid(a)),
            Elementwise::Tanh => Ok(self.tanh(a)),
            Elementwise::Relu => Ok(self.relu(a)),
        }
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_value("add", a, b, |x, y| x + y)?;
        Ok(self.push(Op::Add(a, b), v))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_value("sub", a, b, |x, y| x - y)?;
        Ok(self.push(Op::Sub(a, b), v))
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_value("mul", a, b, |x, y| x * y)?;
        Ok(self.push(Op::Mul(a, b), v))
    }

    pub fn sigmoid(&self, a: Var) -> Var {
        let v = self.map_value(a, kernels::sigmoid);
        self.push(Op::Sigmoid(a), v)
    }

    pub fn tanh(&self, a: Var) -> Var {
        let v = self.map_value(a, T::tanh);
        self.push(Op::Tanh(a), v)
    }

    pub fn relu(&self, a: Var) -> Var {
        let v = self.map_value(a, |x| if x > T::zero() { x } else { T::zero() });
        self.push(Op::Relu(a), v)
    }

    pub fn leaky_relu(&self, a: Var, slope: T) -> Var {
        let v = self.map_value(a, |x| if x > T::zero() { x } else { slope * x });
        self.push(Op::LeakyRelu(a, slope), v)
    }

    /// `1 - a`
    pub fn one_minus(&self, a: Var) -> Var {
        let v = self.map_value(a, |x| T::one() - x);
        self.push(Op::OneMinus(a), v)
    }

    pub fn scale(&self, a: Var, c: T) -> Var {
        let v = self.map_value(a, |x| x * c);
        self.push(Op::Scale(a, c), v)
    }

    /// Custom elementwise function `f` whose derivative is `df` (evaluated
    /// at the input). Mainly for experiments and test fixtures.
    pub fn map(&self, a: Var, f: fn(T) -> T, df: fn(T) -> T) -> Var {
        let v = self.map_value(a, f);
        self.push(Op::Map(a, df), v)
    }

    // ---- structural -----------------------------------------------------

    /// Concatenation along the last axis.
    pub fn concat(&self, parts: &[Var]) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            let first = &nodes[parts
                .first()
                .ok_or(NumericsError::Empty { op: "concat" })?
                .0]
                .value;
            let lead = &first.shape()[..first.rank() - 1];
            let outer = first.outer();
            let mut total = 0;
            for p in parts {
                let pv = &nodes[p.0].value;
                if pv.rank() != first.rank() || &pv.shape()[..pv.rank() - 1] != lead {
                    return Err(shape_err("concat", first, pv));
                }
                total += pv.last_dim();
            }
            let mut data = Vec::with_capacity(outer * total);
            for r in 0..outer {
                for p in parts {
                    data.extend_from_slice(nodes[p.0].value.row(r));
                }
            }
            let mut shape = lead.to_vec();
            shape.push(total);
            Tensor::from_parts(shape, data)
        };
        Ok(self.push(Op::Concat(parts.to_vec()), value))
    }

    /// Stacks equal-shaped vectors into a `[n, d]` matrix.
    pub fn stack(&self, rows: &[Var]) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            let first = &nodes[rows.first().ok_or(NumericsError::Empty { op: "stack" })?.0].value;
            let mut data = Vec::with_capacity(rows.len() * first.len());
            for r in rows {
                let rv = &nodes[r.0].value;
                if rv.shape() != first.shape() || rv.rank() != 1 {
                    return Err(shape_err("stack", first, rv));
                }
                data.extend_from_slice(rv.data());
            }
            Tensor::from_parts(vec![rows.len(), first.len()], data)
        };
        Ok(self.push(Op::Stack(rows.to_vec()), value))
    }

    /// Row `index` of a 2-D table (an embedding lookup).
    pub fn gather_rows(&self, table: Var, index: usize) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            let tv = &nodes[table.0].value;
            if tv.rank() != 2 {
                return Err(NumericsError::BadShape {
                    shape: tv.shape().to_vec(),
                    len: tv.len(),
                });
            }
            let rows = tv.shape()[0];
            if index >= rows {
                return Err(NumericsError::Index {
                    op: "gather_rows",
                    index,
                    extent: rows,
                });
            }
            Tensor::vector(tv.row(index).to_vec())
        };
        Ok(self.push(Op::GatherRow(table, index), value))
    }

    /// Arithmetic mean of equal-length vectors; the zero vector of length
    /// `dim` when `rows` is empty.
    pub fn mean_rows(&self, rows: &[Var], dim: usize) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            let mut acc = vec![T::zero(); dim];
            for r in rows {
                let rv = &nodes[r.0].value;
                if rv.shape() != [dim] {
                    return Err(NumericsError::Shape {
                        op: "mean_rows",
                        left: vec![dim],
                        right: rv.shape().to_vec(),
                    });
                }
                kernels::add_into(&mut acc, rv.data());
            }
            if !rows.is_empty() {
                let inv = T::one() / T::of(rows.len() as f64);
                for v in &mut acc {
                    *v *= inv;
                }
            }
            Tensor::from_parts(vec![dim], acc)
        };
        Ok(self.push(Op::MeanRows(rows.to_vec()), value))
    }

    /// Inverted dropout. Identity in eval mode and at rate zero (no node is
    /// recorded); otherwise each entry is kept with probability `1 - rate`
    /// and rescaled by `1 / (1 - rate)`.
    pub fn dropout<R: Rng + ?Sized>(
        &self,
        x: Var,
        rate: f64,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(NumericsError::DropoutRate(rate));
        }
        if mode == Mode::Eval || rate == 0.0 {
            return Ok(x);
        }
        let keep = T::of(1.0 / (1.0 - rate));
        let (mask, value) = {
            let nodes = self.nodes.borrow();
            let xv = &nodes[x.0].value;
            let mask: Vec<T> = (0..xv.len())
                .map(|_| {
                    if rng.gen::<f64>() < rate {
                        T::zero()
                    } else {
                        keep
                    }
                })
                .collect();
            let data = xv.data().iter().zip(&mask).map(|(&a, &m)| a * m).collect();
            (mask, Tensor::from_parts(xv.shape().to_vec(), data))
        };
        Ok(self.push(Op::Dropout(x, mask), value))
    }

    // ---- losses and normalisers -----------------------------------------

    pub fn softmax(&self, x: Var) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            let xv = &nodes[x.0].value;
            if xv.rank() != 1 {
                return Err(NumericsError::BadShape {
                    shape: xv.shape().to_vec(),
                    len: xv.len(),
                });
            }
            Tensor::vector(kernels::softmax(xv.data()))
        };
        Ok(self.push(Op::Softmax(x), value))
    }

    /// `-ln softmax(logits)[target]`, max-shifted.
    pub fn softmax_xent(&self, logits: Var, target: usize) -> Result<Var> {
        let (probs, loss) = {
            let nodes = self.nodes.borrow();
            let lv = &nodes[logits.0].value;
            if target >= lv.len() {
                return Err(NumericsError::Index {
                    op: "softmax_xent",
                    index: target,
                    extent: lv.len(),
                });
            }
            let lse = kernels::log_sum_exp(lv.data());
            (kernels::softmax(lv.data()), lse - lv.data()[target])
        };
        Ok(self.push(
            Op::SoftmaxXent {
                logits,
                target,
                probs,
            },
            Tensor::scalar(loss),
        ))
    }

    /// Binary cross-entropy of a probability against a 0/1 label, with `p`
    /// clamped to `[eps, 1 - eps]`. The gradient is taken at the clamped
    /// value so saturated predictions still receive a signal.
    pub fn bce(&self, p: Var, label: bool) -> Result<Var> {
        let eps = T::of(BCE_EPS);
        let (clamped, loss) = {
            let nodes = self.nodes.borrow();
            let pv = &nodes[p.0].value;
            if pv.len() != 1 {
                return Err(NumericsError::NonScalarLoss(pv.shape().to_vec()));
            }
            let c = pv.item().max(eps).min(T::one() - eps);
            let loss = if label { -c.ln() } else { -(T::one() - c).ln() };
            (c, loss)
        };
        let label = if label { T::one() } else { T::zero() };
        Ok(self.push(Op::Bce { p, label, clamped }, Tensor::scalar(loss)))
    }

    /// Elementwise sum of equal-shaped values.
    pub fn sum(&self, parts: &[Var]) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            let first = &nodes[parts.first().ok_or(NumericsError::Empty { op: "sum" })?.0].value;
            let mut acc = first.clone();
            for p in &parts[1..] {
                let pv = &nodes[p.0].value;
                if pv.shape() != first.shape() {
                    return Err(shape_err("sum", first, pv));
                }
                kernels::add_into(acc.data_mut(), pv.data());
            }
            acc
        };
        Ok(self.push(Op::Sum(parts.to_vec()), value))
    }

    // ---- backward -------------------------------------------------------

    /// Reverse sweep from a scalar `loss`. Gradients of values used more
    /// than once are summed.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let nodes = self.nodes.borrow();
        let lv = &nodes[loss.0].value;
        if lv.len() != 1 {
            return Err(NumericsError::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = Vec::with_capacity(nodes.len());
        grads.resize_with(nodes.len(), || None);
        grads[loss.0] = Some(vec![T::one()]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &nodes[idx];
            backprop(&nodes, node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        let shapes = nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }
}

fn slot<'g, T: Real>(nodes: &[Node<T>], grads: &'g mut [Option<Vec<T>>], v: Var) -> &'g mut [T] {
    grads[v.0].get_or_insert_with(|| vec![T::zero(); nodes[v.0].value.len()])
}

fn backprop<T: Real>(nodes: &[Node<T>], node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
    let val = |v: Var| nodes[v.0].value.data();
    match &node.op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
            let (k, n) = (bv.shape()[0], bv.shape()[1]);
            let m = av.len() / k;
            {
                let ga = slot(nodes, grads, *a);
                for i in 0..m {
                    for p in 0..k {
                        ga[i * k + p] += kernels::dot(&g[i * n..(i + 1) * n], bv.row(p));
                    }
                }
            }
            let gb = slot(nodes, grads, *b);
            let ad = av.data();
            for i in 0..m {
                for p in 0..k {
                    let a_ip = ad[i * k + p];
                    if a_ip != T::zero() {
                        kernels::axpy(a_ip, &g[i * n..(i + 1) * n], &mut gb[p * n..(p + 1) * n]);
                    }
                }
            }
        }
        Op::Linear { w, x, bias, offset } => {
            let (wv, xv) = (&nodes[w.0].value, &nodes[x.0].value);
            let (h, c) = (wv.shape()[0], wv.shape()[1]);
            let n = xv.last_dim();
            let rows = xv.outer();
            let wd = wv.data();
            {
                let gx = slot(nodes, grads, *x);
                for r in 0..rows {
                    let gxr = &mut gx[r * n..(r + 1) * n];
                    for i in 0..h {
                        let gi = g[r * h + i];
                        if gi != T::zero() {
                            kernels::axpy(gi, &wd[i * c + offset..i * c + offset + n], gxr);
                        }
                    }
                }
            }
            {
                let gw = slot(nodes, grads, *w);
                for r in 0..rows {
                    let xr = xv.row(r);
                    for i in 0..h {
                        let gi = g[r * h + i];
                        if gi != T::zero() {
                            kernels::axpy(gi, xr, &mut gw[i * c + offset..i * c + offset + n]);
                        }
                    }
                }
            }
            if let Some(b) = bias {
                let gb = slot(nodes, grads, *b);
                for r in 0..rows {
                    kernels::add_into(gb, &g[r * h..(r + 1) * h]);
                }
            }
        }
        Op::Add(a, b) => {
            kernels::add_into(slot(nodes, grads, *a), g);
            kernels::add_into(slot(nodes, grads, *b), g);
        }
        Op::Sub(a, b) => {
            kernels::add_into(slot(nodes, grads, *a), g);
            kernels::axpy(-T::one(), g, slot(nodes, grads, *b));
        }
        Op::Mul(a, b) => {
            let (ad, bd) = (val(*a), val(*b));
            for ((d, &gi), &bi) in slot(nodes, grads, *a).iter_mut().zip(g).zip(bd) {
                *d += gi * bi;
            }
            for ((d, &gi), &ai) in slot(nodes, grads, *b).iter_mut().zip(g).zip(ad) {
                *d += gi * ai;
            }
        }
        Op::Sigmoid(a) => {
            let y = node.value.data();
            for ((d, &gi), &yi) in slot(nodes, grads, *a).iter_mut().zip(g).zip(y) {
                *d += gi * yi * (T::one() - yi);
            }
        }
        Op::Tanh(a) => {
            let y = node.value.data();
            for ((d, &gi), &yi) in slot(nodes, grads, *a).iter_mut().zip(g).zip(y) {
                *d += gi * (T::one() - yi * yi);
            }
        }
        Op::Relu(a) => {
            let x = val(*a);
            for ((d, &gi), &xi) in slot(nodes, grads, *a).iter_mut().zip(g).zip(x) {
                if xi > T::zero() {
                    *d += gi;
                }
            }
        }
        Op::LeakyRelu(a, slope) => {
            let x = val(*a);
            for ((d, &gi), &xi) in slot(nodes, grads, *a).iter_mut().zip(g).zip(x) {
                *d += if xi > T::zero() { gi } else { gi * *slope };
            }
        }
        Op::OneMinus(a) => kernels::axpy(-T::one(), g, slot(nodes, grads, *a)),
        Op::Scale(a, c) => kernels::axpy(*c, g, slot(nodes, grads, *a)),
        Op::Map(a, df) => {
            let x = val(*a);
            for ((d, &gi), &xi) in slot(nodes, grads, *a).iter_mut().zip(g).zip(x) {
                *d += gi * df(xi);
            }
        }
        Op::Concat(parts) => {
            let total = node.value.last_dim();
            let outer = node.value.outer();
            let mut col = 0;
            for p in parts {
                let w = nodes[p.0].value.last_dim();
                let gp = slot(nodes, grads, *p);
                for r in 0..outer {
                    kernels::add_into(
                        &mut gp[r * w..(r + 1) * w],
                        &g[r * total + col..r * total + col + w],
                    );
                }
                col += w;
            }
        }
        Op::Stack(rows) => {
            let d = node.value.last_dim();
            for (r, v) in rows.iter().enumerate() {
                kernels::add_into(slot(nodes, grads, *v), &g[r * d..(r + 1) * d]);
            }
        }
        Op::GatherRow(table, index) => {
            let d = g.len();
            let gt = slot(nodes, grads, *table);
            kernels::add_into(&mut gt[index * d..(index + 1) * d], g);
        }
        Op::MeanRows(rows) => {
            if !rows.is_empty() {
                let inv = T::one() / T::of(rows.len() as f64);
                for r in rows {
                    kernels::axpy(inv, g, slot(nodes, grads, *r));
                }
            }
        }
        Op::Dropout(a, mask) => {
            for ((d, &gi), &m) in slot(nodes, grads, *a).iter_mut().zip(g).zip(mask) {
                *d += gi * m;
            }
        }
        Op::Softmax(a) => {
            let y = node.value.data();
            let gy = kernels::dot(g, y);
            for ((d, &gi), &yi) in slot(nodes, grads, *a).iter_mut().zip(g).zip(y) {
                *d += yi * (gi - gy);
            }
        }
        Op::SoftmaxXent {
            logits,
            target,
            probs,
        } => {
            let gl = slot(nodes, grads, *logits);
            kernels::axpy(g[0], probs, gl);
            gl[*target] -= g[0];
        }
        Op::Bce { p, label, clamped } => {
            let c = *clamped;
            let dp = -*label / c + (T::one() - *label) / (T::one() - c);
            slot(nodes, grads, *p)[0] += g[0] * dp;
        }
        Op::Sum(parts) => {
            for p in parts {
                kernels::add_into(slot(nodes, grads, *p), g);
            }
        }
        Op::Dot(a, b) => {
            let (ad, bd) = (val(*a), val(*b));
            kernels::axpy(g[0], bd, slot(nodes, grads, *a));
            kernels::axpy(g[0], ad, slot(nodes, grads, *b));
        }
    }
}

/// Gradients of a scalar loss with respect to every recorded value.
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of `v`, or `None` when the loss does not depend on it.
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient of `v` as a tensor, zero-filled when the loss does not
    /// depend on it.
    pub fn tensor(&self, v: Var) -> Tensor<T> {
        let shape = self.shapes[v.0].clone();
        match self.get(v) {
            Some(g) => Tensor::from_parts(shape, g.to_vec()),
            None => Tensor::zeros(&shape),
        }
    }
}

impl<T: Real> Tensor<T> {
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<T>) -> Self {
        Tensor::new(shape, data).expect("op produced a consistent tensor")
    }
}
