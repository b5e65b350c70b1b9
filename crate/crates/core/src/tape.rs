//! Reverse-mode differentiation over a linear record of primitive ops.
//!
//! Each parameter gets a single leaf per tape no matter how many layers read
//! it, so the gradient that reaches a tied storage is the sum over every use.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::kernels::{self, ConvGeom};
use crate::param::{ParamId, ParamStore};
use crate::scalar::{cst, Real};
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Param,
    MatMul { a: usize, b: usize, ta: bool, tb: bool },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, T),
    AddScalar(usize),
    /// `x + sign * b` with `b` broadcast along axis 1.
    AddChannel { x: usize, b: usize, sign: T },
    InvLeaky { x: usize, alpha: T, inverse: bool },
    LeakyRelu { x: usize, slope: T },
    Tanh(usize),
    Sigmoid(usize),
    Exp(usize),
    Conv { x: usize, k: usize, g: ConvGeom },
    ConvT { y: usize, k: usize, g: ConvGeom },
    InstanceNorm { x: usize, inv_std: Vec<T> },
    Reshape(usize),
    Sum(usize),
    Mean(usize),
    Mse(usize, usize),
    L1(usize, usize),
    Bce { p: usize, target: T },
}

#[derive(Debug, Clone)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Lower clamp applied to probabilities before taking logarithms.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    params: BTreeMap<ParamId, usize>,
    frozen: BTreeSet<ParamId>,
}

/// Result of a backward pass: one optional gradient per recorded value.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    params: BTreeMap<ParamId, usize>,
}

impl<T: Real> Gradients<T> {
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.params.get(&id).and_then(|&i| self.grads[i].as_ref())
    }

    /// Parameters that received a gradient.
    pub fn param_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.params
            .iter()
            .filter(|(_, &i)| self.grads[i].is_some())
            .map(|(&id, _)| id)
    }
}

fn same_shape<T: Real>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, a.shape(), b.shape()));
    }
    Ok(())
}

fn nchw<T: Real>(t: &Tensor<T>, op: &str) -> Result<(usize, usize, usize, usize)> {
    match *t.shape() {
        [n, c, h, w] => Ok((n, c, h, w)),
        _ => Err(Error::Dimension(alloc::format!(
            "{op}: expected [N,C,H,W], got {:?}",
            t.shape()
        ))),
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            params: BTreeMap::new(),
            frozen: BTreeSet::new(),
        }
    }

    /// Parameters in `ids` enter this tape as constants: they are read but
    /// receive no gradient. Must be called before their first use.
    pub fn freeze(&mut self, ids: &[ParamId]) {
        self.frozen.extend(ids.iter().copied());
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

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[usize]) -> Var {
        let needs_grad = match op {
            Op::Leaf => false,
            Op::Param => true,
            _ => inputs.iter().any(|&i| self.nodes[i].needs_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A constant input; gradients are not propagated into it.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, &[])
    }

    /// The tape's unique handle for a parameter storage.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&i) = self.params.get(&id) {
            return Var(i);
        }
        let op = if self.frozen.contains(&id) { Op::Leaf } else { Op::Param };
        let v = self.push(store.value(id).clone(), op, &[]);
        self.params.insert(id, v.0);
        v
    }

    pub fn matmul(&mut self, a: Var, ta: bool, b: Var, tb: bool) -> Result<Var> {
        let out = kernels::matmul(self.value(a), ta, self.value(b), tb)?;
        Ok(self.push(out, Op::MatMul { a: a.0, b: b.0, ta, tb }, &[a.0, b.0]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a.0, b.0), &[a.0, b.0]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        Ok(self.push(out, Op::Sub(a.0, b.0), &[a.0, b.0]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a.0, b.0), &[a.0, b.0]))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let out = self.value(a).map(|x| x * c);
        self.push(out, Op::Scale(a.0, c), &[a.0])
    }

    pub fn add_scalar(&mut self, a: Var, c: T) -> Var {
        let out = self.value(a).map(|x| x + c);
        self.push(out, Op::AddScalar(a.0), &[a.0])
    }

    /// `x + sign*b`, with `b` of length `x.shape[1]` broadcast over the
    /// remaining axes.
    pub fn add_channel(&mut self, x: Var, b: Var, sign: T) -> Result<Var> {
        let (xs, bs) = (self.value(x), self.value(b));
        if xs.rank() < 2 || bs.len() != xs.shape()[1] {
            return Err(Error::shape("bias", xs.shape(), bs.shape()));
        }
        let c = xs.shape()[1];
        let inner: usize = xs.shape()[2..].iter().product();
        let bd = bs.data();
        let mut out = xs.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v += sign * bd[(i / inner) % c];
        }
        Ok(self.push(out, Op::AddChannel { x: x.0, b: b.0, sign }, &[x.0, b.0]))
    }

    /// Bijective leaky activation: `x/alpha` for `x >= 0`, `alpha*x` below.
    /// With `inverse`, applies the inverse map `alpha*y` / `y/alpha`.
    pub fn inv_leaky(&mut self, x: Var, alpha: T, inverse: bool) -> Result<Var> {
        if !(alpha > T::zero()) {
            return Err(Error::Parameter(alloc::format!("alpha must be positive, got {alpha}")));
        }
        let out = self.value(x).map(|v| inv_leaky_scalar(v, alpha, inverse));
        Ok(self.push(out, Op::InvLeaky { x: x.0, alpha, inverse }, &[x.0]))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: T) -> Var {
        let out = self.value(x).map(|v| if v >= T::zero() { v } else { v * slope });
        self.push(out, Op::LeakyRelu { x: x.0, slope }, &[x.0])
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.tanh());
        self.push(out, Op::Tanh(x.0), &[x.0])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        self.push(out, Op::Sigmoid(x.0), &[x.0])
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.exp());
        self.push(out, Op::Exp(x.0), &[x.0])
    }

    /// Forward convolution of an `[N,C,H,W]` value with a kernel value.
    pub fn conv(&mut self, x: Var, k: Var, stride: usize, pad: usize) -> Result<Var> {
        let (n, c, h, w) = nchw(self.value(x), "conv")?;
        let ks = self.value(k).shape().to_vec();
        let [co, ci, kh, kw] = ks[..] else {
            return Err(Error::shape("conv", self.value(x).shape(), &ks));
        };
        if ci != c || kh != kw {
            return Err(Error::shape("conv", self.value(x).shape(), &ks));
        }
        let g = ConvGeom::new(c, (h, w), co, kh, stride, pad)?;
        let out = kernels::conv_forward(self.value(x).data(), n, self.value(k).data(), &g);
        let t = Tensor::new(&[n, co, g.out_h(), g.out_w()], out)?;
        Ok(self.push(t, Op::Conv { x: x.0, k: k.0, g }, &[x.0, k.0]))
    }

    /// Transposed convolution realizing the adjoint of the forward conv with
    /// input extent `in_hw`.
    pub fn conv_transposed(
        &mut self,
        y: Var,
        k: Var,
        stride: usize,
        pad: usize,
        in_hw: (usize, usize),
    ) -> Result<Var> {
        let (n, c, oh, ow) = nchw(self.value(y), "conv_transposed")?;
        let ks = self.value(k).shape().to_vec();
        let [co, ci, kh, kw] = ks[..] else {
            return Err(Error::shape("conv_transposed", self.value(y).shape(), &ks));
        };
        if co != c || kh != kw {
            return Err(Error::shape("conv_transposed", self.value(y).shape(), &ks));
        }
        let g = ConvGeom::new(ci, in_hw, co, kh, stride, pad)?;
        if g.out_h() != oh || g.out_w() != ow {
            return Err(Error::Dimension(alloc::format!(
                "transposed conv input {oh}x{ow} does not match forward output {}x{}",
                g.out_h(),
                g.out_w()
            )));
        }
        let out = kernels::conv_transposed_forward(self.value(y).data(), n, self.value(k).data(), &g);
        let t = Tensor::new(&[n, ci, in_hw.0, in_hw.1], out)?;
        Ok(self.push(t, Op::ConvT { y: y.0, k: k.0, g }, &[y.0, k.0]))
    }

    pub fn instance_norm(&mut self, x: Var) -> Result<Var> {
        let (n, c, h, w) = nchw(self.value(x), "instance_norm")?;
        let (out, inv_std) = kernels::instance_norm_forward(self.value(x).data(), n * c, h * w);
        let t = Tensor::new(&[n, c, h, w], out)?;
        Ok(self.push(t, Op::InstanceNorm { x: x.0, inv_std }, &[x.0]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        Ok(self.push(out, Op::Reshape(x.0), &[x.0]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        self.push(out, Op::Sum(x.0), &[x.0])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let out = Tensor::scalar(t.sum() / cst::<T>(t.len() as f64));
        self.push(out, Op::Mean(x.0), &[x.0])
    }

    /// Mean squared difference over all elements.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape("mse", ta, tb)?;
        let s: T = ta.data().iter().zip(tb.data()).map(|(&x, &y)| (x - y) * (x - y)).sum();
        let out = Tensor::scalar(s / cst::<T>(ta.len() as f64));
        Ok(self.push(out, Op::Mse(a.0, b.0), &[a.0, b.0]))
    }

    /// Mean absolute difference over all elements.
    pub fn l1(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape("l1", ta, tb)?;
        let s: T = ta.data().iter().zip(tb.data()).map(|(&x, &y)| (x - y).abs()).sum();
        let out = Tensor::scalar(s / cst::<T>(ta.len() as f64));
        Ok(self.push(out, Op::L1(a.0, b.0), &[a.0, b.0]))
    }

    /// Mean binary cross-entropy of probabilities `p` against a constant
    /// target, with `p` clamped to `[PROB_EPS, 1 - PROB_EPS]`.
    pub fn bce(&mut self, p: Var, target: T) -> Var {
        let t = self.value(p);
        let s: T = t
            .data()
            .iter()
            .map(|&v| {
                let q = clamp_prob(v);
                -(target * q.ln() + (T::one() - target) * (T::one() - q).ln())
            })
            .sum();
        let out = Tensor::scalar(s / cst::<T>(t.len() as f64));
        self.push(out, Op::Bce { p: p.0, target }, &[p.0])
    }

    /// Gradients of a one-element `loss` with respect to every recorded
    /// value. The tape is left intact, so replaying gives identical results.
    pub fn grads(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(alloc::format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut g: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        g[loss.0] = Some(Tensor::full(self.shape(loss), T::one()));
        for i in (0..=loss.0).rev() {
            let Some(gi) = g[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            self.propagate(i, &gi, &mut g)?;
            g[i] = Some(gi);
        }
        Ok(Gradients {
            grads: g,
            params: self.params.clone(),
        })
    }

    /// Runs [`Tape::grads`] and adds each parameter gradient into `store`.
    pub fn backward(&self, loss: Var, store: &mut ParamStore<T>) -> Result<()> {
        let grads = self.grads(loss)?;
        for (&id, &i) in &self.params {
            if let Some(gr) = &grads.grads[i] {
                store.accumulate_grad(id, gr)?;
            }
        }
        Ok(())
    }

    fn wants(&self, i: usize) -> bool {
        self.nodes[i].needs_grad
    }

    fn propagate(&self, i: usize, gout: &Tensor<T>, g: &mut [Option<Tensor<T>>]) -> Result<()> {
        let val = |j: usize| &self.nodes[j].value;
        match &self.nodes[i].op {
            Op::Leaf | Op::Param => {}
            &Op::MatMul { a, b, ta, tb } => {
                if self.wants(a) {
                    let da = if ta {
                        kernels::matmul(val(b), tb, gout, true)?
                    } else {
                        kernels::matmul(gout, false, val(b), !tb)?
                    };
                    acc(g, a, da)?;
                }
                if self.wants(b) {
                    let db = if tb {
                        kernels::matmul(gout, true, val(a), ta)?
                    } else {
                        kernels::matmul(val(a), !ta, gout, false)?
                    };
                    acc(g, b, db)?;
                }
            }
            &Op::Add(a, b) => {
                if self.wants(a) {
                    acc(g, a, gout.clone())?;
                }
                if self.wants(b) {
                    acc(g, b, gout.clone())?;
                }
            }
            &Op::Sub(a, b) => {
                if self.wants(a) {
                    acc(g, a, gout.clone())?;
                }
                if self.wants(b) {
                    acc(g, b, gout.map(|v| -v))?;
                }
            }
            &Op::Mul(a, b) => {
                if self.wants(a) {
                    acc(g, a, gout.zip_map(val(b), |d, y| d * y)?)?;
                }
                if self.wants(b) {
                    acc(g, b, gout.zip_map(val(a), |d, x| d * x)?)?;
                }
            }
            &Op::Scale(a, c) => acc(g, a, gout.map(|d| d * c))?,
            &Op::AddScalar(a) => acc(g, a, gout.clone())?,
            &Op::AddChannel { x, b, sign } => {
                if self.wants(x) {
                    acc(g, x, gout.clone())?;
                }
                if self.wants(b) {
                    let xs = val(x).shape();
                    let c = xs[1];
                    let inner: usize = xs[2..].iter().product();
                    let mut db = Tensor::zeros(val(b).shape());
                    let dbd = db.data_mut();
                    for (k, &d) in gout.data().iter().enumerate() {
                        dbd[(k / inner) % c] += d;
                    }
                    if sign != T::one() {
                        for v in dbd.iter_mut() {
                            *v *= sign;
                        }
                    }
                    acc(g, b, db)?;
                }
            }
            &Op::InvLeaky { x, alpha, inverse } => {
                let d = gout.zip_map(val(x), |d, v| d * inv_leaky_slope(v, alpha, inverse))?;
                acc(g, x, d)?;
            }
            &Op::LeakyRelu { x, slope } => {
                let d = gout.zip_map(val(x), |d, v| if v >= T::zero() { d } else { d * slope })?;
                acc(g, x, d)?;
            }
            &Op::Tanh(x) => {
                let d = gout.zip_map(&self.nodes[i].value, |d, y| d * (T::one() - y * y))?;
                acc(g, x, d)?;
            }
            &Op::Sigmoid(x) => {
                let d = gout.zip_map(&self.nodes[i].value, |d, y| d * y * (T::one() - y))?;
                acc(g, x, d)?;
            }
            &Op::Exp(x) => {
                let d = gout.zip_map(&self.nodes[i].value, |d, y| d * y)?;
                acc(g, x, d)?;
            }
            &Op::Conv { x, k, g: geom } => {
                let n = val(x).shape()[0];
                let mut dx = self.wants(x).then(|| Tensor::zeros(val(x).shape()));
                let mut dk = self.wants(k).then(|| Tensor::zeros(val(k).shape()));
                kernels::conv_backward(
                    val(x).data(),
                    n,
                    val(k).data(),
                    &geom,
                    gout.data(),
                    dx.as_mut().map(|t| t.data_mut()),
                    dk.as_mut().map(|t| t.data_mut()),
                );
                if let Some(dx) = dx {
                    acc(g, x, dx)?;
                }
                if let Some(dk) = dk {
                    acc(g, k, dk)?;
                }
            }
            &Op::ConvT { y, k, g: geom } => {
                let n = val(y).shape()[0];
                let mut dy = self.wants(y).then(|| Tensor::zeros(val(y).shape()));
                let mut dk = self.wants(k).then(|| Tensor::zeros(val(k).shape()));
                kernels::conv_transposed_backward(
                    val(y).data(),
                    n,
                    val(k).data(),
                    &geom,
                    gout.data(),
                    dy.as_mut().map(|t| t.data_mut()),
                    dk.as_mut().map(|t| t.data_mut()),
                );
                if let Some(dy) = dy {
                    acc(g, y, dy)?;
                }
                if let Some(dk) = dk {
                    acc(g, k, dk)?;
                }
            }
            Op::InstanceNorm { x, inv_std } => {
                let s = val(*x).shape();
                let hw = s[2] * s[3];
                let dx = kernels::instance_norm_backward(self.nodes[i].value.data(), inv_std, gout.data(), hw);
                acc(g, *x, Tensor::new(s, dx)?)?;
            }
            &Op::Reshape(x) => {
                let d = gout.clone().reshape(val(x).shape())?;
                acc(g, x, d)?;
            }
            &Op::Sum(x) => {
                let d = gout.item()?;
                acc(g, x, Tensor::full(val(x).shape(), d))?;
            }
            &Op::Mean(x) => {
                let d = gout.item()? / cst::<T>(val(x).len() as f64);
                acc(g, x, Tensor::full(val(x).shape(), d))?;
            }
            &Op::Mse(a, b) => {
                let c = gout.item()? * cst::<T>(2.0 / val(a).len() as f64);
                let diff = val(a).zip_map(val(b), |x, y| (x - y) * c)?;
                if self.wants(b) {
                    acc(g, b, diff.map(|v| -v))?;
                }
                if self.wants(a) {
                    acc(g, a, diff)?;
                }
            }
            &Op::L1(a, b) => {
                let c = gout.item()? / cst::<T>(val(a).len() as f64);
                let sgn = val(a).zip_map(val(b), |x, y| {
                    if x > y {
                        c
                    } else if x < y {
                        -c
                    } else {
                        T::zero()
                    }
                })?;
                if self.wants(b) {
                    acc(g, b, sgn.map(|v| -v))?;
                }
                if self.wants(a) {
                    acc(g, a, sgn)?;
                }
            }
            &Op::Bce { p, target } => {
                let c = gout.item()? / cst::<T>(val(p).len() as f64);
                let lo: T = cst(PROB_EPS);
                let hi = T::one() - lo;
                let d = val(p).map(|v| {
                    if v < lo || v > hi {
                        T::zero()
                    } else {
                        -c * (target / v - (T::one() - target) / (T::one() - v))
                    }
                });
                acc(g, p, d)?;
            }
        }
        Ok(())
    }
}

fn acc<T: Real>(g: &mut [Option<Tensor<T>>], i: usize, d: Tensor<T>) -> Result<()> {
    match &mut g[i] {
        Some(cur) => cur.add_assign(&d),
        slot @ None => {
            *slot = Some(d);
            Ok(())
        }
    }
}

pub fn inv_leaky_scalar<T: Real>(v: T, alpha: T, inverse: bool) -> T {
    let pos = v >= T::zero();
    match (inverse, pos) {
        (false, true) => v / alpha,
        (false, false) => v * alpha,
        (true, true) => v * alpha,
        (true, false) => v / alpha,
    }
}

fn inv_leaky_slope<T: Real>(v: T, alpha: T, inverse: bool) -> T {
    if (v >= T::zero()) != inverse {
        T::one() / alpha
    } else {
        alpha
    }
}

pub fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

fn clamp_prob<T: Real>(v: T) -> T {
    let lo: T = cst(PROB_EPS);
    v.max(lo).min(T::one() - lo)
}
