//! Wengert-list reverse-mode differentiation.
//!
//! Every operation appends one node holding its forward value; `backward`
//! replays the list in reverse. Nodes are append-only, so list order is a
//! topological order.

use super::kernels::{self, ConvGeom};
use super::{NodeId, Scalar, Tensor};
use crate::error::{MascError, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(NodeId);

impl Var {
    pub fn id(self) -> NodeId {
        self.0
    }
}

#[derive(Debug)]
enum Op<T: Scalar> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Minimum(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Relu(Var),
    Exp(Var),
    Ln(Var),
    Abs(Var),
    Square(Var),
    Clamp(Var, T, T),
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    Linear { x: Var, w: Var, b: Option<Var> },
    Conv2d { x: Var, w: Var, b: Option<Var>, geom: ConvGeom },
    MaxPool2 { x: Var, argmax: Vec<u32> },
    Upsample2 { x: Var },
    ConcatChannels { a: Var, b: Var },
    LogSoftmax(Var),
    Softmax(Var),
    Gather { x: Var, idx: Vec<usize> },
    GaussianValid { x: Var, taps: Vec<f64> },
    InstanceNorm { x: Var, gamma: Option<Var>, beta: Option<Var>, mean: Vec<T>, inv_std: Vec<T> },
}

impl<T: Scalar> Op<T> {
    fn inputs(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Leaf => vec![],
            Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) | Minimum(a, b) => vec![*a, *b],
            Scale(a, _) | AddScalar(a) | Relu(a) | Exp(a) | Ln(a) | Abs(a) | Square(a) | Clamp(a, _, _) | Sum(a)
            | Mean(a) | Reshape(a) | LogSoftmax(a) | Softmax(a) => vec![*a],
            Linear { x, w, b } | Conv2d { x, w, b, .. } => [Some(*x), Some(*w), *b].into_iter().flatten().collect(),
            MaxPool2 { x, .. } | Upsample2 { x } | Gather { x, .. } | GaussianValid { x, .. } => vec![*x],
            ConcatChannels { a, b } => vec![*a, *b],
            InstanceNorm { x, gamma, beta, .. } => [Some(*x), *gamma, *beta].into_iter().flatten().collect(),
        }
    }
}

#[derive(Debug)]
struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// A single forward pass worth of recorded operations.
#[derive(Debug)]
pub struct Tape<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn same_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    if a != b {
        return Err(MascError::ShapeMismatch { op, lhs: a.to_vec(), rhs: b.to_vec() });
    }
    Ok(())
}

fn rank4(op: &'static str, s: &[usize]) -> Result<(usize, usize, usize, usize)> {
    match s {
        &[n, c, h, w] => Ok((n, c, h, w)),
        _ => Err(MascError::InvalidShape { op, msg: format!("expected NCHW input, got {s:?}") }),
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, mut value: Tensor<T>, op: Op<T>) -> Var {
        let id = self.nodes.len();
        let requires_grad = match op {
            Op::Leaf => false,
            _ => op.inputs().iter().any(|v| self.nodes[v.0].requires_grad),
        };
        value.set_node_id(id);
        self.nodes.push(Node { value, op, requires_grad });
        Var(id)
    }

    /// Records a differentiable input (a parameter or a gradient-checked input).
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        let v = self.push(value, Op::Leaf);
        self.nodes[v.0].requires_grad = true;
        v
    }

    /// Records a non-differentiable input.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn data(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.data()
    }

    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].value.grad()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Direct inputs of a node, in recording order.
    pub fn inputs(&self, v: Var) -> Vec<Var> {
        self.nodes[v.0].op.inputs()
    }

    fn unary(&mut self, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let x = &self.nodes[a.0].value;
        let out = Tensor::new(x.shape().to_vec(), x.data().iter().map(|&v| f(v)).collect()).expect("same shape");
        self.push(out, op)
    }

    fn binary(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var> {
        let (x, y) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        same_shape(name, x.shape(), y.shape())?;
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        let out = Tensor::new(x.shape().to_vec(), data)?;
        Ok(self.push(out, op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |p, q| p + q, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |p, q| p - q, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |p, q| p * q, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", a, b, |p, q| p / q, Op::Div(a, b))
    }

    /// Elementwise minimum; ties route the gradient to `a`.
    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("minimum", a, b, |p, q| if p <= q { p } else { q }, Op::Minimum(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let c = T::lit(c);
        self.unary(a, |v| v * c, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let c = T::lit(c);
        self.unary(a, |v| v + c, Op::AddScalar(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |v| if v > T::zero() { v } else { T::zero() }, Op::Relu(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, |v| v.exp(), Op::Exp(a))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(a, |v| v.ln(), Op::Ln(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, |v| v.abs(), Op::Abs(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |v| v * v, Op::Square(a))
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let (lo, hi) = (T::lit(lo), T::lit(hi));
        self.unary(a, |v| v.max(lo).min(hi), Op::Clamp(a, lo, hi))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: T = self.data(a).iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let x = self.data(a);
        let s: T = x.iter().copied().sum::<T>() / T::lit(x.len() as f64);
        self.push(Tensor::scalar(s), Op::Mean(a))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let x = &self.nodes[a.0].value;
        let numel: usize = shape.iter().product();
        if numel != x.numel() {
            return Err(MascError::ShapeMismatch { op: "reshape", lhs: x.shape().to_vec(), rhs: shape.to_vec() });
        }
        let out = Tensor::new(shape.to_vec(), x.data().to_vec())?;
        Ok(self.push(out, Op::Reshape(a)))
    }

    /// `x [N, F] · wᵀ [F, O] + b [O]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        let (n, f) = match xs[..] {
            [n, f] => (n, f),
            _ => return Err(MascError::InvalidShape { op: "linear", msg: format!("input must be [N, F], got {xs:?}") }),
        };
        if ws.len() != 2 || ws[1] != f {
            return Err(MascError::ShapeMismatch { op: "linear", lhs: xs, rhs: ws });
        }
        let o = ws[0];
        if let Some(b) = b {
            same_shape("linear", self.shape(b), &[o])?;
        }
        let mut out = vec![T::zero(); n * o];
        T::gemm(n, f, o, self.data(x), (f as isize, 1), self.data(w), (1, f as isize), T::zero(), &mut out, (o as isize, 1));
        if let Some(b) = b {
            let bd = self.data(b);
            for row in out.chunks_mut(o) {
                row.iter_mut().zip(bd).for_each(|(v, &bv)| *v += bv);
            }
        }
        Ok(self.push(Tensor::new(vec![n, o], out)?, Op::Linear { x, w, b }))
    }

    /// Stride-1 convolution with zero padding `k / 2` (odd square kernels).
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (n, ci, h, wd) = rank4("conv2d", self.shape(x))?;
        let ws = self.shape(w).to_vec();
        if ws.len() != 4 || ws[1] != ci || ws[2] != ws[3] || ws[2] % 2 == 0 {
            return Err(MascError::ShapeMismatch { op: "conv2d", lhs: self.shape(x).to_vec(), rhs: ws });
        }
        let geom = ConvGeom { n, ci, co: ws[0], h, w: wd, k: ws[2] };
        if let Some(b) = b {
            same_shape("conv2d", self.shape(b), &[geom.co])?;
        }
        let mut out = vec![T::zero(); n * geom.co * h * wd];
        kernels::conv2d_forward(geom, self.data(x), self.data(w), b.map(|b| self.data(b)), &mut out);
        Ok(self.push(Tensor::new(vec![n, geom.co, h, wd], out)?, Op::Conv2d { x, w, b, geom }))
    }

    pub fn max_pool2(&mut self, x: Var) -> Result<Var> {
        let (n, c, h, w) = rank4("max_pool2", self.shape(x))?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(MascError::InvalidShape { op: "max_pool2", msg: format!("odd extent {h}x{w}") });
        }
        let mut out = vec![T::zero(); n * c * (h / 2) * (w / 2)];
        let argmax = kernels::maxpool2_forward(n * c, h, w, self.data(x), &mut out);
        Ok(self.push(Tensor::new(vec![n, c, h / 2, w / 2], out)?, Op::MaxPool2 { x, argmax }))
    }

    /// Bilinear ×2 upsampling with half-pixel centers.
    pub fn upsample2(&mut self, x: Var) -> Result<Var> {
        let (n, c, h, w) = rank4("upsample2", self.shape(x))?;
        let mut out = vec![T::zero(); n * c * 4 * h * w];
        kernels::upsample2_forward(n * c, h, w, self.data(x), &mut out);
        Ok(self.push(Tensor::new(vec![n, c, 2 * h, 2 * w], out)?, Op::Upsample2 { x }))
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, ca, h, w) = rank4("concat_channels", self.shape(a))?;
        let (nb, cb, hb, wb) = rank4("concat_channels", self.shape(b))?;
        if (n, h, w) != (nb, hb, wb) {
            return Err(MascError::ShapeMismatch {
                op: "concat_channels",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let hw = h * w;
        let mut out = Vec::with_capacity(n * (ca + cb) * hw);
        for i in 0..n {
            out.extend_from_slice(&self.data(a)[i * ca * hw..(i + 1) * ca * hw]);
            out.extend_from_slice(&self.data(b)[i * cb * hw..(i + 1) * cb * hw]);
        }
        Ok(self.push(Tensor::new(vec![n, ca + cb, h, w], out)?, Op::ConcatChannels { a, b }))
    }

    fn last_axis(&self, op: &'static str, a: Var) -> Result<usize> {
        self.shape(a).last().copied().ok_or(MascError::InvalidShape { op, msg: "empty shape".into() })
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let k = self.last_axis("log_softmax", a)?;
        let x = &self.nodes[a.0].value;
        let mut out = x.data().to_vec();
        for row in out.chunks_mut(k) {
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<T>().ln();
            row.iter_mut().for_each(|v| *v -= lse);
        }
        let out = Tensor::new(x.shape().to_vec(), out)?;
        Ok(self.push(out, Op::LogSoftmax(a)))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let k = self.last_axis("softmax", a)?;
        let x = &self.nodes[a.0].value;
        let mut out = x.data().to_vec();
        for row in out.chunks_mut(k) {
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            row.iter_mut().for_each(|v| *v = (*v - m).exp());
            let s: T = row.iter().copied().sum();
            row.iter_mut().for_each(|v| *v /= s);
        }
        let out = Tensor::new(x.shape().to_vec(), out)?;
        Ok(self.push(out, Op::Softmax(a)))
    }

    /// Picks one entry per row of an `[N, K]` tensor.
    pub fn gather(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let (n, k) = match s[..] {
            [n, k] => (n, k),
            _ => return Err(MascError::InvalidShape { op: "gather", msg: format!("expected [N, K], got {s:?}") }),
        };
        if idx.len() != n || idx.iter().any(|&i| i >= k) {
            return Err(MascError::InvalidShape { op: "gather", msg: format!("{} indices for shape {s:?}", idx.len()) });
        }
        let d = self.data(x);
        let out: Vec<T> = idx.iter().enumerate().map(|(r, &i)| d[r * k + i]).collect();
        Ok(self.push(Tensor::new(vec![n], out)?, Op::Gather { x, idx: idx.to_vec() }))
    }

    /// Gaussian-weighted local means over every valid window position.
    pub fn gaussian_window(&mut self, x: Var, size: usize, sigma: f64) -> Result<Var> {
        let (n, c, h, w) = rank4("gaussian_window", self.shape(x))?;
        if size % 2 == 0 || size > h || size > w {
            return Err(MascError::InvalidShape {
                op: "gaussian_window",
                msg: format!("window {size} does not fit {h}x{w}"),
            });
        }
        let taps = kernels::gaussian_taps(size, sigma);
        let (ho, wo) = (h + 1 - size, w + 1 - size);
        let mut out = vec![T::zero(); n * c * ho * wo];
        kernels::gaussian_valid_forward(n * c, h, w, &taps, self.data(x), &mut out);
        Ok(self.push(Tensor::new(vec![n, c, ho, wo], out)?, Op::GaussianValid { x, taps }))
    }

    /// Per-sample, per-channel normalization with optional affine `gamma`/`beta` of shape `[C]`.
    pub fn instance_norm(&mut self, x: Var, gamma: Option<Var>, beta: Option<Var>, eps: f64) -> Result<Var> {
        let (n, c, h, w) = rank4("instance_norm", self.shape(x))?;
        for p in [gamma, beta].into_iter().flatten() {
            same_shape("instance_norm", self.shape(p), &[c])?;
        }
        let hw = h * w;
        let m = T::lit(hw as f64);
        let xd = self.data(x);
        let mut out = vec![T::zero(); xd.len()];
        let mut mean = Vec::with_capacity(n * c);
        let mut inv_std = Vec::with_capacity(n * c);
        for p in 0..n * c {
            let plane = &xd[p * hw..(p + 1) * hw];
            let mu = plane.iter().copied().sum::<T>() / m;
            let var = plane.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() / m;
            let is = T::one() / (var + T::lit(eps)).sqrt();
            let ch = p % c;
            let g = gamma.map_or(T::one(), |g| self.data(g)[ch]);
            let b = beta.map_or(T::zero(), |b| self.data(b)[ch]);
            for (o, &v) in out[p * hw..(p + 1) * hw].iter_mut().zip(plane) {
                *o = (v - mu) * is * g + b;
            }
            mean.push(mu);
            inv_std.push(is);
        }
        let out = Tensor::new(vec![n, c, h, w], out)?;
        Ok(self.push(out, Op::InstanceNorm { x, gamma, beta, mean, inv_std }))
    }

    /// Reverse-mode sweep from a single-element `loss`; gradients add to any
    /// already stored on the tape.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let ls = self.shape(loss);
        if ls.iter().product::<usize>() != 1 {
            return Err(MascError::NonScalarLoss(ls.to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            if self.nodes[id].requires_grad {
                self.propagate(id, &g, &mut grads);
            }
            grads[id] = Some(g);
        }
        for (id, g) in grads.into_iter().enumerate() {
            if let Some(g) = g {
                if self.nodes[id].requires_grad {
                    self.nodes[id].value.accumulate_grad(&g);
                }
            }
        }
        Ok(())
    }

    fn propagate(&self, id: NodeId, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[id];
        let out = node.value.data();
        let val = |v: Var| self.nodes[v.0].value.data();
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [T])| {
            if !wants(v) {
                return;
            }
            let n = self.nodes[v.0].value.numel();
            let slot = grads[v.0].get_or_insert_with(|| vec![T::zero(); n]);
            f(slot);
        };
        use Op::*;
        match &node.op {
            Leaf => {}
            Add(a, b) => {
                acc(*a, &mut |d| d.iter_mut().zip(g).for_each(|(d, &g)| *d += g));
                acc(*b, &mut |d| d.iter_mut().zip(g).for_each(|(d, &g)| *d += g));
            }
            Sub(a, b) => {
                acc(*a, &mut |d| d.iter_mut().zip(g).for_each(|(d, &g)| *d += g));
                acc(*b, &mut |d| d.iter_mut().zip(g).for_each(|(d, &g)| *d -= g));
            }
            Mul(a, b) => {
                let (x, y) = (val(*a), val(*b));
                acc(*a, &mut |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * y[i];
                    }
                });
                acc(*b, &mut |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * x[i];
                    }
                });
            }
            Div(a, b) => {
                let y = val(*b);
                acc(*a, &mut |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] / y[i];
                    }
                });
                acc(*b, &mut |d| {
                    for i in 0..d.len() {
                        d[i] -= g[i] * out[i] / y[i];
                    }
                });
            }
            Minimum(a, b) => {
                let (x, y) = (val(*a), val(*b));
                acc(*a, &mut |d| {
                    for i in 0..d.len() {
                        if x[i] <= y[i] {
                            d[i] += g[i];
                        }
                    }
                });
                acc(*b, &mut |d| {
                    for i in 0..d.len() {
                        if x[i] > y[i] {
                            d[i] += g[i];
                        }
                    }
                });
            }
            Scale(a, c) => acc(*a, &mut |d| d.iter_mut().zip(g).for_each(|(d, &g)| *d += g * *c)),
            AddScalar(a) | Reshape(a) => acc(*a, &mut |d| d.iter_mut().zip(g).for_each(|(d, &g)| *d += g)),
            Relu(a) => acc(*a, &mut |d| {
                for i in 0..d.len() {
                    if out[i] > T::zero() {
                        d[i] += g[i];
                    }
                }
            }),
            Exp(a) => acc(*a, &mut |d| {
                for i in 0..d.len() {
                    d[i] += g[i] * out[i];
                }
            }),
            Ln(a) => {
                let x = val(*a);
                acc(*a, &mut |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] / x[i];
                    }
                })
            }
            Abs(a) => {
                let x = val(*a);
                acc(*a, &mut |d| {
                    for i in 0..d.len() {
                        if x[i] > T::zero() {
                            d[i] += g[i];
                        } else if x[i] < T::zero() {
                            d[i] -= g[i];
                        }
                    }
                })
            }
            Square(a) => {
                let x = val(*a);
                acc(*a, &mut |d| {
                    for i in 0..d.len() {
                        d[i] += T::lit(2.0) * g[i] * x[i];
                    }
                })
            }
            Clamp(a, lo, hi) => {
                let x = val(*a);
                acc(*a, &mut |d| {
                    for i in 0..d.len() {
                        if x[i] >= *lo && x[i] <= *hi {
                            d[i] += g[i];
                        }
                    }
                })
            }
            Sum(a) => acc(*a, &mut |d| d.iter_mut().for_each(|d| *d += g[0])),
            Mean(a) => acc(*a, &mut |d| {
                let s = g[0] / T::lit(d.len() as f64);
                d.iter_mut().for_each(|d| *d += s);
            }),
            Linear { x, w, b } => {
                let (xd, wd) = (val(*x), val(*w));
                let o = self.nodes[w.0].value.shape()[0];
                let f = self.nodes[w.0].value.shape()[1];
                let n = xd.len() / f;
                acc(*x, &mut |d| {
                    T::gemm(n, o, f, g, (o as isize, 1), wd, (f as isize, 1), T::one(), d, (f as isize, 1))
                });
                acc(*w, &mut |d| {
                    T::gemm(o, n, f, g, (1, o as isize), xd, (f as isize, 1), T::one(), d, (f as isize, 1))
                });
                if let Some(b) = b {
                    acc(*b, &mut |d| {
                        for row in g.chunks(o) {
                            d.iter_mut().zip(row).for_each(|(d, &g)| *d += g);
                        }
                    });
                }
            }
            Conv2d { x, w, b, geom } => {
                let (xd, wd) = (val(*x), val(*w));
                // Take the three gradient slots out so the kernel can fill them together.
                let mut take = |v: Var| -> Option<Vec<T>> {
                    wants(v).then(|| {
                        grads[v.0].take().unwrap_or_else(|| vec![T::zero(); self.nodes[v.0].value.numel()])
                    })
                };
                let mut dx = take(*x);
                let mut dw = take(*w);
                let mut db = b.and_then(&mut take);
                kernels::conv2d_backward(*geom, xd, wd, g, dx.as_deref_mut(), dw.as_deref_mut(), db.as_deref_mut());
                if let Some(dx) = dx {
                    grads[x.0] = Some(dx);
                }
                if let Some(dw) = dw {
                    grads[w.0] = Some(dw);
                }
                if let (Some(b), Some(db)) = (b, db) {
                    grads[b.0] = Some(db);
                }
            }
            MaxPool2 { x, argmax } => acc(*x, &mut |d| {
                for (o, &src) in argmax.iter().enumerate() {
                    d[src as usize] += g[o];
                }
            }),
            Upsample2 { x } => {
                let s = self.nodes[x.0].value.shape();
                let (planes, h, w) = (s[0] * s[1], s[2], s[3]);
                acc(*x, &mut |d| kernels::upsample2_backward(planes, h, w, g, d));
            }
            ConcatChannels { a, b } => {
                let sa = self.nodes[a.0].value.shape();
                let sb = self.nodes[b.0].value.shape();
                let (n, ca, hw) = (sa[0], sa[1], sa[2] * sa[3]);
                let cb = sb[1];
                let stride = (ca + cb) * hw;
                acc(*a, &mut |d| {
                    for i in 0..n {
                        let src = &g[i * stride..i * stride + ca * hw];
                        d[i * ca * hw..(i + 1) * ca * hw].iter_mut().zip(src).for_each(|(d, &g)| *d += g);
                    }
                });
                acc(*b, &mut |d| {
                    for i in 0..n {
                        let src = &g[i * stride + ca * hw..(i + 1) * stride];
                        d[i * cb * hw..(i + 1) * cb * hw].iter_mut().zip(src).for_each(|(d, &g)| *d += g);
                    }
                });
            }
            LogSoftmax(a) => {
                let k = *self.nodes[a.0].value.shape().last().unwrap_or(&1);
                acc(*a, &mut |d| {
                    for ((drow, grow), orow) in d.chunks_mut(k).zip(g.chunks(k)).zip(out.chunks(k)) {
                        let gs: T = grow.iter().copied().sum();
                        for i in 0..k {
                            drow[i] += grow[i] - orow[i].exp() * gs;
                        }
                    }
                });
            }
            Softmax(a) => {
                let k = *self.nodes[a.0].value.shape().last().unwrap_or(&1);
                acc(*a, &mut |d| {
                    for ((drow, grow), orow) in d.chunks_mut(k).zip(g.chunks(k)).zip(out.chunks(k)) {
                        let dot: T = grow.iter().zip(orow).map(|(&g, &y)| g * y).sum();
                        for i in 0..k {
                            drow[i] += orow[i] * (grow[i] - dot);
                        }
                    }
                });
            }
            Gather { x, idx } => {
                let k = self.nodes[x.0].value.shape()[1];
                acc(*x, &mut |d| {
                    for (r, &i) in idx.iter().enumerate() {
                        d[r * k + i] += g[r];
                    }
                });
            }
            GaussianValid { x, taps } => {
                let s = self.nodes[x.0].value.shape();
                let (planes, h, w) = (s[0] * s[1], s[2], s[3]);
                acc(*x, &mut |d| kernels::gaussian_valid_backward(planes, h, w, taps, g, d));
            }
            InstanceNorm { x, gamma, beta, mean, inv_std } => {
                let s = self.nodes[x.0].value.shape();
                let (c, hw) = (s[1], s[2] * s[3]);
                let xd = val(*x);
                let m = T::lit(hw as f64);
                let gam = |ch: usize| gamma.map_or(T::one(), |gv| val(gv)[ch]);
                if let Some(gv) = gamma {
                    acc(*gv, &mut |d| {
                        for p in 0..mean.len() {
                            let (mu, is) = (mean[p], inv_std[p]);
                            let r = p * hw..(p + 1) * hw;
                            d[p % c] += xd[r.clone()].iter().zip(&g[r]).map(|(&v, &gg)| gg * (v - mu) * is).sum();
                        }
                    });
                }
                if let Some(bv) = beta {
                    acc(*bv, &mut |d| {
                        for p in 0..mean.len() {
                            d[p % c] += g[p * hw..(p + 1) * hw].iter().copied().sum();
                        }
                    });
                }
                acc(*x, &mut |d| {
                    for p in 0..mean.len() {
                        let (mu, is, gm) = (mean[p], inv_std[p], gam(p % c));
                        let r = p * hw..(p + 1) * hw;
                        let (xs, gs) = (&xd[r.clone()], &g[r.clone()]);
                        let mut sum_d = T::zero();
                        let mut sum_dx = T::zero();
                        for (&v, &gg) in xs.iter().zip(gs) {
                            let dxh = gg * gm;
                            sum_d += dxh;
                            sum_dx += dxh * (v - mu) * is;
                        }
                        for ((dd, &v), &gg) in d[r].iter_mut().zip(xs).zip(gs) {
                            let xh = (v - mu) * is;
                            *dd += is / m * (m * gg * gm - sum_d - xh * sum_dx);
                        }
                    }
                });
            }
        }
    }
}
