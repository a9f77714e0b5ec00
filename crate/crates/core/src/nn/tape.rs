//! Tape-based automatic differentiation.
//!
//! Every op appends a node holding its output value; nodes are therefore in
//! topological order. [`Tape::backward`] and [`Tape::vjp`] walk the nodes in
//! reverse, [`Tape::jvp`] walks them forward carrying tangents. Neither mode
//! materializes a Jacobian.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // inherent when std is linked
use num_traits::Float;

use super::kernels::{col2im, im2col, matmul_nn, matmul_nt, matmul_tn, ConvGeom};
use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

const GROUP_NORM_EPS: f64 = 1e-5;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ParamKey {
    pub store: u32,
    pub index: usize,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf(Option<ParamKey>),
    Dense { x: Var, w: Var, b: Option<Var> },
    Conv2d { x: Var, w: Var, b: Option<Var>, geom: ConvGeom },
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    GroupNorm { x: Var, gamma: Var, beta: Var, groups: usize, mean: Vec<f64>, rstd: Vec<f64> },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f32),
    Concat(Var, Var),
    Narrow { x: Var, start: usize },
    Upsample2x(Var),
    AvgPool2(Var),
    Reshape(Var),
    Sum(Var),
    Mean(Var),
    L1 { x: Var, target: Vec<f32> },
    CrossEntropy { logits: Var, labels: Vec<usize>, probs: Vec<f32> },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

type Slots = Vec<Option<Vec<f32>>>;

fn add_into(slots: &mut Slots, v: Var, len: usize, f: impl FnOnce(&mut [f32])) {
    let buf = slots[v.0].get_or_insert_with(|| vec![0.0; len]);
    f(buf);
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, mut value: Tensor, op: Op) -> Var {
        value.grad = None;
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn push_op(&mut self, data: Vec<f32>, dims: Vec<usize>, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].value.requires_grad);
        let value = Tensor { dims, data, requires_grad, grad: None };
        self.push(value, op)
    }

    /// Leaf holding `t`; it takes part in gradients iff `t.requires_grad`.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf(None))
    }

    pub fn constant(&mut self, mut t: Tensor) -> Var {
        t.requires_grad = false;
        self.push(t, Op::Leaf(None))
    }

    /// Leaf copy of a stored parameter. Trainable leaves report their
    /// gradients back through [`ParamStore::accumulate_grads`].
    pub fn param(&mut self, store: &ParamStore, id: ParamId, trainable: bool) -> Var {
        let src = store.get(id);
        let value = Tensor {
            dims: src.dims.clone(),
            data: src.data.clone(),
            requires_grad: trainable,
            grad: None,
        };
        let key = trainable.then_some(ParamKey { store: store.store_id(), index: id.0 });
        self.push(value, Op::Leaf(key))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn dims(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].value.dims
    }

    pub fn data(&self, v: Var) -> &[f32] {
        &self.nodes[v.0].value.data
    }

    pub fn grad(&self, v: Var) -> Option<&[f32]> {
        self.nodes[v.0].value.grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.value.grad = None;
        }
    }

    pub(crate) fn param_grads(&self) -> impl Iterator<Item = (ParamKey, Option<&[f32]>)> {
        self.nodes.iter().filter_map(|n| match n.op {
            Op::Leaf(Some(key)) => Some((key, n.value.grad.as_deref())),
            _ => None,
        })
    }

    // ---------------------------------------------------------------- ops

    /// `x[N, in] · wᵀ + b` with `w[out, in]`, `b[out]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xd, wd) = (self.dims(x), self.dims(w));
        if xd.len() != 2 || wd.len() != 2 || xd[1] != wd[1] {
            return Err(Error::shape("dense", format!("input {xd:?} vs weight {wd:?}")));
        }
        let (n, din, dout) = (xd[0], xd[1], wd[0]);
        if let Some(b) = b {
            if self.dims(b) != [dout] {
                return Err(Error::shape("dense", format!("bias {:?} vs {dout} outputs", self.dims(b))));
            }
        }
        let mut y = vec![0.0f32; n * dout];
        matmul_nt(n, din, dout, self.data(x), self.data(w), &mut y);
        if let Some(b) = b {
            let bias = self.data(b);
            for row in y.chunks_mut(dout) {
                row.iter_mut().zip(bias).for_each(|(v, bv)| *v += bv);
            }
        }
        let mut ins = vec![x, w];
        ins.extend(b);
        Ok(self.push_op(y, vec![n, dout], Op::Dense { x, w, b }, &ins))
    }

    /// 2-D convolution of `x[N, C, H, W]` with `w[O, C, k, k]`, zero padding.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let (xd, wd) = (self.dims(x).to_vec(), self.dims(w).to_vec());
        if xd.len() != 4 || wd.len() != 4 || wd[1] != xd[1] || wd[2] != wd[3] {
            return Err(Error::shape("conv2d", format!("input {xd:?} vs weight {wd:?}")));
        }
        let geom = ConvGeom::new(xd[1], xd[2], xd[3], wd[2], stride, pad)
            .ok_or_else(|| Error::shape("conv2d", format!("kernel {} too large for {xd:?}", wd[2])))?;
        let (n, o) = (xd[0], wd[0]);
        if let Some(b) = b {
            if self.dims(b) != [o] {
                return Err(Error::shape("conv2d", format!("bias {:?} vs {o} channels", self.dims(b))));
            }
        }
        let (q, p) = (geom.rows(), geom.cols());
        let in_sz = geom.c * geom.h * geom.w;
        let mut y = vec![0.0f32; n * o * p];
        let mut cols = vec![0.0f32; q * p];
        {
            let (xs, ws) = (self.data(x), self.data(w));
            for i in 0..n {
                im2col(&geom, &xs[i * in_sz..(i + 1) * in_sz], &mut cols);
                matmul_nn(o, q, p, ws, &cols, &mut y[i * o * p..(i + 1) * o * p]);
            }
            if let Some(b) = b {
                let bias = self.data(b);
                for plane in y.chunks_mut(p).enumerate() {
                    let bv = bias[plane.0 % o];
                    plane.1.iter_mut().for_each(|v| *v += bv);
                }
            }
        }
        let mut ins = vec![x, w];
        ins.extend(b);
        Ok(self.push_op(y, vec![n, o, geom.ho, geom.wo], Op::Conv2d { x, w, b, geom }, &ins))
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(f32) -> f32) -> Var {
        let y = self.data(x).iter().map(|&v| f(v)).collect();
        let dims = self.dims(x).to_vec();
        self.push_op(y, dims, op, &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Relu(x), |v| if v > 0.0 { v } else { 0.0 })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sigmoid(x), |v| 1.0 / (1.0 + (-v).exp()))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Op::Tanh(x), |v| v.tanh())
    }

    pub fn scale(&mut self, x: Var, c: f32) -> Var {
        self.unary(x, Op::Scale(x, c), |v| v * c)
    }

    /// Group normalization over `x[N, C, ...]` with per-channel affine `gamma`, `beta`.
    pub fn group_norm(&mut self, x: Var, gamma: Var, beta: Var, groups: usize) -> Result<Var> {
        let xd = self.dims(x).to_vec();
        if xd.len() < 2 {
            return Err(Error::shape("group_norm", format!("input {xd:?} has no channel axis")));
        }
        let c = xd[1];
        if groups == 0 || c % groups != 0 {
            return Err(Error::shape("group_norm", format!("{groups} groups do not divide {c} channels")));
        }
        if self.dims(gamma) != [c] || self.dims(beta) != [c] {
            return Err(Error::shape("group_norm", format!("affine params must be [{c}]")));
        }
        let n = xd[0];
        let spatial: usize = xd[2..].iter().product();
        let block = (c / groups) * spatial;
        let xs = self.data(x);
        let (gs, bs) = (self.data(gamma), self.data(beta));
        let mut y = vec![0.0f32; xs.len()];
        let mut mean = Vec::with_capacity(n * groups);
        let mut rstd = Vec::with_capacity(n * groups);
        for (bi, chunk) in xs.chunks(block).enumerate() {
            let mu = chunk.iter().map(|&v| v as f64).sum::<f64>() / block as f64;
            let var = chunk.iter().map(|&v| (v as f64 - mu).powi(2)).sum::<f64>() / block as f64;
            let r = 1.0 / (var + GROUP_NORM_EPS).sqrt();
            let g = bi % groups;
            for (j, &v) in chunk.iter().enumerate() {
                let ch = g * (c / groups) + j / spatial;
                let xhat = ((v as f64 - mu) * r) as f32;
                y[bi * block + j] = xhat * gs[ch] + bs[ch];
            }
            mean.push(mu);
            rstd.push(r);
        }
        Ok(self.push_op(y, xd, Op::GroupNorm { x, gamma, beta, groups, mean, rstd }, &[x, gamma, beta]))
    }

    fn binary(&mut self, name: &str, a: Var, b: Var, op: Op, f: impl Fn(f32, f32) -> f32) -> Result<Var> {
        if self.dims(a) != self.dims(b) {
            return Err(Error::shape(name, format!("{:?} vs {:?}", self.dims(a), self.dims(b))));
        }
        let y = self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| f(x, y)).collect();
        let dims = self.dims(a).to_vec();
        Ok(self.push_op(y, dims, op, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    /// Concatenation along axis 1.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ad, bd) = (self.dims(a).to_vec(), self.dims(b).to_vec());
        if ad.len() < 2 || ad.len() != bd.len() || ad[0] != bd[0] || ad[2..] != bd[2..] {
            return Err(Error::shape("concat", format!("{ad:?} vs {bd:?}")));
        }
        let rest: usize = ad[2..].iter().product();
        let (sa, sb) = (ad[1] * rest, bd[1] * rest);
        let mut y = Vec::with_capacity(ad[0] * (sa + sb));
        for i in 0..ad[0] {
            y.extend_from_slice(&self.data(a)[i * sa..(i + 1) * sa]);
            y.extend_from_slice(&self.data(b)[i * sb..(i + 1) * sb]);
        }
        let mut dims = ad.clone();
        dims[1] += bd[1];
        Ok(self.push_op(y, dims, Op::Concat(a, b), &[a, b]))
    }

    /// Slice `[start, start+len)` along axis 1.
    pub fn narrow(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xd = self.dims(x).to_vec();
        if xd.len() < 2 || start + len > xd[1] || len == 0 {
            return Err(Error::shape("narrow", format!("[{start}, {}) out of range for {xd:?}", start + len)));
        }
        let rest: usize = xd[2..].iter().product();
        let (row, take) = (xd[1] * rest, len * rest);
        let mut y = Vec::with_capacity(xd[0] * take);
        for i in 0..xd[0] {
            let off = i * row + start * rest;
            y.extend_from_slice(&self.data(x)[off..off + take]);
        }
        let mut dims = xd;
        dims[1] = len;
        Ok(self.push_op(y, dims, Op::Narrow { x, start }, &[x]))
    }

    /// Nearest-neighbour ×2 upsampling of `[N, C, H, W]`.
    pub fn upsample2x(&mut self, x: Var) -> Result<Var> {
        let xd = self.dims(x).to_vec();
        if xd.len() != 4 {
            return Err(Error::shape("upsample2x", format!("expected rank 4, got {xd:?}")));
        }
        let (h, w) = (xd[2], xd[3]);
        let xs = self.data(x);
        let mut y = vec![0.0f32; xs.len() * 4];
        for (pi, plane) in xs.chunks(h * w).enumerate() {
            let out = &mut y[pi * 4 * h * w..(pi + 1) * 4 * h * w];
            for r in 0..2 * h {
                for c in 0..2 * w {
                    out[r * 2 * w + c] = plane[(r / 2) * w + c / 2];
                }
            }
        }
        Ok(self.push_op(y, vec![xd[0], xd[1], 2 * h, 2 * w], Op::Upsample2x(x), &[x]))
    }

    /// 2×2 average pooling, stride 2.
    pub fn avg_pool2(&mut self, x: Var) -> Result<Var> {
        let xd = self.dims(x).to_vec();
        if xd.len() != 4 || xd[2] % 2 != 0 || xd[3] % 2 != 0 {
            return Err(Error::shape("avg_pool2", format!("needs even spatial dims, got {xd:?}")));
        }
        let (h, w) = (xd[2], xd[3]);
        let (ho, wo) = (h / 2, w / 2);
        let xs = self.data(x);
        let mut y = vec![0.0f32; xs.len() / 4];
        for (pi, plane) in xs.chunks(h * w).enumerate() {
            for r in 0..ho {
                for c in 0..wo {
                    let s = plane[2 * r * w + 2 * c]
                        + plane[2 * r * w + 2 * c + 1]
                        + plane[(2 * r + 1) * w + 2 * c]
                        + plane[(2 * r + 1) * w + 2 * c + 1];
                    y[pi * ho * wo + r * wo + c] = 0.25 * s;
                }
            }
        }
        Ok(self.push_op(y, vec![xd[0], xd[1], ho, wo], Op::AvgPool2(x), &[x]))
    }

    pub fn reshape(&mut self, x: Var, dims: &[usize]) -> Result<Var> {
        let n: usize = dims.iter().product();
        if n != self.value(x).numel() {
            return Err(Error::shape("reshape", format!("cannot view {:?} as {dims:?}", self.dims(x))));
        }
        let y = self.data(x).to_vec();
        Ok(self.push_op(y, dims.to_vec(), Op::Reshape(x), &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.data(x).iter().map(|&v| v as f64).sum();
        self.push_op(vec![s as f32], vec![1], Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).numel() as f64;
        let s: f64 = self.data(x).iter().map(|&v| v as f64).sum();
        self.push_op(vec![(s / n) as f32], vec![1], Op::Mean(x), &[x])
    }

    /// Mean absolute error against a constant target.
    pub fn l1_loss(&mut self, x: Var, target: &[f32]) -> Result<Var> {
        if target.len() != self.value(x).numel() {
            return Err(Error::shape("l1_loss", format!("target has {} values for {:?}", target.len(), self.dims(x))));
        }
        let s: f64 = self.data(x).iter().zip(target).map(|(&a, &b)| (a as f64 - b as f64).abs()).sum();
        let v = s / target.len() as f64;
        Ok(self.push_op(vec![v as f32], vec![1], Op::L1 { x, target: target.to_vec() }, &[x]))
    }

    /// Mean softmax cross-entropy of `logits[N, K]` against integer labels.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let ld = self.dims(logits).to_vec();
        if ld.len() != 2 || ld[0] != labels.len() || labels.iter().any(|&l| l >= ld[1]) {
            return Err(Error::shape("cross_entropy", format!("logits {ld:?} vs {} labels", labels.len())));
        }
        let k = ld[1];
        let mut probs = vec![0.0f32; ld[0] * k];
        let mut total = 0.0f64;
        for (i, row) in self.data(logits).chunks(k).enumerate() {
            let mx = row.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b)) as f64;
            let z: f64 = row.iter().map(|&v| (v as f64 - mx).exp()).sum();
            for (j, &v) in row.iter().enumerate() {
                probs[i * k + j] = ((v as f64 - mx).exp() / z) as f32;
            }
            total += z.ln() + mx - row[labels[i]] as f64;
        }
        let v = total / ld[0] as f64;
        let op = Op::CrossEntropy { logits, labels: labels.to_vec(), probs };
        Ok(self.push_op(vec![v as f32], vec![1], op, &[logits]))
    }

    // ---------------------------------------------------------- reverse mode

    /// Accumulates `d loss / d node` into every node that requires a gradient.
    /// Calling it twice without [`Tape::zero_grad`] adds the two passes.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(Error::NonScalarLoss(self.dims(loss).to_vec()));
        }
        if !self.value(loss).requires_grad {
            return Err(Error::invalid("loss does not depend on any tensor that requires a gradient"));
        }
        let slots = self.reverse(loss, vec![1.0])?;
        for (node, g) in self.nodes.iter_mut().zip(slots) {
            if let (true, Some(g)) = (node.value.requires_grad, g) {
                match &mut node.value.grad {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    None => node.value.grad = Some(g),
                }
            }
        }
        Ok(())
    }

    /// Vector-Jacobian product `Jᵀu` of `output` with respect to each of `wrt`.
    /// Inputs that `output` does not depend on get a zero vector.
    pub fn vjp(&self, output: Var, cotangent: &[f32], wrt: &[Var]) -> Result<Vec<Vec<f32>>> {
        if cotangent.len() != self.value(output).numel() {
            return Err(Error::shape(
                "vjp",
                format!("cotangent has {} values, output {:?}", cotangent.len(), self.dims(output)),
            ));
        }
        let mut slots = self.reverse(output, cotangent.to_vec())?;
        Ok(wrt
            .iter()
            .map(|v| slots[v.0].take().unwrap_or_else(|| vec![0.0; self.value(*v).numel()]))
            .collect())
    }

    fn reverse(&self, output: Var, seed: Vec<f32>) -> Result<Slots> {
        let mut slots: Slots = vec![None; self.nodes.len()];
        slots[output.0] = Some(seed);
        for i in (0..=output.0).rev() {
            let Some(gy) = slots[i].take() else { continue };
            if self.nodes[i].value.requires_grad || matches!(self.nodes[i].op, Op::Leaf(_)) {
                self.backprop_node(i, &gy, &mut slots);
            }
            slots[i] = Some(gy);
        }
        Ok(slots)
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].value.requires_grad
    }

    fn backprop_node(&self, i: usize, gy: &[f32], slots: &mut Slots) {
        let node = &self.nodes[i];
        let numel = |v: Var| self.nodes[v.0].value.numel();
        match &node.op {
            Op::Leaf(_) => {}
            Op::Dense { x, w, b } => {
                let (xd, wd) = (self.dims(*x), self.dims(*w));
                let (n, din, dout) = (xd[0], xd[1], wd[0]);
                if self.wants(*x) {
                    add_into(slots, *x, n * din, |g| matmul_nn(n, dout, din, gy, self.data(*w), g));
                }
                if self.wants(*w) {
                    add_into(slots, *w, dout * din, |g| matmul_tn(dout, n, din, gy, self.data(*x), g));
                }
                if let Some(b) = b.filter(|b| self.wants(*b)) {
                    add_into(slots, b, dout, |g| {
                        for row in gy.chunks(dout) {
                            g.iter_mut().zip(row).for_each(|(a, r)| *a += r);
                        }
                    });
                }
            }
            Op::Conv2d { x, w, b, geom } => {
                let n = self.dims(*x)[0];
                let o = self.dims(*w)[0];
                let (q, p) = (geom.rows(), geom.cols());
                let in_sz = geom.c * geom.h * geom.w;
                let want_x = self.wants(*x);
                let want_w = self.wants(*w);
                let mut cols = vec![0.0f32; q * p];
                let mut dcols = vec![0.0f32; q * p];
                let mut gw = want_w.then(|| vec![0.0f32; o * q]);
                let mut gx = want_x.then(|| vec![0.0f32; n * in_sz]);
                for s in 0..n {
                    let gys = &gy[s * o * p..(s + 1) * o * p];
                    if let Some(gw) = gw.as_mut() {
                        im2col(geom, &self.data(*x)[s * in_sz..(s + 1) * in_sz], &mut cols);
                        matmul_nt(o, p, q, gys, &cols, gw);
                    }
                    if let Some(gx) = gx.as_mut() {
                        dcols.fill(0.0);
                        matmul_tn(q, o, p, self.data(*w), gys, &mut dcols);
                        col2im(geom, &dcols, &mut gx[s * in_sz..(s + 1) * in_sz]);
                    }
                }
                if let Some(gx) = gx {
                    add_into(slots, *x, gx.len(), |g| g.iter_mut().zip(&gx).for_each(|(a, b)| *a += b));
                }
                if let Some(gw) = gw {
                    add_into(slots, *w, gw.len(), |g| g.iter_mut().zip(&gw).for_each(|(a, b)| *a += b));
                }
                if let Some(b) = b.filter(|b| self.wants(*b)) {
                    add_into(slots, b, o, |g| {
                        for (pi, plane) in gy.chunks(p).enumerate() {
                            g[pi % o] += plane.iter().map(|&v| v as f64).sum::<f64>() as f32;
                        }
                    });
                }
            }
            Op::Relu(x) => {
                let xs = self.data(*x);
                add_into(slots, *x, xs.len(), |g| {
                    for ((a, &xv), &gv) in g.iter_mut().zip(xs).zip(gy) {
                        if xv > 0.0 {
                            *a += gv;
                        }
                    }
                });
            }
            Op::Sigmoid(x) => {
                let ys = &node.value.data;
                add_into(slots, *x, ys.len(), |g| {
                    for ((a, &y), &gv) in g.iter_mut().zip(ys).zip(gy) {
                        *a += gv * y * (1.0 - y);
                    }
                });
            }
            Op::Tanh(x) => {
                let ys = &node.value.data;
                add_into(slots, *x, ys.len(), |g| {
                    for ((a, &y), &gv) in g.iter_mut().zip(ys).zip(gy) {
                        *a += gv * (1.0 - y * y);
                    }
                });
            }
            Op::Scale(x, c) => {
                add_into(slots, *x, gy.len(), |g| g.iter_mut().zip(gy).for_each(|(a, &b)| *a += c * b));
            }
            Op::GroupNorm { x, gamma, beta, groups, mean, rstd } => {
                let xd = self.dims(*x);
                let c = xd[1];
                let spatial: usize = xd[2..].iter().product();
                let cg = c / groups;
                let block = cg * spatial;
                let (xs, gs) = (self.data(*x), self.data(*gamma));
                let mut gx = vec![0.0f32; xs.len()];
                let mut ggamma = vec![0.0f64; c];
                let mut gbeta = vec![0.0f64; c];
                let mut xhat = vec![0.0f64; block];
                let mut gxhat = vec![0.0f64; block];
                for bi in 0..xs.len() / block {
                    let g0 = (bi % groups) * cg;
                    let (mu, r) = (mean[bi], rstd[bi]);
                    let mut m1 = 0.0f64;
                    let mut m2 = 0.0f64;
                    for j in 0..block {
                        let idx = bi * block + j;
                        let ch = g0 + j / spatial;
                        xhat[j] = (xs[idx] as f64 - mu) * r;
                        gxhat[j] = gy[idx] as f64 * gs[ch] as f64;
                        ggamma[ch] += gy[idx] as f64 * xhat[j];
                        gbeta[ch] += gy[idx] as f64;
                        m1 += gxhat[j];
                        m2 += gxhat[j] * xhat[j];
                    }
                    m1 /= block as f64;
                    m2 /= block as f64;
                    for j in 0..block {
                        gx[bi * block + j] = (r * (gxhat[j] - m1 - xhat[j] * m2)) as f32;
                    }
                }
                if self.wants(*x) {
                    add_into(slots, *x, gx.len(), |g| g.iter_mut().zip(&gx).for_each(|(a, b)| *a += b));
                }
                if self.wants(*gamma) {
                    add_into(slots, *gamma, c, |g| g.iter_mut().zip(&ggamma).for_each(|(a, &b)| *a += b as f32));
                }
                if self.wants(*beta) {
                    add_into(slots, *beta, c, |g| g.iter_mut().zip(&gbeta).for_each(|(a, &b)| *a += b as f32));
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                if self.wants(*a) {
                    add_into(slots, *a, gy.len(), |g| g.iter_mut().zip(gy).for_each(|(s, &v)| *s += v));
                }
                if self.wants(*b) {
                    add_into(slots, *b, gy.len(), |g| g.iter_mut().zip(gy).for_each(|(s, &v)| *s += sign * v));
                }
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    let bs = self.data(*b);
                    add_into(slots, *a, gy.len(), |g| {
                        g.iter_mut().zip(gy).zip(bs).for_each(|((s, &v), &o)| *s += v * o)
                    });
                }
                if self.wants(*b) {
                    let as_ = self.data(*a);
                    add_into(slots, *b, gy.len(), |g| {
                        g.iter_mut().zip(gy).zip(as_).for_each(|((s, &v), &o)| *s += v * o)
                    });
                }
            }
            Op::Concat(a, b) => {
                let n = self.dims(*a)[0];
                let (sa, sb) = (numel(*a) / n, numel(*b) / n);
                for i in 0..n {
                    let row = &gy[i * (sa + sb)..(i + 1) * (sa + sb)];
                    if self.wants(*a) {
                        add_into(slots, *a, n * sa, |g| {
                            g[i * sa..(i + 1) * sa].iter_mut().zip(&row[..sa]).for_each(|(s, &v)| *s += v)
                        });
                    }
                    if self.wants(*b) {
                        add_into(slots, *b, n * sb, |g| {
                            g[i * sb..(i + 1) * sb].iter_mut().zip(&row[sa..]).for_each(|(s, &v)| *s += v)
                        });
                    }
                }
            }
            Op::Narrow { x, start } => {
                let xd = self.dims(*x);
                let rest: usize = xd[2..].iter().product();
                let row = xd[1] * rest;
                let take = node.value.dims[1] * rest;
                add_into(slots, *x, numel(*x), |g| {
                    for i in 0..xd[0] {
                        let off = i * row + start * rest;
                        g[off..off + take].iter_mut().zip(&gy[i * take..(i + 1) * take]).for_each(|(s, &v)| *s += v);
                    }
                });
            }
            Op::Upsample2x(x) => {
                let xd = self.dims(*x);
                let (h, w) = (xd[2], xd[3]);
                add_into(slots, *x, numel(*x), |g| {
                    for (pi, plane) in g.chunks_mut(h * w).enumerate() {
                        let src = &gy[pi * 4 * h * w..(pi + 1) * 4 * h * w];
                        for r in 0..2 * h {
                            for c in 0..2 * w {
                                plane[(r / 2) * w + c / 2] += src[r * 2 * w + c];
                            }
                        }
                    }
                });
            }
            Op::AvgPool2(x) => {
                let xd = self.dims(*x);
                let (h, w) = (xd[2], xd[3]);
                let (ho, wo) = (h / 2, w / 2);
                add_into(slots, *x, numel(*x), |g| {
                    for (pi, plane) in g.chunks_mut(h * w).enumerate() {
                        for r in 0..h {
                            for c in 0..w {
                                plane[r * w + c] += 0.25 * gy[pi * ho * wo + (r / 2) * wo + c / 2];
                            }
                        }
                    }
                });
            }
            Op::Reshape(x) => {
                add_into(slots, *x, gy.len(), |g| g.iter_mut().zip(gy).for_each(|(s, &v)| *s += v));
            }
            Op::Sum(x) => {
                add_into(slots, *x, numel(*x), |g| g.iter_mut().for_each(|s| *s += gy[0]));
            }
            Op::Mean(x) => {
                let k = gy[0] / numel(*x) as f32;
                add_into(slots, *x, numel(*x), |g| g.iter_mut().for_each(|s| *s += k));
            }
            Op::L1 { x, target } => {
                let k = gy[0] / target.len() as f32;
                let xs = self.data(*x);
                add_into(slots, *x, xs.len(), |g| {
                    for ((s, &a), &t) in g.iter_mut().zip(xs).zip(target) {
                        if a > t {
                            *s += k;
                        } else if a < t {
                            *s -= k;
                        }
                    }
                });
            }
            Op::CrossEntropy { logits, labels, probs } => {
                let k = self.dims(*logits)[1];
                let scale = gy[0] / labels.len() as f32;
                add_into(slots, *logits, probs.len(), |g| {
                    for (i, &l) in labels.iter().enumerate() {
                        for j in 0..k {
                            let onehot = if j == l { 1.0 } else { 0.0 };
                            g[i * k + j] += scale * (probs[i * k + j] - onehot);
                        }
                    }
                });
            }
        }
    }

    // ---------------------------------------------------------- forward mode

    /// Jacobian-vector product: the directional derivative of `output` when
    /// each seeded leaf moves along its tangent. Unseeded nodes are constant.
    pub fn jvp(&self, seeds: &[(Var, &[f32])], output: Var) -> Result<Vec<f32>> {
        let mut tangents: Slots = vec![None; output.0 + 1];
        for (v, t) in seeds {
            if t.len() != self.value(*v).numel() {
                return Err(Error::shape(
                    "jvp",
                    format!("tangent has {} values, input {:?}", t.len(), self.dims(*v)),
                ));
            }
            if v.0 <= output.0 {
                tangents[v.0] = Some(t.to_vec());
            }
        }
        let first = seeds.iter().map(|(v, _)| v.0).min().unwrap_or(output.0 + 1);
        for i in first..=output.0 {
            if tangents[i].is_none() {
                tangents[i] = self.tangent_node(i, &tangents);
            }
        }
        Ok(tangents[output.0].take().unwrap_or_else(|| vec![0.0; self.value(output).numel()]))
    }

    fn tangent_node(&self, i: usize, t: &Slots) -> Option<Vec<f32>> {
        let node = &self.nodes[i];
        let tan = |v: Var| t[v.0].as_deref();
        let len = node.value.numel();
        match &node.op {
            Op::Leaf(_) => None,
            Op::Dense { x, w, b } => {
                let (tx, tw, tb) = (tan(*x), tan(*w), b.and_then(|b| tan(b)));
                if tx.is_none() && tw.is_none() && tb.is_none() {
                    return None;
                }
                let (xd, wd) = (self.dims(*x), self.dims(*w));
                let (n, din, dout) = (xd[0], xd[1], wd[0]);
                let mut y = vec![0.0f32; len];
                if let Some(tx) = tx {
                    matmul_nt(n, din, dout, tx, self.data(*w), &mut y);
                }
                if let Some(tw) = tw {
                    matmul_nt(n, din, dout, self.data(*x), tw, &mut y);
                }
                if let Some(tb) = tb {
                    for row in y.chunks_mut(dout) {
                        row.iter_mut().zip(tb).for_each(|(a, b)| *a += b);
                    }
                }
                Some(y)
            }
            Op::Conv2d { x, w, b, geom } => {
                let (tx, tw, tb) = (tan(*x), tan(*w), b.and_then(|b| tan(b)));
                if tx.is_none() && tw.is_none() && tb.is_none() {
                    return None;
                }
                let n = self.dims(*x)[0];
                let o = self.dims(*w)[0];
                let (q, p) = (geom.rows(), geom.cols());
                let in_sz = geom.c * geom.h * geom.w;
                let mut y = vec![0.0f32; len];
                let mut cols = vec![0.0f32; q * p];
                for s in 0..n {
                    let ys = &mut y[s * o * p..(s + 1) * o * p];
                    if let Some(tx) = tx {
                        im2col(geom, &tx[s * in_sz..(s + 1) * in_sz], &mut cols);
                        matmul_nn(o, q, p, self.data(*w), &cols, ys);
                    }
                    if let Some(tw) = tw {
                        im2col(geom, &self.data(*x)[s * in_sz..(s + 1) * in_sz], &mut cols);
                        matmul_nn(o, q, p, tw, &cols, ys);
                    }
                }
                if let Some(tb) = tb {
                    for (pi, plane) in y.chunks_mut(p).enumerate() {
                        plane.iter_mut().for_each(|v| *v += tb[pi % o]);
                    }
                }
                Some(y)
            }
            Op::Relu(x) => tan(*x).map(|tx| {
                tx.iter().zip(self.data(*x)).map(|(&d, &v)| if v > 0.0 { d } else { 0.0 }).collect()
            }),
            Op::Sigmoid(x) => {
                tan(*x).map(|tx| tx.iter().zip(&node.value.data).map(|(&d, &y)| d * y * (1.0 - y)).collect())
            }
            Op::Tanh(x) => tan(*x).map(|tx| tx.iter().zip(&node.value.data).map(|(&d, &y)| d * (1.0 - y * y)).collect()),
            Op::Scale(x, c) => tan(*x).map(|tx| tx.iter().map(|&d| d * c).collect()),
            Op::GroupNorm { x, gamma, beta, groups, mean, rstd } => {
                let (tx, tg, tb) = (tan(*x), tan(*gamma), tan(*beta));
                if tx.is_none() && tg.is_none() && tb.is_none() {
                    return None;
                }
                let xd = self.dims(*x);
                let c = xd[1];
                let spatial: usize = xd[2..].iter().product();
                let cg = c / groups;
                let block = cg * spatial;
                let (xs, gs) = (self.data(*x), self.data(*gamma));
                let mut y = vec![0.0f32; len];
                for bi in 0..len / block {
                    let g0 = (bi % groups) * cg;
                    let (mu, r) = (mean[bi], rstd[bi]);
                    let xhat = |j: usize| (xs[bi * block + j] as f64 - mu) * r;
                    let (mut m1, mut m2) = (0.0f64, 0.0f64);
                    if let Some(tx) = tx {
                        for j in 0..block {
                            let d = tx[bi * block + j] as f64;
                            m1 += d;
                            m2 += d * xhat(j);
                        }
                        m1 /= block as f64;
                        m2 /= block as f64;
                    }
                    for j in 0..block {
                        let idx = bi * block + j;
                        let ch = g0 + j / spatial;
                        let xh = xhat(j);
                        let mut v = 0.0f64;
                        if let Some(tx) = tx {
                            v += gs[ch] as f64 * r * (tx[idx] as f64 - m1 - xh * m2);
                        }
                        if let Some(tg) = tg {
                            v += tg[ch] as f64 * xh;
                        }
                        if let Some(tb) = tb {
                            v += tb[ch] as f64;
                        }
                        y[idx] = v as f32;
                    }
                }
                Some(y)
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                match (tan(*a), tan(*b)) {
                    (None, None) => None,
                    (Some(ta), None) => Some(ta.to_vec()),
                    (None, Some(tb)) => Some(tb.iter().map(|&v| sign * v).collect()),
                    (Some(ta), Some(tb)) => Some(ta.iter().zip(tb).map(|(&x, &y)| x + sign * y).collect()),
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (tan(*a), tan(*b));
                if ta.is_none() && tb.is_none() {
                    return None;
                }
                let mut y = vec![0.0f32; len];
                if let Some(ta) = ta {
                    y.iter_mut().zip(ta).zip(self.data(*b)).for_each(|((s, &d), &o)| *s += d * o);
                }
                if let Some(tb) = tb {
                    y.iter_mut().zip(tb).zip(self.data(*a)).for_each(|((s, &d), &o)| *s += d * o);
                }
                Some(y)
            }
            Op::Concat(a, b) => {
                let (ta, tb) = (tan(*a), tan(*b));
                if ta.is_none() && tb.is_none() {
                    return None;
                }
                let n = self.dims(*a)[0];
                let (sa, sb) = (self.value(*a).numel() / n, self.value(*b).numel() / n);
                let mut y = vec![0.0f32; len];
                for i in 0..n {
                    let row = &mut y[i * (sa + sb)..(i + 1) * (sa + sb)];
                    if let Some(ta) = ta {
                        row[..sa].copy_from_slice(&ta[i * sa..(i + 1) * sa]);
                    }
                    if let Some(tb) = tb {
                        row[sa..].copy_from_slice(&tb[i * sb..(i + 1) * sb]);
                    }
                }
                Some(y)
            }
            Op::Narrow { x, start } => tan(*x).map(|tx| {
                let xd = self.dims(*x);
                let rest: usize = xd[2..].iter().product();
                let row = xd[1] * rest;
                let take = node.value.dims[1] * rest;
                let mut y = Vec::with_capacity(len);
                for i in 0..xd[0] {
                    let off = i * row + start * rest;
                    y.extend_from_slice(&tx[off..off + take]);
                }
                y
            }),
            Op::Upsample2x(x) => tan(*x).map(|tx| {
                let xd = self.dims(*x);
                let (h, w) = (xd[2], xd[3]);
                let mut y = vec![0.0f32; len];
                for (pi, plane) in tx.chunks(h * w).enumerate() {
                    for r in 0..2 * h {
                        for c in 0..2 * w {
                            y[pi * 4 * h * w + r * 2 * w + c] = plane[(r / 2) * w + c / 2];
                        }
                    }
                }
                y
            }),
            Op::AvgPool2(x) => tan(*x).map(|tx| {
                let xd = self.dims(*x);
                let (h, w) = (xd[2], xd[3]);
                let (ho, wo) = (h / 2, w / 2);
                let mut y = vec![0.0f32; len];
                for (pi, plane) in tx.chunks(h * w).enumerate() {
                    for r in 0..h {
                        for c in 0..w {
                            y[pi * ho * wo + (r / 2) * wo + c / 2] += 0.25 * plane[r * w + c];
                        }
                    }
                }
                y
            }),
            Op::Reshape(x) => tan(*x).map(|tx| tx.to_vec()),
            Op::Sum(x) => tan(*x).map(|tx| vec![tx.iter().map(|&v| v as f64).sum::<f64>() as f32]),
            Op::Mean(x) => {
                tan(*x).map(|tx| vec![(tx.iter().map(|&v| v as f64).sum::<f64>() / tx.len() as f64) as f32])
            }
            Op::L1 { x, target } => tan(*x).map(|tx| {
                let s: f64 = tx
                    .iter()
                    .zip(self.data(*x))
                    .zip(target)
                    .map(|((&d, &a), &t)| if a > t { d as f64 } else if a < t { -(d as f64) } else { 0.0 })
                    .sum();
                vec![(s / target.len() as f64) as f32]
            }),
            Op::CrossEntropy { logits, labels, probs } => tan(*logits).map(|tx| {
                let k = self.dims(*logits)[1];
                let mut s = 0.0f64;
                for (i, &l) in labels.iter().enumerate() {
                    for j in 0..k {
                        let onehot = if j == l { 1.0 } else { 0.0 };
                        s += (probs[i * k + j] - onehot) as f64 * tx[i * k + j] as f64;
                    }
                }
                vec![(s / labels.len() as f64) as f32]
            }),
        }
    }
}
