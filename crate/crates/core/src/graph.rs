//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Graph`] borrows a [`ParamStore`] for the duration of one forward
//! pass. Nodes are appended in evaluation order, so the tape is already
//! topologically sorted and `backward` is a single reverse sweep.

use std::collections::HashMap;
use std::sync::Arc;

use crate::params::{ParamId, ParamStore};
use crate::real::Real;
use crate::resample::SpatialMap;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<T> {
    Leaf,
    Param,
    Conv { x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize, cols: Option<Vec<T>> },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Offset(Var),
    MulConst(Var, Tensor<T>),
    Abs(Var),
    Relu(Var),
    LeakyRelu(Var, T),
    Sigmoid(Var),
    Tanh(Var),
    InstanceNorm { x: Var, inv_std: Vec<T> },
    Concat(Vec<Var>),
    Spatial { x: Var, map: Arc<SpatialMap<T>> },
    Fuse { c: Var, w: Var, g: Var },
    Sum(Var),
    Mean(Var),
    Normalize { x: Var, norm: T },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

pub struct Graph<'s, T: Real> {
    store: &'s ParamStore<T>,
    nodes: Vec<Node<T>>,
    params: HashMap<ParamId, Var>,
}

/// Gradients produced by [`Graph::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    params: Vec<(ParamId, Var)>,
}

impl<T: Real> Gradients<T> {
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads[v.0].as_ref()
    }

    /// Gradients of every trainable parameter touched by the pass.
    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor<T>)> {
        self.params.iter().filter_map(|&(id, v)| self.grads[v.0].as_ref().map(|g| (id, g)))
    }

    pub fn into_params(mut self) -> Vec<(ParamId, Tensor<T>)> {
        let mut out = Vec::with_capacity(self.params.len());
        for &(id, v) in &self.params {
            if let Some(g) = self.grads[v.0].take() {
                out.push((id, g));
            }
        }
        out
    }
}

fn conv_out(size: usize, k: usize, stride: usize, pad: usize) -> usize {
    assert!(size + 2 * pad >= k, "convolution kernel larger than padded input");
    (size + 2 * pad - k) / stride + 1
}

fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl<'s, T: Real> Graph<'s, T> {
    pub fn new(store: &'s ParamStore<T>) -> Self {
        Self { store, nodes: Vec::with_capacity(256), params: HashMap::new() }
    }

    pub fn store(&self) -> &'s ParamStore<T> {
        self.store
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A leaf input. Gradients are recorded only when `requires_grad`.
    pub fn input(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.input(value, false)
    }

    /// The node for a stored parameter; repeated calls share one node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let trainable = self.store.is_trainable(id);
        let v = self.push(self.store.get(id).clone(), Op::Param, trainable);
        self.params.insert(id, v);
        v
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Var {
        let (cin, h, wd) = self.value(x).chw();
        let ws = self.value(w).shape().to_vec();
        assert_eq!(ws.len(), 4, "conv weight must be (C_out, C_in, K, K)");
        let (cout, k) = (ws[0], ws[2]);
        assert_eq!(ws[1], cin, "conv input channels {} != weight {}", cin, ws[1]);
        assert_eq!(ws[2], ws[3]);
        let (oh, ow) = (conv_out(h, k, stride, pad), conv_out(wd, k, stride, pad));
        let p = oh * ow;
        let r = cin * k * k;
        let direct = k == 1 && stride == 1 && pad == 0;
        let cols = if direct {
            None
        } else {
            let xv = self.value(x).data();
            let mut cols = vec![T::zero(); r * p];
            for ci in 0..cin {
                let plane = &xv[ci * h * wd..(ci + 1) * h * wd];
                for ky in 0..k {
                    for kx in 0..k {
                        let row = &mut cols[((ci * k + ky) * k + kx) * p..][..p];
                        for oy in 0..oh {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let src = &plane[iy as usize * wd..][..wd];
                            let dst = &mut row[oy * ow..][..ow];
                            for (ox, d) in dst.iter_mut().enumerate() {
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if ix >= 0 && ix < wd as isize {
                                    *d = src[ix as usize];
                                }
                            }
                        }
                    }
                }
            }
            Some(cols)
        };
        let mut out = vec![T::zero(); cout * p];
        if let Some(b) = b {
            let bv = self.value(b).data();
            assert_eq!(bv.len(), cout);
            for (co, chunk) in out.chunks_mut(p).enumerate() {
                chunk.iter_mut().for_each(|o| *o = bv[co]);
            }
        }
        {
            let bsrc: &[T] = cols.as_deref().unwrap_or_else(|| self.value(x).data());
            let beta = if b.is_some() { T::one() } else { T::zero() };
            T::gemm(cout, r, p, T::one(), self.value(w).data(), r as isize, 1, bsrc, p as isize, 1, beta, &mut out, p as isize, 1);
        }
        let ng = self.ng(x) || self.ng(w) || b.map_or(false, |b| self.ng(b));
        // im2col buffers are only needed for the weight gradient.
        let cols = if self.ng(w) { cols } else { None };
        self.push(Tensor::from_vec(&[cout, oh, ow], out), Op::Conv { x, w, b, stride, pad, cols }, ng)
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "elementwise shape mismatch");
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::from_vec(va.shape(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.binary(a, b, |x, y| x + y);
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.binary(a, b, |x, y| x - y);
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::Sub(a, b), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.binary(a, b, |x, y| x * y);
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::Mul(a, b), ng)
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let v = self.value(a).map(|x| x * s);
        let ng = self.ng(a);
        self.push(v, Op::Scale(a, s), ng)
    }

    pub fn offset(&mut self, a: Var, s: T) -> Var {
        let v = self.value(a).map(|x| x + s);
        let ng = self.ng(a);
        self.push(v, Op::Offset(a), ng)
    }

    pub fn mul_const(&mut self, a: Var, c: Tensor<T>) -> Var {
        assert_eq!(self.value(a).shape(), c.shape(), "mul_const shape mismatch");
        let data = self.value(a).data().iter().zip(c.data()).map(|(&x, &y)| x * y).collect();
        let v = Tensor::from_vec(c.shape(), data);
        let ng = self.ng(a);
        self.push(v, Op::MulConst(a, c), ng)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.abs());
        let ng = self.ng(a);
        self.push(v, Op::Abs(a), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(T::zero()));
        let ng = self.ng(a);
        self.push(v, Op::Relu(a), ng)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: T) -> Var {
        let v = self.value(a).map(|x| if x > T::zero() { x } else { x * slope });
        let ng = self.ng(a);
        self.push(v, Op::LeakyRelu(a, slope), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        let ng = self.ng(a);
        self.push(v, Op::Sigmoid(a), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.tanh());
        let ng = self.ng(a);
        self.push(v, Op::Tanh(a), ng)
    }

    /// Per-channel normalisation over spatial positions (no affine part).
    pub fn instance_norm(&mut self, x: Var, eps: T) -> Var {
        let (c, h, w) = self.value(x).chw();
        let n = h * w;
        let nf = T::of(n as f64);
        let xv = self.value(x).data();
        let mut out = vec![T::zero(); c * n];
        let mut inv_std = Vec::with_capacity(c);
        for ch in 0..c {
            let src = &xv[ch * n..(ch + 1) * n];
            let mean = src.iter().copied().sum::<T>() / nf;
            let var = src.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nf;
            let is = T::one() / (var + eps).sqrt();
            for (o, &v) in out[ch * n..(ch + 1) * n].iter_mut().zip(src) {
                *o = (v - mean) * is;
            }
            inv_std.push(is);
        }
        let ng = self.ng(x);
        self.push(Tensor::from_vec(&[c, h, w], out), Op::InstanceNorm { x, inv_std }, ng)
    }

    /// Channel concatenation of `(C_i, H, W)` tensors.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let (_, h, w) = self.value(parts[0]).chw();
        let mut data = Vec::new();
        let mut c = 0;
        for &p in parts {
            let (pc, ph, pw) = self.value(p).chw();
            assert_eq!((ph, pw), (h, w), "concat spatial mismatch");
            data.extend_from_slice(self.value(p).data());
            c += pc;
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(Tensor::from_vec(&[c, h, w], data), Op::Concat(parts.to_vec()), ng)
    }

    pub fn spatial(&mut self, x: Var, map: Arc<SpatialMap<T>>) -> Var {
        let (c, h, w) = self.value(x).chw();
        assert_eq!((h, w), map.in_hw, "spatial map input size mismatch");
        let out = map.apply(self.value(x).data(), c);
        let (oh, ow) = map.out_hw;
        let ng = self.ng(x);
        self.push(Tensor::from_vec(&[c, oh, ow], out), Op::Spatial { x, map }, ng)
    }

    /// `(1 - g) ⊗ c + g ⊗ w`, evaluated literally so `g ∈ {0, 1}` returns
    /// one stream exactly.
    pub fn fuse(&mut self, c: Var, w: Var, g: Var) -> Var {
        let (vc, vw, vg) = (self.value(c), self.value(w), self.value(g));
        assert_eq!(vc.shape(), vw.shape());
        assert_eq!(vc.shape(), vg.shape());
        let data = vc
            .data()
            .iter()
            .zip(vw.data())
            .zip(vg.data())
            .map(|((&a, &b), &m)| (T::one() - m) * a + m * b)
            .collect();
        let v = Tensor::from_vec(vc.shape(), data);
        let ng = self.ng(c) || self.ng(w) || self.ng(g);
        self.push(v, Op::Fuse { c, w, g }, ng)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().copied().sum::<T>();
        let ng = self.ng(a);
        self.push(Tensor::scalar(s), Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let s = v.data().iter().copied().sum::<T>() / T::of(v.len() as f64);
        let ng = self.ng(a);
        self.push(Tensor::scalar(s), Op::Mean(a), ng)
    }

    /// `x / sqrt(Σx² + eps)` over the whole tensor.
    pub fn l2_normalize(&mut self, x: Var, eps: T) -> Var {
        let v = self.value(x);
        let norm = (v.data().iter().map(|&a| a * a).sum::<T>() + eps).sqrt();
        let out = v.map(|a| a / norm);
        let ng = self.ng(x);
        self.push(out, Op::Normalize { x, norm }, ng)
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: Var) -> Gradients<T> {
        assert_eq!(self.value(loss).len(), 1, "backward needs a scalar");
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(T::one()));
        let nodes = &self.nodes;

        fn slot<'g, T: Real>(grads: &'g mut [Option<Tensor<T>>], nodes: &[Node<T>], v: Var) -> Option<&'g mut [T]> {
            if !nodes[v.0].needs_grad {
                return None;
            }
            let s = &mut grads[v.0];
            if s.is_none() {
                *s = Some(Tensor::zeros(nodes[v.0].value.shape()));
            }
            s.as_mut().map(|t| t.data_mut())
        }

        for i in (0..=loss.0).rev() {
            let node = &nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(gt) = grads[i].take() else { continue };
            let g = gt.data();
            match &node.op {
                Op::Leaf | Op::Param => {
                    grads[i] = Some(gt);
                    continue;
                }
                Op::Conv { x, w, b, stride, pad, cols } => {
                    let (cin, h, wd) = nodes[x.0].value.chw();
                    let ws = nodes[w.0].value.shape();
                    let (cout, k) = (ws[0], ws[2]);
                    let (_, oh, ow) = node.value.chw();
                    let p = oh * ow;
                    let r = cin * k * k;
                    if let Some(db) = b.and_then(|b| slot(&mut grads, nodes, b)) {
                        for (co, d) in db.iter_mut().enumerate() {
                            *d += g[co * p..(co + 1) * p].iter().copied().sum::<T>();
                        }
                    }
                    if let Some(dw) = slot(&mut grads, nodes, *w) {
                        let bsrc: &[T] = cols.as_deref().unwrap_or_else(|| nodes[x.0].value.data());
                        T::gemm(cout, p, r, T::one(), g, p as isize, 1, bsrc, 1, p as isize, T::one(), dw, r as isize, 1);
                    }
                    let wv = nodes[w.0].value.data();
                    if let Some(dx) = slot(&mut grads, nodes, *x) {
                        if k == 1 && *stride == 1 && *pad == 0 {
                            T::gemm(r, cout, p, T::one(), wv, 1, r as isize, g, p as isize, 1, T::one(), dx, p as isize, 1);
                        } else {
                            let mut dcols = vec![T::zero(); r * p];
                            T::gemm(r, cout, p, T::one(), wv, 1, r as isize, g, p as isize, 1, T::zero(), &mut dcols, p as isize, 1);
                            for ci in 0..cin {
                                let plane = &mut dx[ci * h * wd..(ci + 1) * h * wd];
                                for ky in 0..k {
                                    for kx in 0..k {
                                        let row = &dcols[((ci * k + ky) * k + kx) * p..][..p];
                                        for oy in 0..oh {
                                            let iy = (oy * stride + ky) as isize - *pad as isize;
                                            if iy < 0 || iy >= h as isize {
                                                continue;
                                            }
                                            let dst = &mut plane[iy as usize * wd..][..wd];
                                            for (ox, &v) in row[oy * ow..][..ow].iter().enumerate() {
                                                let ix = (ox * stride + kx) as isize - *pad as isize;
                                                if ix >= 0 && ix < wd as isize {
                                                    dst[ix as usize] += v;
                                                }
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                Op::Add(a, b) => {
                    for v in [*a, *b] {
                        if let Some(d) = slot(&mut grads, nodes, v) {
                            d.iter_mut().zip(g).for_each(|(d, &g)| *d += g);
                        }
                    }
                }
                Op::Sub(a, b) => {
                    if let Some(d) = slot(&mut grads, nodes, *a) {
                        d.iter_mut().zip(g).for_each(|(d, &g)| *d += g);
                    }
                    if let Some(d) = slot(&mut grads, nodes, *b) {
                        d.iter_mut().zip(g).for_each(|(d, &g)| *d -= g);
                    }
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                    if let Some(d) = slot(&mut grads, nodes, *a) {
                        for ((d, &g), &y) in d.iter_mut().zip(g).zip(vb) {
                            *d += g * y;
                        }
                    }
                    if let Some(d) = slot(&mut grads, nodes, *b) {
                        for ((d, &g), &x) in d.iter_mut().zip(g).zip(va) {
                            *d += g * x;
                        }
                    }
                }
                Op::Scale(a, s) => {
                    if let Some(d) = slot(&mut grads, nodes, *a) {
                        d.iter_mut().zip(g).for_each(|(d, &g)| *d += g * *s);
                    }
                }
                Op::Offset(a) => {
                    if let Some(d) = slot(&mut grads, nodes, *a) {
                        d.iter_mut().zip(g).for_each(|(d, &g)| *d += g);
                    }
                }
                Op::MulConst(a, c) => {
                    if let Some(d) = slot(&mut grads, nodes, *a) {
                        for ((d, &g), &c) in d.iter_mut().zip(g).zip(c.data()) {
                            *d += g * c;
                        }
                    }
                }
                Op::Abs(a) => {
                    let xa = nodes[a.0].value.data();
                    if let Some(d) = slot(&mut grads, nodes, *a) {
                        for ((d, &g), &x) in d.iter_mut().zip(g).zip(xa) {
                            if x > T::zero() {
                                *d += g;
                            } else if x < T::zero() {
                                *d -= g;
                            }
                        }
                    }
                }
                Op::Relu(a) => {
                    let xa = nodes[a.0].value.data();
                    if let Some(d) = slot(&mut grads, nodes, *a) {
                        for ((d, &g), &x) in d.iter_mut().zip(g).zip(xa) {
                            if x > T::zero() {
                                *d += g;
                            }
                        }
                    }
                }
                Op::LeakyRelu(a, s) => {
                    let xa = nodes[a.0].value.data();
                    if let Some(d) = slot(&mut grads, nodes, *a) {
                        for ((d, &g), &x) in d.iter_mut().zip(g).zip(xa) {
                            *d += if x > T::zero() { g } else { g * *s };
                        }
                    }
                }
                Op::Sigmoid(a) => {
                    let y = node.value.data();
                    if let Some(d) = slot(&mut grads, nodes, *a) {
                        for ((d, &g), &y) in d.iter_mut().zip(g).zip(y) {
                            *d += g * y * (T::one() - y);
                        }
                    }
                }
                Op::Tanh(a) => {
                    let y = node.value.data();
                    if let Some(d) = slot(&mut grads, nodes, *a) {
                        for ((d, &g), &y) in d.iter_mut().zip(g).zip(y) {
                            *d += g * (T::one() - y * y);
                        }
                    }
                }
                Op::InstanceNorm { x, inv_std } => {
                    let (c, h, w) = node.value.chw();
                    let n = h * w;
                    let nf = T::of(n as f64);
                    let xhat = node.value.data();
                    if let Some(d) = slot(&mut grads, nodes, *x) {
                        for ch in 0..c {
                            let gs = &g[ch * n..(ch + 1) * n];
                            let xs = &xhat[ch * n..(ch + 1) * n];
                            let sum_g = gs.iter().copied().sum::<T>();
                            let sum_gx = gs.iter().zip(xs).map(|(&a, &b)| a * b).sum::<T>();
                            let k = inv_std[ch] / nf;
                            for ((d, &gv), &xv) in d[ch * n..(ch + 1) * n].iter_mut().zip(gs).zip(xs) {
                                *d += k * (nf * gv - sum_g - xv * sum_gx);
                            }
                        }
                    }
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let len = nodes[p.0].value.len();
                        if let Some(d) = slot(&mut grads, nodes, p) {
                            d.iter_mut().zip(&g[off..off + len]).for_each(|(d, &g)| *d += g);
                        }
                        off += len;
                    }
                }
                Op::Spatial { x, map } => {
                    let (c, _, _) = node.value.chw();
                    if let Some(d) = slot(&mut grads, nodes, *x) {
                        map.apply_transpose_into(g, c, d);
                    }
                }
                Op::Fuse { c, w, g: gate } => {
                    let (vc, vw, vg) = (nodes[c.0].value.data(), nodes[w.0].value.data(), nodes[gate.0].value.data());
                    if let Some(d) = slot(&mut grads, nodes, *c) {
                        for ((d, &g), &m) in d.iter_mut().zip(g).zip(vg) {
                            *d += g * (T::one() - m);
                        }
                    }
                    if let Some(d) = slot(&mut grads, nodes, *w) {
                        for ((d, &g), &m) in d.iter_mut().zip(g).zip(vg) {
                            *d += g * m;
                        }
                    }
                    if let Some(d) = slot(&mut grads, nodes, *gate) {
                        for (((d, &g), &a), &b) in d.iter_mut().zip(g).zip(vc).zip(vw) {
                            *d += g * (b - a);
                        }
                    }
                }
                Op::Sum(a) => {
                    if let Some(d) = slot(&mut grads, nodes, *a) {
                        d.iter_mut().for_each(|d| *d += g[0]);
                    }
                }
                Op::Mean(a) => {
                    let k = g[0] / T::of(nodes[a.0].value.len() as f64);
                    if let Some(d) = slot(&mut grads, nodes, *a) {
                        d.iter_mut().for_each(|d| *d += k);
                    }
                }
                Op::Normalize { x, norm } => {
                    let y = node.value.data();
                    let dot = y.iter().zip(g).map(|(&a, &b)| a * b).sum::<T>();
                    if let Some(d) = slot(&mut grads, nodes, *x) {
                        for ((d, &gv), &yv) in d.iter_mut().zip(g).zip(y) {
                            *d += (gv - yv * dot) / *norm;
                        }
                    }
                }
            }
        }
        let mut params: Vec<(ParamId, Var)> = self.params.iter().map(|(&id, &v)| (id, v)).collect();
        params.sort_by_key(|p| p.0);
        Gradients { grads, params }
    }
}

/// Central finite differences, used as an independent oracle for the
/// analytic gradients in tests.
pub mod check {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::{Graph, Var};
    use crate::params::{ParamId, ParamStore};
    use crate::real::Real;
    use crate::tensor::Tensor;

    /// Numerical gradient of the scalar function `f` at `x`.
    pub fn numerical_grad<T: Real>(x: &Tensor<T>, eps: f64, mut f: impl FnMut(&Tensor<T>) -> f64) -> Tensor<T> {
        let mut probe = x.clone();
        let mut out = Tensor::zeros(x.shape());
        for i in 0..x.len() {
            let orig = probe.data()[i];
            probe.data_mut()[i] = T::of(orig.f64() + eps);
            let fp = f(&probe);
            probe.data_mut()[i] = T::of(orig.f64() - eps);
            let fm = f(&probe);
            probe.data_mut()[i] = orig;
            out.data_mut()[i] = T::of((fp - fm) / (2.0 * eps));
        }
        out
    }

    /// Relative error between analytic and central-difference gradients
    /// over the parameters `ids`, probing at most `max_probes` entries of
    /// each and pooling all probes into one vector. `loss` must build a
    /// scalar from a fresh graph.
    pub fn param_grad_error<T: Real>(
        store: &mut ParamStore<T>,
        ids: &[ParamId],
        eps: f64,
        max_probes: usize,
        loss: impl Fn(&mut Graph<'_, T>) -> Var,
    ) -> f64 {
        let analytic: Vec<Tensor<T>> = {
            let mut g = Graph::new(store);
            let l = loss(&mut g);
            let grads = g.backward(l);
            let by_id: Vec<(ParamId, &Tensor<T>)> = grads.params().collect();
            ids.iter()
                .map(|id| by_id.iter().find(|(p, _)| p == id).map(|(_, t)| (*t).clone()).unwrap_or_else(|| Tensor::zeros(store.get(*id).shape())))
                .collect()
        };
        let eval = |store: &ParamStore<T>| {
            let mut g = Graph::new(store);
            let l = loss(&mut g);
            g.value(l).item().f64()
        };
        let mut an = Vec::new();
        let mut nu = Vec::new();
        for (id, a) in ids.iter().zip(&analytic) {
            let n = a.len();
            let stride = (n / max_probes.max(1)).max(1);
            for i in (0..n).step_by(stride) {
                let orig = store.get(*id).data()[i];
                store.get_mut(*id).data_mut()[i] = T::of(orig.f64() + eps);
                let fp = eval(store);
                store.get_mut(*id).data_mut()[i] = T::of(orig.f64() - eps);
                let fm = eval(store);
                store.get_mut(*id).data_mut()[i] = orig;
                an.push(a.data()[i]);
                nu.push(T::of((fp - fm) / (2.0 * eps)));
            }
        }
        let k = an.len();
        relative_error(&Tensor::from_vec(&[k], an), &Tensor::from_vec(&[k], nu), 1e-8)
    }

    /// `Σ y ⊙ r` for a fixed pseudo-random `r`, a scalar probe of `y` that
    /// symmetric cancellations cannot fool.
    pub fn random_projection<T: Real>(g: &mut Graph<'_, T>, y: Var, seed: u64) -> Var {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape = g.value(y).shape().to_vec();
        let n: usize = shape.iter().product();
        let r = Tensor::from_vec(&shape, (0..n).map(|_| T::of(rng.gen_range(-1.0..1.0))).collect());
        let p = g.mul_const(y, r);
        g.sum(p)
    }

    /// Relative error `‖a − n‖ / max(‖a‖, ‖n‖, floor)` over whole tensors.
    pub fn relative_error<T: Real>(analytic: &Tensor<T>, numeric: &Tensor<T>, floor: f64) -> f64 {
        let diff: f64 = analytic.data().iter().zip(numeric.data()).map(|(a, n)| (a.f64() - n.f64()).powi(2)).sum::<f64>().sqrt();
        let na: f64 = analytic.data().iter().map(|a| a.f64().powi(2)).sum::<f64>().sqrt();
        let nn: f64 = numeric.data().iter().map(|a| a.f64().powi(2)).sum::<f64>().sqrt();
        diff / na.max(nn).max(floor)
    }
}

#[cfg(test)]
mod tests {
    use super::check::{numerical_grad, relative_error};
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    fn project(g: &mut Graph<'_, f64>, y: Var, seed: u64) -> Var {
        super::check::random_projection(g, y, seed)
    }

    fn input_error(x: &Tensor<f64>, f: impl Fn(&mut Graph<'_, f64>, Var) -> Var) -> f64 {
        let store = ParamStore::<f64>::new();
        let mut g = Graph::new(&store);
        let v = g.input(x.clone(), true);
        let y = f(&mut g, v);
        let l = project(&mut g, y, 99);
        let grads = g.backward(l);
        let analytic = grads.wrt(v).cloned().unwrap_or_else(|| Tensor::zeros(x.shape()));
        let numeric = numerical_grad(x, 1e-6, |p| {
            let mut g = Graph::new(&store);
            let v = g.input(p.clone(), true);
            let y = f(&mut g, v);
            let l = project(&mut g, y, 99);
            g.value(l).item()
        });
        relative_error(&analytic, &numeric, 1e-8)
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let x = rand_tensor(&[2, 6, 6], 1);
        let w = rand_tensor(&[3, 2, 3, 3], 2);
        let b = rand_tensor(&[3], 3);
        for (stride, pad) in [(1, 1), (2, 1), (1, 0), (2, 0)] {
            let (wc, bc) = (w.clone(), b.clone());
            let e = input_error(&x, move |g, v| {
                let wv = g.constant(wc.clone());
                let bv = g.constant(bc.clone());
                g.conv2d(v, wv, Some(bv), stride, pad)
            });
            assert!(e < 1e-6, "input grad stride {stride} pad {pad}: {e}");
            let xc = x.clone();
            let e = input_error(&w, move |g, v| {
                let xv = g.constant(xc.clone());
                g.conv2d(xv, v, None, stride, pad)
            });
            assert!(e < 1e-6, "weight grad stride {stride} pad {pad}: {e}");
        }
    }

    #[test]
    fn elementwise_gradients_match_finite_differences() {
        let x = rand_tensor(&[2, 4, 4], 4);
        let y = rand_tensor(&[2, 4, 4], 5);
        let cases: Vec<(&str, Box<dyn Fn(&mut Graph<'_, f64>, Var) -> Var>)> = vec![
            ("sigmoid", Box::new(|g, v| g.sigmoid(v))),
            ("tanh", Box::new(|g, v| g.tanh(v))),
            ("leaky", Box::new(|g, v| g.leaky_relu(v, 0.2))),
            ("abs", Box::new(|g, v| g.abs(v))),
            ("scale", Box::new(|g, v| g.scale(v, -1.7))),
            ("offset", Box::new(|g, v| g.offset(v, 0.3))),
            ("mul", Box::new(|g, v| g.mul(v, v))),
            ("sub", Box::new(|g, v| {
                let s = g.sigmoid(v);
                g.sub(v, s)
            })),
            ("mean", Box::new(|g, v| g.mean(v))),
            ("instance_norm", Box::new(|g, v| g.instance_norm(v, 1e-5))),
            ("l2_normalize", Box::new(|g, v| g.l2_normalize(v, 1e-12))),
            ("concat", Box::new(move |g, v| {
                let c = g.constant(y.clone());
                let s = g.sigmoid(v);
                g.concat(&[s, c, v])
            })),
        ];
        for (name, f) in cases {
            let e = input_error(&x, f);
            assert!(e < 1e-6, "{name}: {e}");
        }
    }

    #[test]
    fn fuse_gradients_match_finite_differences() {
        let c = rand_tensor(&[2, 3, 3], 6);
        let w = rand_tensor(&[2, 3, 3], 7);
        let m = rand_tensor(&[2, 3, 3], 8).map(|v| 0.5 + 0.4 * v);
        let (w1, m1) = (w.clone(), m.clone());
        let e = input_error(&c, move |g, v| {
            let wv = g.constant(w1.clone());
            let mv = g.constant(m1.clone());
            g.fuse(v, wv, mv)
        });
        assert!(e < 1e-6);
        let (c2, m2) = (c.clone(), m.clone());
        let e = input_error(&w, move |g, v| {
            let cv = g.constant(c2.clone());
            let mv = g.constant(m2.clone());
            g.fuse(cv, v, mv)
        });
        assert!(e < 1e-6);
        let e = input_error(&m, move |g, v| {
            let cv = g.constant(c.clone());
            let wv = g.constant(w.clone());
            g.fuse(cv, wv, v)
        });
        assert!(e < 1e-6);
    }

    #[test]
    fn spatial_gradients_match_finite_differences() {
        let x = rand_tensor(&[2, 4, 4], 9);
        let map = Arc::new(SpatialMap::<f64>::bilinear_resize((4, 4), (8, 8)));
        let e = input_error(&x, move |g, v| g.spatial(v, map.clone()));
        assert!(e < 1e-6);
        let warp = Arc::new(SpatialMap::<f64>::sample_at((4, 4), (4, 4), |x, y| (0.8 * x + 0.4, 1.1 * y - 0.2)));
        let e = input_error(&x, move |g, v| g.spatial(v, warp.clone()));
        assert!(e < 1e-6);
    }

    #[test]
    fn fuse_at_gate_extremes_returns_one_stream_exactly() {
        let store = ParamStore::<f32>::new();
        let mut g = Graph::new(&store);
        let c = g.constant(rand_tensor(&[2, 3, 3], 10).cast());
        let w = g.constant(rand_tensor(&[2, 3, 3], 11).cast());
        let ones = g.constant(Tensor::full(&[2, 3, 3], 1.0));
        let zeros = g.constant(Tensor::zeros(&[2, 3, 3]));
        let a = g.fuse(c, w, ones);
        let b = g.fuse(c, w, zeros);
        assert_eq!(g.value(a).data(), g.value(w).data());
        assert_eq!(g.value(b).data(), g.value(c).data());
    }

    #[test]
    fn param_nodes_are_shared_and_frozen_params_get_no_gradient() {
        let mut store = ParamStore::<f64>::new();
        let a = store.add("a", Tensor::from_vec(&[2], vec![1.0, 2.0]));
        let b = store.add("b", Tensor::from_vec(&[2], vec![3.0, 4.0]));
        store.set_frozen(b, true);
        let mut g = Graph::new(&store);
        let va = g.param(a);
        assert_eq!(g.param(a), va);
        let vb = g.param(b);
        let m = g.mul(va, vb);
        let s = g.add(m, va);
        let l = g.sum(s);
        let grads = g.backward(l);
        let got: Vec<_> = grads.params().map(|(id, t)| (id, t.data().to_vec())).collect();
        assert_eq!(got, vec![(a, vec![4.0, 5.0])]);
    }
}
