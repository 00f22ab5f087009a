//! Reverse-mode automatic differentiation over `f64` tensors.
//!
//! A [`Graph`] is a tape: every operation computes its value eagerly
//! and records what it needs to push gradients back later. The op set
//! is exactly what the networks in this crate use: 2-d convolution,
//! group normalization, SiLU and clamped sigmoid activations, linear
//! layers, channel concatenation, nearest-neighbor upsampling and a few
//! elementwise combinators. [`Graph::backward`] walks the tape once and
//! returns a gradient for every node that transitively depends on a
//! parameter.
//!
//! [`Graph::detach`] copies a node's value into a fresh leaf, severing
//! the tape. Gradients flowing into the copy stop there; this is the
//! mechanism that keeps one network's loss from training another.
//!
//! Shape errors are programming mistakes, not runtime conditions, so
//! the builders assert instead of returning errors.

pub type NodeId = usize;

/// Dense row-major tensor. Shapes are plain `Vec<usize>`; the ops
/// interpret them (images are `[channels, height, width]`).
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; numel],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape {shape:?} does not match {} elements",
            data.len()
        );
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Silu(NodeId),
    SigmoidClamped(NodeId, f64),
    Linear {
        x: NodeId,
        w: NodeId,
        b: NodeId,
    },
    Conv2d {
        x: NodeId,
        w: NodeId,
        b: NodeId,
        stride: usize,
        pad: usize,
    },
    GroupNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        groups: usize,
        eps: f64,
    },
    UpsampleNearest(NodeId),
    ConcatCh(NodeId, NodeId),
    AddChannelBias {
        x: NodeId,
        v: NodeId,
    },
    Mean(NodeId),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Output indices along one spatial axis whose receptive field stays
/// inside the input, for a given kernel offset.
fn valid_out_range(
    k_off: usize,
    pad: usize,
    stride: usize,
    in_size: usize,
    out_size: usize,
) -> std::ops::Range<usize> {
    // in_index = out * stride + k_off - pad must land in [0, in_size).
    let lo = if k_off >= pad {
        0
    } else {
        (pad - k_off).div_ceil(stride)
    };
    let hi_in = in_size + pad;
    if hi_in <= k_off {
        return 0..0;
    }
    let hi = ((hi_in - k_off - 1) / stride + 1).min(out_size);
    lo.min(hi)..hi
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id].value
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        self.nodes.len() - 1
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id].needs_grad
    }

    /// Constant leaf; gradients never flow into it.
    pub fn input(&mut self, t: Tensor) -> NodeId {
        self.push(t, Op::Leaf, false)
    }

    /// Trainable leaf; `backward` produces a gradient for it.
    pub fn param(&mut self, t: Tensor) -> NodeId {
        self.push(t, Op::Leaf, true)
    }

    /// Copies a node's current value into a fresh constant leaf. The
    /// copy carries no history, so no gradient can cross it.
    pub fn detach(&mut self, id: NodeId) -> NodeId {
        let v = self.nodes[id].value.clone();
        self.input(v)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.nodes[a].value.shape, self.nodes[b].value.shape);
        let data = self.nodes[a]
            .value
            .data
            .iter()
            .zip(&self.nodes[b].value.data)
            .map(|(x, y)| x + y)
            .collect();
        let t = Tensor::from_vec(&self.nodes[a].value.shape.clone(), data);
        let ng = self.needs(a) || self.needs(b);
        self.push(t, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.nodes[a].value.shape, self.nodes[b].value.shape);
        let data = self.nodes[a]
            .value
            .data
            .iter()
            .zip(&self.nodes[b].value.data)
            .map(|(x, y)| x - y)
            .collect();
        let t = Tensor::from_vec(&self.nodes[a].value.shape.clone(), data);
        let ng = self.needs(a) || self.needs(b);
        self.push(t, Op::Sub(a, b), ng)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.nodes[a].value.shape, self.nodes[b].value.shape);
        let data = self.nodes[a]
            .value
            .data
            .iter()
            .zip(&self.nodes[b].value.data)
            .map(|(x, y)| x * y)
            .collect();
        let t = Tensor::from_vec(&self.nodes[a].value.shape.clone(), data);
        let ng = self.needs(a) || self.needs(b);
        self.push(t, Op::Mul(a, b), ng)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let data = self.nodes[a].value.data.iter().map(|x| x * c).collect();
        let t = Tensor::from_vec(&self.nodes[a].value.shape.clone(), data);
        let ng = self.needs(a);
        self.push(t, Op::Scale(a, c), ng)
    }

    pub fn silu(&mut self, a: NodeId) -> NodeId {
        let data = self.nodes[a]
            .value
            .data
            .iter()
            .map(|&x| x * sigmoid(x))
            .collect();
        let t = Tensor::from_vec(&self.nodes[a].value.shape.clone(), data);
        let ng = self.needs(a);
        self.push(t, Op::Silu(a), ng)
    }

    /// Sigmoid with the logit clamped to [-clamp, clamp] first, so the
    /// output stays strictly inside (0, 1) in f64.
    pub fn sigmoid_clamped(&mut self, a: NodeId, clamp: f64) -> NodeId {
        assert!(clamp > 0.0);
        let data = self.nodes[a]
            .value
            .data
            .iter()
            .map(|&x| sigmoid(x.clamp(-clamp, clamp)))
            .collect();
        let t = Tensor::from_vec(&self.nodes[a].value.shape.clone(), data);
        let ng = self.needs(a);
        self.push(t, Op::SigmoidClamped(a, clamp), ng)
    }

    /// `w` is `[out, in]`, `x` and `b` are vectors.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> NodeId {
        let xs = &self.nodes[x].value;
        let ws = &self.nodes[w].value;
        let bs = &self.nodes[b].value;
        assert_eq!(ws.shape.len(), 2);
        assert_eq!(xs.shape, vec![ws.shape[1]]);
        assert_eq!(bs.shape, vec![ws.shape[0]]);
        let (out_dim, in_dim) = (ws.shape[0], ws.shape[1]);
        let mut data = vec![0.0; out_dim];
        for o in 0..out_dim {
            let row = &ws.data[o * in_dim..(o + 1) * in_dim];
            let mut acc = bs.data[o];
            for (wv, xv) in row.iter().zip(&xs.data) {
                acc += wv * xv;
            }
            data[o] = acc;
        }
        let t = Tensor::from_vec(&[out_dim], data);
        let ng = self.needs(x) || self.needs(w) || self.needs(b);
        self.push(t, Op::Linear { x, w, b }, ng)
    }

    /// `x` is `[C, H, W]`, `w` is `[O, C, kh, kw]`, `b` is `[O]`.
    /// Padding is symmetric zero padding.
    pub fn conv2d(&mut self, x: NodeId, w: NodeId, b: NodeId, stride: usize, pad: usize) -> NodeId {
        assert!(stride >= 1);
        let value = {
            let xs = &self.nodes[x].value;
            let ws = &self.nodes[w].value;
            let bs = &self.nodes[b].value;
            assert_eq!(xs.shape.len(), 3, "conv input must be [C,H,W]");
            assert_eq!(ws.shape.len(), 4, "conv weight must be [O,C,kh,kw]");
            assert_eq!(xs.shape[0], ws.shape[1], "channel mismatch");
            assert_eq!(bs.shape, vec![ws.shape[0]]);
            conv2d_forward(xs, ws, bs, stride, pad)
        };
        let ng = self.needs(x) || self.needs(w) || self.needs(b);
        self.push(
            value,
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                pad,
            },
            ng,
        )
    }

    pub fn group_norm(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        groups: usize,
        eps: f64,
    ) -> NodeId {
        let value = {
            let xs = &self.nodes[x].value;
            let gs = &self.nodes[gamma].value;
            let bs = &self.nodes[beta].value;
            assert_eq!(xs.shape.len(), 3);
            let c = xs.shape[0];
            assert_eq!(gs.shape, vec![c]);
            assert_eq!(bs.shape, vec![c]);
            assert!(groups >= 1 && c % groups == 0, "channels {c} not divisible by {groups} groups");
            group_norm_forward(xs, gs, bs, groups, eps)
        };
        let ng = self.needs(x) || self.needs(gamma) || self.needs(beta);
        self.push(
            value,
            Op::GroupNorm {
                x,
                gamma,
                beta,
                groups,
                eps,
            },
            ng,
        )
    }

    /// Nearest-neighbor upsampling by an exact factor of 2 in both
    /// spatial dimensions, with the output cropped to `out_h` x `out_w`
    /// (so odd encoder sizes round-trip through a stride-2 downsample).
    pub fn upsample_nearest(&mut self, x: NodeId, out_h: usize, out_w: usize) -> NodeId {
        let value = {
            let xs = &self.nodes[x].value;
            assert_eq!(xs.shape.len(), 3);
            let (c, h, w) = (xs.shape[0], xs.shape[1], xs.shape[2]);
            assert!(out_h <= 2 * h && out_h > 2 * (h - 1), "out_h {out_h} not reachable from {h}");
            assert!(out_w <= 2 * w && out_w > 2 * (w - 1), "out_w {out_w} not reachable from {w}");
            let mut data = vec![0.0; c * out_h * out_w];
            for ch in 0..c {
                for oy in 0..out_h {
                    let iy = oy / 2;
                    let src = &xs.data[(ch * h + iy) * w..(ch * h + iy + 1) * w];
                    let dst = &mut data[(ch * out_h + oy) * out_w..(ch * out_h + oy + 1) * out_w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        *d = src[ox / 2];
                    }
                }
            }
            Tensor::from_vec(&[c, out_h, out_w], data)
        };
        let ng = self.needs(x);
        self.push(value, Op::UpsampleNearest(x), ng)
    }

    pub fn concat_ch(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = {
            let av = &self.nodes[a].value;
            let bv = &self.nodes[b].value;
            assert_eq!(av.shape.len(), 3);
            assert_eq!(bv.shape.len(), 3);
            assert_eq!(av.shape[1..], bv.shape[1..], "spatial dims must match");
            let mut data = Vec::with_capacity(av.numel() + bv.numel());
            data.extend_from_slice(&av.data);
            data.extend_from_slice(&bv.data);
            Tensor::from_vec(
                &[av.shape[0] + bv.shape[0], av.shape[1], av.shape[2]],
                data,
            )
        };
        let ng = self.needs(a) || self.needs(b);
        self.push(value, Op::ConcatCh(a, b), ng)
    }

    /// Adds a per-channel scalar (`v` is `[C]`) to every spatial
    /// position of `x` (`[C, H, W]`).
    pub fn add_channel_bias(&mut self, x: NodeId, v: NodeId) -> NodeId {
        let value = {
            let xs = &self.nodes[x].value;
            let vs = &self.nodes[v].value;
            assert_eq!(xs.shape.len(), 3);
            assert_eq!(vs.shape, vec![xs.shape[0]]);
            let hw = xs.shape[1] * xs.shape[2];
            let mut data = xs.data.clone();
            for c in 0..xs.shape[0] {
                let bias = vs.data[c];
                for d in &mut data[c * hw..(c + 1) * hw] {
                    *d += bias;
                }
            }
            Tensor::from_vec(&xs.shape.clone(), data)
        };
        let ng = self.needs(x) || self.needs(v);
        self.push(value, Op::AddChannelBias { x, v }, ng)
    }

    /// Mean over all elements; the usual loss reduction.
    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let v = &self.nodes[a].value;
        let m = v.data.iter().sum::<f64>() / v.numel() as f64;
        let ng = self.needs(a);
        self.push(Tensor::scalar(m), Op::Mean(a), ng)
    }

    /// Runs the tape backwards from a scalar loss. Returns one gradient
    /// slot per node; nodes the loss does not depend on (or that no
    /// parameter feeds) stay `None`.
    pub fn backward(&self, loss: NodeId) -> Vec<Option<Tensor>> {
        assert_eq!(
            self.nodes[loss].value.numel(),
            1,
            "backward starts from a scalar"
        );
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss] = Some(Tensor::scalar(1.0));

        for id in (0..=loss).rev() {
            if grads[id].is_none() || !self.nodes[id].needs_grad {
                continue;
            }
            let gout = grads[id].take().unwrap();
            grads[id] = Some(gout);
            let gout = grads[id].as_ref().unwrap().clone();
            match &self.nodes[id].op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    self.acc(&mut grads, *a, &gout.data, &gout.shape);
                    self.acc(&mut grads, *b, &gout.data, &gout.shape);
                }
                Op::Sub(a, b) => {
                    self.acc(&mut grads, *a, &gout.data, &gout.shape);
                    if self.needs(*b) {
                        let neg: Vec<f64> = gout.data.iter().map(|g| -g).collect();
                        self.acc(&mut grads, *b, &neg, &gout.shape);
                    }
                }
                Op::Mul(a, b) => {
                    if self.needs(*a) {
                        let da: Vec<f64> = gout
                            .data
                            .iter()
                            .zip(&self.nodes[*b].value.data)
                            .map(|(g, bv)| g * bv)
                            .collect();
                        self.acc(&mut grads, *a, &da, &gout.shape);
                    }
                    if self.needs(*b) {
                        let db: Vec<f64> = gout
                            .data
                            .iter()
                            .zip(&self.nodes[*a].value.data)
                            .map(|(g, av)| g * av)
                            .collect();
                        self.acc(&mut grads, *b, &db, &gout.shape);
                    }
                }
                Op::Scale(a, c) => {
                    if self.needs(*a) {
                        let da: Vec<f64> = gout.data.iter().map(|g| g * c).collect();
                        self.acc(&mut grads, *a, &da, &gout.shape);
                    }
                }
                Op::Silu(a) => {
                    if self.needs(*a) {
                        let da: Vec<f64> = gout
                            .data
                            .iter()
                            .zip(&self.nodes[*a].value.data)
                            .map(|(g, &x)| {
                                let s = sigmoid(x);
                                g * (s + x * s * (1.0 - s))
                            })
                            .collect();
                        self.acc(&mut grads, *a, &da, &gout.shape);
                    }
                }
                Op::SigmoidClamped(a, clamp) => {
                    if self.needs(*a) {
                        let da: Vec<f64> = gout
                            .data
                            .iter()
                            .zip(&self.nodes[*a].value.data)
                            .zip(&self.nodes[id].value.data)
                            .map(|((g, &x), &y)| {
                                if x.abs() >= *clamp {
                                    0.0
                                } else {
                                    g * y * (1.0 - y)
                                }
                            })
                            .collect();
                        self.acc(&mut grads, *a, &da, &gout.shape);
                    }
                }
                Op::Linear { x, w, b } => {
                    let ws = &self.nodes[*w].value;
                    let xs = &self.nodes[*x].value;
                    let (out_dim, in_dim) = (ws.shape[0], ws.shape[1]);
                    if self.needs(*x) {
                        let mut dx = vec![0.0; in_dim];
                        for o in 0..out_dim {
                            let g = gout.data[o];
                            let row = &ws.data[o * in_dim..(o + 1) * in_dim];
                            for (d, wv) in dx.iter_mut().zip(row) {
                                *d += g * wv;
                            }
                        }
                        self.acc(&mut grads, *x, &dx, &xs.shape);
                    }
                    if self.needs(*w) {
                        let mut dw = vec![0.0; out_dim * in_dim];
                        for o in 0..out_dim {
                            let g = gout.data[o];
                            let row = &mut dw[o * in_dim..(o + 1) * in_dim];
                            for (d, xv) in row.iter_mut().zip(&xs.data) {
                                *d += g * xv;
                            }
                        }
                        self.acc(&mut grads, *w, &dw, &ws.shape);
                    }
                    if self.needs(*b) {
                        self.acc(&mut grads, *b, &gout.data, &[out_dim]);
                    }
                }
                Op::Conv2d {
                    x,
                    w,
                    b,
                    stride,
                    pad,
                } => {
                    let (dx, dw, db) = conv2d_backward(
                        &self.nodes[*x].value,
                        &self.nodes[*w].value,
                        &gout,
                        *stride,
                        *pad,
                        self.needs(*x),
                        self.needs(*w),
                        self.needs(*b),
                    );
                    if let Some(dx) = dx {
                        self.acc(&mut grads, *x, &dx.data, &dx.shape);
                    }
                    if let Some(dw) = dw {
                        self.acc(&mut grads, *w, &dw.data, &dw.shape);
                    }
                    if let Some(db) = db {
                        self.acc(&mut grads, *b, &db.data, &db.shape);
                    }
                }
                Op::GroupNorm {
                    x,
                    gamma,
                    beta,
                    groups,
                    eps,
                } => {
                    let (dx, dgamma, dbeta) = group_norm_backward(
                        &self.nodes[*x].value,
                        &self.nodes[*gamma].value,
                        &gout,
                        *groups,
                        *eps,
                        self.needs(*x),
                    );
                    if self.needs(*x) {
                        let dx = dx.expect("requested");
                        self.acc(&mut grads, *x, &dx.data, &dx.shape);
                    }
                    if self.needs(*gamma) {
                        self.acc(&mut grads, *gamma, &dgamma.data, &dgamma.shape);
                    }
                    if self.needs(*beta) {
                        self.acc(&mut grads, *beta, &dbeta.data, &dbeta.shape);
                    }
                }
                Op::UpsampleNearest(x) => {
                    if self.needs(*x) {
                        let xs = &self.nodes[*x].value;
                        let (c, h, w) = (xs.shape[0], xs.shape[1], xs.shape[2]);
                        let (out_h, out_w) = (gout.shape[1], gout.shape[2]);
                        let mut dx = vec![0.0; xs.numel()];
                        for ch in 0..c {
                            for oy in 0..out_h {
                                let iy = oy / 2;
                                let grow =
                                    &gout.data[(ch * out_h + oy) * out_w..(ch * out_h + oy + 1) * out_w];
                                let drow = &mut dx[(ch * h + iy) * w..(ch * h + iy + 1) * w];
                                for (ox, g) in grow.iter().enumerate() {
                                    drow[ox / 2] += g;
                                }
                            }
                        }
                        self.acc(&mut grads, *x, &dx, &xs.shape);
                    }
                }
                Op::ConcatCh(a, b) => {
                    let an = self.nodes[*a].value.numel();
                    if self.needs(*a) {
                        self.acc(
                            &mut grads,
                            *a,
                            &gout.data[..an],
                            &self.nodes[*a].value.shape,
                        );
                    }
                    if self.needs(*b) {
                        self.acc(
                            &mut grads,
                            *b,
                            &gout.data[an..],
                            &self.nodes[*b].value.shape,
                        );
                    }
                }
                Op::AddChannelBias { x, v } => {
                    if self.needs(*x) {
                        self.acc(&mut grads, *x, &gout.data, &gout.shape);
                    }
                    if self.needs(*v) {
                        let c = self.nodes[*v].value.shape[0];
                        let hw = gout.shape[1] * gout.shape[2];
                        let mut dv = vec![0.0; c];
                        for ch in 0..c {
                            dv[ch] = gout.data[ch * hw..(ch + 1) * hw].iter().sum();
                        }
                        self.acc(&mut grads, *v, &dv, &[c]);
                    }
                }
                Op::Mean(a) => {
                    if self.needs(*a) {
                        let n = self.nodes[*a].value.numel();
                        let g = gout.data[0] / n as f64;
                        let da = vec![g; n];
                        self.acc(&mut grads, *a, &da, &self.nodes[*a].value.shape);
                    }
                }
            }
        }
        grads
    }

    fn acc(&self, grads: &mut [Option<Tensor>], id: NodeId, contrib: &[f64], shape: &[usize]) {
        if !self.nodes[id].needs_grad {
            return;
        }
        match &mut grads[id] {
            Some(g) => {
                debug_assert_eq!(g.shape, shape);
                for (gd, c) in g.data.iter_mut().zip(contrib) {
                    *gd += c;
                }
            }
            slot => {
                *slot = Some(Tensor::from_vec(shape, contrib.to_vec()));
            }
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn conv2d_forward(xs: &Tensor, ws: &Tensor, bs: &Tensor, stride: usize, pad: usize) -> Tensor {
    let (c_in, h, w) = (xs.shape[0], xs.shape[1], xs.shape[2]);
    let (c_out, kh, kw) = (ws.shape[0], ws.shape[2], ws.shape[3]);
    assert!(h + 2 * pad >= kh && w + 2 * pad >= kw, "kernel larger than padded input");
    let out_h = (h + 2 * pad - kh) / stride + 1;
    let out_w = (w + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; c_out * out_h * out_w];
    for o in 0..c_out {
        let bias = bs.data[o];
        for v in &mut out[o * out_h * out_w..(o + 1) * out_h * out_w] {
            *v = bias;
        }
        for c in 0..c_in {
            for ky in 0..kh {
                let ys = valid_out_range(ky, pad, stride, h, out_h);
                for kx in 0..kw {
                    let wv = ws.data[((o * c_in + c) * kh + ky) * kw + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    let xs_range = valid_out_range(kx, pad, stride, w, out_w);
                    for oy in ys.clone() {
                        let iy = oy * stride + ky - pad;
                        let xrow = &xs.data[(c * h + iy) * w..(c * h + iy + 1) * w];
                        let orow = &mut out[(o * out_h + oy) * out_w..(o * out_h + oy + 1) * out_w];
                        for ox in xs_range.clone() {
                            let ix = ox * stride + kx - pad;
                            orow[ox] += wv * xrow[ix];
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[c_out, out_h, out_w], out)
}

#[allow(clippy::too_many_arguments)]
fn conv2d_backward(
    xs: &Tensor,
    ws: &Tensor,
    gout: &Tensor,
    stride: usize,
    pad: usize,
    need_x: bool,
    need_w: bool,
    need_b: bool,
) -> (Option<Tensor>, Option<Tensor>, Option<Tensor>) {
    let (c_in, h, w) = (xs.shape[0], xs.shape[1], xs.shape[2]);
    let (c_out, kh, kw) = (ws.shape[0], ws.shape[2], ws.shape[3]);
    let (out_h, out_w) = (gout.shape[1], gout.shape[2]);

    let db = need_b.then(|| {
        let mut db = vec![0.0; c_out];
        for o in 0..c_out {
            db[o] = gout.data[o * out_h * out_w..(o + 1) * out_h * out_w]
                .iter()
                .sum();
        }
        Tensor::from_vec(&[c_out], db)
    });

    let mut dx = need_x.then(|| vec![0.0; xs.numel()]);
    let mut dw = need_w.then(|| vec![0.0; ws.numel()]);

    for o in 0..c_out {
        for c in 0..c_in {
            for ky in 0..kh {
                let ys = valid_out_range(ky, pad, stride, h, out_h);
                for kx in 0..kw {
                    let xs_range = valid_out_range(kx, pad, stride, w, out_w);
                    let widx = ((o * c_in + c) * kh + ky) * kw + kx;
                    let wv = ws.data[widx];
                    let mut dw_acc = 0.0;
                    for oy in ys.clone() {
                        let iy = oy * stride + ky - pad;
                        let grow =
                            &gout.data[(o * out_h + oy) * out_w..(o * out_h + oy + 1) * out_w];
                        let xbase = (c * h + iy) * w;
                        if let Some(dx) = dx.as_mut() {
                            let drow = &mut dx[xbase..xbase + w];
                            for ox in xs_range.clone() {
                                let ix = ox * stride + kx - pad;
                                drow[ix] += wv * grow[ox];
                            }
                        }
                        if dw.is_some() {
                            let xrow = &xs.data[xbase..xbase + w];
                            for ox in xs_range.clone() {
                                let ix = ox * stride + kx - pad;
                                dw_acc += grow[ox] * xrow[ix];
                            }
                        }
                    }
                    if let Some(dw) = dw.as_mut() {
                        dw[widx] = dw_acc;
                    }
                }
            }
        }
    }

    (
        dx.map(|d| Tensor::from_vec(&xs.shape, d)),
        dw.map(|d| Tensor::from_vec(&ws.shape, d)),
        db,
    )
}

fn group_norm_forward(xs: &Tensor, gamma: &Tensor, beta: &Tensor, groups: usize, eps: f64) -> Tensor {
    let (c, h, w) = (xs.shape[0], xs.shape[1], xs.shape[2]);
    let gs = c / groups;
    let hw = h * w;
    let n = (gs * hw) as f64;
    let mut out = vec![0.0; xs.numel()];
    for g in 0..groups {
        let lo = g * gs * hw;
        let hi = (g + 1) * gs * hw;
        let slice = &xs.data[lo..hi];
        let mean = slice.iter().sum::<f64>() / n;
        let var = slice.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv = 1.0 / (var + eps).sqrt();
        for ci in 0..gs {
            let ch = g * gs + ci;
            let ga = gamma.data[ch];
            let be = beta.data[ch];
            for i in 0..hw {
                let idx = ch * hw + i;
                out[idx] = ga * (xs.data[idx] - mean) * inv + be;
            }
        }
    }
    Tensor::from_vec(&xs.shape, out)
}

fn group_norm_backward(
    xs: &Tensor,
    gamma: &Tensor,
    gout: &Tensor,
    groups: usize,
    eps: f64,
    need_x: bool,
) -> (Option<Tensor>, Tensor, Tensor) {
    let (c, h, w) = (xs.shape[0], xs.shape[1], xs.shape[2]);
    let gs = c / groups;
    let hw = h * w;
    let n = (gs * hw) as f64;
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    let mut dx = need_x.then(|| vec![0.0; xs.numel()]);

    for g in 0..groups {
        let lo = g * gs * hw;
        let hi = (g + 1) * gs * hw;
        let slice = &xs.data[lo..hi];
        let mean = slice.iter().sum::<f64>() / n;
        let var = slice.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv = 1.0 / (var + eps).sqrt();

        // dxh = gout * gamma, plus the two mean corrections.
        let mut sum_dxh = 0.0;
        let mut sum_dxh_xh = 0.0;
        for ci in 0..gs {
            let ch = g * gs + ci;
            let ga = gamma.data[ch];
            for i in 0..hw {
                let idx = ch * hw + i;
                let xh = (xs.data[idx] - mean) * inv;
                let go = gout.data[idx];
                dgamma[ch] += go * xh;
                dbeta[ch] += go;
                let dxh = go * ga;
                sum_dxh += dxh;
                sum_dxh_xh += dxh * xh;
            }
        }
        if let Some(dx) = dx.as_mut() {
            let mean_dxh = sum_dxh / n;
            let mean_dxh_xh = sum_dxh_xh / n;
            for ci in 0..gs {
                let ch = g * gs + ci;
                let ga = gamma.data[ch];
                for i in 0..hw {
                    let idx = ch * hw + i;
                    let xh = (xs.data[idx] - mean) * inv;
                    let dxh = gout.data[idx] * ga;
                    dx[idx] = inv * (dxh - mean_dxh - xh * mean_dxh_xh);
                }
            }
        }
    }
    (
        dx.map(|d| Tensor::from_vec(&xs.shape, d)),
        Tensor::from_vec(&[c], dgamma),
        Tensor::from_vec(&[c], dbeta),
    )
}
