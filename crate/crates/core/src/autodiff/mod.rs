//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every operation in construction order. Leaves either
//! borrow an existing tensor (parameters, fixed noise) or own one. Calling
//! [`Graph::backward`] on a scalar walks the tape in exact reverse order and
//! returns the gradient of every leaf that asked for one; the caller decides
//! where to accumulate them.
//!
//! Inputs that carry no gradient (the noise pyramid, targets) are never
//! differentiated through, so the first layer of a network fed only by
//! constants skips its input-gradient work entirely.

mod conv;
mod norm;
mod resample;

use std::ops::Deref;

use crate::buffer;
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

pub const LAYER_NORM_EPS: f64 = norm::EPS;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Value<'a> {
    Owned(Tensor),
    Borrowed(&'a Tensor),
}

impl Deref for Value<'_> {
    type Target = Tensor;
    fn deref(&self) -> &Tensor {
        match self {
            Value::Owned(t) => t,
            Value::Borrowed(t) => t,
        }
    }
}

enum Op {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
        kernel: usize,
        groups: usize,
    },
    LayerNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        saved: norm::NormSaved,
    },
    Gelu {
        input: Var,
        cdf: Vec<f64>,
    },
    Sigmoid {
        input: Var,
    },
    ClampedExp {
        input: Var,
        lo: f64,
        hi: f64,
    },
    GaussianSample {
        stats: Var,
        noise: Var,
        lo: f64,
        hi: f64,
        sigma: Vec<f64>,
    },
    Upsample {
        input: Var,
    },
    Concat {
        inputs: Vec<Var>,
    },
    SliceChannels {
        input: Var,
        start: usize,
    },
    Add {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Mse {
        a: Var,
        b: Var,
    },
}

impl Op {
    fn tag(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Gelu { .. } => "gelu",
            Op::Sigmoid { .. } => "sigmoid",
            Op::ClampedExp { .. } => "clamped_exp",
            Op::GaussianSample { .. } => "gaussian_sample",
            Op::Upsample { .. } => "bilinear_upsample",
            Op::Concat { .. } => "concat_channels",
            Op::SliceChannels { .. } => "slice_channels",
            Op::Add { .. } => "add",
            Op::Mul { .. } => "mul",
            Op::Mse { .. } => "mse_loss",
        }
    }
}

struct Node<'a> {
    op: Op,
    value: Value<'a>,
    needs_grad: bool,
}

/// Recorded computation. Single-threaded; build a fresh one per step.
pub struct Graph<'a> {
    nodes: Vec<Node<'a>>,
}

/// Leaf gradients produced by [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    /// Adds the gradient of `var` into `target.grad`. Targets that do not
    /// require gradients are left alone; a leaf unreachable from the loss
    /// contributes nothing.
    pub fn accumulate_into(&self, var: Var, target: &mut Tensor) -> Result<()> {
        let Some(g) = self.get(var) else {
            return Ok(());
        };
        let Some(dst) = target.grad_mut() else {
            return Ok(());
        };
        if dst.len() != g.len() {
            return Err(Error::contract(format!(
                "gradient of length {} cannot accumulate into tensor of length {}",
                g.len(),
                dst.len()
            )));
        }
        for (d, s) in dst.iter_mut().zip(g) {
            *d += s;
        }
        Ok(())
    }
}

fn add_into(slot: &mut Option<Vec<f64>>, g: Vec<f64>) {
    match slot {
        Some(acc) => {
            acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
            buffer::give(g);
        }
        None => *slot = Some(g),
    }
}

fn add_into_slice(slot: &mut Option<Vec<f64>>, len: usize, offset: usize, g: &[f64]) {
    let acc = slot.get_or_insert_with(|| buffer::zeros(len));
    acc[offset..offset + g.len()]
        .iter_mut()
        .zip(g)
        .for_each(|(a, b)| *a += b);
}

fn gelu_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2))
}

fn gaussian_pdf(x: f64) -> f64 {
    libm::exp(-0.5 * x * x) * (0.5 * std::f64::consts::FRAC_2_SQRT_PI * std::f64::consts::FRAC_1_SQRT_2)
}

impl Default for Graph<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a> Graph<'a> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn op_name(&self, var: Var) -> &'static str {
        self.nodes[var.0].op.tag()
    }

    fn shape(&self, var: Var) -> Shape {
        self.value(var).shape()
    }

    fn needs(&self, var: Var) -> bool {
        self.nodes[var.0].needs_grad
    }

    fn push(&mut self, op: Op, value: Tensor, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.needs(*v));
        self.nodes.push(Node {
            op,
            value: Value::Owned(value),
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf borrowing `tensor`; it is differentiated iff `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: &'a Tensor) -> Var {
        self.nodes.push(Node {
            op: Op::Leaf,
            needs_grad: tensor.requires_grad(),
            value: Value::Borrowed(tensor),
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf owning `tensor`.
    pub fn leaf_owned(&mut self, tensor: Tensor) -> Var {
        self.nodes.push(Node {
            op: Op::Leaf,
            needs_grad: tensor.requires_grad(),
            value: Value::Owned(tensor),
        });
        Var(self.nodes.len() - 1)
    }

    /// Stride-1 convolution with edge-replicated same padding.
    ///
    /// `weight` is `[1, out, in / groups, kernel²]` and `bias` is `[1, out, 1, 1]`.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, kernel: usize, groups: usize) -> Result<Var> {
        let xs = self.shape(input);
        let ws = self.shape(weight);
        let bs = self.shape(bias);
        if !matches!(kernel, 1 | 3 | 7) {
            return Err(Error::contract(format!("kernel must be 1, 3 or 7, got {kernel}")));
        }
        if groups == 0 || !xs.c.is_multiple_of(groups) || !ws.c.is_multiple_of(groups) {
            return Err(Error::contract(format!(
                "groups {groups} must divide in ({}) and out ({}) channels",
                xs.c, ws.c
            )));
        }
        if ws.h != xs.c / groups || ws.w != kernel * kernel {
            return Err(Error::contract(format!(
                "weight {ws} does not match input {xs} with kernel {kernel} and {groups} groups"
            )));
        }
        if bs.numel() != ws.c {
            return Err(Error::contract(format!(
                "bias {bs} does not match {} output channels",
                ws.c
            )));
        }
        let geom = conv::ConvGeom {
            cin: xs.c,
            cout: ws.c,
            k: kernel,
            groups,
            h: xs.h,
            w: xs.w,
        };
        let out = conv::forward(self.value(input), self.value(weight), self.value(bias), geom);
        Ok(self.push(
            Op::Conv2d {
                input,
                weight,
                bias,
                kernel,
                groups,
            },
            out,
            &[input, weight, bias],
        ))
    }

    /// Per-position normalization over channels, then per-channel affine.
    pub fn layer_norm(&mut self, input: Var, gamma: Var, beta: Var) -> Result<Var> {
        let xs = self.shape(input);
        if self.shape(gamma).numel() != xs.c || self.shape(beta).numel() != xs.c {
            return Err(Error::contract(format!(
                "layer_norm affine must have {} entries per tensor",
                xs.c
            )));
        }
        let (y, saved) = norm::forward(
            self.value(input).data(),
            xs.c,
            xs.plane(),
            self.value(gamma).data(),
            self.value(beta).data(),
        );
        let out = Tensor::from_data(xs, y)?;
        Ok(self.push(
            Op::LayerNorm {
                input,
                gamma,
                beta,
                saved,
            },
            out,
            &[input, gamma, beta],
        ))
    }

    /// Exact GELU, `x * Φ(x)`.
    pub fn gelu(&mut self, input: Var) -> Var {
        let x = self.value(input);
        let cdf = buffer::map(x.data(), gelu_cdf);
        let y = buffer::zip_map(x.data(), &cdf, |v, c| v * c);
        let out = Tensor::from_pooled(x.shape(), y);
        self.push(Op::Gelu { input, cdf }, out, &[input])
    }

    pub fn sigmoid(&mut self, input: Var) -> Var {
        let x = self.value(input);
        let y = buffer::map(x.data(), |v| 1.0 / (1.0 + libm::exp(-v)));
        let out = Tensor::from_pooled(x.shape(), y);
        self.push(Op::Sigmoid { input }, out, &[input])
    }

    /// `exp(clamp(x, lo, hi))`; the gradient is zero where the clamp is active.
    pub fn clamped_exp(&mut self, input: Var, lo: f64, hi: f64) -> Var {
        let x = self.value(input);
        let y = buffer::map(x.data(), |v| libm::exp(v.clamp(lo, hi)));
        let out = Tensor::from_pooled(x.shape(), y);
        self.push(Op::ClampedExp { input, lo, hi }, out, &[input])
    }

    /// `mu + exp(clamp(s, lo, hi)) * noise`, where `stats` stacks `mu` over `s`
    /// along channels and `noise` has half as many channels.
    pub fn gaussian_sample(&mut self, stats: Var, noise: Var, lo: f64, hi: f64) -> Result<Var> {
        let (ss, zs) = (self.shape(stats), self.shape(noise));
        if !ss.same_spatial(&zs) || ss.c != 2 * zs.c {
            return Err(Error::contract(format!(
                "gaussian_sample stats {ss} do not fit noise {zs}"
            )));
        }
        let n = zs.numel();
        let st = self.value(stats).data();
        let sigma = buffer::map(&st[n..], |v| libm::exp(v.clamp(lo, hi)));
        let mut y = buffer::take(n);
        for (((o, m), s), z) in y.iter_mut().zip(&st[..n]).zip(&sigma).zip(self.value(noise).data()) {
            *o = m + s * z;
        }
        let out = Tensor::from_pooled(zs, y);
        Ok(self.push(
            Op::GaussianSample {
                stats,
                noise,
                lo,
                hi,
                sigma,
            },
            out,
            &[stats, noise],
        ))
    }

    /// Bilinear resize with half-pixel centers and edge clamping.
    pub fn bilinear_upsample(&mut self, input: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let xs = self.shape(input);
        if out_h == 0 || out_w == 0 {
            return Err(Error::contract("bilinear_upsample to a zero-size output"));
        }
        if out_h < xs.h || out_w < xs.w {
            return Err(Error::contract(format!(
                "bilinear_upsample cannot shrink {xs} to {out_h}x{out_w}"
            )));
        }
        let y = resample::forward(self.value(input).data(), (xs.c, xs.h, xs.w), (out_h, out_w));
        let out = Tensor::from_data(Shape::new(xs.c, out_h, out_w), y)?;
        Ok(self.push(Op::Upsample { input }, out, &[input]))
    }

    pub fn concat_channels(&mut self, inputs: &[Var]) -> Result<Var> {
        let first = inputs
            .first()
            .map(|v| self.shape(*v))
            .ok_or_else(|| Error::contract("concat_channels of no tensors"))?;
        let mut channels = 0;
        for &v in inputs {
            let s = self.shape(v);
            if !s.same_spatial(&first) {
                return Err(Error::contract(format!(
                    "concat_channels spatial mismatch: {first} vs {s}"
                )));
            }
            channels += s.c;
        }
        let mut data = buffer::take(channels * first.plane());
        let mut offset = 0;
        for &v in inputs {
            let src = self.value(v).data();
            data[offset..offset + src.len()].copy_from_slice(src);
            offset += src.len();
        }
        let out = Tensor::from_data(first.with_channels(channels), data)?;
        Ok(self.push(
            Op::Concat {
                inputs: inputs.to_vec(),
            },
            out,
            inputs,
        ))
    }

    /// Channels `[start, start + len)` of `input`.
    pub fn slice_channels(&mut self, input: Var, start: usize, len: usize) -> Result<Var> {
        let xs = self.shape(input);
        if start + len > xs.c || len == 0 {
            return Err(Error::contract(format!(
                "slice_channels [{start}, {}) out of range for {xs}",
                start + len
            )));
        }
        let p = xs.plane();
        let data = buffer::copy_of(&self.value(input).data()[start * p..(start + len) * p]);
        let out = Tensor::from_data(xs.with_channels(len), data)?;
        Ok(self.push(Op::SliceChannels { input, start }, out, &[input]))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<Shape> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::contract(format!("{what}: shape mismatch {sa} vs {sb}")));
        }
        Ok(sa)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let s = self.same_shape(a, b, "add")?;
        let y = buffer::zip_map(self.value(a).data(), self.value(b).data(), |x, y| x + y);
        let out = Tensor::from_data(s, y)?;
        Ok(self.push(Op::Add { a, b }, out, &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let s = self.same_shape(a, b, "mul")?;
        let y = buffer::zip_map(self.value(a).data(), self.value(b).data(), |x, y| x * y);
        let out = Tensor::from_data(s, y)?;
        Ok(self.push(Op::Mul { a, b }, out, &[a, b]))
    }

    /// Mean of squared differences, as a `[1, 1, 1, 1]` scalar.
    pub fn mse_loss(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mse_loss")?;
        let mse = mse(self.value(a).data(), self.value(b).data());
        let out = Tensor::from_data(Shape::new(1, 1, 1), vec![mse])?;
        Ok(self.push(Op::Mse { a, b }, out, &[a, b]))
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar, got {}",
                self.shape(loss)
            )));
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..n).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backward_node(node, &g, &mut grads);
            buffer::give(g);
        }

        for (idx, node) in self.nodes.iter().enumerate() {
            if !matches!(node.op, Op::Leaf) || !node.needs_grad {
                if let Some(g) = grads[idx].take() {
                    buffer::give(g);
                }
            }
        }
        Ok(Gradients { grads })
    }

    fn backward_node(&self, node: &Node<'a>, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let y = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                weight,
                bias,
                kernel,
                groups,
            } => {
                let xs = self.shape(*input);
                let geom = conv::ConvGeom {
                    cin: xs.c,
                    cout: self.shape(*weight).c,
                    k: *kernel,
                    groups: *groups,
                    h: xs.h,
                    w: xs.w,
                };
                let cg = conv::backward(self.value(*input), self.value(*weight), g, geom, self.needs(*input));
                if let Some(gi) = cg.input {
                    add_into(&mut grads[input.0], gi);
                }
                if self.needs(*weight) {
                    add_into(&mut grads[weight.0], cg.weight);
                }
                if self.needs(*bias) {
                    add_into(&mut grads[bias.0], cg.bias);
                }
            }
            Op::LayerNorm {
                input,
                gamma,
                beta,
                saved,
            } => {
                let xs = self.shape(*input);
                let ng = norm::backward(
                    g,
                    saved,
                    xs.c,
                    xs.plane(),
                    self.value(*gamma).data(),
                    self.needs(*input),
                );
                if let Some(gi) = ng.input {
                    add_into(&mut grads[input.0], gi);
                }
                if self.needs(*gamma) {
                    add_into(&mut grads[gamma.0], ng.gamma);
                }
                if self.needs(*beta) {
                    add_into(&mut grads[beta.0], ng.beta);
                }
            }
            Op::Gelu { input, cdf } => {
                let x = self.value(*input).data();
                let mut gi = buffer::take(g.len());
                for (((o, g), &x), c) in gi.iter_mut().zip(g).zip(x).zip(cdf) {
                    *o = g * (c + x * gaussian_pdf(x));
                }
                add_into(&mut grads[input.0], gi);
            }
            Op::Sigmoid { input } => {
                let gi = buffer::zip_map(g, y, |g, s| g * s * (1.0 - s));
                add_into(&mut grads[input.0], gi);
            }
            Op::ClampedExp { input, lo, hi } => {
                let x = self.value(*input).data();
                let (lo, hi) = (*lo, *hi);
                let mut gi = buffer::take(g.len());
                for (((o, g), e), &x) in gi.iter_mut().zip(g).zip(y).zip(x) {
                    *o = if x >= lo && x <= hi { g * e } else { 0.0 };
                }
                add_into(&mut grads[input.0], gi);
            }
            Op::GaussianSample {
                stats,
                noise,
                lo,
                hi,
                sigma,
            } => {
                let n = g.len();
                let z = self.value(*noise).data();
                if self.needs(*stats) {
                    let st = self.value(*stats).data();
                    let mut gs = buffer::take(2 * n);
                    gs[..n].copy_from_slice(g);
                    for i in 0..n {
                        let s = st[n + i];
                        gs[n + i] = if s >= *lo && s <= *hi {
                            g[i] * z[i] * sigma[i]
                        } else {
                            0.0
                        };
                    }
                    add_into(&mut grads[stats.0], gs);
                }
                if self.needs(*noise) {
                    add_into(&mut grads[noise.0], buffer::zip_map(g, sigma, |g, s| g * s));
                }
            }
            Op::Upsample { input } => {
                let xs = self.shape(*input);
                let os = node.value.shape();
                let gi = resample::backward(g, (xs.c, xs.h, xs.w), (os.h, os.w));
                add_into(&mut grads[input.0], gi);
            }
            Op::Concat { inputs } => {
                let mut offset = 0;
                for v in inputs {
                    let len = self.value(*v).len();
                    if self.needs(*v) {
                        add_into_slice(&mut grads[v.0], len, 0, &g[offset..offset + len]);
                    }
                    offset += len;
                }
            }
            Op::SliceChannels { input, start } => {
                let xs = self.shape(*input);
                add_into_slice(&mut grads[input.0], xs.numel(), start * xs.plane(), g);
            }
            Op::Add { a, b } => {
                for v in [a, b] {
                    if self.needs(*v) {
                        add_into(&mut grads[v.0], buffer::copy_of(g));
                    }
                }
            }
            Op::Mul { a, b } => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if self.needs(*a) {
                    add_into(&mut grads[a.0], buffer::zip_map(g, bv, |g, b| g * b));
                }
                if self.needs(*b) {
                    add_into(&mut grads[b.0], buffer::zip_map(g, av, |g, a| g * a));
                }
            }
            Op::Mse { a, b } => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                let scale = 2.0 * g[0] / av.len() as f64;
                if self.needs(*a) {
                    add_into(&mut grads[a.0], buffer::zip_map(av, bv, |x, y| scale * (x - y)));
                }
                if self.needs(*b) {
                    add_into(&mut grads[b.0], buffer::zip_map(av, bv, |x, y| scale * (y - x)));
                }
            }
        }
    }
}

/// Mean squared error between two equally long slices.
pub fn mse(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        acc += d * d;
    }
    acc / a.len() as f64
}


impl Drop for Op {
    fn drop(&mut self) {
        match self {
            Op::Gelu { cdf: v, .. } | Op::GaussianSample { sigma: v, .. } => buffer::give(std::mem::take(v)),
            _ => {}
        }
    }
}

impl Drop for Gradients {
    fn drop(&mut self) {
        for g in self.grads.drain(..).flatten() {
            buffer::give(g);
        }
    }
}
