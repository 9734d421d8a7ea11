//! Convolution kernels with stride 1 and edge-replicated "same" padding.
//!
//! Weights are stored as `[1, out, in / groups, k * k]`, biases as `[1, out, 1, 1]`.
//! Dense 1×1 convolutions take a pixel-tiled matrix-multiply path; everything
//! else goes through a padded-plane path.

use crate::buffer;
use crate::tensor::{Shape, Tensor};

const TILE: usize = 256;
const LANES: usize = 8;

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub groups: usize,
    pub h: usize,
    pub w: usize,
}

impl ConvGeom {
    fn cin_g(&self) -> usize {
        self.cin / self.groups
    }
    fn cout_g(&self) -> usize {
        self.cout / self.groups
    }
    fn pad(&self) -> usize {
        self.k / 2
    }
    fn dense_pointwise(&self) -> bool {
        self.k == 1 && self.groups == 1
    }
}

/// Copies one plane into a `(h + 2p) x (w + 2p)` buffer with replicated edges.
fn pad_plane(src: &[f64], h: usize, w: usize, p: usize, dst: &mut [f64]) {
    let pw = w + 2 * p;
    for py in 0..h + 2 * p {
        let sy = py.saturating_sub(p).min(h - 1);
        let row = &src[sy * w..(sy + 1) * w];
        let out = &mut dst[py * pw..(py + 1) * pw];
        out[..p].fill(row[0]);
        out[p..p + w].copy_from_slice(row);
        out[p + w..].fill(row[w - 1]);
    }
}

/// Adjoint of [`pad_plane`]: folds a padded gradient back onto the source
/// plane, accumulating replicated positions onto the edge pixel they came from.
fn unpad_plane_add(gpad: &[f64], h: usize, w: usize, p: usize, dst: &mut [f64]) {
    let pw = w + 2 * p;
    for py in 0..h + 2 * p {
        let sy = py.saturating_sub(p).min(h - 1);
        let row = &gpad[py * pw..(py + 1) * pw];
        let out = &mut dst[sy * w..(sy + 1) * w];
        for (o, g) in out.iter_mut().zip(&row[p..p + w]) {
            *o += g;
        }
        let left: f64 = row[..p].iter().sum();
        let right: f64 = row[p + w..].iter().sum();
        out[0] += left;
        out[w - 1] += right;
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; LANES];
    let mut ca = a.chunks_exact(LANES);
    let mut cb = b.chunks_exact(LANES);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for l in 0..LANES {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += x * y;
    }
    lane_sum(&acc) + tail
}

fn lane_sum(acc: &[f64; LANES]) -> f64 {
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]))
}

pub(crate) fn sum(a: &[f64]) -> f64 {
    let mut acc = [0.0; LANES];
    let mut ca = a.chunks_exact(LANES);
    for x in &mut ca {
        for l in 0..LANES {
            acc[l] += x[l];
        }
    }
    lane_sum(&acc) + ca.remainder().iter().sum::<f64>()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `out[o] = b[o] + sum_i w[o][i] * x[i]` over planes of `plane` pixels.
///
/// Each output pixel is accumulated as `((b + w0 x0) + w1 x1) + ...` whatever
/// path computes it, so the result does not depend on the blocking.
fn pointwise(x: &[f64], wt: &[f64], b: Option<&[f64]>, cin: usize, cout: usize, plane: usize, out: &mut [f64]) {
    let mut start = 0;
    while start < plane {
        let end = (start + TILE).min(plane);
        let mut o = 0;
        while o + 4 <= cout {
            pointwise_block::<4>(x, wt, b, cin, plane, o, start, end, out);
            o += 4;
        }
        while o < cout {
            pointwise_block::<1>(x, wt, b, cin, plane, o, start, end, out);
            o += 1;
        }
        start = end;
    }
}

#[allow(clippy::too_many_arguments)]
#[inline(always)]
fn pointwise_block<const OB: usize>(
    x: &[f64],
    wt: &[f64],
    b: Option<&[f64]>,
    cin: usize,
    plane: usize,
    o0: usize,
    start: usize,
    end: usize,
    out: &mut [f64],
) {
    let bias = |k: usize| b.map_or(0.0, |b| b[o0 + k]);
    let mut p = start;
    while p + LANES <= end {
        let mut acc = [[0.0; LANES]; OB];
        for (k, a) in acc.iter_mut().enumerate() {
            *a = [bias(k); LANES];
        }
        for i in 0..cin {
            let xv: &[f64; LANES] = x[i * plane + p..i * plane + p + LANES].try_into().unwrap();
            for (k, a) in acc.iter_mut().enumerate() {
                let wk = wt[(o0 + k) * cin + i];
                for l in 0..LANES {
                    a[l] += wk * xv[l];
                }
            }
        }
        for (k, a) in acc.iter().enumerate() {
            out[(o0 + k) * plane + p..(o0 + k) * plane + p + LANES].copy_from_slice(a);
        }
        p += LANES;
    }
    for p in p..end {
        for k in 0..OB {
            let mut acc = bias(k);
            for i in 0..cin {
                acc += wt[(o0 + k) * cin + i] * x[i * plane + p];
            }
            out[(o0 + k) * plane + p] = acc;
        }
    }
}

/// `gw[o][i] = sum_p g[o][p] * x[i][p]`, accumulated in `LANES` interleaved
/// partial sums per weight and reduced with a fixed tree.
fn pointwise_weight_grad(g: &[f64], x: &[f64], cout: usize, cin: usize, plane: usize) -> Vec<f64> {
    let mut lanes = vec![[0.0; LANES]; cout * cin];
    let mut tails = vec![0.0; cout * cin];
    let full = plane - plane % LANES;
    let mut start = 0;
    while start < full {
        let end = (start + 4 * TILE).min(full);
        let mut o = 0;
        while o < cout {
            let ob = (cout - o).min(4);
            let mut i = 0;
            while i < cin {
                let ib = (cin - i).min(4);
                if ob == 4 && ib == 4 {
                    weight_grad_block::<4, 4>(g, x, cin, plane, o, i, start, end, &mut lanes);
                } else {
                    for oo in o..o + ob {
                        for ii in i..i + ib {
                            weight_grad_block::<1, 1>(g, x, cin, plane, oo, ii, start, end, &mut lanes);
                        }
                    }
                }
                i += ib;
            }
            o += ob;
        }
        start = end;
    }
    for o in 0..cout {
        for i in 0..cin {
            let mut t = 0.0;
            for p in full..plane {
                t += g[o * plane + p] * x[i * plane + p];
            }
            tails[o * cin + i] = t;
        }
    }
    lanes.iter().zip(&tails).map(|(l, t)| lane_sum(l) + t).collect()
}

#[allow(clippy::too_many_arguments)]
#[inline(always)]
fn weight_grad_block<const OB: usize, const IB: usize>(
    g: &[f64],
    x: &[f64],
    cin: usize,
    plane: usize,
    o0: usize,
    i0: usize,
    start: usize,
    end: usize,
    lanes: &mut [[f64; LANES]],
) {
    let mut acc = [[[0.0; LANES]; IB]; OB];
    for k in 0..OB {
        for j in 0..IB {
            acc[k][j] = lanes[(o0 + k) * cin + i0 + j];
        }
    }
    let mut p = start;
    while p < end {
        let mut gv = [[0.0; LANES]; OB];
        for (k, v) in gv.iter_mut().enumerate() {
            *v = g[(o0 + k) * plane + p..(o0 + k) * plane + p + LANES]
                .try_into()
                .unwrap();
        }
        for j in 0..IB {
            let xv: &[f64; LANES] = x[(i0 + j) * plane + p..(i0 + j) * plane + p + LANES]
                .try_into()
                .unwrap();
            for k in 0..OB {
                for l in 0..LANES {
                    acc[k][j][l] += gv[k][l] * xv[l];
                }
            }
        }
        p += LANES;
    }
    for k in 0..OB {
        for j in 0..IB {
            lanes[(o0 + k) * cin + i0 + j] = acc[k][j];
        }
    }
}

pub(crate) fn forward(input: &Tensor, weight: &Tensor, bias: &Tensor, g: ConvGeom) -> Tensor {
    let plane = g.h * g.w;
    let mut out = buffer::take(g.cout * plane);
    let x = input.data();
    let wt = weight.data();
    let b = bias.data();

    if g.dense_pointwise() {
        pointwise(x, wt, Some(b), g.cin, g.cout, plane, &mut out);
        return Tensor::from_data(Shape::new(g.cout, g.h, g.w), out).expect("conv output shape");
    }

    let p = g.pad();
    let (ph, pw) = (g.h + 2 * p, g.w + 2 * p);
    let kk = g.k * g.k;
    let mut padded = buffer::take(g.cin * ph * pw);
    for i in 0..g.cin {
        pad_plane(
            &x[i * plane..(i + 1) * plane],
            g.h,
            g.w,
            p,
            &mut padded[i * ph * pw..(i + 1) * ph * pw],
        );
    }
    for o in 0..g.cout {
        let grp = o / g.cout_g();
        let dst = &mut out[o * plane..(o + 1) * plane];
        dst.fill(b[o]);
        for ii in 0..g.cin_g() {
            let i = grp * g.cin_g() + ii;
            let src = &padded[i * ph * pw..(i + 1) * ph * pw];
            let taps = &wt[(o * g.cin_g() + ii) * kk..(o * g.cin_g() + ii + 1) * kk];
            for y in 0..g.h {
                let drow = &mut dst[y * g.w..(y + 1) * g.w];
                for ky in 0..g.k {
                    let srow = &src[(y + ky) * pw..(y + ky + 1) * pw];
                    for kx in 0..g.k {
                        axpy(taps[ky * g.k + kx], &srow[kx..kx + g.w], drow);
                    }
                }
            }
        }
    }
    buffer::give(padded);
    Tensor::from_data(Shape::new(g.cout, g.h, g.w), out).expect("conv output shape")
}

pub(crate) struct ConvGrads {
    pub input: Option<Vec<f64>>,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

pub(crate) fn backward(input: &Tensor, weight: &Tensor, grad_out: &[f64], g: ConvGeom, want_input: bool) -> ConvGrads {
    let plane = g.h * g.w;
    let x = input.data();
    let wt = weight.data();
    let bias: Vec<f64> = (0..g.cout)
        .map(|o| sum(&grad_out[o * plane..(o + 1) * plane]))
        .collect();

    if g.dense_pointwise() {
        let input = want_input.then(|| {
            let mut wt_t = vec![0.0; g.cin * g.cout];
            for o in 0..g.cout {
                for i in 0..g.cin {
                    wt_t[i * g.cout + o] = wt[o * g.cin + i];
                }
            }
            let mut gin = buffer::take(g.cin * plane);
            pointwise(grad_out, &wt_t, None, g.cout, g.cin, plane, &mut gin);
            gin
        });
        return ConvGrads {
            input,
            weight: pointwise_weight_grad(grad_out, x, g.cout, g.cin, plane),
            bias,
        };
    }

    let p = g.pad();
    let (ph, pw) = (g.h + 2 * p, g.w + 2 * p);
    let kk = g.k * g.k;
    let mut padded = buffer::take(ph * pw);
    let mut gpad = buffer::zeros(if want_input { g.cin * ph * pw } else { 0 });
    let mut gw = vec![0.0; weight.len()];

    for i in 0..g.cin {
        pad_plane(&x[i * plane..(i + 1) * plane], g.h, g.w, p, &mut padded);
        let grp = i / g.cin_g();
        let ii = i % g.cin_g();
        for oo in 0..g.cout_g() {
            let o = grp * g.cout_g() + oo;
            let go = &grad_out[o * plane..(o + 1) * plane];
            let widx = (o * g.cin_g() + ii) * kk;
            for ky in 0..g.k {
                for kx in 0..g.k {
                    let mut acc = 0.0;
                    for y in 0..g.h {
                        let srow = &padded[(y + ky) * pw + kx..(y + ky) * pw + kx + g.w];
                        acc += dot(&go[y * g.w..(y + 1) * g.w], srow);
                    }
                    gw[widx + ky * g.k + kx] = acc;
                }
            }
            if want_input {
                let gp = &mut gpad[i * ph * pw..(i + 1) * ph * pw];
                for y in 0..g.h {
                    let grow = &go[y * g.w..(y + 1) * g.w];
                    for ky in 0..g.k {
                        let prow = &mut gp[(y + ky) * pw..(y + ky + 1) * pw];
                        for kx in 0..g.k {
                            axpy(wt[widx + ky * g.k + kx], grow, &mut prow[kx..kx + g.w]);
                        }
                    }
                }
            }
        }
    }

    buffer::give(padded);
    let input_grad = want_input.then(|| {
        let mut gin = buffer::zeros(g.cin * plane);
        for i in 0..g.cin {
            unpad_plane_add(
                &gpad[i * ph * pw..(i + 1) * ph * pw],
                g.h,
                g.w,
                p,
                &mut gin[i * plane..(i + 1) * plane],
            );
        }
        buffer::give(gpad);
        gin
    });
    ConvGrads {
        input: input_grad,
        weight: gw,
        bias,
    }
}
