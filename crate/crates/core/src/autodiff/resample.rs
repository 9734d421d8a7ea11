//! Bilinear resampling with half-pixel centers (`align_corners = false`).

use crate::buffer;

/// Source taps for one output coordinate: two indices and the weight of the
/// second one.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Tap {
    pub lo: usize,
    pub hi: usize,
    pub frac: f64,
}

pub(crate) fn taps(in_len: usize, out_len: usize) -> Vec<Tap> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|d| {
            let src = ((d as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(in_len - 1);
            let hi = (lo + 1).min(in_len - 1);
            let frac = if hi == lo { 0.0 } else { src - lo as f64 };
            Tap { lo, hi, frac }
        })
        .collect()
}

pub(crate) fn forward(src: &[f64], (c, ih, iw): (usize, usize, usize), (oh, ow): (usize, usize)) -> Vec<f64> {
    let ty = taps(ih, oh);
    let tx = taps(iw, ow);
    let mut out = buffer::take(c * oh * ow);
    for ch in 0..c {
        let plane = &src[ch * ih * iw..(ch + 1) * ih * iw];
        let dst = &mut out[ch * oh * ow..(ch + 1) * oh * ow];
        for (y, ry) in ty.iter().enumerate() {
            let r0 = &plane[ry.lo * iw..(ry.lo + 1) * iw];
            let r1 = &plane[ry.hi * iw..(ry.hi + 1) * iw];
            for (x, rx) in tx.iter().enumerate() {
                let top = r0[rx.lo] + (r0[rx.hi] - r0[rx.lo]) * rx.frac;
                let bot = r1[rx.lo] + (r1[rx.hi] - r1[rx.lo]) * rx.frac;
                dst[y * ow + x] = top + (bot - top) * ry.frac;
            }
        }
    }
    out
}

pub(crate) fn backward(grad_out: &[f64], (c, ih, iw): (usize, usize, usize), (oh, ow): (usize, usize)) -> Vec<f64> {
    let ty = taps(ih, oh);
    let tx = taps(iw, ow);
    let mut gin = buffer::zeros(c * ih * iw);
    for ch in 0..c {
        let go = &grad_out[ch * oh * ow..(ch + 1) * oh * ow];
        let gi = &mut gin[ch * ih * iw..(ch + 1) * ih * iw];
        for (y, ry) in ty.iter().enumerate() {
            for (x, rx) in tx.iter().enumerate() {
                let g = go[y * ow + x];
                let (gy0, gy1) = (g * (1.0 - ry.frac), g * ry.frac);
                gi[ry.lo * iw + rx.lo] += gy0 * (1.0 - rx.frac);
                gi[ry.lo * iw + rx.hi] += gy0 * rx.frac;
                gi[ry.hi * iw + rx.lo] += gy1 * (1.0 - rx.frac);
                gi[ry.hi * iw + rx.hi] += gy1 * rx.frac;
            }
        }
    }
    gin
}
