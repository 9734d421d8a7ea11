//! Layer normalization across channels at each spatial position.

use crate::buffer;

pub(crate) const EPS: f64 = 1e-6;

pub(crate) struct NormSaved {
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
}

pub(crate) fn forward(x: &[f64], c: usize, plane: usize, gamma: &[f64], beta: &[f64]) -> (Vec<f64>, NormSaved) {
    let mut mean = buffer::zeros(plane);
    for ch in 0..c {
        for (m, v) in mean.iter_mut().zip(&x[ch * plane..(ch + 1) * plane]) {
            *m += v;
        }
    }
    let inv_c = 1.0 / c as f64;
    mean.iter_mut().for_each(|m| *m *= inv_c);

    let mut var = buffer::zeros(plane);
    for ch in 0..c {
        for ((s, v), m) in var.iter_mut().zip(&x[ch * plane..(ch + 1) * plane]).zip(&mean) {
            let d = v - m;
            *s += d * d;
        }
    }
    let inv_std = buffer::map(&var, |s| 1.0 / (s * inv_c + EPS).sqrt());

    let mut xhat = buffer::take(c * plane);
    let mut y = buffer::take(c * plane);
    for ch in 0..c {
        let range = ch * plane..(ch + 1) * plane;
        let (g, b) = (gamma[ch], beta[ch]);
        for (((xh, yo), v), (m, is)) in xhat[range.clone()]
            .iter_mut()
            .zip(&mut y[range.clone()])
            .zip(&x[range])
            .zip(mean.iter().zip(&inv_std))
        {
            *xh = (v - m) * is;
            *yo = g * *xh + b;
        }
    }
    buffer::give(mean);
    buffer::give(var);
    (y, NormSaved { xhat, inv_std })
}

pub(crate) struct NormGrads {
    pub input: Option<Vec<f64>>,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

pub(crate) fn backward(
    grad_out: &[f64],
    saved: &NormSaved,
    c: usize,
    plane: usize,
    gamma: &[f64],
    want_input: bool,
) -> NormGrads {
    let xhat = &saved.xhat;
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    for ch in 0..c {
        let g = &grad_out[ch * plane..(ch + 1) * plane];
        let xh = &xhat[ch * plane..(ch + 1) * plane];
        dbeta[ch] = super::conv::sum(g);
        dgamma[ch] = g.iter().zip(xh).map(|(a, b)| a * b).sum();
    }

    let input = want_input.then(|| {
        // dx = inv_std * (gx - mean(gx) - xhat * mean(gx * xhat)), gx = g * gamma
        let mut s1 = buffer::zeros(plane);
        let mut s2 = buffer::zeros(plane);
        for ch in 0..c {
            let g = &grad_out[ch * plane..(ch + 1) * plane];
            let xh = &xhat[ch * plane..(ch + 1) * plane];
            for p in 0..plane {
                let gx = g[p] * gamma[ch];
                s1[p] += gx;
                s2[p] += gx * xh[p];
            }
        }
        let inv_c = 1.0 / c as f64;
        let mut dx = buffer::take(c * plane);
        for ch in 0..c {
            let g = &grad_out[ch * plane..(ch + 1) * plane];
            let xh = &xhat[ch * plane..(ch + 1) * plane];
            let d = &mut dx[ch * plane..(ch + 1) * plane];
            for p in 0..plane {
                let gx = g[p] * gamma[ch];
                d[p] = saved.inv_std[p] * (gx - s1[p] * inv_c - xh[p] * s2[p] * inv_c);
            }
        }
        buffer::give(s1);
        buffer::give(s2);
        dx
    });
    NormGrads {
        input,
        gamma: dgamma,
        beta: dbeta,
    }
}

impl Drop for NormSaved {
    fn drop(&mut self) {
        buffer::give(std::mem::take(&mut self.xhat));
        buffer::give(std::mem::take(&mut self.inv_std));
    }
}
