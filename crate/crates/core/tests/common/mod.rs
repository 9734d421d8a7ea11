#![allow(dead_code)]

use std::path::PathBuf;

use n2l::image_io::load_rgb;
use n2l::{Shape, Tensor};

pub fn data_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

pub fn fixture(name: &str) -> Tensor {
    load_rgb(&data_path(name)).unwrap()
}

/// Top-left `h x w` window of `t`.
pub fn crop(t: &Tensor, h: usize, w: usize) -> Tensor {
    let s = t.shape();
    let mut data = Vec::with_capacity(3 * h * w);
    for c in 0..s.c {
        for y in 0..h {
            data.extend_from_slice(&t.channel(c)[y * s.w..y * s.w + w]);
        }
    }
    Tensor::from_data(Shape::new(s.c, h, w), data).unwrap()
}

/// Smooth horizontal ramp with a vertical tint, values in `[0, 1]`.
pub fn gradient(h: usize, w: usize) -> Tensor {
    let mut data = Vec::with_capacity(3 * h * w);
    for c in 0..3 {
        for y in 0..h {
            for x in 0..w {
                let u = x as f64 / (w - 1) as f64;
                let v = y as f64 / (h - 1) as f64;
                data.push(match c {
                    0 => u,
                    1 => 0.25 + 0.5 * v,
                    _ => 1.0 - 0.5 * (u + v),
                });
            }
        }
    }
    Tensor::from_data(Shape::new(3, h, w), data).unwrap()
}
