//! Dense rank-4 `f64` tensors in `[batch, channels, height, width]` layout.

use std::fmt;

use crate::buffer;
use crate::error::{Error, Result};

/// Tensor extents. Batch is always 1 here, but it is kept in the shape so
/// every tensor spells out the same layout.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(c: usize, h: usize, w: usize) -> Self {
        Shape { n: 1, c, h, w }
    }

    pub const fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub const fn plane(&self) -> usize {
        self.h * self.w
    }

    pub const fn with_channels(&self, c: usize) -> Self {
        Shape { c, ..*self }
    }

    pub fn same_spatial(&self, other: &Shape) -> bool {
        self.n == other.n && self.h == other.h && self.w == other.w
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}, {}, {}]", self.n, self.c, self.h, self.w)
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Channel-major, then row-major storage. `grad` is only ever allocated for
/// tensors flagged `requires_grad`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
}

impl Tensor {
    pub fn zeros(shape: Shape) -> Self {
        Tensor::from_data(shape, vec![0.0; shape.numel()]).expect("length matches by construction")
    }

    pub fn full(shape: Shape, value: f64) -> Self {
        Tensor::from_data(shape, vec![value; shape.numel()]).expect("length matches by construction")
    }

    pub fn from_data(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if shape.n != 1 {
            return Err(Error::contract(format!("batch must be 1, got shape {shape}")));
        }
        if data.len() != shape.numel() {
            return Err(Error::contract(format!(
                "shape {shape} needs {} values, got {}",
                shape.numel(),
                data.len()
            )));
        }
        Ok(Tensor {
            shape,
            data,
            grad: None,
            requires_grad: false,
        })
    }

    /// A learnable tensor: gradients are accumulated into it by
    /// [`Gradients::accumulate_into`](crate::autodiff::Gradients::accumulate_into).
    pub fn parameter(shape: Shape, data: Vec<f64>) -> Result<Self> {
        let mut t = Tensor::from_data(shape, data)?;
        t.set_requires_grad(true);
        Ok(t)
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(mut self) -> Vec<f64> {
        std::mem::take(&mut self.data)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, on: bool) {
        self.requires_grad = on;
        if on {
            self.grad.get_or_insert_with(|| vec![0.0; self.data.len()]);
        } else {
            self.grad = None;
        }
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn grad_mut(&mut self) -> Option<&mut [f64]> {
        self.grad.as_deref_mut()
    }

    /// Data and gradient borrowed together, for optimizers.
    pub fn data_and_grad_mut(&mut self) -> (&mut [f64], Option<&[f64]>) {
        (&mut self.data, self.grad.as_deref())
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.fill(0.0);
        }
    }

    /// One channel plane.
    pub fn channel(&self, c: usize) -> &[f64] {
        let p = self.shape.plane();
        &self.data[c * p..(c + 1) * p]
    }

    pub(crate) fn from_pooled(shape: Shape, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.numel(), data.len());
        Tensor {
            shape,
            data,
            grad: None,
            requires_grad: false,
        }
    }

    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.shape.h + y) * self.shape.w + x]
    }
}

impl Drop for Tensor {
    fn drop(&mut self) {
        buffer::give(std::mem::take(&mut self.data));
        if let Some(g) = self.grad.take() {
            buffer::give(g);
        }
    }
}
