//! Thread-local recycling of large `f64` buffers.
//!
//! A training step allocates the same few hundred megabytes every iteration.
//! Handing those pages back to the OS and faulting them in again costs more
//! than the arithmetic, so tensors return their storage here on drop and
//! kernels draw scratch space from the same pool.

use std::cell::RefCell;
use std::collections::HashMap;

const MIN_POOLED: usize = 1 << 12;
const MAX_PER_LEN: usize = 256;

thread_local! {
    static FREE: RefCell<HashMap<usize, Vec<Vec<f64>>>> = RefCell::new(HashMap::new());
}

/// A buffer of exactly `len` elements with unspecified (but initialized) contents.
pub(crate) fn take(len: usize) -> Vec<f64> {
    if len >= MIN_POOLED {
        if let Some(v) = FREE.with(|f| f.borrow_mut().get_mut(&len).and_then(Vec::pop)) {
            return v;
        }
    }
    vec![0.0; len]
}

pub(crate) fn zeros(len: usize) -> Vec<f64> {
    let mut v = take(len);
    v.fill(0.0);
    v
}

pub(crate) fn give(v: Vec<f64>) {
    if v.len() < MIN_POOLED {
        return;
    }
    // try_with: thread-local storage may already be gone during thread teardown
    let _ = FREE.try_with(|f| {
        let mut f = f.borrow_mut();
        let slot = f.entry(v.len()).or_default();
        if slot.len() < MAX_PER_LEN {
            slot.push(v);
        }
    });
}

pub(crate) fn map(src: &[f64], f: impl Fn(f64) -> f64) -> Vec<f64> {
    let mut out = take(src.len());
    for (o, &s) in out.iter_mut().zip(src) {
        *o = f(s);
    }
    out
}

pub(crate) fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    debug_assert_eq!(a.len(), b.len());
    let mut out = take(a.len());
    for ((o, &x), &y) in out.iter_mut().zip(a).zip(b) {
        *o = f(x, y);
    }
    out
}

pub(crate) fn copy_of(src: &[f64]) -> Vec<f64> {
    let mut out = take(src.len());
    out.copy_from_slice(src);
    out
}

/// Drops every pooled buffer held by the calling thread.
pub fn release_thread_pool() {
    let _ = FREE.try_with(|f| f.borrow_mut().clear());
}
