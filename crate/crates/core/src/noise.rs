//! Seed-deterministic noise: the Gaussian stream, the multi-scale noise
//! pyramid and the fixed sinusoidal positional embedding.
//!
//! The generator is part of the wire contract. An encoder and a decoder that
//! agree on the seed and image size must build bit-identical tensors, so the
//! stream is pinned exactly:
//!
//! * SplitMix64 seeded with the 16-bit seed zero-extended to 64 bits;
//! * uniforms `u = (x >> 11) * 2^-53`, flipped to `u' = 1 - u` in `(0, 1]`;
//! * Box–Muller on consecutive pairs `(u'1, u'2)`, emitting the cosine
//!   variate first and the sine variate second.
//!
//! Transcendentals go through `libm` so the stream does not depend on the
//! platform math library.

use std::f64::consts::PI;

use crate::autodiff::Graph;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::tensor::{Shape, Tensor};

/// 16-bit noise seed, carried verbatim in the stream header.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Seed(pub u16);

impl From<u16> for Seed {
    fn from(v: u16) -> Self {
        Seed(v)
    }
}

#[derive(Clone, Debug)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in `[0, 1)` with 53 bits of resolution.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

/// Infinite iterator over the canonical standard-normal stream of a seed.
#[derive(Clone, Debug)]
pub struct GaussianStream {
    rng: SplitMix64,
    spare: Option<f64>,
}

impl GaussianStream {
    pub fn new(seed: Seed) -> Self {
        GaussianStream {
            rng: SplitMix64::new(u64::from(seed.0)),
            spare: None,
        }
    }
}

impl Iterator for GaussianStream {
    type Item = f64;

    fn next(&mut self) -> Option<f64> {
        if let Some(v) = self.spare.take() {
            return Some(v);
        }
        let u1 = 1.0 - self.rng.next_f64();
        let u2 = 1.0 - self.rng.next_f64();
        let r = libm::sqrt(-2.0 * libm::log(u1));
        let theta = 2.0 * PI * u2;
        self.spare = Some(r * libm::sin(theta));
        Some(r * libm::cos(theta))
    }
}

/// The first `count` variates of the stream for `seed`.
pub fn gaussian_stream(seed: Seed, count: usize) -> Vec<f64> {
    GaussianStream::new(seed).take(count).collect()
}

/// Per-scale noise tensors and their fused, full-resolution concatenation.
#[derive(Clone, Debug, PartialEq)]
pub struct NoisePyramid {
    pub scales: Vec<Tensor>,
    pub fused: Tensor,
}

/// Extent of scale `i` (0-based): ceiling division by `2^i`.
pub fn scale_dims(h: usize, w: usize, i: usize) -> (usize, usize) {
    (h.div_ceil(1 << i), w.div_ceil(1 << i))
}

/// Builds the noise pyramid for an `h x w` image.
///
/// Scales are filled from one stream, scale 1 first, each channel-major and
/// row-major. The fused tensor holds scale 1's channels first, then the
/// bilinearly upsampled coarser scales in order.
pub fn build_pyramid(seed: Seed, config: &ModelConfig, h: usize, w: usize) -> Result<NoisePyramid> {
    let scales = config.scales;
    if scales == 0 || config.noise_ch_per_scale == 0 {
        return Err(Error::Config(
            "noise pyramid needs at least one scale and channel".into(),
        ));
    }
    let min = 1usize << (scales - 1);
    if h < min || w < min {
        return Err(Error::Config(format!(
            "image {h}x{w} is smaller than the coarsest noise scale allows ({min}x{min})"
        )));
    }

    let mut stream = GaussianStream::new(seed);
    let tensors: Vec<Tensor> = (0..scales)
        .map(|i| {
            let (sh, sw) = scale_dims(h, w, i);
            let shape = Shape::new(config.noise_ch_per_scale, sh, sw);
            let data = stream.by_ref().take(shape.numel()).collect();
            Tensor::from_data(shape, data).expect("stream is infinite")
        })
        .collect();

    let fused = {
        let mut g = Graph::new();
        let mut parts = Vec::with_capacity(scales);
        for (i, t) in tensors.iter().enumerate() {
            let v = g.leaf(t);
            parts.push(if i == 0 { v } else { g.bilinear_upsample(v, h, w)? });
        }
        let out = g.concat_channels(&parts)?;
        g.value(out).clone()
    };

    Ok(NoisePyramid { scales: tensors, fused })
}

/// Fixed sinusoidal positional embedding, `[1, dims, h, w]`.
///
/// Channel `m` uses the normalized column coordinate when `m` is even and the
/// row coordinate when odd, at frequency `2^(m / 4) * pi`, with a quarter-period
/// phase shift on channels where `m mod 4 >= 2`.
pub fn build_pe(h: usize, w: usize, dims: usize) -> Result<Tensor> {
    if dims == 0 {
        return Err(Error::Config("positional embedding needs at least one channel".into()));
    }
    let mut data = Vec::with_capacity(dims * h * w);
    for m in 0..dims {
        let freq = (1u64 << (m / 4)) as f64 * PI;
        let phase = if m % 4 >= 2 { PI / 2.0 } else { 0.0 };
        for r in 0..h {
            for c in 0..w {
                let u = if m % 2 == 0 {
                    (c as f64 + 0.5) / w as f64
                } else {
                    (r as f64 + 0.5) / h as f64
                };
                data.push(libm::sin(freq * u + phase));
            }
        }
    }
    Tensor::from_data(Shape::new(dims, h, w), data)
}

/// Everything both sides derive from the header: fused noise and the
/// positional embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct CodecInputs {
    pub pyramid: NoisePyramid,
    pub pe: Tensor,
    /// `concat(fused, pe)` along channels, the input of the first network.
    pub stacked: Tensor,
}

impl CodecInputs {
    pub fn build(seed: Seed, config: &ModelConfig, h: usize, w: usize) -> Result<Self> {
        let pyramid = build_pyramid(seed, config, h, w)?;
        let pe = build_pe(h, w, config.pe_dims)?;
        let mut data = pyramid.fused.data().to_vec();
        data.extend_from_slice(pe.data());
        let stacked = Tensor::from_data(
            pyramid
                .fused
                .shape()
                .with_channels(pyramid.fused.shape().c + pe.shape().c),
            data,
        )?;
        Ok(CodecInputs { pyramid, pe, stacked })
    }

    pub fn fused(&self) -> &Tensor {
        &self.pyramid.fused
    }
}

/// Order-sensitive 64-bit FNV-1a digest over the bit patterns of `values`.
pub fn checksum(values: &[f64]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for v in values {
        for b in v.to_bits().to_le_bytes() {
            hash ^= u64::from(b);
            hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    hash
}
