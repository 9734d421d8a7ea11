//! Joint choice of the two quantization steps by exhaustive search.

use std::cmp::Ordering;
use std::ops::RangeInclusive;

use rayon::prelude::*;

use super::format::{bpp, serialize, Header};
use super::quant::{quantize_model, QuantizedModel};
use crate::error::{Error, Result};
use crate::model::CodecModel;
use crate::noise::CodecInputs;
use crate::tensor::Tensor;
use crate::train::mse;

/// Exponents tried for each group.
pub const DEFAULT_EXPONENTS: RangeInclusive<i8> = -12..=-4;

/// Default rate-distortion trade-off for an `h x w` image.
pub fn default_lambda(h: usize, w: usize) -> f64 {
    0.02 * (h * w) as f64
}

/// One evaluated step pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Candidate {
    pub gpp_step_exp: i8,
    pub synth_step_exp: i8,
    pub bytes: usize,
    pub bpp: f64,
    pub mse: f64,
    pub cost: f64,
}

impl Candidate {
    /// Total order used for selection: cost, then size, then the smaller
    /// GPP exponent magnitude, then the smaller synthesis exponent magnitude.
    pub fn rank(&self, other: &Self) -> Ordering {
        self.cost
            .total_cmp(&other.cost)
            .then(self.bytes.cmp(&other.bytes))
            .then(self.gpp_step_exp.unsigned_abs().cmp(&other.gpp_step_exp.unsigned_abs()))
            .then(
                self.synth_step_exp
                    .unsigned_abs()
                    .cmp(&other.synth_step_exp.unsigned_abs()),
            )
    }
}

#[derive(Clone, Debug)]
pub struct SearchResult {
    pub chosen: Candidate,
    pub params: QuantizedModel,
    pub stream: Vec<u8>,
    /// Every viable candidate, GPP exponent major, in grid order.
    pub candidates: Vec<Candidate>,
}

/// Evaluates a single step pair: quantize, serialize, reconstruct, measure.
/// `Ok(None)` marks a pair that cannot be coded or renders non-finite output.
pub fn evaluate(
    model: &CodecModel,
    image: &Tensor,
    inputs: &CodecInputs,
    header: &Header,
    lambda: f64,
    gpp_step_exp: i8,
    synth_step_exp: i8,
) -> Result<Option<(Candidate, QuantizedModel, Vec<u8>)>> {
    let params = match quantize_model(model, gpp_step_exp, synth_step_exp) {
        Ok(q) => q,
        Err(Error::QuantOverflow(_)) => return Ok(None),
        Err(e) => return Err(e),
    };
    let header = Header {
        gpp_step_exp,
        synth_step_exp,
        ..*header
    };
    let stream = serialize(&header, &params)?;
    let recon = params.dequantize(model.config)?.render(inputs)?;
    let mse = mse(&recon, image)?;
    if !mse.is_finite() {
        return Ok(None);
    }
    let rate = bpp(stream.len(), header.height.into(), header.width.into());
    let cand = Candidate {
        gpp_step_exp,
        synth_step_exp,
        bytes: stream.len(),
        bpp: rate,
        mse,
        cost: rate + lambda * mse,
    };
    Ok(Some((cand, params, stream)))
}

/// Tries every pair in `exponents x exponents` and keeps the cheapest by
/// [`Candidate::rank`]. Pairs are evaluated in parallel; the result does not
/// depend on scheduling.
pub fn mesh_search(
    model: &CodecModel,
    image: &Tensor,
    inputs: &CodecInputs,
    header: &Header,
    lambda: f64,
    exponents: RangeInclusive<i8>,
) -> Result<SearchResult> {
    if lambda.is_nan() || lambda < 0.0 {
        return Err(Error::Config(format!("lambda must be non-negative, got {lambda}")));
    }
    let pairs: Vec<(i8, i8)> = exponents
        .clone()
        .flat_map(|g| exponents.clone().map(move |s| (g, s)))
        .collect();
    let evaluated = pairs
        .par_iter()
        .map(|&(g, s)| evaluate(model, image, inputs, header, lambda, g, s))
        .collect::<Result<Vec<_>>>()?;
    let viable: Vec<_> = evaluated.into_iter().flatten().collect();
    let best = viable
        .iter()
        .min_by(|a, b| a.0.rank(&b.0))
        .ok_or_else(|| Error::QuantOverflow("no quantization step pair gives a finite reconstruction".into()))?;
    Ok(SearchResult {
        chosen: best.0,
        params: best.1.clone(),
        stream: best.2.clone(),
        candidates: viable.iter().map(|v| v.0).collect(),
    })
}
