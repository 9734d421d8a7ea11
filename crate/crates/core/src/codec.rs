//! End-to-end encode and decode.

use std::ops::RangeInclusive;
use std::time::Instant;

use crate::bitstream::format::{deserialize, Header, Parsed, VERSION};
use crate::bitstream::search::{default_lambda, mesh_search, SearchResult, DEFAULT_EXPONENTS};
use crate::error::{Error, Result};
use crate::image_io::{check_dims, quantize_8bit};
use crate::model::{CodecModel, ModelConfig, Setting};
use crate::noise::{CodecInputs, Seed};
use crate::tensor::Tensor;
use crate::train::{overfit_with, psnr, psnr_from_mse, EvalPoint, TrainConfig, TrainReport};

#[derive(Clone, Debug, PartialEq)]
pub struct EncodeOptions {
    pub setting: Setting,
    pub seed: u16,
    /// Rate-distortion weight; `None` uses `0.02 * H * W`.
    pub lambda: Option<f64>,
    pub no_gpp: bool,
    pub single_scale: bool,
    pub exponents: RangeInclusive<i8>,
    /// Optimizer schedule, step count and weight-init seed.
    pub train: TrainConfig,
}

impl EncodeOptions {
    pub fn new(setting: Setting, steps: usize) -> Self {
        EncodeOptions {
            setting,
            seed: 0,
            lambda: None,
            no_gpp: false,
            single_scale: false,
            exponents: DEFAULT_EXPONENTS,
            train: TrainConfig::with_steps(steps),
        }
    }

    pub fn config(&self) -> ModelConfig {
        let mut cfg = self.setting.config();
        if self.single_scale {
            cfg = cfg.single_scale();
        }
        if self.no_gpp {
            cfg = cfg.no_gpp();
        }
        cfg
    }
}

#[derive(Clone, Debug)]
pub struct Encoded {
    pub stream: Vec<u8>,
    pub header: Header,
    pub bpp: f64,
    /// Float reconstruction of the trained, unquantized model.
    pub psnr_trained_db: f64,
    /// Float reconstruction after weight quantization.
    pub psnr_quantized_db: f64,
    /// 8-bit output after weight quantization; what a decoder measures.
    pub psnr_db: f64,
    pub train: TrainReport,
    pub search: SearchResult,
    pub train_seconds: f64,
    pub search_seconds: f64,
}

/// Overfits, searches the step grid and serializes. `on_eval` sees every
/// recorded training point.
pub fn encode(image: &Tensor, opts: &EncodeOptions, on_eval: impl FnMut(&EvalPoint)) -> Result<Encoded> {
    let s = image.shape();
    check_dims(s.h, s.w)?;
    let cfg = opts.config();
    let inputs = CodecInputs::build(Seed(opts.seed), &cfg, s.h, s.w)?;
    let (model, train) = overfit_with(image, &cfg, &opts.train, &inputs, on_eval)?;
    let train_seconds = train.wall_seconds;

    let started = Instant::now();
    let header = Header {
        version: VERSION,
        setting_id: opts.setting.id(),
        flags: cfg.flags(),
        height: s.h as u16,
        width: s.w as u16,
        seed: opts.seed,
        init_seed: opts.train.init_seed,
        gpp_step_exp: 0,
        synth_step_exp: 0,
    };
    let lambda = opts.lambda.unwrap_or_else(|| default_lambda(s.h, s.w));
    let search = mesh_search(&model, image, &inputs, &header, lambda, opts.exponents.clone())?;
    let header = Header {
        gpp_step_exp: search.chosen.gpp_step_exp,
        synth_step_exp: search.chosen.synth_step_exp,
        ..header
    };
    let recon = search.params.dequantize(cfg)?.render(&inputs)?;
    let psnr_db = psnr(&quantize_8bit(&recon)?, image)?;
    let search_seconds = started.elapsed().as_secs_f64();

    Ok(Encoded {
        stream: search.stream.clone(),
        header,
        bpp: search.chosen.bpp,
        psnr_trained_db: train.final_psnr_db,
        psnr_quantized_db: psnr_from_mse(search.chosen.mse),
        psnr_db,
        train,
        search,
        train_seconds,
        search_seconds,
    })
}

/// Everything a decoder reconstructs from the stream alone.
pub struct DecodedModel {
    pub parsed: Parsed,
    pub config: ModelConfig,
    pub model: CodecModel,
    pub inputs: CodecInputs,
}

pub fn decode_model(stream: &[u8]) -> Result<DecodedModel> {
    let parsed = deserialize(stream)?;
    let h = &parsed.header;
    let config = h.config()?;
    let (hh, ww) = (usize::from(h.height), usize::from(h.width));
    let inputs = CodecInputs::build(Seed(h.seed), &config, hh, ww).map_err(|e| match e {
        Error::Config(reason) => Error::malformed(7 * 8, reason),
        other => other,
    })?;
    let model = parsed.params.dequantize(config)?;
    Ok(DecodedModel {
        parsed,
        config,
        model,
        inputs,
    })
}

pub struct Decoded {
    pub parsed: Parsed,
    /// Reconstruction after 8-bit rounding, in `[0, 1]`.
    pub image: Tensor,
    pub seconds: f64,
}

pub fn decode(stream: &[u8]) -> Result<Decoded> {
    let started = Instant::now();
    let d = decode_model(stream)?;
    let image = quantize_8bit(&d.model.render(&d.inputs)?)?;
    Ok(Decoded {
        parsed: d.parsed,
        image,
        seconds: started.elapsed().as_secs_f64(),
    })
}

/// One channel of the fused noise and of the latent, plus the reconstruction.
pub struct LatentDump {
    pub noise: Vec<f64>,
    pub latent: Vec<f64>,
    pub image: Tensor,
}

pub fn dump_latent(d: &DecodedModel, channel: usize) -> Result<LatentDump> {
    let c = d.config.latent_channels();
    if channel >= c {
        return Err(Error::contract(format!(
            "channel {channel} out of range, the latent has {c}"
        )));
    }
    if !d.config.has_gpp() {
        return Err(Error::contract("a no-GPP stream has no latent"));
    }
    let mut g = crate::autodiff::Graph::new();
    let vars = d.model.attach(&mut g);
    let (s, z) = (g.leaf(&d.inputs.stacked), g.leaf(d.inputs.fused()));
    let rec = d.model.forward_stacked(&mut g, &vars, s, z)?;
    let latent = rec.latent.expect("full model has a latent");
    Ok(LatentDump {
        noise: d.inputs.fused().channel(channel).to_vec(),
        latent: g.value(latent).channel(channel).to_vec(),
        image: quantize_8bit(g.value(rec.image))?,
    })
}
