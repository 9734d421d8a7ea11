//! Gaussian parameter predictor (GPP), synthesis network and the
//! configuration table they are built from.
//!
//! Both networks share one shape: a 1×1 input projection to `conv_ch`
//! channels, a stack of ConvNeXt blocks, and a 1×1 head. A block is
//!
//! ```text
//! x -> dw 3x3 -> LayerNorm -> 1x1 (c -> 2c) -> GELU -> 1x1 (2c -> c) -> + x
//! ```
//!
//! The GPP head emits `2 * C` channels: the first `C` are the mean, the last
//! `C` pass through `exp(clamp(s, -10, 10))` to give the scale. The latent is
//! `mu + sigma * z_M`, and the synthesis head maps it to RGB through a sigmoid.
//!
//! # Canonical parameter order
//!
//! Serialization walks parameters in this order, GPP group first, then the
//! synthesis group (the no-GPP ablation has an empty GPP group):
//!
//! 1. `in.weight`, `in.bias`
//! 2. for each block: `dw.weight`, `dw.bias`, `ln.gamma`, `ln.beta`,
//!    `pw1.weight`, `pw1.bias`, `pw2.weight`, `pw2.bias`
//! 3. `head.weight`, `head.bias`
//!
//! Conv weights are stored `[1, out, in / groups, k * k]`, row-major.

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::noise::{CodecInputs, SplitMix64};
use crate::tensor::{Shape, Tensor};

/// Bounds on the log-scale before exponentiation.
pub const LOG_SIGMA_MIN: f64 = -10.0;
pub const LOG_SIGMA_MAX: f64 = 10.0;

const EXPANSION: usize = 2;
const DW_KERNEL: usize = 3;
const RGB: usize = 3;

/// The five complexity settings.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Setting {
    S0,
    S1,
    S2,
    S3,
    S4,
}

impl Setting {
    pub const ALL: [Setting; 5] = [Setting::S0, Setting::S1, Setting::S2, Setting::S3, Setting::S4];

    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn from_id(id: u8) -> Result<Self> {
        Setting::ALL
            .get(usize::from(id))
            .copied()
            .ok_or_else(|| Error::Config(format!("unknown setting {id}, expected 0..=4")))
    }

    /// `(scales, noise channels, conv channels, PE dims, GPP blocks, synthesis blocks)`.
    fn row(self) -> (usize, usize, usize, usize, usize, usize) {
        match self {
            Setting::S0 => (4, 12, 8, 8, 3, 3),
            Setting::S1 => (4, 12, 10, 10, 3, 3),
            Setting::S2 => (4, 12, 12, 12, 4, 4),
            Setting::S3 => (4, 12, 16, 10, 3, 3),
            Setting::S4 => (4, 12, 16, 10, 4, 4),
        }
    }

    pub fn config(self) -> ModelConfig {
        let (scales, nch, cch, pe, m, n) = self.row();
        ModelConfig {
            setting: self,
            scales,
            noise_ch_per_scale: nch,
            conv_ch: cch,
            pe_dims: pe,
            gpp_blocks: m,
            synth_blocks: n,
            variant: Variant::Full,
        }
    }

    /// Reference parameter budget in thousands.
    pub fn reference_kparams(self) -> f64 {
        [4.11, 6.11, 9.87, 12.58, 15.55][self as usize]
    }

    /// Reference complexity in kMAC per pixel.
    pub fn reference_kmac_per_pixel(self) -> f64 {
        [4.36, 5.81, 9.46, 12.17, 15.04][self as usize]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    /// GPP + reparameterization + synthesis.
    Full,
    /// Ablation: one network from `concat(z_M, PE)` straight to RGB, with
    /// `gpp_blocks + synth_blocks` blocks at `width` channels.
    NoGpp { width: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ModelConfig {
    pub setting: Setting,
    pub scales: usize,
    pub noise_ch_per_scale: usize,
    pub conv_ch: usize,
    pub pe_dims: usize,
    pub gpp_blocks: usize,
    pub synth_blocks: usize,
    pub variant: Variant,
}

impl ModelConfig {
    pub fn latent_channels(&self) -> usize {
        self.scales * self.noise_ch_per_scale
    }

    /// Same latent width from one full-resolution scale.
    pub fn single_scale(&self) -> Self {
        ModelConfig {
            scales: 1,
            noise_ch_per_scale: self.latent_channels(),
            ..*self
        }
    }

    pub fn is_single_scale(&self) -> bool {
        self.scales == 1
    }

    /// The GPP-free ablation, widened to the closest parameter count.
    pub fn no_gpp(&self) -> Self {
        let full = ModelConfig {
            variant: Variant::Full,
            ..*self
        };
        let target = count_params(&full) as i64;
        let width = (1..=512)
            .min_by_key(|&w| {
                let cand = ModelConfig {
                    variant: Variant::NoGpp { width: w },
                    ..*self
                };
                (count_params(&cand) as i64 - target).abs()
            })
            .expect("non-empty range");
        ModelConfig {
            variant: Variant::NoGpp { width },
            ..*self
        }
    }

    pub fn has_gpp(&self) -> bool {
        matches!(self.variant, Variant::Full)
    }

    /// Header flag bits: bit 0 no-GPP, bit 1 single-scale noise.
    pub fn flags(&self) -> u8 {
        u8::from(!self.has_gpp()) | (u8::from(self.is_single_scale()) << 1)
    }

    pub fn from_header(setting_id: u8, flags: u8) -> Result<Self> {
        if flags & !0b11 != 0 {
            return Err(Error::Unsupported(format!("unknown flag bits {flags:#04x}")));
        }
        let mut cfg = Setting::from_id(setting_id)
            .map_err(|_| Error::Unsupported(format!("unknown setting id {setting_id}")))?
            .config();
        if flags & 0b10 != 0 {
            cfg = cfg.single_scale();
        }
        if flags & 0b01 != 0 {
            cfg = cfg.no_gpp();
        }
        Ok(cfg)
    }

    pub fn flag_names(flags: u8) -> Vec<&'static str> {
        let mut names = Vec::new();
        if flags & 0b01 != 0 {
            names.push("no-gpp");
        }
        if flags & 0b10 != 0 {
            names.push("single-scale");
        }
        names
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Init {
    /// Uniform in `±1/sqrt(fan_in)`.
    FanIn(usize),
    Zeros,
    Ones,
}

#[derive(Clone, Debug)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Shape,
    init: Init,
    /// Per-pixel multiply-accumulates contributed by this tensor.
    macs: usize,
}

fn conv_specs(out: &mut Vec<ParamSpec>, prefix: &str, cin: usize, cout: usize, k: usize, groups: usize, zero: bool) {
    let cin_g = cin / groups;
    let fan_in = cin_g * k * k;
    out.push(ParamSpec {
        name: format!("{prefix}.weight"),
        shape: Shape {
            n: 1,
            c: cout,
            h: cin_g,
            w: k * k,
        },
        init: if zero { Init::Zeros } else { Init::FanIn(fan_in) },
        macs: cout * fan_in,
    });
    out.push(ParamSpec {
        name: format!("{prefix}.bias"),
        shape: Shape::new(cout, 1, 1),
        init: Init::Zeros,
        macs: 0,
    });
}

fn network_specs(
    prefix: &str,
    cin: usize,
    width: usize,
    blocks: usize,
    cout: usize,
    zero_head: bool,
) -> Vec<ParamSpec> {
    let mut specs = Vec::new();
    conv_specs(&mut specs, &format!("{prefix}.in"), cin, width, 1, 1, false);
    for b in 0..blocks {
        let p = format!("{prefix}.block{b}");
        conv_specs(&mut specs, &format!("{p}.dw"), width, width, DW_KERNEL, width, false);
        specs.push(ParamSpec {
            name: format!("{p}.ln.gamma"),
            shape: Shape::new(width, 1, 1),
            init: Init::Ones,
            macs: 0,
        });
        specs.push(ParamSpec {
            name: format!("{p}.ln.beta"),
            shape: Shape::new(width, 1, 1),
            init: Init::Zeros,
            macs: 0,
        });
        conv_specs(&mut specs, &format!("{p}.pw1"), width, EXPANSION * width, 1, 1, false);
        conv_specs(&mut specs, &format!("{p}.pw2"), EXPANSION * width, width, 1, 1, false);
    }
    conv_specs(&mut specs, &format!("{prefix}.head"), width, cout, 1, 1, zero_head);
    specs
}

/// Parameter layout as `(gpp group, synthesis group)`, in canonical order.
pub fn layout(config: &ModelConfig) -> (Vec<ParamSpec>, Vec<ParamSpec>) {
    let c = config.latent_channels();
    match config.variant {
        Variant::Full => (
            network_specs(
                "gpp",
                c + config.pe_dims,
                config.conv_ch,
                config.gpp_blocks,
                2 * c,
                true,
            ),
            network_specs("synth", c, config.conv_ch, config.synth_blocks, RGB, false),
        ),
        Variant::NoGpp { width } => (
            Vec::new(),
            network_specs(
                "synth",
                c + config.pe_dims,
                width,
                config.gpp_blocks + config.synth_blocks,
                RGB,
                false,
            ),
        ),
    }
}

pub fn count_params(config: &ModelConfig) -> usize {
    let (gpp, synth) = layout(config);
    gpp.iter().chain(&synth).map(|s| s.shape.numel()).sum()
}

/// Convolution multiply-accumulates per output pixel (normalization and
/// activations are not counted).
pub fn count_mac_per_pixel(config: &ModelConfig) -> f64 {
    let (gpp, synth) = layout(config);
    gpp.iter().chain(&synth).map(|s| s.macs).sum::<usize>() as f64
}

/// All learnable tensors of one codec instance.
#[derive(Clone, Debug, PartialEq)]
pub struct CodecModel {
    pub config: ModelConfig,
    pub gpp: Vec<Tensor>,
    pub synth: Vec<Tensor>,
    gpp_names: Vec<String>,
    synth_names: Vec<String>,
}

/// Graph handles for the parameters of a [`CodecModel`].
#[derive(Clone, Debug)]
pub struct ModelVars {
    pub gpp: Vec<Var>,
    pub synth: Vec<Var>,
}

/// Output of one forward pass. `stats` (mean stacked over log-scale) and
/// `latent` are absent for the no-GPP ablation.
#[derive(Clone, Copy, Debug)]
pub struct Reconstruction {
    pub image: Var,
    pub stats: Option<Var>,
    pub latent: Option<Var>,
}

impl CodecModel {
    /// Fresh model with weights drawn from `init_seed`.
    pub fn new(config: ModelConfig, init_seed: u16) -> Self {
        let (gpp_specs, synth_specs) = layout(&config);
        let mut rng = SplitMix64::new(u64::from(init_seed));
        let mut make = |specs: &[ParamSpec]| -> Vec<Tensor> {
            specs
                .iter()
                .map(|s| {
                    let data = match s.init {
                        Init::Zeros => vec![0.0; s.shape.numel()],
                        Init::Ones => vec![1.0; s.shape.numel()],
                        Init::FanIn(fan_in) => {
                            let bound = 1.0 / (fan_in as f64).sqrt();
                            (0..s.shape.numel())
                                .map(|_| (2.0 * rng.next_f64() - 1.0) * bound)
                                .collect()
                        }
                    };
                    Tensor::parameter(s.shape, data).expect("layout shapes are consistent")
                })
                .collect()
        };
        let gpp = make(&gpp_specs);
        let synth = make(&synth_specs);
        CodecModel {
            config,
            gpp,
            synth,
            gpp_names: gpp_specs.into_iter().map(|s| s.name).collect(),
            synth_names: synth_specs.into_iter().map(|s| s.name).collect(),
        }
    }

    /// Model with the given parameter values in canonical order.
    pub fn from_values(config: ModelConfig, gpp: &[Vec<f64>], synth: &[Vec<f64>]) -> Result<Self> {
        let mut model = CodecModel::new(config, 0);
        for (dst, src) in model
            .gpp
            .iter_mut()
            .chain(model.synth.iter_mut())
            .zip(gpp.iter().chain(synth))
        {
            if dst.len() != src.len() {
                return Err(Error::contract("parameter length differs from the layout"));
            }
            dst.data_mut().copy_from_slice(src);
        }
        if gpp.len() != model.gpp.len() || synth.len() != model.synth.len() {
            return Err(Error::contract("parameter tensor count differs from the layout"));
        }
        Ok(model)
    }

    pub fn num_params(&self) -> usize {
        self.params().map(Tensor::len).sum()
    }

    /// Parameters with their names, GPP group first.
    pub fn named_params(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.gpp_names
            .iter()
            .map(String::as_str)
            .zip(&self.gpp)
            .chain(self.synth_names.iter().map(String::as_str).zip(&self.synth))
    }

    pub fn params(&self) -> impl Iterator<Item = &Tensor> {
        self.gpp.iter().chain(&self.synth)
    }

    pub fn named_params_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.gpp_names
            .iter()
            .map(String::as_str)
            .zip(self.gpp.iter_mut())
            .chain(self.synth_names.iter().map(String::as_str).zip(self.synth.iter_mut()))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.gpp.iter_mut().chain(self.synth.iter_mut())
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().for_each(Tensor::zero_grad);
    }

    /// Registers every parameter as a leaf on `g`.
    pub fn attach<'a>(&'a self, g: &mut Graph<'a>) -> ModelVars {
        ModelVars {
            gpp: self.gpp.iter().map(|t| g.leaf(t)).collect(),
            synth: self.synth.iter().map(|t| g.leaf(t)).collect(),
        }
    }

    fn check_channels(&self, g: &Graph, v: Var, expect: usize, what: &str) -> Result<()> {
        let c = g.value(v).shape().c;
        if c != expect {
            return Err(Error::contract(format!(
                "{what} has {c} channels, model expects {expect}"
            )));
        }
        Ok(())
    }

    /// `(mu, sigma)` from the fused noise and positional embedding.
    pub fn gpp_forward(&self, g: &mut Graph, vars: &ModelVars, z_m: Var, pe: Var) -> Result<(Var, Var)> {
        let c = self.config.latent_channels();
        self.check_channels(g, z_m, c, "noise")?;
        self.check_channels(g, pe, self.config.pe_dims, "positional embedding")?;
        let x = g.concat_channels(&[z_m, pe])?;
        let out = self.gpp_stats(g, vars, x)?;
        let mu = g.slice_channels(out, 0, c)?;
        let log_sigma = g.slice_channels(out, c, c)?;
        let sigma = g.clamped_exp(log_sigma, LOG_SIGMA_MIN, LOG_SIGMA_MAX);
        Ok((mu, sigma))
    }

    /// Raw GPP head output for `concat(z_M, PE)`: `mu` in the first half of
    /// the channels, the unclamped log-scale in the second.
    pub fn gpp_stats(&self, g: &mut Graph, vars: &ModelVars, stacked: Var) -> Result<Var> {
        if !self.config.has_gpp() {
            return Err(Error::contract("the no-GPP ablation has no GPP network"));
        }
        self.check_channels(
            g,
            stacked,
            self.config.latent_channels() + self.config.pe_dims,
            "GPP input",
        )?;
        let x = stacked;
        run_network(g, &vars.gpp, x, self.config.conv_ch, self.config.gpp_blocks)
    }

    /// RGB reconstruction in `(0, 1)` from a latent.
    pub fn synthesis_forward(&self, g: &mut Graph, vars: &ModelVars, y: Var) -> Result<Var> {
        if !self.config.has_gpp() {
            return Err(Error::contract("the no-GPP ablation has no separate synthesis network"));
        }
        self.check_channels(g, y, self.config.latent_channels(), "latent")?;
        let out = run_network(g, &vars.synth, y, self.config.conv_ch, self.config.synth_blocks)?;
        Ok(g.sigmoid(out))
    }

    /// Ablation forward: `concat(z_M, PE)` straight to RGB.
    pub fn no_gpp_forward(&self, g: &mut Graph, vars: &ModelVars, stacked: Var) -> Result<Var> {
        let Variant::NoGpp { width } = self.config.variant else {
            return Err(Error::contract("no_gpp_forward on a full model"));
        };
        self.check_channels(
            g,
            stacked,
            self.config.latent_channels() + self.config.pe_dims,
            "network input",
        )?;
        let x = stacked;
        let blocks = self.config.gpp_blocks + self.config.synth_blocks;
        let out = run_network(g, &vars.synth, x, width, blocks)?;
        Ok(g.sigmoid(out))
    }

    /// Whole pipeline for either variant.
    pub fn forward(&self, g: &mut Graph, vars: &ModelVars, z_m: Var, pe: Var) -> Result<Reconstruction> {
        self.check_channels(g, z_m, self.config.latent_channels(), "noise")?;
        self.check_channels(g, pe, self.config.pe_dims, "positional embedding")?;
        let stacked = g.concat_channels(&[z_m, pe])?;
        self.forward_stacked(g, vars, stacked, z_m)
    }

    /// [`forward`](Self::forward) with `concat(z_M, PE)` already built.
    pub fn forward_stacked(&self, g: &mut Graph, vars: &ModelVars, stacked: Var, z_m: Var) -> Result<Reconstruction> {
        self.check_channels(g, z_m, self.config.latent_channels(), "noise")?;
        if self.config.has_gpp() {
            let stats = self.gpp_stats(g, vars, stacked)?;
            let latent = g.gaussian_sample(stats, z_m, LOG_SIGMA_MIN, LOG_SIGMA_MAX)?;
            let image = self.synthesis_forward(g, vars, latent)?;
            Ok(Reconstruction {
                image,
                stats: Some(stats),
                latent: Some(latent),
            })
        } else {
            let image = self.no_gpp_forward(g, vars, stacked)?;
            Ok(Reconstruction {
                image,
                stats: None,
                latent: None,
            })
        }
    }

    /// Inference-only reconstruction.
    pub fn render(&self, inputs: &CodecInputs) -> Result<Tensor> {
        let mut g = Graph::new();
        let vars = self.attach(&mut g);
        let (s, z) = (g.leaf(&inputs.stacked), g.leaf(inputs.fused()));
        let rec = self.forward_stacked(&mut g, &vars, s, z)?;
        Ok(g.value(rec.image).clone())
    }

    pub fn param_name(&self, index: usize) -> &str {
        self.gpp_names
            .iter()
            .chain(&self.synth_names)
            .nth(index)
            .map(String::as_str)
            .unwrap_or("?")
    }
}

/// `y = mu + sigma * z`.
pub fn reparameterize(g: &mut Graph, mu: Var, sigma: Var, z: Var) -> Result<Var> {
    let scaled = g.mul(sigma, z)?;
    g.add(mu, scaled)
}

fn convnext_block(g: &mut Graph, p: &[Var], x: Var, width: usize) -> Result<Var> {
    let h = g.conv2d(x, p[0], p[1], DW_KERNEL, width)?;
    let h = g.layer_norm(h, p[2], p[3])?;
    let h = g.conv2d(h, p[4], p[5], 1, 1)?;
    let h = g.gelu(h);
    let h = g.conv2d(h, p[6], p[7], 1, 1)?;
    g.add(x, h)
}

fn run_network(g: &mut Graph, p: &[Var], x: Var, width: usize, blocks: usize) -> Result<Var> {
    debug_assert_eq!(p.len(), 4 + 8 * blocks);
    let mut h = g.conv2d(x, p[0], p[1], 1, 1)?;
    for b in 0..blocks {
        h = convnext_block(g, &p[2 + 8 * b..10 + 8 * b], h, width)?;
    }
    g.conv2d(h, p[2 + 8 * blocks], p[3 + 8 * blocks], 1, 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::{build_pe, build_pyramid, Seed};

    fn inputs(cfg: &ModelConfig, h: usize, w: usize) -> (Tensor, Tensor) {
        let p = build_pyramid(Seed(1), cfg, h, w).unwrap();
        (p.fused, build_pe(h, w, cfg.pe_dims).unwrap())
    }

    fn randomize(model: &mut CodecModel, seed: u64) {
        let mut rng = SplitMix64::new(seed);
        for t in model.params_mut() {
            for v in t.data_mut() {
                *v = (rng.next_f64() * 2.0 - 1.0) * 0.3;
            }
        }
    }

    #[test]
    fn table_rows() {
        let rows: Vec<_> = Setting::ALL
            .iter()
            .map(|s| {
                let c = s.config();
                (
                    c.scales,
                    c.noise_ch_per_scale,
                    c.conv_ch,
                    c.pe_dims,
                    c.gpp_blocks,
                    c.synth_blocks,
                )
            })
            .collect();
        assert_eq!(
            rows,
            [
                (4, 12, 8, 8, 3, 3),
                (4, 12, 10, 10, 3, 3),
                (4, 12, 12, 12, 4, 4),
                (4, 12, 16, 10, 3, 3),
                (4, 12, 16, 10, 4, 4)
            ]
        );
        assert!(Setting::ALL.iter().all(|s| s.config().latent_channels() == 48));
        assert!(Setting::from_id(5).is_err());
    }

    #[test]
    fn zero_head_gives_standard_latent() {
        let cfg = Setting::S0.config();
        let model = CodecModel::new(cfg, 3);
        let (z, pe) = inputs(&cfg, 16, 12);
        let mut g = Graph::new();
        let vars = model.attach(&mut g);
        let (zv, pv) = (g.leaf(&z), g.leaf(&pe));
        let (mu, sigma) = model.gpp_forward(&mut g, &vars, zv, pv).unwrap();
        assert_eq!(g.value(mu).shape(), Shape::new(48, 16, 12));
        assert!(g.value(mu).data().iter().all(|&v| v == 0.0));
        assert!(g.value(sigma).data().iter().all(|&v| v == 1.0));
        let y = reparameterize(&mut g, mu, sigma, zv).unwrap();
        assert_eq!(g.value(y).data(), z.data());
    }

    #[test]
    fn sigma_is_clamped() {
        let cfg = Setting::S0.config();
        let mut model = CodecModel::new(cfg, 3);
        let n = model.gpp.len();
        model.gpp[n - 1].data_mut().iter_mut().enumerate().for_each(|(i, v)| {
            *v = if i % 2 == 0 { 1e6 } else { -1e6 };
        });
        let (z, pe) = inputs(&cfg, 8, 8);
        let mut g = Graph::new();
        let vars = model.attach(&mut g);
        let (zv, pv) = (g.leaf(&z), g.leaf(&pe));
        let (_, sigma) = model.gpp_forward(&mut g, &vars, zv, pv).unwrap();
        let s = g.value(sigma).data();
        assert!(s
            .iter()
            .all(|&v| v > 0.0 && (libm::exp(LOG_SIGMA_MIN)..=libm::exp(LOG_SIGMA_MAX)).contains(&v)));
    }

    #[test]
    fn reparameterize_special_cases_and_inverse() {
        let mut rng = SplitMix64::new(77);
        let shape = Shape::new(3, 4, 5);
        let mut rnd = |lo: f64, hi: f64| {
            let d = (0..shape.numel()).map(|_| lo + (hi - lo) * rng.next_f64()).collect();
            Tensor::from_data(shape, d).unwrap()
        };
        let (y, mu, sigma) = (rnd(-3.0, 3.0), rnd(-2.0, 2.0), rnd(0.05, 4.0));
        let z_data = y
            .data()
            .iter()
            .zip(mu.data())
            .zip(sigma.data())
            .map(|((y, m), s)| (y - m) / s)
            .collect();
        let z = Tensor::from_data(shape, z_data).unwrap();
        let zero = Tensor::zeros(shape);
        let one = Tensor::full(shape, 1.0);
        let mut g = Graph::new();
        let (muv, sv, zv, zero_v, one_v) = (g.leaf(&mu), g.leaf(&sigma), g.leaf(&z), g.leaf(&zero), g.leaf(&one));
        let back = reparameterize(&mut g, muv, sv, zv).unwrap();
        for (a, b) in g.value(back).data().iter().zip(y.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        let only_mu = reparameterize(&mut g, muv, zero_v, zv).unwrap();
        assert_eq!(g.value(only_mu).data(), mu.data());
        let only_z = reparameterize(&mut g, zero_v, one_v, zv).unwrap();
        assert_eq!(g.value(only_z).data(), z.data());
        let bad = g.leaf_owned(Tensor::zeros(Shape::new(3, 4, 4)));
        assert!(reparameterize(&mut g, muv, sv, bad).is_err());
    }

    #[test]
    fn synthesis_range_and_zero_model() {
        let cfg = Setting::S1.config();
        let mut model = CodecModel::new(cfg, 9);
        randomize(&mut model, 5);
        let ins = CodecInputs::build(Seed(1), &cfg, 10, 14).unwrap();
        let img = model.render(&ins).unwrap();
        assert_eq!(img.shape(), Shape::new(3, 10, 14));
        assert!(img.data().iter().all(|&v| v > 0.0 && v < 1.0));

        for t in model.params_mut() {
            t.data_mut().fill(0.0);
        }
        let img = model.render(&ins).unwrap();
        assert!(img.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn channel_mismatch_is_rejected() {
        let cfg = Setting::S0.config();
        let model = CodecModel::new(cfg, 0);
        let z = Tensor::zeros(Shape::new(47, 8, 8));
        let pe = build_pe(8, 8, 8).unwrap();
        let mut g = Graph::new();
        let vars = model.attach(&mut g);
        let (zv, pv) = (g.leaf(&z), g.leaf(&pe));
        assert!(model.gpp_forward(&mut g, &vars, zv, pv).is_err());
        assert!(model.synthesis_forward(&mut g, &vars, zv).is_err());
    }

    #[test]
    fn every_parameter_receives_gradient() {
        let cfg = Setting::S0.config();
        let mut model = CodecModel::new(cfg, 4);
        randomize(&mut model, 8);
        let (z, pe) = inputs(&cfg, 12, 12);
        let mut rng = SplitMix64::new(99);
        let target = Tensor::from_data(Shape::new(3, 12, 12), (0..432).map(|_| rng.next_f64()).collect()).unwrap();
        let grads;
        let vars;
        {
            let mut g = Graph::new();
            vars = model.attach(&mut g);
            let (zv, pv, tv) = (g.leaf(&z), g.leaf(&pe), g.leaf(&target));
            let rec = model.forward(&mut g, &vars, zv, pv).unwrap();
            let loss = g.mse_loss(rec.image, tv).unwrap();
            grads = g.backward(loss).unwrap();
        }
        for (v, (name, t)) in vars.gpp.iter().chain(&vars.synth).zip(model.named_params()) {
            let g = grads.get(*v).unwrap_or_else(|| panic!("{name} has no gradient"));
            assert_eq!(g.len(), t.len());
            assert!(g.iter().any(|&x| x != 0.0), "{name} gradient is all zero");
        }
    }

    #[test]
    fn parameter_budgets() {
        let mut prev = 0;
        for s in Setting::ALL {
            let n = count_params(&s.config());
            let target = s.reference_kparams() * 1000.0;
            assert!((n as f64 - target).abs() <= 0.2 * target, "{s:?}: {n} vs {target}");
            assert!(n > prev);
            prev = n;
            assert_eq!(CodecModel::new(s.config(), 0).num_params(), n);
        }
        assert_eq!(count_params(&Setting::S0.config()), 3995);
        assert_eq!(count_params(&Setting::S4.config()), 13523);
    }

    #[test]
    fn no_gpp_matches_budget() {
        for s in Setting::ALL {
            let full = count_params(&s.config()) as f64;
            let ablated = count_params(&s.config().no_gpp()) as f64;
            assert!((ablated - full).abs() <= 0.1 * full, "{s:?}: {ablated} vs {full}");
        }
        let cfg = Setting::S0.config().no_gpp();
        let mut model = CodecModel::new(cfg, 1);
        randomize(&mut model, 2);
        assert!(model.gpp.is_empty());
        let img = model
            .render(&CodecInputs::build(Seed(1), &cfg, 8, 10).unwrap())
            .unwrap();
        assert_eq!(img.shape(), Shape::new(3, 8, 10));
    }

    #[test]
    fn flags_round_trip() {
        for flags in 0..4u8 {
            let cfg = ModelConfig::from_header(2, flags).unwrap();
            assert_eq!(cfg.flags(), flags);
            assert_eq!(cfg.latent_channels(), 48);
        }
        assert!(ModelConfig::from_header(0, 4).is_err());
        assert_eq!(ModelConfig::flag_names(3), ["no-gpp", "single-scale"]);
    }

    #[test]
    fn init_is_reproducible() {
        let cfg = Setting::S3.config();
        assert_eq!(CodecModel::new(cfg, 17), CodecModel::new(cfg, 17));
        assert_ne!(CodecModel::new(cfg, 17), CodecModel::new(cfg, 18));
    }

    #[test]
    fn macs_do_not_depend_on_image_size() {
        let cfg = Setting::S0.config();
        // 1x1 projections, depthwise taps and heads only
        let expect = (56 * 8) + 3 * (72 + 128 + 128) + 8 * 96 + (48 * 8) + 3 * (72 + 128 + 128) + 8 * 3;
        assert_eq!(count_mac_per_pixel(&cfg), expect as f64);
    }
}
