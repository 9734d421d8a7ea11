//! Uniform scalar quantization of network parameters with power-of-two steps.

use crate::error::{Error, Result};
use crate::model::{layout, CodecModel, ModelConfig};

/// Every quantized magnitude must stay below this bound.
pub const Q_LIMIT: i64 = 1 << 23;
pub const STEP_EXP_MIN: i8 = -16;
pub const STEP_EXP_MAX: i8 = 0;

pub fn step_size(exp: i8) -> f64 {
    libm::ldexp(1.0, i32::from(exp))
}

/// `round(w / step)` with ties away from zero.
pub fn quantize_value(w: f64, step: f64) -> Result<i64> {
    let r = (w / step).round();
    if !r.is_finite() || r.abs() >= Q_LIMIT as f64 {
        return Err(Error::QuantOverflow(format!(
            "{w} at step {step} leaves the ±2^23 range"
        )));
    }
    Ok(r as i64)
}

pub fn check_step_exp(exp: i8) -> Result<()> {
    if !(STEP_EXP_MIN..=STEP_EXP_MAX).contains(&exp) {
        return Err(Error::contract(format!(
            "step exponent {exp} outside [{STEP_EXP_MIN}, {STEP_EXP_MAX}]"
        )));
    }
    Ok(())
}

/// Integer parameters in canonical order plus the step exponent of each group.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QuantizedModel {
    pub gpp_step_exp: i8,
    pub synth_step_exp: i8,
    pub gpp: Vec<i64>,
    pub synth: Vec<i64>,
}

pub fn quantize_model(model: &CodecModel, gpp_step_exp: i8, synth_step_exp: i8) -> Result<QuantizedModel> {
    check_step_exp(gpp_step_exp)?;
    check_step_exp(synth_step_exp)?;
    let group = |ts: &[crate::Tensor], exp: i8| -> Result<Vec<i64>> {
        let step = step_size(exp);
        ts.iter()
            .flat_map(|t| t.data())
            .map(|&w| quantize_value(w, step))
            .collect()
    };
    Ok(QuantizedModel {
        gpp_step_exp,
        synth_step_exp,
        gpp: group(&model.gpp, gpp_step_exp)?,
        synth: group(&model.synth, synth_step_exp)?,
    })
}

impl QuantizedModel {
    pub fn num_params(&self) -> usize {
        self.gpp.len() + self.synth.len()
    }

    /// Model whose parameters are exactly `q * step`.
    pub fn dequantize(&self, config: ModelConfig) -> Result<CodecModel> {
        let (gpp_specs, synth_specs) = layout(&config);
        let split = |q: &[i64], exp: i8, specs: &[crate::model::ParamSpec], what: &str| -> Result<Vec<Vec<f64>>> {
            let total: usize = specs.iter().map(|s| s.shape.numel()).sum();
            if total != q.len() {
                return Err(Error::contract(format!(
                    "{what} group has {} values, the layout needs {total}",
                    q.len()
                )));
            }
            let step = step_size(exp);
            let mut rest = q;
            Ok(specs
                .iter()
                .map(|s| {
                    let (head, tail) = rest.split_at(s.shape.numel());
                    rest = tail;
                    head.iter().map(|&v| v as f64 * step).collect()
                })
                .collect())
        };
        let gpp = split(&self.gpp, self.gpp_step_exp, &gpp_specs, "GPP")?;
        let synth = split(&self.synth, self.synth_step_exp, &synth_specs, "synthesis")?;
        CodecModel::from_values(config, &gpp, &synth)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Setting;

    #[test]
    fn scalar_examples() {
        assert_eq!(quantize_value(0.0, step_size(-9)).unwrap(), 0);
        assert_eq!(quantize_value(0.1, step_size(-4)).unwrap(), 2);
        assert_eq!(2.0 * step_size(-4), 0.125);
        assert_eq!(quantize_value(-0.09375, step_size(-4)).unwrap(), -2);
        assert_eq!(quantize_value(0.09375, step_size(-4)).unwrap(), 2);
        assert!(matches!(
            quantize_value(1e9, step_size(-4)),
            Err(Error::QuantOverflow(_))
        ));
        assert!(matches!(quantize_value(f64::NAN, 1.0), Err(Error::QuantOverflow(_))));
    }

    #[test]
    fn exponent_range_is_enforced() {
        let model = CodecModel::new(Setting::S0.config(), 1);
        assert!(quantize_model(&model, -17, -8).is_err());
        assert!(quantize_model(&model, -8, 1).is_err());
        assert!(quantize_model(&model, -16, 0).is_ok());
    }

    #[test]
    fn dequantize_is_exact_and_idempotent() {
        let cfg = Setting::S1.config();
        let model = CodecModel::new(cfg, 7);
        let q = quantize_model(&model, -7, -5).unwrap();
        assert_eq!(q.num_params(), model.num_params());
        let back = q.dequantize(cfg).unwrap();
        for (a, &qi) in back.gpp.iter().flat_map(|t| t.data()).zip(&q.gpp) {
            assert_eq!(*a, qi as f64 / 128.0);
        }
        assert_eq!(quantize_model(&back, -7, -5).unwrap(), q);
    }

    #[test]
    fn wrong_length_is_rejected() {
        let cfg = Setting::S0.config();
        let mut q = quantize_model(&CodecModel::new(cfg, 0), -8, -8).unwrap();
        q.synth.pop();
        assert!(q.dequantize(cfg).is_err());
    }
}
