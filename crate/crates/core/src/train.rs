//! Per-image overfitting: Adam on the MSE loss with a cosine-annealed
//! learning rate.

use std::f64::consts::PI;
use std::io::Write;
use std::time::Instant;

use crate::autodiff::{self, Graph};
use crate::error::{Error, Result};
use crate::model::{CodecModel, ModelConfig};
use crate::noise::{CodecInputs, Seed};
use crate::tensor::Tensor;

/// PSNR reported for (near-)identical images.
pub const PSNR_CAP_DB: f64 = 100.0;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub lr_init: f64,
    pub lr_final: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Record a point every this many steps (0 records only the endpoints).
    pub eval_every: usize,
    pub init_seed: u16,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 10_000,
            lr_init: 8e-3,
            lr_final: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            eval_every: 100,
            init_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn with_steps(steps: usize) -> Self {
        TrainConfig {
            steps,
            ..Default::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("training needs at least one step".into()));
        }
        if self.lr_final.is_nan() || self.lr_init.is_nan() || self.lr_final > self.lr_init {
            return Err(Error::Config(format!(
                "final learning rate {} exceeds initial {}",
                self.lr_final, self.lr_init
            )));
        }
        Ok(())
    }
}

/// Cosine annealing from `lr_init` at step 0 to `lr_final` at the last step.
pub fn cosine_lr(step: usize, config: &TrainConfig) -> f64 {
    if config.steps <= 1 {
        return config.lr_init;
    }
    let t = step.min(config.steps - 1) as f64 / (config.steps - 1) as f64;
    config.lr_final + 0.5 * (config.lr_init - config.lr_final) * (1.0 + (PI * t).cos())
}

/// Adam with bias correction. Moments are kept per parameter tensor in the
/// order the tensors are handed to [`Adam::step`].
#[derive(Clone, Debug)]
pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            beta1,
            beta2,
            eps,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// One update of every tensor using its accumulated gradient. A
    /// non-finite gradient aborts before anything is modified.
    pub fn step<'p>(&mut self, params: impl IntoIterator<Item = (&'p str, &'p mut Tensor)>, lr: f64) -> Result<()> {
        let mut params: Vec<(&str, &mut Tensor)> = params.into_iter().collect();
        for (name, t) in &params {
            if let Some(bad) = t.grad().and_then(|g| g.iter().position(|v| !v.is_finite())) {
                return Err(Error::Diverged {
                    step: self.t as usize,
                    detail: format!("non-finite gradient in {name}[{bad}]"),
                });
            }
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len() {
            return Err(Error::contract("Adam step called with a different parameter list"));
        }

        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((_, t), (m, v)) in params.iter_mut().zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            let (data, grad) = t.data_and_grad_mut();
            let Some(grad) = grad else { continue };
            for (((w, g), m), v) in data.iter_mut().zip(grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// `10 log10(1 / mse)` for images in `[0, 1]`, capped at [`PSNR_CAP_DB`].
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse < 1e-10 {
        PSNR_CAP_DB
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB)
    }
}

pub fn mse(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::contract(format!("mse of {} vs {}", a.shape(), b.shape())));
    }
    Ok(autodiff::mse(a.data(), b.data()))
}

pub fn psnr(a: &Tensor, b: &Tensor) -> Result<f64> {
    mse(a, b).map(psnr_from_mse)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalPoint {
    pub step: usize,
    pub mse: f64,
    pub psnr_db: f64,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub points: Vec<EvalPoint>,
    pub final_mse: f64,
    pub final_psnr_db: f64,
    pub wall_seconds: f64,
}

impl TrainReport {
    pub const CSV_HEADER: &'static str = "step,mse,psnr,lr";

    /// Convergence curve as CSV: `step,mse,psnr,lr`.
    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "{}", Self::CSV_HEADER)?;
        for p in &self.points {
            writeln!(out, "{},{:.9e},{:.6},{:.9e}", p.step, p.mse, p.psnr_db, p.lr)?;
        }
        Ok(())
    }
}

fn check_image(image: &Tensor) -> Result<()> {
    let s = image.shape();
    if s.c != 3 {
        return Err(Error::contract(format!("expected an RGB image, got {s}")));
    }
    if image.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::contract("image values must lie in [0, 1]"));
    }
    Ok(())
}

/// Overfits a fresh model to `image`. See [`overfit_with`].
pub fn overfit(
    image: &Tensor,
    config: &ModelConfig,
    train: &TrainConfig,
    seed: Seed,
) -> Result<(CodecModel, TrainReport)> {
    let s = image.shape();
    let inputs = CodecInputs::build(seed, config, s.h, s.w)?;
    overfit_with(image, config, train, &inputs, |_| {})
}

/// Overfitting loop on precomputed inputs. `on_eval` sees every recorded
/// point as it is produced.
pub fn overfit_with(
    image: &Tensor,
    config: &ModelConfig,
    train: &TrainConfig,
    inputs: &CodecInputs,
    mut on_eval: impl FnMut(&EvalPoint),
) -> Result<(CodecModel, TrainReport)> {
    train.validate()?;
    check_image(image)?;
    let s = image.shape();
    let fs = inputs.fused().shape();
    if (fs.h, fs.w) != (s.h, s.w) {
        return Err(Error::contract(format!("noise {fs} does not match image {s}")));
    }

    let start = Instant::now();
    let mut model = CodecModel::new(*config, train.init_seed);
    let mut adam = Adam::new(train.beta1, train.beta2, train.adam_eps);
    let mut points = Vec::new();

    for step in 0..train.steps {
        let lr = cosine_lr(step, train);
        model.zero_grad();
        let (loss, grads, vars) = {
            let mut g = Graph::new();
            let vars = model.attach(&mut g);
            let stacked = g.leaf(&inputs.stacked);
            let z = g.leaf(inputs.fused());
            let target = g.leaf(image);
            let rec = model.forward_stacked(&mut g, &vars, stacked, z)?;
            let loss_var = g.mse_loss(rec.image, target)?;
            let loss = g.value(loss_var).data()[0];
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    step,
                    detail: format!("loss is {loss}"),
                });
            }
            (loss, g.backward(loss_var)?, vars)
        };
        if train.eval_every > 0 && step % train.eval_every == 0 || step == 0 {
            let p = EvalPoint {
                step,
                mse: loss,
                psnr_db: psnr_from_mse(loss),
                lr,
            };
            on_eval(&p);
            points.push(p);
        }
        for (v, t) in vars.gpp.iter().chain(&vars.synth).zip(model.params_mut()) {
            grads.accumulate_into(*v, t)?;
        }
        adam.step(model.named_params_mut(), lr).map_err(|e| match e {
            Error::Diverged { detail, .. } => Error::Diverged { step, detail },
            other => other,
        })?;
    }

    let recon = model.render(inputs)?;
    let final_mse = autodiff::mse(recon.data(), image.data());
    if !final_mse.is_finite() {
        return Err(Error::Diverged {
            step: train.steps,
            detail: "final reconstruction is not finite".into(),
        });
    }
    let last = EvalPoint {
        step: train.steps,
        mse: final_mse,
        psnr_db: psnr_from_mse(final_mse),
        lr: cosine_lr(train.steps - 1, train),
    };
    on_eval(&last);
    points.push(last);

    Ok((
        model,
        TrainReport {
            points,
            final_mse,
            final_psnr_db: psnr_from_mse(final_mse),
            wall_seconds: start.elapsed().as_secs_f64(),
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Setting;
    use crate::noise::checksum;
    use crate::tensor::Shape;

    #[test]
    fn schedule_endpoints_and_midpoint() {
        let cfg = TrainConfig::with_steps(101);
        assert_eq!(cosine_lr(0, &cfg), 8e-3);
        assert!((cosine_lr(100, &cfg) - 1e-5).abs() < 1e-18);
        assert!((cosine_lr(50, &cfg) - (8e-3 + 1e-5) / 2.0).abs() < 1e-15);
        for s in 0..101 {
            let lr = cosine_lr(s, &cfg);
            assert!((1e-5..=8e-3).contains(&lr));
        }
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut w = Tensor::parameter(Shape::new(1, 1, 1), vec![1.0]).unwrap();
        w.grad_mut().unwrap()[0] = 1.0;
        let mut adam = Adam::new(0.9, 0.999, 1e-8);
        adam.step([("w", &mut w)], 0.1).unwrap();
        // m_hat = v_hat = 1 at t = 1
        let expect = 1.0 - 0.1 * 1.0 / (1.0 + 1e-8);
        assert_eq!(w.data()[0], expect);
    }

    #[test]
    fn adam_zero_gradient_is_a_no_op() {
        let mut w = Tensor::parameter(Shape::new(2, 1, 1), vec![0.3, -0.7]).unwrap();
        let mut adam = Adam::new(0.9, 0.999, 1e-8);
        adam.step([("w", &mut w)], 0.1).unwrap();
        assert_eq!(w.data(), &[0.3, -0.7]);
    }

    #[test]
    fn adam_rejects_nan_gradient() {
        let mut w = Tensor::parameter(Shape::new(2, 1, 1), vec![0.3, -0.7]).unwrap();
        w.grad_mut().unwrap()[1] = f64::NAN;
        let mut adam = Adam::new(0.9, 0.999, 1e-8);
        let err = adam.step([("layer.weight", &mut w)], 0.1).unwrap_err();
        assert!(matches!(&err, Error::Diverged { detail, .. } if detail.contains("layer.weight[1]")));
        assert_eq!(w.data(), &[0.3, -0.7]);
    }

    #[test]
    fn psnr_examples() {
        let a = Tensor::zeros(Shape::new(3, 4, 4));
        assert_eq!(psnr(&a, &a).unwrap(), 100.0);
        let b = Tensor::full(Shape::new(3, 4, 4), 16.0 / 255.0);
        let expect = 10.0 * (255.0f64 * 255.0 / 256.0).log10();
        assert!((psnr(&a, &b).unwrap() - expect).abs() < 1e-12);
        assert!((expect - 24.05).abs() < 0.005);
        assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
        assert!(psnr(&a, &Tensor::zeros(Shape::new(3, 4, 5))).is_err());
    }

    fn gradient_image(h: usize, w: usize) -> Tensor {
        let mut d = Vec::with_capacity(3 * h * w);
        for c in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    let v = match c {
                        0 => x as f64 / (w - 1) as f64,
                        1 => y as f64 / (h - 1) as f64,
                        _ => (x + y) as f64 / (h + w - 2) as f64,
                    };
                    d.push(0.1 + 0.8 * v);
                }
            }
        }
        Tensor::from_data(Shape::new(3, h, w), d).unwrap()
    }

    #[test]
    fn short_run_reduces_loss_and_is_deterministic() {
        let img = gradient_image(16, 16);
        let cfg = Setting::S0.config();
        let train = TrainConfig {
            steps: 60,
            eval_every: 10,
            ..Default::default()
        };
        let inputs = CodecInputs::build(Seed(2), &cfg, 16, 16).unwrap();
        let before = checksum(inputs.fused().data());
        let (m1, r1) = overfit_with(&img, &cfg, &train, &inputs, |_| {}).unwrap();
        assert_eq!(checksum(inputs.fused().data()), before);
        let (m2, r2) = overfit(&img, &cfg, &train, Seed(2)).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(r1.final_psnr_db, r2.final_psnr_db);
        assert!(r1.final_mse < r1.points[0].mse);
        assert_eq!(
            r1.points.iter().map(|p| p.step).collect::<Vec<_>>(),
            [0, 10, 20, 30, 40, 50, 60]
        );
        let mut csv = Vec::new();
        r1.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("step,mse,psnr,lr\n0,"));
        assert_eq!(text.lines().count(), 8);
    }

    #[test]
    fn rejects_bad_inputs() {
        let cfg = Setting::S0.config();
        let gray = Tensor::zeros(Shape::new(1, 16, 16));
        assert!(overfit(&gray, &cfg, &TrainConfig::with_steps(1), Seed(0)).is_err());
        let tiny = Tensor::zeros(Shape::new(3, 4, 4));
        assert!(matches!(
            overfit(&tiny, &cfg, &TrainConfig::with_steps(1), Seed(0)),
            Err(Error::Config(_))
        ));
        let img = gradient_image(16, 16);
        assert!(overfit(&img, &cfg, &TrainConfig::with_steps(0), Seed(0)).is_err());
    }
}
