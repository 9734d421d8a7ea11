//! Times a few overfitting steps at a given size: `step_timing [size] [steps] [setting]`.

use n2l::model::Setting;
use n2l::noise::{CodecInputs, Seed};
use n2l::train::{overfit_with, TrainConfig};
use n2l::{Shape, Tensor};

fn main() {
    let args: Vec<usize> = std::env::args()
        .skip(1)
        .map(|a| a.parse().expect("integer argument"))
        .collect();
    let size = args.first().copied().unwrap_or(256);
    let steps = args.get(1).copied().unwrap_or(5);
    let setting = Setting::from_id(args.get(2).copied().unwrap_or(0) as u8).expect("setting 0..=4");
    let cfg = setting.config();
    let data = (0..3 * size * size).map(|i| (i % 251) as f64 / 251.0).collect();
    let img = Tensor::from_data(Shape::new(3, size, size), data).unwrap();
    let inputs = CodecInputs::build(Seed(0), &cfg, size, size).unwrap();
    let train = TrainConfig {
        steps,
        eval_every: 0,
        ..Default::default()
    };
    let (_, report) = overfit_with(&img, &cfg, &train, &inputs, |_| {}).unwrap();
    println!(
        "{size}x{size} setting {:?}: {steps} steps in {:.2}s ({:.1} ms/step)",
        setting,
        report.wall_seconds,
        1e3 * report.wall_seconds / steps as f64
    );
}
