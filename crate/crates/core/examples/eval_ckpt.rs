//! Scores a saved generator on held-out decoupling samples.

use hairshift_core::checkpoint::load_generator;
use hairshift_core::training::{evaluate_held_out, TrainingData};

fn main() {
    let path = std::env::args().nth(1).expect("usage: eval_ckpt <checkpoint> [samples]");
    let n: usize = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(200);
    let model = load_generator::<f32>(std::path::Path::new(&path)).unwrap();
    let held = TrainingData::generate(99, 16, 16, model.cfg.image_size).unwrap();
    println!("{:?}", evaluate_held_out(&model, &held, n, 5, false).unwrap());
}
