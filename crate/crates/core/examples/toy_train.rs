use std::time::Instant;

use hairshift_core::training::{train_decoupling, train_warmup, TrainConfig, TrainSinks, TrainingData, SampleKind};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let wsteps: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(50);
    let bsteps: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(50);
    let lr: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(1e-3);
    let mut cfg = TrainConfig { warmup_epochs: 1, epochs: 1, steps_per_epoch: wsteps, warmup_learning_rate: lr, learning_rate: lr, disc_learning_rate: lr * 0.5, log_every: 25, ..TrainConfig::default() };
    for kv in args.iter().skip(4) {
        cfg.apply_text(kv).unwrap();
    }
    let tag = std::env::var("TAG").unwrap_or_default();
    let t0 = Instant::now();
    let data = TrainingData::generate(0, cfg.num_videos, cfg.video_length, cfg.image_size).unwrap();
    eprintln!("data {:?}", t0.elapsed());
    let t0 = Instant::now();
    let (trainer, rep) = train_warmup(&cfg, &data, &mut TrainSinks::default()).unwrap();
    let dt = t0.elapsed();
    eprintln!("warmup {} steps {:?} ({:?}/step)", wsteps, dt, dt / wsteps.max(1) as u32);
    for r in rep.iter().step_by((wsteps / 10).max(1)) {
        eprintln!("{}", r.csv_row());
    }
    cfg.steps_per_epoch = bsteps;
    let t0 = Instant::now();
    let (trainer, rep) = train_decoupling(trainer, &cfg, &data, &mut TrainSinks::default()).unwrap();
    let dt = t0.elapsed();
    eprintln!("decouple {} steps {:?}", bsteps, dt);
    for r in rep.iter().step_by((bsteps / 10).max(1)) {
        eprintln!("{}", r.csv_row());
    }
    hairshift_core::checkpoint::save_generator(std::path::Path::new(&format!("/tmp/model{tag}.ckpt")), &trainer.model).unwrap();
    let held = TrainingData::generate(99, 16, cfg.video_length, cfg.image_size).unwrap();
    let t0 = Instant::now();
    let st = hairshift_core::training::evaluate_held_out(&trainer.model, &held, 200, 5, false).unwrap();
    eprintln!("held-out {:?} in {:?}", st, t0.elapsed());
    let b = data.batch(SampleKind::Decoupling, 4, 999).unwrap();
    for (i, s) in b.iter().enumerate() {
        let m = &trainer.model;
        let src = m.motion_descriptor(&s.source, Some(&s.source_pose)).unwrap();
        let drv = m.motion_descriptor(&s.pseudo, Some(&s.driving_pose)).unwrap();
        let out = m.generate(&s.source, &s.pseudo, &s.context_mask, (&src, &drv)).unwrap();
        out.save_png(std::path::Path::new(&format!("/tmp/out{tag}_{i}.png"))).unwrap();
        s.target.save_png(std::path::Path::new(&format!("/tmp/tgt_{i}.png"))).unwrap();
        s.pseudo.save_png(std::path::Path::new(&format!("/tmp/pse_{i}.png"))).unwrap();
    }
}
