//! Generator/discriminator updates and the two-phase schedule.

use std::io::Write;
use std::path::{Path, PathBuf};

use log::info;

use crate::checkpoint::save_generator;
use crate::decoder::FusionMode;
use crate::encoders::{encode_pose, MotionMode, MOTION_DIM};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::model::{Generator, ModelConfig};
use crate::params::ParamId;
use crate::tensor::Tensor;
use crate::encoders::MotionRegressor;

use super::config::{warmup_freeze, TrainConfig};
use super::data::{SampleKind, TrainSample, TrainingData};
use super::losses::{linear_surrogate, localized_l1_var, reconstruction_l1_var, total_loss, L1Convention, LossReport, LossTerms, LossWeights};
use super::nets::{PatchDiscriminator, PerceptualNet};
use super::optim::Adam;

/// Decoder wiring of an ablation setting.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SettingSpec {
    pub fusion_mode: FusionMode,
    pub hmg_enabled: bool,
    /// Whether the decoupling phase runs.
    pub decoupled: bool,
    /// Post-hoc blending of the synthesized hair onto the driving frame.
    pub pixel_blend: bool,
}

pub fn setting_spec(setting: u8) -> Result<SettingSpec> {
    let s = |fusion_mode, hmg_enabled, decoupled, pixel_blend| SettingSpec { fusion_mode, hmg_enabled, decoupled, pixel_blend };
    match setting {
        1 => Ok(s(FusionMode::None, false, false, false)),
        2 => Ok(s(FusionMode::None, false, false, true)),
        3 => Ok(s(FusionMode::SingleScale, true, true, false)),
        4 => Ok(s(FusionMode::MultiScale, false, true, false)),
        5 => Ok(s(FusionMode::MultiScale, true, true, false)),
        _ => Err(Error::Config(format!("ablation setting must be in 1..=5, got {setting}"))),
    }
}

#[derive(Clone)]
pub struct Trainer {
    pub model: Generator<f32>,
    pub disc: PatchDiscriminator<f32>,
    perceptual: PerceptualNet<f32>,
    g_opt: Adam<f32>,
    d_opt: Adam<f32>,
    pub weights: LossWeights,
    pub convention: L1Convention,
    pub step: usize,
}

fn accumulate(acc: &mut Vec<(ParamId, Tensor<f32>)>, grads: Vec<(ParamId, Tensor<f32>)>, scale: f32) {
    for (id, mut g) in grads {
        g.data_mut().iter_mut().for_each(|v| *v *= scale);
        match acc.iter_mut().find(|(i, _)| *i == id) {
            Some((_, a)) => a.add_assign(&g),
            None => acc.push((id, g)),
        }
    }
}

impl Trainer {
    pub fn new(model: Generator<f32>, lr: f64, disc_lr: f64, weights: LossWeights, convention: L1Convention) -> Self {
        let seed = model.cfg.seed;
        Self {
            model,
            disc: PatchDiscriminator::new(seed),
            perceptual: PerceptualNet::new(),
            g_opt: Adam::new(lr),
            d_opt: Adam::new(disc_lr),
            weights,
            convention,
            step: 0,
        }
    }

    /// Freezes exactly the parameter groups named by `prefixes`.
    pub fn freeze(&mut self, prefixes: &[String]) {
        let p: Vec<String> = prefixes.iter().map(|s| format!("{s}.")).collect();
        let refs: Vec<&str> = p.iter().map(String::as_str).collect();
        self.model.store.unfreeze_all();
        self.model.store.freeze_prefixes(&refs);
    }

    /// Fresh generator optimiser state at learning rate `lr`.
    pub fn reset_optimizer(&mut self, lr: f64) {
        self.g_opt = Adam::new(lr);
    }

    fn sample_forward(&self, s: &TrainSample, g_acc: &mut Vec<(ParamId, Tensor<f32>)>, scale: f32) -> Result<(LossTerms, Tensor<f32>)> {
        let m = &self.model;
        let src = m.motion_descriptor(&s.source, Some(&s.source_pose))?;
        let drv = m.motion_descriptor(&s.pseudo, Some(&s.driving_pose))?;
        let mut g = Graph::new(&m.store);
        let out = m.forward(&mut g, &s.source, &s.pseudo, &s.context_mask, (&src, &drv), None)?;
        let pred = g.value(out.image).clone();
        let target = s.target.to_tensor::<f32>();
        let w = &self.weights;

        let (p_val, p_grad) = self.perceptual.loss_and_grad(&target, &pred);
        let (a_val, a_grad) = self.disc.gen_loss_and_grad(&pred);
        let rec = reconstruction_l1_var(&mut g, &target, out.image);
        let hair = localized_l1_var(&mut g, &target, out.image, &s.hair_mask.to_tensor(), self.convention);
        let face = localized_l1_var(&mut g, &target, out.image, &s.face_mask.to_tensor(), self.convention);
        let terms = LossTerms {
            adv: a_val,
            perceptual: p_val,
            rec: g.value(rec).item() as f64,
            hair: g.value(hair).item() as f64,
            face: g.value(face).item() as f64,
        };
        let mut parts = Vec::new();
        for (lambda, v) in [(w.lambda_rec, rec), (w.lambda_hair, hair), (w.lambda_face, face)] {
            if lambda != 0.0 {
                parts.push(g.scale(v, lambda as f32));
            }
        }
        for (lambda, grad) in [(w.lambda_p, p_grad), (w.lambda_adv, a_grad)] {
            if lambda != 0.0 {
                let s = linear_surrogate(&mut g, out.image, grad);
                parts.push(g.scale(s, lambda as f32));
            }
        }
        if let Some((&first, rest)) = parts.split_first() {
            let mut loss = first;
            for &p in rest {
                loss = g.add(loss, p);
            }
            accumulate(g_acc, g.backward(loss).into_params(), scale);
        }
        Ok((terms, pred))
    }

    /// One generator update followed by one discriminator update.
    pub fn train_step(&mut self, batch: &[TrainSample]) -> Result<LossReport> {
        if batch.is_empty() {
            return Err(Error::Validation("empty training batch".into()));
        }
        let scale = 1.0 / batch.len() as f32;
        let mut g_acc = Vec::new();
        let mut terms = Vec::with_capacity(batch.len());
        let mut fakes = Vec::with_capacity(batch.len());
        for s in batch {
            let (t, pred) = self.sample_forward(s, &mut g_acc, scale)?;
            terms.push(t);
            fakes.push(pred);
        }
        let report = total_loss(LossTerms::mean(&terms), &self.weights, self.step);
        let finite = report.total.is_finite() && g_acc.iter().all(|(_, g)| g.is_finite());
        if !finite {
            return Err(Error::NonFinite(format!("step {}: loss {:?}", self.step, report)));
        }
        self.g_opt.step(&mut self.model.store, &g_acc);

        if self.weights.lambda_adv != 0.0 {
            let mut d_acc = Vec::new();
            for (s, fake) in batch.iter().zip(&fakes) {
                let (_, grads) = self.disc.disc_loss_and_grads(&s.target.to_tensor(), fake);
                accumulate(&mut d_acc, grads.into_params(), scale);
            }
            self.d_opt.step(&mut self.disc.store, &d_acc);
        }
        self.step += 1;
        Ok(report)
    }

    /// One regression step of the learned motion estimator on ground-truth poses.
    pub fn motion_step(&mut self, batch: &[TrainSample], opt: &mut Adam<f32>) -> Result<f64> {
        let scale = 1.0 / batch.len() as f32;
        let mut acc = Vec::new();
        let mut total = 0.0;
        for s in batch {
            for (frame, pose) in [(&s.source, &s.source_pose), (&s.target, &s.driving_pose)] {
                let mut g = Graph::new(&self.model.store);
                let x = g.constant(MotionRegressor::input_tensor(frame));
                let out = self.model.motion.forward(&mut g, x);
                let target = Tensor::from_vec(&[MOTION_DIM], encode_pose(pose).iter().map(|&v| v as f32).collect());
                let t = g.constant(target.reshape(g.value(out).shape()));
                let d = g.sub(out, t);
                let sq = g.mul(d, d);
                let loss = g.mean(sq);
                total += g.value(loss).item() as f64;
                accumulate(&mut acc, g.backward(loss).into_params(), scale * 0.5);
            }
        }
        opt.step(&mut self.model.store, &acc);
        Ok(total / (2 * batch.len()) as f64)
    }
}

/// Where training progress goes.
#[derive(Default)]
pub struct TrainSinks<'a> {
    pub loss_csv: Option<&'a mut dyn Write>,
    pub checkpoint_dir: Option<PathBuf>,
}

fn log_report(sinks: &mut TrainSinks<'_>, r: &LossReport) -> Result<()> {
    if let Some(w) = sinks.loss_csv.as_deref_mut() {
        writeln!(w, "{}", r.csv_row()).map_err(|e| Error::io("<loss log>", e))?;
    }
    Ok(())
}

fn maybe_checkpoint(dir: Option<&Path>, every: usize, step: usize, model: &Generator<f32>) -> Result<()> {
    if let Some(d) = dir {
        if every > 0 && step % every == 0 {
            save_generator(&d.join(format!("step_{step:06}.ckpt")), model)?;
        }
    }
    Ok(())
}

pub fn model_config(cfg: &TrainConfig) -> ModelConfig {
    let mut m = ModelConfig { image_size: cfg.image_size, motion_mode: cfg.motion_mode, seed: cfg.seed, ..ModelConfig::default() };
    m.encoder.depth = cfg.encoder_depth;
    m.encoder.base_channels = cfg.encoder_base_channels;
    m.decoder.num_scales = cfg.decoder_channels.len();
    m.decoder.channels = cfg.decoder_channels.clone();
    m.decoder.spade_hidden = cfg.decoder_channels.iter().map(|&c| c.max(8)).collect();
    m.decoder.fusion_mode = FusionMode::None;
    m
}

fn run_phase(
    trainer: &mut Trainer,
    data: &TrainingData,
    cfg: &TrainConfig,
    kind: SampleKind,
    steps: usize,
    sinks: &mut TrainSinks<'_>,
    motion_opt: &mut Option<Adam<f32>>,
) -> Result<Vec<LossReport>> {
    let mut reports = Vec::with_capacity(steps);
    let phase_tag = match kind {
        SampleKind::Reconstruction => 0xa,
        SampleKind::Decoupling => 0xb,
    };
    for i in 0..steps {
        let seed = cfg.seed.wrapping_mul(0x1000_0000_01b3) ^ (phase_tag << 40) ^ i as u64;
        let batch = data.batch(kind, cfg.batch_size, seed)?;
        if let Some(opt) = motion_opt.as_mut() {
            trainer.motion_step(&batch, opt)?;
        }
        let r = trainer.train_step(&batch)?;
        if cfg.log_every > 0 && (trainer.step % cfg.log_every == 0 || i + 1 == steps) {
            info!("step {} total {:.5} rec {:.5} hair {:.5} face {:.5}", r.step, r.total, r.terms.rec, r.terms.hair, r.terms.face);
        }
        log_report(sinks, &r)?;
        maybe_checkpoint(sinks.checkpoint_dir.as_deref(), cfg.checkpoint_every, trainer.step, &trainer.model)?;
        reports.push(r);
    }
    Ok(reports)
}

/// Warm-up reconstruction phase from a fresh model.
pub fn train_warmup(cfg: &TrainConfig, data: &TrainingData, sinks: &mut TrainSinks<'_>) -> Result<(Trainer, Vec<LossReport>)> {
    cfg.validate()?;
    let model = Generator::new(&model_config(cfg))?;
    let mut trainer = Trainer::new(model, cfg.warmup_learning_rate, cfg.disc_learning_rate, cfg.weights, cfg.l1_convention);
    trainer.freeze(&warmup_freeze(cfg.motion_mode));
    let mut motion_opt = (cfg.motion_mode == MotionMode::Learned).then(|| Adam::new(cfg.warmup_learning_rate));
    if let Some(sink) = sinks.loss_csv.as_deref_mut() {
        writeln!(sink, "{}", LossReport::csv_header()).map_err(|e| Error::io("<loss log>", e))?;
    }
    let steps = cfg.warmup_epochs * cfg.steps_per_epoch;
    let reports = run_phase(&mut trainer, data, cfg, SampleKind::Reconstruction, steps, sinks, &mut motion_opt)?;
    Ok((trainer, reports))
}

/// Configures a warmed-up trainer for `setting` and runs the decoupling
/// phase when the setting has one.
pub fn train_decoupling(mut trainer: Trainer, cfg: &TrainConfig, data: &TrainingData, sinks: &mut TrainSinks<'_>) -> Result<(Trainer, Vec<LossReport>)> {
    let spec = setting_spec(cfg.ablation_setting)?;
    trainer.model.set_fusion_mode(spec.fusion_mode);
    trainer.model.set_hmg(spec.hmg_enabled);
    if !spec.decoupled {
        return Ok((trainer, Vec::new()));
    }
    trainer.model.init_context_from_synthesis();
    trainer.freeze(&cfg.freeze);
    trainer.reset_optimizer(cfg.learning_rate);
    let steps = cfg.epochs * cfg.steps_per_epoch;
    let reports = run_phase(&mut trainer, data, cfg, SampleKind::Decoupling, steps, sinks, &mut None)?;
    Ok((trainer, reports))
}

/// Both phases back to back.
pub fn train(cfg: &TrainConfig, data: &TrainingData, sinks: &mut TrainSinks<'_>) -> Result<(Generator<f32>, Vec<LossReport>)> {
    let (trainer, mut reports) = train_warmup(cfg, data, sinks)?;
    let (trainer, more) = train_decoupling(trainer, cfg, data, sinks)?;
    reports.extend(more);
    if let Some(d) = sinks.checkpoint_dir.as_deref() {
        save_generator(&d.join("final.ckpt"), &trainer.model)?;
    }
    Ok((trainer.model, reports))
}
