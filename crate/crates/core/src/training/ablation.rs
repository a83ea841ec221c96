//! Held-out evaluation of trained generators and the five ablation settings.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{Frame, HairMask};
use crate::iht::realign_mask;
use crate::metrics::{masked_l1, masked_ssim};
use crate::model::Generator;
use crate::pipeline::blend_hair;

use super::config::TrainConfig;
use super::data::{SampleKind, TrainSample, TrainingData};
use super::trainer::{setting_spec, train_decoupling, train_warmup, TrainSinks, Trainer};

/// Pearson correlation; `None` when either side has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len().min(y.len()) as f64;
    if n < 2.0 {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

fn median(v: &mut [f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeldOutStats {
    pub samples: usize,
    /// Correlation of output hair colour with the source frame's hair colour.
    pub source_hair_corr: Option<f64>,
    /// Correlation of output hair colour with the pseudo driving hair colour.
    pub pseudo_hair_corr: Option<f64>,
    pub ssim_nonhair_mean: f64,
    pub ssim_nonhair_median: f64,
    pub l1_nonhair_mean: f64,
    /// Pixels outside the blur band that differ from the driving frame (blended settings only).
    pub blend_violations: Option<usize>,
}

/// Output of the generator for one held-out sample.
pub fn predict_sample(model: &Generator<f32>, s: &TrainSample, pixel_blend: bool, blur_sigma: f64) -> Result<(Frame, HairMask)> {
    let src = model.motion_descriptor(&s.source, Some(&s.source_pose))?;
    let drv = model.motion_descriptor(&s.pseudo, Some(&s.driving_pose))?;
    let out = model.generate(&s.source, &s.pseudo, &s.context_mask, (&src, &drv))?;
    let blend_mask = realign_mask(&s.source_hair_mask, &s.driving_pose, &s.source_pose).union(&s.context_mask);
    if pixel_blend {
        Ok((blend_hair(&out, &s.pseudo, &blend_mask, blur_sigma), blend_mask))
    } else {
        Ok((out, blend_mask))
    }
}

/// Evaluates on `n` decoupling samples drawn from `data` with `seed`.
pub fn evaluate_held_out(model: &Generator<f32>, data: &TrainingData, n: usize, seed: u64, pixel_blend: bool) -> Result<HeldOutStats> {
    if n == 0 {
        return Err(Error::Validation("held-out evaluation needs at least one sample".into()));
    }
    let sigma = data.composite.blur_sigma;
    let (mut out_c, mut src_c, mut pse_c) = (Vec::new(), Vec::new(), Vec::new());
    let (mut ssim, mut l1) = (Vec::with_capacity(n), Vec::with_capacity(n));
    let mut violations = 0usize;
    for i in 0..n {
        let s = data.sample(SampleKind::Decoupling, seed.wrapping_mul(0x2545_f491).wrapping_add(i as u64))?;
        let (pred, blend_mask) = predict_sample(model, &s, pixel_blend, sigma)?;
        if let (Some(o), Some(sc)) = (pred.masked_mean(&s.hair_mask), s.source.masked_mean(&s.source_hair_mask)) {
            out_c.extend(o);
            src_c.extend(sc);
            pse_c.extend(s.pseudo_hair_color.map(|v| v as f64));
        }
        let nonhair = s.hair_mask.complement();
        ssim.push(masked_ssim(&pred, &s.target, &nonhair)?.unwrap_or(1.0));
        l1.push(masked_l1(&pred, &s.target, &nonhair)?.unwrap_or(0.0));
        if pixel_blend {
            let alpha = crate::iht::blur_mask(&blend_mask, sigma);
            for (p, &a) in alpha.data().iter().enumerate() {
                if a == 0.0 && (0..3).any(|c| pred.data()[3 * p + c] != s.pseudo.data()[3 * p + c]) {
                    violations += 1;
                }
            }
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(HeldOutStats {
        samples: n,
        source_hair_corr: pearson(&out_c, &src_c),
        pseudo_hair_corr: pearson(&out_c, &pse_c),
        ssim_nonhair_mean: mean(&ssim),
        ssim_nonhair_median: median(&mut ssim.clone()).unwrap_or(f64::NAN),
        l1_nonhair_mean: mean(&l1),
        blend_violations: pixel_blend.then_some(violations),
    })
}

pub struct AblationOutcome {
    pub setting: u8,
    pub model: Generator<f32>,
    pub stats: HeldOutStats,
}

/// Trains the decoupling phase of `cfg.ablation_setting` on top of a shared
/// warm-up and evaluates it.
pub fn run_setting_from_warmup(
    warm: &Trainer,
    cfg: &TrainConfig,
    data: &TrainingData,
    held_out: &TrainingData,
    n_eval: usize,
) -> Result<AblationOutcome> {
    let spec = setting_spec(cfg.ablation_setting)?;
    let (trainer, _) = train_decoupling(warm.clone(), cfg, data, &mut TrainSinks::default())?;
    let stats = evaluate_held_out(&trainer.model, held_out, n_eval, cfg.seed ^ 0xe7a1, spec.pixel_blend)?;
    Ok(AblationOutcome { setting: cfg.ablation_setting, model: trainer.model, stats })
}

/// Full run of one ablation setting from scratch.
pub fn run_ablation(setting: u8, cfg: &TrainConfig, data: &TrainingData, held_out: &TrainingData, n_eval: usize) -> Result<AblationOutcome> {
    setting_spec(setting)?;
    let cfg = TrainConfig { ablation_setting: setting, ..cfg.clone() };
    let (warm, _) = train_warmup(&cfg, data, &mut TrainSinks::default())?;
    run_setting_from_warmup(&warm, &cfg, data, held_out, n_eval)
}
