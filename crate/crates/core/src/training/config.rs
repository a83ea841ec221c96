//! Training configuration and its `key = value` file format.

use std::path::Path;
use std::str::FromStr;

use crate::encoders::MotionMode;
use crate::error::{Error, Result};
use crate::model::{CONTEXT_ENCODER, DECODER_CONTEXT, DECODER_GF, DECODER_SYNTHESIS, HAIR_ENCODER, MOTION_ESTIMATOR};

use super::losses::{L1Convention, LossWeights};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Decoupling-phase epochs.
    pub epochs: usize,
    /// Reconstruction warm-up epochs.
    pub warmup_epochs: usize,
    pub steps_per_epoch: usize,
    /// Learning rate of the warm-up phase.
    pub warmup_learning_rate: f64,
    pub disc_learning_rate: f64,
    pub seed: u64,
    /// Parameter groups frozen during the decoupling phase.
    pub freeze: Vec<String>,
    pub ablation_setting: u8,
    pub weights: LossWeights,
    pub l1_convention: L1Convention,
    pub motion_mode: MotionMode,
    pub num_videos: usize,
    pub video_length: usize,
    pub image_size: usize,
    pub encoder_depth: usize,
    pub encoder_base_channels: usize,
    /// Decoder activation widths, coarsest first; one entry per scale.
    pub decoder_channels: Vec<usize>,
    pub log_every: usize,
    /// Zero disables periodic checkpoints.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-5,
            batch_size: 4,
            epochs: 1,
            warmup_epochs: 1,
            steps_per_epoch: 100,
            warmup_learning_rate: 2e-5,
            disc_learning_rate: 2e-5,
            seed: 0,
            freeze: default_freeze(),
            ablation_setting: 5,
            weights: LossWeights::default(),
            l1_convention: L1Convention::Mean,
            motion_mode: MotionMode::Passthrough,
            num_videos: 32,
            video_length: 16,
            image_size: 64,
            encoder_depth: 3,
            encoder_base_channels: 16,
            decoder_channels: vec![32, 16, 8],
            log_every: 10,
            checkpoint_every: 0,
        }
    }
}

/// Everything except `E_C` and the gated-fusion blocks.
pub fn default_freeze() -> Vec<String> {
    [HAIR_ENCODER, MOTION_ESTIMATOR, DECODER_SYNTHESIS, DECODER_CONTEXT].iter().map(|s| s.to_string()).collect()
}

/// Groups frozen during warm-up: the context branch and the fusion blocks,
/// plus the motion regressor when it is not in use.
pub fn warmup_freeze(mode: MotionMode) -> Vec<String> {
    let mut v: Vec<String> = [CONTEXT_ENCODER, DECODER_CONTEXT, DECODER_GF].iter().map(|s| s.to_string()).collect();
    if mode == MotionMode::Passthrough {
        v.push(MOTION_ESTIMATOR.to_string());
    }
    v
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (k, v) in [
            ("learning_rate", self.learning_rate),
            ("warmup_learning_rate", self.warmup_learning_rate),
            ("disc_learning_rate", self.disc_learning_rate),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{k} must be positive, got {v}")));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.steps_per_epoch == 0 {
            return Err(Error::Config("steps_per_epoch must be at least 1".into()));
        }
        if !(1..=5).contains(&self.ablation_setting) {
            return Err(Error::Config(format!("ablation_setting must be in 1..=5, got {}", self.ablation_setting)));
        }
        if self.video_length < 2 {
            return Err(Error::Config("video_length must be at least 2".into()));
        }
        self.weights.validate()
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "learning_rate" => self.learning_rate = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "warmup_epochs" => self.warmup_epochs = parse(key, v)?,
            "steps_per_epoch" => self.steps_per_epoch = parse(key, v)?,
            "warmup_learning_rate" => self.warmup_learning_rate = parse(key, v)?,
            "disc_learning_rate" => self.disc_learning_rate = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "freeze" => self.freeze = v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect(),
            "ablation_setting" => self.ablation_setting = parse(key, v)?,
            "lambda_adv" => self.weights.lambda_adv = parse(key, v)?,
            "lambda_p" => self.weights.lambda_p = parse(key, v)?,
            "lambda_rec" => self.weights.lambda_rec = parse(key, v)?,
            "lambda_hair" => self.weights.lambda_hair = parse(key, v)?,
            "lambda_face" => self.weights.lambda_face = parse(key, v)?,
            "l1_convention" => {
                self.l1_convention = match v {
                    "mean" => L1Convention::Mean,
                    "raw_sum" => L1Convention::RawSum,
                    _ => return Err(Error::Config(format!("l1_convention must be mean or raw_sum, got {v:?}"))),
                }
            }
            "motion_mode" => {
                self.motion_mode = match v {
                    "passthrough" => MotionMode::Passthrough,
                    "learned" => MotionMode::Learned,
                    _ => return Err(Error::Config(format!("motion_mode must be passthrough or learned, got {v:?}"))),
                }
            }
            "num_videos" => self.num_videos = parse(key, v)?,
            "video_length" => self.video_length = parse(key, v)?,
            "image_size" => self.image_size = parse(key, v)?,
            "encoder_depth" => self.encoder_depth = parse(key, v)?,
            "encoder_base_channels" => self.encoder_base_channels = parse(key, v)?,
            "decoder_channels" => {
                self.decoder_channels = v.split(',').map(|x| parse(key, x.trim())).collect::<Result<_>>()?;
            }
            "log_every" => self.log_every = parse(key, v)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, v)?,
            other => return Err(Error::Config(format!("unknown training key {other:?}"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines; blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply_text(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    pub fn to_text(&self) -> String {
        let w = &self.weights;
        let conv = match self.l1_convention {
            L1Convention::Mean => "mean",
            L1Convention::RawSum => "raw_sum",
        };
        let mode = match self.motion_mode {
            MotionMode::Passthrough => "passthrough",
            MotionMode::Learned => "learned",
        };
        format!(
            "learning_rate = {}\nbatch_size = {}\nepochs = {}\nwarmup_epochs = {}\nsteps_per_epoch = {}\n\
             warmup_learning_rate = {}\ndisc_learning_rate = {}\nseed = {}\nfreeze = {}\nablation_setting = {}\n\
             lambda_adv = {}\nlambda_p = {}\nlambda_rec = {}\nlambda_hair = {}\nlambda_face = {}\n\
             l1_convention = {conv}\nmotion_mode = {mode}\nnum_videos = {}\nvideo_length = {}\nimage_size = {}\n\
             encoder_depth = {}\nencoder_base_channels = {}\ndecoder_channels = {}\nlog_every = {}\ncheckpoint_every = {}\n",
            self.learning_rate,
            self.batch_size,
            self.epochs,
            self.warmup_epochs,
            self.steps_per_epoch,
            self.warmup_learning_rate,
            self.disc_learning_rate,
            self.seed,
            self.freeze.join(","),
            self.ablation_setting,
            w.lambda_adv,
            w.lambda_p,
            w.lambda_rec,
            w.lambda_hair,
            w.lambda_face,
            self.num_videos,
            self.video_length,
            self.image_size,
            self.encoder_depth,
            self.encoder_base_channels,
            self.decoder_channels.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(","),
            self.log_every,
            self.checkpoint_every,
        )
    }
}
