//! Inference: anchor selection, anchor synthesis, per-frame animation.

use std::path::{Path, PathBuf};
use std::sync::mpsc::sync_channel;

use serde::{Deserialize, Serialize};

use crate::data_synth::PoseParams;
use crate::decoder::FusionMode;
use crate::encoders::{FeatureVolume, MotionDescriptor, MotionMode};
use crate::error::{Error, Result};
use crate::frame::{Frame, HairMask};
use crate::iht::{blur_mask, realign_mask, synthesize_anchor, CompositeConfig, RegionMasks};
use crate::model::Generator;
use crate::video_io::{FrameRecord, VideoReader};

pub const READ_AHEAD: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseDistanceWeights {
    pub yaw: f64,
    pub translation: f64,
    pub scale: f64,
}

impl Default for PoseDistanceWeights {
    fn default() -> Self {
        Self { yaw: 1.0, translation: 0.5, scale: 0.5 }
    }
}

/// Weighted L2 over yaw, translation in units of the frame size, and scale.
pub fn pose_distance(a: &PoseParams, b: &PoseParams, size: (usize, usize), w: &PoseDistanceWeights) -> f64 {
    let dy = (a.yaw - b.yaw) * w.yaw;
    let tx = (a.dx - b.dx) / size.1 as f64 * w.translation;
    let ty = (a.dy - b.dy) / size.0 as f64 * w.translation;
    let ds = (a.scale - b.scale) * w.scale;
    (dy * dy + tx * tx + ty * ty + ds * ds).sqrt()
}

/// Index of the pose closest to `reference`; the lowest index wins ties.
pub fn select_anchor_frame(poses: &[PoseParams], reference: &PoseParams, size: (usize, usize), w: &PoseDistanceWeights) -> Result<usize> {
    if poses.is_empty() {
        return Err(Error::Validation("cannot select an anchor from an empty video".into()));
    }
    let mut best = (0, f64::INFINITY);
    for (t, p) in poses.iter().enumerate() {
        let d = pose_distance(p, reference, size, w);
        if d < best.1 {
            best = (t, d);
        }
    }
    Ok(best.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AnchorStrategy {
    PoseSimilar,
    FirstFrame,
    ExplicitIndex(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub checkpoint: PathBuf,
    /// Overrides the checkpoint's motion mode.
    pub motion_mode: Option<MotionMode>,
    pub fusion_mode: Option<FusionMode>,
    pub hmg_enabled: Option<bool>,
    /// Post-hoc compositing of the synthesized hair onto the driving frame.
    pub pixel_blend: bool,
    pub anchor: AnchorStrategy,
    pub composite: CompositeConfig,
    pub pose_weights: PoseDistanceWeights,
    pub output_dir: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            checkpoint: PathBuf::new(),
            motion_mode: None,
            fusion_mode: None,
            hmg_enabled: None,
            pixel_blend: false,
            anchor: AnchorStrategy::PoseSimilar,
            composite: CompositeConfig::default(),
            pose_weights: PoseDistanceWeights::default(),
            output_dir: PathBuf::from("out"),
        }
    }
}

impl PipelineConfig {
    /// Applies the configured overrides to a loaded model.
    pub fn configure(&self, model: &mut Generator<f32>) {
        if let Some(m) = self.motion_mode {
            model.cfg.motion_mode = m;
        }
        if let Some(f) = self.fusion_mode {
            model.set_fusion_mode(f);
        }
        if let Some(h) = self.hmg_enabled {
            model.set_hmg(h);
        }
    }
}

/// Target hairstyle image with its masks and (optional) pose.
#[derive(Clone, Debug)]
pub struct Reference {
    pub frame: Frame,
    pub hair_mask: HairMask,
    pub face_mask: HairMask,
    pub pose: Option<PoseParams>,
}

/// Driving frame as seen by the animator.
pub struct DrivingFrame<'a> {
    pub frame: &'a Frame,
    pub hair_mask: &'a HairMask,
    pub pose: Option<&'a PoseParams>,
}

/// State fixed for a whole run: the anchor `I_s` and its hair features.
pub struct Animator<'m> {
    model: &'m Generator<f32>,
    pub anchor_index: usize,
    pub anchor: Frame,
    pub anchor_hair: HairMask,
    anchor_pose: PoseParams,
    source_motion: MotionDescriptor,
    f_h: FeatureVolume<f32>,
    pixel_blend: bool,
    blur_sigma: f64,
}

pub struct AnimatedFrame {
    pub frame: Frame,
    /// Anchor hair region carried to this frame's pose.
    pub hair_mask: HairMask,
}

fn pose_or_estimate(model: &Generator<f32>, frame: &Frame, pose: Option<&PoseParams>) -> Result<PoseParams> {
    match pose {
        Some(p) => Ok(*p),
        None => Ok(model.motion_descriptor(frame, None)?.pose()),
    }
}

impl<'m> Animator<'m> {
    /// Builds `I_s` from driving frame `anchor_index` wearing the reference hair.
    pub fn new(
        model: &'m Generator<f32>,
        anchor_index: usize,
        anchor: &FrameRecord,
        reference: &Reference,
        cfg: &PipelineConfig,
    ) -> Result<Self> {
        let hair = anchor.hair_mask.as_ref().ok_or_else(|| Error::Validation(format!("anchor frame {anchor_index} has no hair mask")))?;
        let face = anchor.face_mask.clone().unwrap_or_else(|| HairMask::zeros(hair.height(), hair.width()));
        let anchor_pose = pose_or_estimate(model, &anchor.frame, anchor.pose.as_ref())?;
        let ref_pose = pose_or_estimate(model, &reference.frame, reference.pose.as_ref())?;
        let comp = synthesize_anchor(
            &anchor.frame,
            RegionMasks { hair, face: &face },
            &reference.frame,
            RegionMasks { hair: &reference.hair_mask, face: &reference.face_mask },
            (&anchor_pose, &ref_pose),
            &cfg.composite,
        )?;
        let source_motion = model.motion_descriptor(&comp.frame, Some(&anchor_pose))?;
        let f_h = model.hair_features(&comp.frame)?;
        Ok(Self {
            model,
            anchor_index,
            anchor: comp.frame,
            anchor_hair: comp.new_hair,
            anchor_pose,
            source_motion,
            f_h,
            pixel_blend: cfg.pixel_blend,
            blur_sigma: cfg.composite.blur_sigma,
        })
    }

    pub fn animate(&self, d: &DrivingFrame<'_>) -> Result<AnimatedFrame> {
        let drv_motion = self.model.motion_descriptor(d.frame, d.pose)?;
        let target_pose = drv_motion.pose();
        let out = self.model.animate(&self.f_h, d.frame, d.hair_mask, (&self.source_motion, &drv_motion))?;
        let hair_mask = realign_mask(&self.anchor_hair, &target_pose, &self.anchor_pose);
        let frame = if self.pixel_blend { blend_hair(&out, d.frame, &hair_mask.union(d.hair_mask), self.blur_sigma) } else { out };
        Ok(AnimatedFrame { frame, hair_mask })
    }
}

/// `α · synthesized + (1 − α) · driving` with `α` the blurred hair mask;
/// pixels with `α = 0` are copied from `driving` unchanged.
pub fn blend_hair(synthesized: &Frame, driving: &Frame, hair: &HairMask, sigma: f64) -> Frame {
    let alpha = blur_mask(hair, sigma);
    let mut out = driving.clone();
    for (i, &a) in alpha.data().iter().enumerate() {
        if a > 0.0 {
            for c in 0..3 {
                let k = 3 * i + c;
                out.data_mut()[k] = a * synthesized.data()[k] + (1.0 - a) * driving.data()[k];
            }
        }
    }
    out
}

fn anchor_index(poses: &[PoseParams], reference: &Reference, model: &Generator<f32>, size: (usize, usize), cfg: &PipelineConfig) -> Result<usize> {
    match cfg.anchor {
        AnchorStrategy::FirstFrame => Ok(0),
        AnchorStrategy::ExplicitIndex(i) => {
            if i >= poses.len() {
                return Err(Error::Validation(format!("anchor index {i} beyond T = {}", poses.len())));
            }
            Ok(i)
        }
        AnchorStrategy::PoseSimilar => {
            let ref_pose = pose_or_estimate(model, &reference.frame, reference.pose.as_ref())?;
            select_anchor_frame(poses, &ref_pose, size, &cfg.pose_weights)
        }
    }
}

/// Streams a video directory through the animator with a bounded
/// read-ahead; `sink` receives frames in order.
pub fn run_inference(
    model: &Generator<f32>,
    video_dir: &Path,
    reference: &Reference,
    cfg: &PipelineConfig,
    mut sink: impl FnMut(usize, AnimatedFrame) -> Result<()>,
) -> Result<usize> {
    let reader = VideoReader::open(video_dir)?;
    let m = reader.manifest().clone();
    let size = (m.height, m.width);
    if size != model.cfg.image_hw() {
        return Err(Error::Shape(format!("video is {size:?}, model expects {:?}", model.cfg.image_hw())));
    }
    let poses = if m.poses.len() == m.len {
        m.poses.clone()
    } else {
        // no manifest poses: estimate them frame by frame
        let mut p = Vec::with_capacity(m.len);
        for t in 0..m.len {
            p.push(pose_or_estimate(model, &reader.read_frame(t)?.frame, None)?);
        }
        p
    };
    let idx = anchor_index(&poses, reference, model, size, cfg)?;
    let anchor_rec = reader.read_frame(idx)?;
    let animator = Animator::new(model, idx, &anchor_rec, reference, cfg)?;
    let (tx, rx) = sync_channel::<Result<FrameRecord>>(READ_AHEAD);
    std::thread::scope(|s| {
        s.spawn(move || {
            for rec in reader {
                if tx.send(rec).is_err() {
                    break;
                }
            }
        });
        let mut n = 0;
        for rec in rx {
            let rec = rec?;
            let hair = rec.hair_mask.clone().unwrap_or_else(|| HairMask::zeros(size.0, size.1));
            let out = animator.animate(&DrivingFrame { frame: &rec.frame, hair_mask: &hair, pose: rec.pose.as_ref() })?;
            sink(rec.index, out)?;
            n += 1;
        }
        Ok(n)
    })
}

/// In-memory variant over already-loaded frames.
pub fn run_inference_frames(
    model: &Generator<f32>,
    frames: &[Frame],
    hair_masks: &[HairMask],
    face_masks: &[HairMask],
    poses: &[PoseParams],
    reference: &Reference,
    cfg: &PipelineConfig,
) -> Result<(usize, Vec<AnimatedFrame>)> {
    let t = frames.len();
    if t == 0 || hair_masks.len() != t || face_masks.len() != t || poses.len() != t {
        return Err(Error::Validation("frames, masks and poses must have equal nonzero length".into()));
    }
    let size = frames[0].dims();
    let idx = anchor_index(poses, reference, model, size, cfg)?;
    let rec = FrameRecord {
        index: idx,
        frame: frames[idx].clone(),
        hair_mask: Some(hair_masks[idx].clone()),
        face_mask: Some(face_masks[idx].clone()),
        pose: Some(poses[idx]),
    };
    let animator = Animator::new(model, idx, &rec, reference, cfg)?;
    let out = (0..t)
        .map(|i| animator.animate(&DrivingFrame { frame: &frames[i], hair_mask: &hair_masks[i], pose: Some(&poses[i]) }))
        .collect::<Result<Vec<_>>>()?;
    Ok((idx, out))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got {v:?}"))),
    }
}

fn parse_num(key: &str, v: &str) -> Result<f64> {
    v.parse().map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

pub fn parse_fusion_mode(v: &str) -> Result<FusionMode> {
    match v {
        "multi_scale" | "multi" => Ok(FusionMode::MultiScale),
        "single_scale" | "single" => Ok(FusionMode::SingleScale),
        "none" => Ok(FusionMode::None),
        _ => Err(Error::Config(format!("fusion mode must be multi_scale, single_scale or none, got {v:?}"))),
    }
}

pub fn parse_anchor(v: &str) -> Result<AnchorStrategy> {
    match v {
        "pose_similar" => Ok(AnchorStrategy::PoseSimilar),
        "first_frame" => Ok(AnchorStrategy::FirstFrame),
        _ => v
            .parse()
            .map(AnchorStrategy::ExplicitIndex)
            .map_err(|_| Error::Config(format!("anchor must be pose_similar, first_frame or a frame index, got {v:?}"))),
    }
}

impl PipelineConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "checkpoint" => self.checkpoint = PathBuf::from(v),
            "output_dir" => self.output_dir = PathBuf::from(v),
            "anchor" => self.anchor = parse_anchor(v)?,
            "pixel_blend" => self.pixel_blend = parse_bool(key, v)?,
            "fusion_mode" => self.fusion_mode = Some(parse_fusion_mode(v)?),
            "hmg_enabled" => self.hmg_enabled = Some(parse_bool(key, v)?),
            "motion_mode" => {
                self.motion_mode = Some(match v {
                    "passthrough" => MotionMode::Passthrough,
                    "learned" => MotionMode::Learned,
                    _ => return Err(Error::Config(format!("motion_mode must be passthrough or learned, got {v:?}"))),
                })
            }
            "blur_sigma" => self.composite.blur_sigma = parse_num(key, v)?,
            "alignment_mode" => {
                self.composite.alignment_mode = match v {
                    "pose_aware" => crate::iht::AlignmentMode::PoseAware,
                    "naive_paste" => crate::iht::AlignmentMode::NaivePaste,
                    _ => return Err(Error::Config(format!("alignment_mode must be pose_aware or naive_paste, got {v:?}"))),
                }
            }
            "pose_weight_yaw" => self.pose_weights.yaw = parse_num(key, v)?,
            "pose_weight_translation" => self.pose_weights.translation = parse_num(key, v)?,
            "pose_weight_scale" => self.pose_weights.scale = parse_num(key, v)?,
            other => return Err(Error::Config(format!("unknown inference key {other:?}"))),
        }
        Ok(())
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            self.set(k, v)?;
        }
        self.composite.validate().map_err(|e| Error::Config(e.to_string()))
    }
}
