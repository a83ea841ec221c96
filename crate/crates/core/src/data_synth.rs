//! Procedural portrait videos with exact hair/face ground truth.
//!
//! A portrait is a canonical scene (background, face ellipse with eyes and
//! mouth, parametric hair silhouette) rendered through the similarity
//! transform of each frame's [`PoseParams`]. The scene is defined on the
//! whole plane, so integer translations shift frames exactly.

use std::f64::consts::{PI, TAU};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{Frame, HairMask};

pub const DEFAULT_SIZE: usize = 64;
pub const DEFAULT_LENGTH: usize = 16;
pub const NUM_HAIR_SHAPES: u8 = 8;
/// Shape id with no hair at all.
pub const BALD: u8 = 8;
pub const NUM_BACKGROUNDS: u8 = 4;
pub const MIN_HAIR_FACE_L1: f32 = 0.15;

pub const HAIR_PALETTE: [[f32; 3]; 8] = [
    [0.08, 0.06, 0.05],
    [0.32, 0.19, 0.10],
    [0.86, 0.73, 0.40],
    [0.72, 0.20, 0.10],
    [0.78, 0.78, 0.82],
    [0.15, 0.30, 0.82],
    [0.92, 0.42, 0.66],
    [0.20, 0.62, 0.30],
];

const FACE_PALETTE: [[f32; 3]; 5] = [
    [0.96, 0.80, 0.69],
    [0.87, 0.67, 0.52],
    [0.74, 0.54, 0.40],
    [0.57, 0.40, 0.28],
    [0.42, 0.29, 0.20],
];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseParams {
    /// Head rotation in radians, rendered as an in-plane rotation.
    pub yaw: f64,
    pub dx: f64,
    pub dy: f64,
    pub scale: f64,
    /// Drives the mouth opening; `[0, 2π)`.
    pub expression_phase: f64,
}

impl Default for PoseParams {
    fn default() -> Self {
        Self::identity()
    }
}

impl PoseParams {
    pub const MAX_YAW: f64 = 0.6;

    pub fn identity() -> Self {
        Self { yaw: 0.0, dx: 0.0, dy: 0.0, scale: 1.0, expression_phase: 0.0 }
    }

    pub fn translation(dx: f64, dy: f64) -> Self {
        Self { dx, dy, ..Self::identity() }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.yaw, self.dx, self.dy, self.scale, self.expression_phase].iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::Validation("pose has non-finite fields".into()));
        }
        if self.yaw.abs() > Self::MAX_YAW + 1e-12 {
            return Err(Error::Validation(format!("yaw {} outside [-0.6, 0.6]", self.yaw)));
        }
        if !(0.8..=1.2).contains(&self.scale) {
            return Err(Error::Validation(format!("scale {} outside [0.8, 1.2]", self.scale)));
        }
        if !(0.0..TAU).contains(&self.expression_phase) {
            return Err(Error::Validation(format!("expression phase {} outside [0, 2π)", self.expression_phase)));
        }
        Ok(())
    }

    /// Canonical scene point → image point for a canvas with center `c`.
    pub fn to_image(&self, q: (f64, f64), c: (f64, f64)) -> (f64, f64) {
        let (s, co) = self.yaw.sin_cos();
        let (u, v) = (q.0 - c.0, q.1 - c.1);
        (self.scale * (co * u - s * v) + c.0 + self.dx, self.scale * (s * u + co * v) + c.1 + self.dy)
    }

    /// Image point → canonical scene point.
    pub fn to_canonical(&self, p: (f64, f64), c: (f64, f64)) -> (f64, f64) {
        let (s, co) = self.yaw.sin_cos();
        let (u, v) = ((p.0 - c.0 - self.dx) / self.scale, (p.1 - c.1 - self.dy) / self.scale);
        (co * u + s * v + c.0, -s * u + co * v + c.1)
    }

    /// Maps a point in an image posed by `self` to the image posed by `to`.
    pub fn retarget(&self, to: &PoseParams, p: (f64, f64), c: (f64, f64)) -> (f64, f64) {
        to.to_image(self.to_canonical(p, c), c)
    }
}

/// Canvas center in pixel-center coordinates.
pub fn canvas_center(height: usize, width: usize) -> (f64, f64) {
    ((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PortraitSpec {
    pub identity_seed: u64,
    pub hair_color: [f32; 3],
    pub hair_shape_id: u8,
    pub face_color: [f32; 3],
    pub pose_trajectory: Vec<PoseParams>,
    pub background_pattern_id: u8,
}

/// Identity-dependent geometry derived from `identity_seed`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IdentityTraits {
    pub face_radii: (f64, f64),
    pub eye_offset: f64,
    pub eye_radius: f64,
    pub mouth_width: f64,
    pub background: [[f32; 3]; 2],
}

impl IdentityTraits {
    pub fn from_seed(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1D_E4_71_7F);
        let face_radii = (rng.gen_range(12.0..15.0), rng.gen_range(15.0..18.0));
        let eye_offset = rng.gen_range(4.0..6.0);
        let eye_radius = rng.gen_range(1.8..2.6);
        let mouth_width = rng.gen_range(3.5..6.0);
        let mut bg = || [rng.gen_range(0.15..0.6f32), rng.gen_range(0.2..0.65f32), rng.gen_range(0.25..0.7f32)];
        let background = [bg(), bg()];
        Self { face_radii, eye_offset, eye_radius, mouth_width, background }
    }
}

pub fn color_l1(a: [f32; 3], b: [f32; 3]) -> f32 {
    a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum()
}

impl PortraitSpec {
    pub fn validate(&self) -> Result<()> {
        for c in self.hair_color.iter().chain(&self.face_color) {
            if !(0.0..=1.0).contains(c) {
                return Err(Error::Validation(format!("color component {c} outside [0, 1]")));
            }
        }
        let d = color_l1(self.hair_color, self.face_color);
        if d < MIN_HAIR_FACE_L1 {
            return Err(Error::Validation(format!("hair and face colors too close (L1 {d:.3} < {MIN_HAIR_FACE_L1})")));
        }
        if self.hair_shape_id > BALD {
            return Err(Error::Validation(format!("unknown hair shape {}", self.hair_shape_id)));
        }
        if self.background_pattern_id >= NUM_BACKGROUNDS {
            return Err(Error::Validation(format!("unknown background pattern {}", self.background_pattern_id)));
        }
        for p in &self.pose_trajectory {
            p.validate()?;
        }
        Ok(())
    }

    /// A random valid spec with a smooth pose trajectory of length `len`.
    pub fn random(seed: u64, len: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let face = *FACE_PALETTE.choose(&mut rng).unwrap();
        let face_color = face.map(|v| (v + rng.gen_range(-0.03..0.03f32)).clamp(0.0, 1.0));
        let hair_color = loop {
            let c = *HAIR_PALETTE.choose(&mut rng).unwrap();
            if color_l1(c, face_color) >= MIN_HAIR_FACE_L1 {
                break c;
            }
        };
        Self {
            identity_seed: rng.gen(),
            hair_color,
            hair_shape_id: rng.gen_range(0..NUM_HAIR_SHAPES),
            face_color,
            pose_trajectory: smooth_trajectory(rng.gen(), len, 0.35),
            background_pattern_id: rng.gen_range(0..NUM_BACKGROUNDS),
        }
    }

    pub fn traits(&self) -> IdentityTraits {
        IdentityTraits::from_seed(self.identity_seed)
    }

    pub fn hair_style(&self) -> HairStyle {
        HairStyle { shape_id: self.hair_shape_id, color: self.hair_color }
    }
}

/// Smooth periodic head motion with yaw amplitude `max_yaw`.
pub fn smooth_trajectory(seed: u64, len: usize, max_yaw: f64) -> Vec<PoseParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let yaw_amp = rng.gen_range(0.0..max_yaw.min(PoseParams::MAX_YAW));
    let w_yaw = rng.gen_range(0.15..0.45);
    let ph_yaw = rng.gen_range(0.0..TAU);
    let (ax, ay) = (rng.gen_range(0.0..3.0), rng.gen_range(0.0..2.0));
    let (wx, wy) = (rng.gen_range(0.1..0.35), rng.gen_range(0.1..0.35));
    let (px, py) = (rng.gen_range(0.0..TAU), rng.gen_range(0.0..TAU));
    let s_amp = rng.gen_range(0.0..0.06);
    let e0 = rng.gen_range(0.0..TAU);
    let e_rate = rng.gen_range(0.2..0.6);
    (0..len)
        .map(|t| {
            let t = t as f64;
            PoseParams {
                yaw: (yaw_amp * (w_yaw * t + ph_yaw).sin()).clamp(-PoseParams::MAX_YAW, PoseParams::MAX_YAW),
                dx: ax * (wx * t + px).sin(),
                dy: ay * (wy * t + py).sin(),
                scale: 1.0 + s_amp * (0.5 * w_yaw * t).sin(),
                expression_phase: (e0 + e_rate * t).rem_euclid(TAU),
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HairStyle {
    pub shape_id: u8,
    pub color: [f32; 3],
}

impl HairStyle {
    pub fn same_as(&self, other: &HairStyle) -> bool {
        self.shape_id == other.shape_id && color_l1(self.color, other.color) < 1e-6
    }
}

// ----- signed distance helpers (negative inside) -----

fn sd_ellipse(p: (f64, f64), c: (f64, f64), r: (f64, f64)) -> f64 {
    let (u, v) = ((p.0 - c.0) / r.0, (p.1 - c.1) / r.1);
    ((u * u + v * v).sqrt() - 1.0) * r.0.min(r.1)
}

fn sd_box(p: (f64, f64), lo: (f64, f64), hi: (f64, f64)) -> f64 {
    let (cx, cy) = ((lo.0 + hi.0) / 2.0, (lo.1 + hi.1) / 2.0);
    let (hx, hy) = ((hi.0 - lo.0) / 2.0, (hi.1 - lo.1) / 2.0);
    let (qx, qy) = ((p.0 - cx).abs() - hx, (p.1 - cy).abs() - hy);
    let outside = (qx.max(0.0).powi(2) + qy.max(0.0).powi(2)).sqrt();
    outside + qx.max(qy).min(0.0)
}

/// Scene geometry in canonical 64×64 units; `k` rescales other sizes.
struct Scene {
    k: f64,
    traits: IdentityTraits,
    hair_shape: u8,
    background: u8,
    face_color: [f32; 3],
    hair_color: [f32; 3],
}

const HEAD_CENTER: (f64, f64) = (31.5, 36.0);
const FACE_WINDOW_CENTER: (f64, f64) = (31.5, 39.0);
const FACE_WINDOW_RADII: (f64, f64) = (10.5, 12.5);

/// Signed distance to hair silhouette `shape` in canonical 64-px units.
pub fn hair_sdf(shape: u8, p: (f64, f64)) -> f64 {
    let outer = match shape {
        0 => sd_ellipse(p, (31.5, 30.0), (17.0, 15.0)),
        1 => sd_ellipse(p, (31.5, 36.0), (20.0, 20.0)).max(p.1 - 50.0),
        2 => sd_ellipse(p, (31.5, 30.0), (17.0, 15.0)).min(sd_box(p, (12.5, 30.0), (50.5, 62.0))),
        3 => sd_ellipse(p, (31.5, 27.0), (16.0, 11.0)).min(sd_ellipse(p, (31.5, 12.0), (6.0, 6.0))),
        4 => sd_ellipse(p, (27.0, 31.0), (20.0, 15.0)),
        5 => sd_ellipse(p, (36.0, 31.0), (20.0, 15.0)),
        6 => sd_ellipse(p, (31.5, 29.0), (16.0, 12.0))
            .min(sd_ellipse(p, (13.0, 44.0), (6.0, 6.0)))
            .min(sd_ellipse(p, (50.0, 44.0), (6.0, 6.0))),
        7 => sd_box(p, (13.5, 13.0), (49.5, 33.0)),
        _ => return f64::INFINITY,
    };
    outer.max(-sd_ellipse(p, FACE_WINDOW_CENTER, FACE_WINDOW_RADII))
}

fn coverage(d: f64) -> f64 {
    if d <= 0.0 {
        1.0
    } else {
        (1.0 - d).max(0.0)
    }
}

fn mix(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t, a[2] + (b[2] - a[2]) * t]
}

fn f64c(c: [f32; 3]) -> [f64; 3] {
    c.map(|v| v as f64)
}

/// Per-pixel rendering result.
struct Sample {
    rgb: [f64; 3],
    hair: bool,
    face: bool,
}

impl Scene {
    fn new(spec: &PortraitSpec, size: usize) -> Self {
        Self {
            k: size as f64 / DEFAULT_SIZE as f64,
            traits: spec.traits(),
            hair_shape: spec.hair_shape_id,
            background: spec.background_pattern_id,
            face_color: spec.face_color,
            hair_color: spec.hair_color,
        }
    }

    fn background(&self, p: (f64, f64)) -> [f64; 3] {
        let [a, b] = self.traits.background.map(f64c);
        let t = match self.background {
            0 => 0.0,
            1 => 0.5 + 0.5 * (TAU * p.1 / 40.0).sin(),
            2 => 0.5 + 0.5 * (TAU * p.0 / 40.0).sin(),
            _ => 0.5 + 0.5 * (TAU * (p.0 + p.1) / 56.0).sin(),
        };
        mix(a, b, t)
    }

    fn hair_distance(&self, p: (f64, f64)) -> f64 {
        hair_sdf(self.hair_shape, p)
    }

    fn face_distance(&self, p: (f64, f64)) -> f64 {
        sd_ellipse(p, HEAD_CENTER, self.traits.face_radii)
    }

    /// Evaluates the canonical scene at `q` (given in image pixels).
    fn eval(&self, q: (f64, f64), expression_phase: f64) -> Sample {
        let p = (q.0 / self.k, q.1 / self.k);
        let mut rgb = self.background(p);
        let d_face = self.face_distance(p);
        let a_face = coverage(d_face * self.k);
        if a_face > 0.0 {
            let mut face = f64c(self.face_color);
            let dark = face.map(|v| v * 0.25);
            let t = &self.traits;
            for sx in [-1.0, 1.0] {
                let d = sd_ellipse(p, (HEAD_CENTER.0 + sx * t.eye_offset, 33.0), (t.eye_radius, t.eye_radius));
                face = mix(face, dark, coverage(d * self.k));
            }
            let open = 0.8 + 1.6 * (0.5 + 0.5 * expression_phase.sin());
            let d = sd_ellipse(p, (HEAD_CENTER.0, 44.5), (t.mouth_width, open));
            face = mix(face, [0.55, 0.12, 0.15], coverage(d * self.k));
            rgb = mix(rgb, face, a_face);
        }
        let d_hair = self.hair_distance(p);
        let a_hair = coverage(d_hair * self.k);
        if a_hair > 0.0 {
            rgb = mix(rgb, f64c(self.hair_color), a_hair);
        }
        let hair = d_hair <= 0.0;
        Sample { rgb, hair, face: d_face <= 0.0 && !hair }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PortraitVideo {
    pub frames: Vec<Frame>,
    pub hair_masks: Vec<HairMask>,
    pub face_masks: Vec<HairMask>,
    pub poses: Vec<PoseParams>,
    pub spec: PortraitSpec,
}

impl PortraitVideo {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.frames[0].dims()
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.frames.len();
        if t == 0 {
            return Err(Error::Validation("video has no frames".into()));
        }
        if self.hair_masks.len() != t || self.face_masks.len() != t || self.poses.len() != t {
            return Err(Error::Validation("video sequences have unequal lengths".into()));
        }
        let dims = self.frames[0].dims();
        for i in 0..t {
            if self.frames[i].dims() != dims || self.hair_masks[i].dims() != dims || self.face_masks[i].dims() != dims {
                return Err(Error::Shape(format!("frame {i} dimensions differ")));
            }
            let overlap = self.hair_masks[i].data().iter().zip(self.face_masks[i].data()).any(|(h, f)| h * f > 1e-6);
            if overlap {
                return Err(Error::Validation(format!("hair and face masks overlap in frame {i}")));
            }
        }
        Ok(())
    }
}

/// Renders one posed frame with its hair and face masks.
pub fn render_frame(spec: &PortraitSpec, pose: &PoseParams, size: usize) -> (Frame, HairMask, HairMask) {
    let scene = Scene::new(spec, size);
    let c = canvas_center(size, size);
    let mut frame = Frame::new(size, size);
    let mut hair = HairMask::zeros(size, size);
    let mut face = HairMask::zeros(size, size);
    for y in 0..size {
        for x in 0..size {
            let q = pose.to_canonical((x as f64, y as f64), c);
            let s = scene.eval(q, pose.expression_phase);
            frame.set(y, x, s.rgb.map(|v| v.clamp(0.0, 1.0) as f32));
            hair.set(y, x, s.hair as u8 as f32);
            face.set(y, x, s.face as u8 as f32);
        }
    }
    (frame, hair, face)
}

pub fn generate_portrait_video(spec: &PortraitSpec, len: usize) -> Result<PortraitVideo> {
    generate_portrait_video_sized(spec, len, DEFAULT_SIZE)
}

pub fn generate_portrait_video_sized(spec: &PortraitSpec, len: usize, size: usize) -> Result<PortraitVideo> {
    if len == 0 {
        return Err(Error::Validation("video length must be at least 1".into()));
    }
    if size < 8 {
        return Err(Error::Validation(format!("frame size {size} too small")));
    }
    spec.validate()?;
    if spec.pose_trajectory.len() < len {
        return Err(Error::Validation(format!(
            "pose trajectory has {} entries for {len} frames",
            spec.pose_trajectory.len()
        )));
    }
    let poses = spec.pose_trajectory[..len].to_vec();
    let mut frames = Vec::with_capacity(len);
    let mut hair_masks = Vec::with_capacity(len);
    let mut face_masks = Vec::with_capacity(len);
    for pose in &poses {
        let (f, h, m) = render_frame(spec, pose, size);
        frames.push(f);
        hair_masks.push(h);
        face_masks.push(m);
    }
    Ok(PortraitVideo { frames, hair_masks, face_masks, poses, spec: spec.clone() })
}

/// Ground-truth `(m_hair, m_face)` sequences; `m_face` excludes hair.
pub fn derive_region_masks(video: &PortraitVideo) -> (Vec<HairMask>, Vec<HairMask>) {
    (video.hair_masks.clone(), video.face_masks.clone())
}

/// One reference portrait in the hair bank.
#[derive(Clone, Debug, PartialEq)]
pub struct HairBankEntry {
    pub frame: Frame,
    pub hair_mask: HairMask,
    pub face_mask: HairMask,
    pub pose: PoseParams,
    pub style: HairStyle,
}

/// `NUM_HAIR_SHAPES × |HAIR_PALETTE|` reference portraits, each on its own
/// random identity and pose.
pub fn build_hair_bank(seed: u64, size: usize) -> Vec<HairBankEntry> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bank = Vec::with_capacity(64);
    for shape_id in 0..NUM_HAIR_SHAPES {
        for &color in &HAIR_PALETTE {
            let face_color = loop {
                let f = *FACE_PALETTE.choose(&mut rng).unwrap();
                if color_l1(f, color) >= MIN_HAIR_FACE_L1 {
                    break f;
                }
            };
            let pose = random_pose(&mut rng, 0.3);
            let spec = PortraitSpec {
                identity_seed: rng.gen(),
                hair_color: color,
                hair_shape_id: shape_id,
                face_color,
                pose_trajectory: vec![pose],
                background_pattern_id: rng.gen_range(0..NUM_BACKGROUNDS),
            };
            let (frame, hair_mask, face_mask) = render_frame(&spec, &pose, size);
            bank.push(HairBankEntry { frame, hair_mask, face_mask, pose, style: spec.hair_style() });
        }
    }
    bank
}

pub fn random_pose(rng: &mut impl Rng, max_yaw: f64) -> PoseParams {
    PoseParams {
        yaw: rng.gen_range(-max_yaw..=max_yaw),
        dx: rng.gen_range(-3.0..=3.0),
        dy: rng.gen_range(-2.0..=2.0),
        scale: rng.gen_range(0.95..=1.05),
        expression_phase: rng.gen_range(0.0..TAU),
    }
}

/// `(I_s, I_d, R_random)` indices plus frames for the decoupling objective.
#[derive(Clone, Debug)]
pub struct TrainingTriplet {
    pub source_index: usize,
    pub driving_index: usize,
    pub reference_index: usize,
    pub source: Frame,
    pub driving: Frame,
    pub reference: Frame,
}

/// Draws two distinct timestamps uniformly over ordered pairs and a
/// reference uniformly among bank entries with a different hairstyle.
pub fn sample_training_triplet(video: &PortraitVideo, hair_bank: &[HairBankEntry], rng_seed: u64) -> Result<TrainingTriplet> {
    let t = video.len();
    if t < 2 {
        return Err(Error::Validation(format!("triplet sampling needs at least 2 frames, video has {t}")));
    }
    if hair_bank.is_empty() {
        return Err(Error::Validation("hair bank is empty".into()));
    }
    let own = video.spec.hair_style();
    let candidates: Vec<usize> = (0..hair_bank.len()).filter(|&i| !hair_bank[i].style.same_as(&own)).collect();
    if candidates.is_empty() {
        return Err(Error::Validation("hair bank holds only the video's own hairstyle".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let s = rng.gen_range(0..t);
    let d = (s + rng.gen_range(1..t)) % t;
    let r = candidates[rng.gen_range(0..candidates.len())];
    Ok(TrainingTriplet {
        source_index: s,
        driving_index: d,
        reference_index: r,
        source: video.frames[s].clone(),
        driving: video.frames[d].clone(),
        reference: hair_bank[r].frame.clone(),
    })
}

/// Angle wrap helper for phases.
pub fn wrap_phase(v: f64) -> f64 {
    v.rem_euclid(2.0 * PI)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(shape: u8) -> PortraitSpec {
        PortraitSpec {
            identity_seed: 3,
            hair_color: HAIR_PALETTE[3],
            hair_shape_id: shape,
            face_color: FACE_PALETTE[1],
            pose_trajectory: vec![PoseParams::identity(); 4],
            background_pattern_id: 1,
        }
    }

    #[test]
    fn rejects_close_colors() {
        let mut s = spec(0);
        s.hair_color = s.face_color;
        assert!(matches!(generate_portrait_video(&s, 1), Err(Error::Validation(_))));
    }

    #[test]
    fn rejects_zero_length_and_short_trajectory() {
        assert!(generate_portrait_video(&spec(0), 0).is_err());
        assert!(generate_portrait_video(&spec(0), 5).is_err());
    }

    #[test]
    fn bald_has_empty_hair_mask() {
        let v = generate_portrait_video(&spec(BALD), 2).unwrap();
        let (hair, _) = derive_region_masks(&v);
        assert!(hair.iter().all(HairMask::is_empty_region));
    }

    #[test]
    fn pose_round_trip() {
        let p = PoseParams { yaw: 0.4, dx: 2.5, dy: -1.0, scale: 1.1, expression_phase: 1.0 };
        let c = canvas_center(64, 64);
        let q = (10.0, 50.0);
        let back = p.to_canonical(p.to_image(q, c), c);
        assert!((back.0 - q.0).abs() < 1e-12 && (back.1 - q.1).abs() < 1e-12);
    }

    #[test]
    fn triplet_errors() {
        let v = generate_portrait_video(&spec(0), 1).unwrap();
        let bank = build_hair_bank(0, 16);
        assert!(sample_training_triplet(&v, &bank, 0).is_err());
        let v = generate_portrait_video(&spec(0), 2).unwrap();
        let own: Vec<_> = bank.iter().filter(|e| e.style.same_as(&v.spec.hair_style())).cloned().collect();
        assert_eq!(own.len(), 1);
        assert!(sample_training_triplet(&v, &own, 0).is_err());
        assert!(sample_training_triplet(&v, &[], 0).is_err());
    }

    #[test]
    fn random_specs_are_valid() {
        for seed in 0..50 {
            PortraitSpec::random(seed, 16).validate().unwrap();
        }
    }
}
