//! Frame-directory persistence: `frame_%05d.png`, `hair_%05d.png`,
//! `face_%05d.png` and a line-oriented `manifest.txt`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::data_synth::{PortraitSpec, PortraitVideo, PoseParams};
use crate::error::{Error, Result};
use crate::frame::{Frame, HairMask};

pub const MANIFEST: &str = "manifest.txt";
const HEADER: &str = "# hairshift video manifest v1";

pub fn frame_path(dir: &Path, t: usize) -> PathBuf {
    dir.join(format!("frame_{t:05}.png"))
}

pub fn hair_path(dir: &Path, t: usize) -> PathBuf {
    dir.join(format!("hair_{t:05}.png"))
}

pub fn face_path(dir: &Path, t: usize) -> PathBuf {
    dir.join(format!("face_{t:05}.png"))
}

/// Contents of `manifest.txt`.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoManifest {
    pub len: usize,
    pub height: usize,
    pub width: usize,
    pub spec: Option<PortraitSpec>,
    pub poses: Vec<PoseParams>,
}

impl VideoManifest {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{HEADER}");
        let _ = writeln!(s, "T {}", self.len);
        let _ = writeln!(s, "H {}", self.height);
        let _ = writeln!(s, "W {}", self.width);
        if let Some(spec) = &self.spec {
            let [r, g, b] = spec.hair_color;
            let [fr, fg, fb] = spec.face_color;
            let _ = writeln!(s, "identity_seed {}", spec.identity_seed);
            let _ = writeln!(s, "hair_color {r} {g} {b}");
            let _ = writeln!(s, "hair_shape_id {}", spec.hair_shape_id);
            let _ = writeln!(s, "face_color {fr} {fg} {fb}");
            let _ = writeln!(s, "background_pattern_id {}", spec.background_pattern_id);
        }
        for (t, p) in self.poses.iter().enumerate() {
            let _ = writeln!(s, "pose {t} {} {} {} {} {}", p.yaw, p.dx, p.dy, p.scale, p.expression_phase);
        }
        s
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let bad = |line: usize, why: &str| Error::format(path, format!("line {}: {why}", line + 1));
        let (mut len, mut height, mut width) = (None, None, None);
        let mut seed = None;
        let mut hair_color = None;
        let mut face_color = None;
        let mut shape = None;
        let mut background = None;
        let mut poses: Vec<(usize, PoseParams)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut it = line.split_whitespace();
            let key = it.next().unwrap_or_default();
            let vals: Vec<&str> = it.collect();
            let num = |k: usize| -> Result<f64> {
                vals.get(k).ok_or_else(|| bad(i, "missing value"))?.parse::<f64>().map_err(|_| bad(i, "not a number"))
            };
            let int = |k: usize| -> Result<u64> {
                vals.get(k).ok_or_else(|| bad(i, "missing value"))?.parse::<u64>().map_err(|_| bad(i, "not an integer"))
            };
            let rgb = || -> Result<[f32; 3]> { Ok([num(0)? as f32, num(1)? as f32, num(2)? as f32]) };
            match key {
                "T" => len = Some(int(0)? as usize),
                "H" => height = Some(int(0)? as usize),
                "W" => width = Some(int(0)? as usize),
                "identity_seed" => seed = Some(int(0)?),
                "hair_color" => hair_color = Some(rgb()?),
                "face_color" => face_color = Some(rgb()?),
                "hair_shape_id" => shape = Some(int(0)? as u8),
                "background_pattern_id" => background = Some(int(0)? as u8),
                "pose" => {
                    let t = int(0)? as usize;
                    let p = PoseParams { yaw: num(1)?, dx: num(2)?, dy: num(3)?, scale: num(4)?, expression_phase: num(5)? };
                    poses.push((t, p));
                }
                other => return Err(bad(i, &format!("unknown key {other:?}"))),
            }
        }
        let len = len.ok_or_else(|| Error::format(path, "missing T"))?;
        let height = height.ok_or_else(|| Error::format(path, "missing H"))?;
        let width = width.ok_or_else(|| Error::format(path, "missing W"))?;
        poses.sort_by_key(|p| p.0);
        if !poses.is_empty() && (poses.len() != len || poses.iter().enumerate().any(|(i, p)| p.0 != i)) {
            return Err(Error::format(path, "pose records must cover frames 0..T exactly once"));
        }
        let poses: Vec<PoseParams> = poses.into_iter().map(|p| p.1).collect();
        let spec = match (seed, hair_color, face_color, shape, background) {
            (Some(identity_seed), Some(hair_color), Some(face_color), Some(hair_shape_id), Some(background_pattern_id)) => {
                Some(PortraitSpec {
                    identity_seed,
                    hair_color,
                    hair_shape_id,
                    face_color,
                    pose_trajectory: poses.clone(),
                    background_pattern_id,
                })
            }
            (None, None, None, None, None) => None,
            _ => return Err(Error::format(path, "incomplete portrait spec fields")),
        };
        Ok(Self { len, height, width, spec, poses })
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Self::parse(&text, &path)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST);
        fs::write(&path, self.to_text()).map_err(|e| Error::io(&path, e))
    }
}

pub fn save_video(dir: &Path, video: &PortraitVideo) -> Result<()> {
    video.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (h, w) = video.dims();
    for t in 0..video.len() {
        video.frames[t].save_png(&frame_path(dir, t))?;
        video.hair_masks[t].save_png(&hair_path(dir, t))?;
        video.face_masks[t].save_png(&face_path(dir, t))?;
    }
    VideoManifest { len: video.len(), height: h, width: w, spec: Some(video.spec.clone()), poses: video.poses.clone() }.write(dir)
}

/// One frame record read from a video directory.
#[derive(Clone, Debug)]
pub struct FrameRecord {
    pub index: usize,
    pub frame: Frame,
    pub hair_mask: Option<HairMask>,
    pub face_mask: Option<HairMask>,
    pub pose: Option<PoseParams>,
}

/// Streams frames from a directory one at a time.
pub struct VideoReader {
    dir: PathBuf,
    manifest: VideoManifest,
    next: usize,
}

impl VideoReader {
    pub fn open(dir: &Path) -> Result<Self> {
        if !dir.is_dir() {
            return Err(Error::format(dir, "not a video directory"));
        }
        let manifest = VideoManifest::read(dir)?;
        Ok(Self { dir: dir.to_path_buf(), manifest, next: 0 })
    }

    pub fn manifest(&self) -> &VideoManifest {
        &self.manifest
    }

    pub fn read_frame(&self, t: usize) -> Result<FrameRecord> {
        if t >= self.manifest.len {
            return Err(Error::format(&self.dir, format!("frame {t} beyond T = {}", self.manifest.len)));
        }
        let frame = Frame::load_png(&frame_path(&self.dir, t))?;
        if frame.dims() != (self.manifest.height, self.manifest.width) {
            return Err(Error::format(frame_path(&self.dir, t), "frame size differs from manifest"));
        }
        let load_mask = |p: PathBuf| -> Result<Option<HairMask>> {
            if p.exists() {
                // stored masks are binary; undo 8-bit rounding
                Ok(Some(HairMask::load_png(&p)?.threshold(0.5)))
            } else {
                Ok(None)
            }
        };
        Ok(FrameRecord {
            index: t,
            frame,
            hair_mask: load_mask(hair_path(&self.dir, t))?,
            face_mask: load_mask(face_path(&self.dir, t))?,
            pose: self.manifest.poses.get(t).copied(),
        })
    }
}

impl Iterator for VideoReader {
    type Item = Result<FrameRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.next >= self.manifest.len {
            return None;
        }
        let r = self.read_frame(self.next);
        self.next += 1;
        Some(r)
    }
}

/// Loads a whole synthetic video; fails if masks or spec are missing.
pub fn load_video(dir: &Path) -> Result<PortraitVideo> {
    let reader = VideoReader::open(dir)?;
    let spec = reader.manifest().spec.clone().ok_or_else(|| Error::format(dir, "manifest lacks portrait spec"))?;
    let mut video = PortraitVideo { frames: vec![], hair_masks: vec![], face_masks: vec![], poses: vec![], spec };
    for rec in reader {
        let rec = rec?;
        let missing = || Error::format(dir, format!("frame {} lacks masks or pose", rec.index));
        video.hair_masks.push(rec.hair_mask.clone().ok_or_else(missing)?);
        video.face_masks.push(rec.face_mask.clone().ok_or_else(missing)?);
        video.poses.push(rec.pose.ok_or_else(missing)?);
        video.frames.push(rec.frame);
    }
    video.validate()?;
    Ok(video)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_synth::generate_portrait_video;

    #[test]
    fn manifest_round_trip() {
        let spec = PortraitSpec::random(4, 3);
        let m = VideoManifest { len: 3, height: 64, width: 64, spec: Some(spec.clone()), poses: spec.pose_trajectory.clone() };
        let back = VideoManifest::parse(&m.to_text(), Path::new("m")).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn malformed_manifest_is_rejected() {
        assert!(VideoManifest::parse("T 2\nH 4\n", Path::new("m")).is_err());
        assert!(VideoManifest::parse("T 2\nH 4\nW 4\nbogus 1\n", Path::new("m")).is_err());
        assert!(VideoManifest::parse("T 2\nH 4\nW 4\npose 0 0 0 0 1 0\n", Path::new("m")).is_err());
    }

    #[test]
    fn save_and_load_video() {
        let dir = tempfile::tempdir().unwrap();
        let spec = PortraitSpec::random(9, 3);
        let video = generate_portrait_video(&spec, 3).unwrap();
        save_video(dir.path(), &video).unwrap();
        let back = load_video(dir.path()).unwrap();
        assert_eq!(back.len(), 3);
        assert_eq!(back.hair_masks, video.hair_masks);
        assert_eq!(back.poses, video.poses);
        let err = back.frames[0].data().iter().zip(video.frames[0].data()).map(|(a, b)| (a - b).abs()).fold(0.0, f32::max);
        assert!(err <= 0.5 / 255.0 + 1e-6);
    }
}
