//! Deterministic hair compositor standing in for a generative image hair
//! transfer model. It produces pseudo driving frames during training and
//! the hair-swapped anchor frame at inference.

use serde::{Deserialize, Serialize};

use crate::data_synth::{canvas_center, PoseParams};
use crate::error::{Error, Result};
use crate::frame::{Frame, HairMask};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AlignmentMode {
    /// Realign the reference hair from its pose to the input pose.
    PoseAware,
    /// Paste reference hair at its original image location.
    NaivePaste,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompositeConfig {
    pub blur_sigma: f64,
    pub alignment_mode: AlignmentMode,
}

impl Default for CompositeConfig {
    fn default() -> Self {
        Self { blur_sigma: 1.0, alignment_mode: AlignmentMode::PoseAware }
    }
}

impl CompositeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.blur_sigma >= 0.0 && self.blur_sigma.is_finite()) {
            return Err(Error::Validation(format!("blur_sigma {} must be finite and >= 0", self.blur_sigma)));
        }
        Ok(())
    }

    /// Radius (px) of the softening band around new hair.
    pub fn band_radius(&self) -> usize {
        if self.blur_sigma == 0.0 {
            0
        } else {
            (3.0 * self.blur_sigma).ceil() as usize
        }
    }
}

/// Frame and region bookkeeping returned by [`transfer_hair_detailed`].
#[derive(Clone, Debug)]
pub struct Composite {
    pub frame: Frame,
    /// Binary mask of the realigned reference hair.
    pub new_hair: HairMask,
    /// Pixels the compositor may have touched: old ∪ new hair ∪ band.
    pub touched: HairMask,
}

/// Truncated, normalised 1-D Gaussian.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma == 0.0 {
        return vec![1.0];
    }
    let r = (3.0 * sigma).ceil() as isize;
    let k: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable Gaussian blur of a single-channel buffer with zero padding.
pub fn blur_plane(src: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    let k = gaussian_kernel(sigma);
    if k.len() == 1 {
        return src.to_vec();
    }
    let r = (k.len() / 2) as isize;
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (j, kv) in k.iter().enumerate() {
                let xx = x as isize + j as isize - r;
                if xx >= 0 && xx < w as isize {
                    acc += kv * src[y * w + xx as usize];
                }
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (j, kv) in k.iter().enumerate() {
                let yy = y as isize + j as isize - r;
                if yy >= 0 && yy < h as isize {
                    acc += kv * tmp[yy as usize * w + x];
                }
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Gaussian-blurred copy of a mask (values stay in `[0, 1]`).
pub fn blur_mask(mask: &HairMask, sigma: f64) -> HairMask {
    let (h, w) = mask.dims();
    let src: Vec<f64> = mask.data().iter().map(|&v| v as f64).collect();
    let out = blur_plane(&src, h, w, sigma);
    HairMask::from_fn(h, w, |y, x| out[y * w + x].clamp(0.0, 1.0) as f32)
}

/// Square (Chebyshev) dilation by `radius` pixels.
pub fn dilate(mask: &HairMask, radius: usize) -> HairMask {
    if radius == 0 {
        return mask.threshold(0.5);
    }
    let (h, w) = mask.dims();
    let r = radius as isize;
    HairMask::from_fn(h, w, |y, x| {
        for dy in -r..=r {
            for dx in -r..=r {
                let (yy, xx) = (y as isize + dy, x as isize + dx);
                if yy >= 0 && yy < h as isize && xx >= 0 && xx < w as isize && mask.get(yy as usize, xx as usize) > 0.5 {
                    return 1.0;
                }
            }
        }
        0.0
    })
}

/// Fills pixels where `hole` is set by repeatedly averaging their already
/// known 4-neighbours, growing inward from the hole boundary.
pub fn inpaint(frame: &Frame, hole: &HairMask) -> Frame {
    let (h, w) = frame.dims();
    let mut out = frame.clone();
    let mut known: Vec<bool> = hole.data().iter().map(|&v| v <= 0.5).collect();
    if known.iter().all(|&k| k) {
        return out;
    }
    if known.iter().all(|&k| !k) {
        return out;
    }
    loop {
        let mut updates = Vec::new();
        for y in 0..h {
            for x in 0..w {
                if known[y * w + x] {
                    continue;
                }
                let mut acc = [0.0f64; 3];
                let mut n = 0;
                for (dy, dx) in [(-1isize, 0isize), (1, 0), (0, -1), (0, 1)] {
                    let (yy, xx) = (y as isize + dy, x as isize + dx);
                    if yy >= 0 && yy < h as isize && xx >= 0 && xx < w as isize && known[yy as usize * w + xx as usize] {
                        let p = out.get(yy as usize, xx as usize);
                        for c in 0..3 {
                            acc[c] += p[c] as f64;
                        }
                        n += 1;
                    }
                }
                if n > 0 {
                    updates.push((y, x, acc.map(|v| (v / n as f64) as f32)));
                }
            }
        }
        if updates.is_empty() {
            break;
        }
        for (y, x, rgb) in updates {
            out.set(y, x, rgb);
            known[y * w + x] = true;
        }
    }
    out
}

/// Reference hair mask and colour resampled into the input frame.
fn realign(
    reference: &Frame,
    reference_mask: &HairMask,
    input_pose: &PoseParams,
    reference_pose: &PoseParams,
    mode: AlignmentMode,
) -> (HairMask, Vec<[f64; 3]>) {
    let (h, w) = reference.dims();
    let c = canvas_center(h, w);
    let mut mask = HairMask::zeros(h, w);
    let mut color = vec![[0.0; 3]; h * w];
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = match mode {
                AlignmentMode::NaivePaste => (x as f64, y as f64),
                AlignmentMode::PoseAware => input_pose.retarget(reference_pose, (x as f64, y as f64), c),
            };
            // normalised bilinear sampling of mask-weighted colour
            let snap = |v: f64| if (v - v.round()).abs() < 1e-9 { v.round() } else { v };
            let (sx, sy) = (snap(sx), snap(sy));
            let (x0, y0) = (sx.floor(), sy.floor());
            let (fx, fy) = (sx - x0, sy - y0);
            let (mut m_acc, mut c_acc) = (0.0, [0.0f64; 3]);
            for (yy, wy) in [(y0 as isize, 1.0 - fy), (y0 as isize + 1, fy)] {
                for (xx, wx) in [(x0 as isize, 1.0 - fx), (x0 as isize + 1, fx)] {
                    let wgt = wy * wx;
                    if wgt == 0.0 || yy < 0 || yy >= h as isize || xx < 0 || xx >= w as isize {
                        continue;
                    }
                    let m = reference_mask.get(yy as usize, xx as usize) as f64;
                    if m == 0.0 {
                        continue;
                    }
                    let p = reference.get(yy as usize, xx as usize);
                    m_acc += wgt * m;
                    for k in 0..3 {
                        c_acc[k] += wgt * m * p[k] as f64;
                    }
                }
            }
            if m_acc >= 0.5 {
                mask.set(y, x, 1.0);
                color[y * w + x] = c_acc.map(|v| v / m_acc);
            }
        }
    }
    (mask, color)
}

/// `mask` (given at `reference_pose`) resampled into a frame at `input_pose`.
pub fn realign_mask(mask: &HairMask, input_pose: &PoseParams, reference_pose: &PoseParams) -> HairMask {
    let (h, w) = mask.dims();
    realign(&Frame::new(h, w), mask, input_pose, reference_pose, AlignmentMode::PoseAware).0
}

fn check_inputs(input: &Frame, input_hair_mask: &HairMask, reference: &Frame, reference_hair_mask: &HairMask) -> Result<()> {
    let d = input.dims();
    if reference.dims() != d || input_hair_mask.dims() != d || reference_hair_mask.dims() != d {
        return Err(Error::Shape(format!(
            "compositor inputs differ in size: input {:?}, input mask {:?}, reference {:?}, reference mask {:?}",
            d,
            input_hair_mask.dims(),
            reference.dims(),
            reference_hair_mask.dims()
        )));
    }
    if reference_hair_mask.is_empty_region() {
        return Err(Error::Validation("reference hair mask is empty".into()));
    }
    Ok(())
}

/// Full compositor returning region bookkeeping alongside the frame.
pub fn transfer_hair_detailed(
    input: &Frame,
    input_hair_mask: &HairMask,
    reference: &Frame,
    reference_hair_mask: &HairMask,
    input_pose: &PoseParams,
    reference_pose: &PoseParams,
    cfg: &CompositeConfig,
) -> Result<Composite> {
    cfg.validate()?;
    check_inputs(input, input_hair_mask, reference, reference_hair_mask)?;
    let (h, w) = input.dims();
    let (new_hair, hair_rgb) = realign(reference, reference_hair_mask, input_pose, reference_pose, cfg.alignment_mode);

    // old hair not covered by the new hair is painted from its surroundings
    let old = input_hair_mask.threshold(0.5);
    let uncovered = HairMask::from_fn(h, w, |y, x| if old.get(y, x) > 0.5 && new_hair.get(y, x) < 0.5 { 1.0 } else { 0.0 });
    let hole = old.union(&new_hair);
    let filled = if uncovered.is_empty_region() { input.clone() } else { fill_from(input, &hole, &uncovered) };

    let weights: Vec<f64> = new_hair.data().iter().map(|&v| v as f64).collect();
    let blurred = blur_plane(&weights, h, w, cfg.blur_sigma);
    let mut color_planes = Vec::with_capacity(3);
    for k in 0..3 {
        let plane: Vec<f64> = (0..h * w).map(|i| weights[i] * hair_rgb[i][k]).collect();
        color_planes.push(blur_plane(&plane, h, w, cfg.blur_sigma));
    }
    let mut frame = filled;
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if new_hair.get(y, x) > 0.5 {
                frame.set(y, x, hair_rgb[i].map(|v| v.clamp(0.0, 1.0) as f32));
            } else if blurred[i] > 0.0 {
                let a = blurred[i].clamp(0.0, 1.0);
                let base = frame.get(y, x);
                let mut px = [0.0f32; 3];
                for k in 0..3 {
                    let hair_c = color_planes[k][i] / blurred[i];
                    px[k] = (a * hair_c + (1.0 - a) * base[k] as f64).clamp(0.0, 1.0) as f32;
                }
                frame.set(y, x, px);
            }
        }
    }
    let touched = old.union(&dilate(&new_hair, cfg.band_radius()));
    Ok(Composite { frame, new_hair, touched })
}

/// Inpaints `target` pixels using only pixels outside `hole` as sources.
fn fill_from(input: &Frame, hole: &HairMask, target: &HairMask) -> Frame {
    let filled = inpaint(input, hole);
    let (h, w) = input.dims();
    let mut out = input.clone();
    for y in 0..h {
        for x in 0..w {
            if target.get(y, x) > 0.5 {
                out.set(y, x, filled.get(y, x));
            }
        }
    }
    out
}

pub fn transfer_hair(
    input: &Frame,
    input_hair_mask: &HairMask,
    reference: &Frame,
    reference_hair_mask: &HairMask,
    input_pose: &PoseParams,
    reference_pose: &PoseParams,
    cfg: &CompositeConfig,
) -> Result<Frame> {
    transfer_hair_detailed(input, input_hair_mask, reference, reference_hair_mask, input_pose, reference_pose, cfg).map(|c| c.frame)
}

/// Region masks that accompany a frame into the compositor.
#[derive(Clone, Copy, Debug)]
pub struct RegionMasks<'a> {
    pub hair: &'a HairMask,
    pub face: &'a HairMask,
}

/// `(I_d′, mask of the new hair)`: the driving frame wearing the reference's hair.
pub fn make_pseudo_driving(
    driving: &Frame,
    driving_masks: RegionMasks<'_>,
    reference: &Frame,
    reference_masks: RegionMasks<'_>,
    poses: (&PoseParams, &PoseParams),
    cfg: &CompositeConfig,
) -> Result<(Frame, HairMask)> {
    let c = transfer_hair_detailed(driving, driving_masks.hair, reference, reference_masks.hair, poses.0, poses.1, cfg)?;
    Ok((c.frame, c.new_hair))
}

/// Anchor source image `I_s`: the selected driving frame wearing the target hair.
pub fn synthesize_anchor(
    anchor: &Frame,
    anchor_masks: RegionMasks<'_>,
    target: &Frame,
    target_masks: RegionMasks<'_>,
    poses: (&PoseParams, &PoseParams),
    cfg: &CompositeConfig,
) -> Result<Composite> {
    transfer_hair_detailed(anchor, anchor_masks.hair, target, target_masks.hair, poses.0, poses.1, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_is_normalised() {
        for s in [0.5, 1.0, 2.3] {
            let k = gaussian_kernel(s);
            assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert_eq!(k.len(), 2 * (3.0 * s as f64).ceil() as usize + 1);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let f = Frame::new(8, 8);
        let m = HairMask::from_fn(8, 8, |y, _| (y < 3) as u8 as f32);
        let p = PoseParams::identity();
        let cfg = CompositeConfig::default();
        assert!(matches!(transfer_hair(&f, &m, &f, &HairMask::zeros(8, 8), &p, &p, &cfg), Err(Error::Validation(_))));
        assert!(matches!(transfer_hair(&f, &m, &Frame::new(8, 9), &m, &p, &p, &cfg), Err(Error::Shape(_))));
        let bad = CompositeConfig { blur_sigma: -1.0, ..cfg };
        assert!(transfer_hair(&f, &m, &f, &m, &p, &p, &bad).is_err());
    }

    #[test]
    fn inpaint_grows_from_boundary() {
        let f = Frame::from_fn(5, 5, |_, x| if x == 0 { [1.0, 0.0, 0.0] } else { [0.0; 3] });
        let hole = HairMask::from_fn(5, 5, |_, x| (x > 0) as u8 as f32);
        let out = inpaint(&f, &hole);
        for y in 0..5 {
            for x in 0..5 {
                assert_eq!(out.get(y, x), [1.0, 0.0, 0.0]);
            }
        }
    }
}
