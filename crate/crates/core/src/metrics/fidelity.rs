//! Masked pixel and structural similarity.

use crate::error::{Error, Result};
use crate::frame::{Frame, HairMask};

pub const PSNR_CAP_DB: f64 = 99.0;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_RADIUS: usize = 3;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

fn check(a: &Frame, b: &Frame, mask: &HairMask) -> Result<()> {
    if a.dims() != b.dims() || mask.dims() != a.dims() {
        return Err(Error::Shape(format!("frames {:?}, {:?} and mask {:?}", a.dims(), b.dims(), mask.dims())));
    }
    Ok(())
}

fn masked_mean_of(a: &Frame, b: &Frame, mask: &HairMask, f: impl Fn(f64) -> f64) -> Option<f64> {
    let area = mask.area();
    if area <= 0.0 {
        return None;
    }
    let mut s = 0.0;
    for (i, &m) in mask.data().iter().enumerate() {
        if m > 0.0 {
            for c in 0..3 {
                s += m as f64 * f(a.data()[3 * i + c] as f64 - b.data()[3 * i + c] as f64);
            }
        }
    }
    Some(s / (3.0 * area))
}

/// Mean squared error over mask-selected elements; `None` for an empty mask.
pub fn masked_mse(a: &Frame, b: &Frame, mask: &HairMask) -> Result<Option<f64>> {
    check(a, b, mask)?;
    Ok(masked_mean_of(a, b, mask, |d| d * d))
}

pub fn masked_l1(a: &Frame, b: &Frame, mask: &HairMask) -> Result<Option<f64>> {
    check(a, b, mask)?;
    Ok(masked_mean_of(a, b, mask, f64::abs))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP_DB;
    }
    (10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB)
}

pub fn masked_psnr(a: &Frame, b: &Frame, mask: &HairMask) -> Result<Option<f64>> {
    Ok(masked_mse(a, b, mask)?.map(psnr_from_mse))
}

/// Gaussian-weighted local mean of `plane`; the window is truncated at the
/// border and renormalised.
fn local_mean(plane: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let r = k.len() / 2;
    let mut tmp = vec![0.0; h * w];
    let mut wsum = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let (mut s, mut n) = (0.0, 0.0);
            for (j, &kv) in k.iter().enumerate() {
                let xx = x as isize + j as isize - r as isize;
                if xx >= 0 && (xx as usize) < w {
                    s += kv * plane[y * w + xx as usize];
                    n += kv;
                }
            }
            tmp[y * w + x] = s;
            wsum[y * w + x] = n;
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let (mut s, mut n) = (0.0, 0.0);
            for (j, &kv) in k.iter().enumerate() {
                let yy = y as isize + j as isize - r as isize;
                if yy >= 0 && (yy as usize) < h {
                    s += kv * tmp[yy as usize * w + x];
                    n += kv * wsum[yy as usize * w + x];
                }
            }
            out[y * w + x] = s / n;
        }
    }
    out
}

/// Normalised 1-D Gaussian of `2 · SSIM_RADIUS + 1` taps.
pub fn ssim_window() -> Vec<f64> {
    let r = SSIM_RADIUS as f64;
    let k: Vec<f64> = (0..=2 * SSIM_RADIUS).map(|i| (-(i as f64 - r).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Per-pixel SSIM map of one channel.
pub fn ssim_map(a: &[f64], b: &[f64], h: usize, w: usize) -> Vec<f64> {
    let k = ssim_window();
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(x, y)| x * y).collect::<Vec<_>>();
    let mu_a = local_mean(a, h, w, &k);
    let mu_b = local_mean(b, h, w, &k);
    let aa = local_mean(&prod(a, a), h, w, &k);
    let bb = local_mean(&prod(b, b), h, w, &k);
    let ab = local_mean(&prod(a, b), h, w, &k);
    (0..h * w)
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = (aa[i] - ma * ma).max(0.0);
            let vb = (bb[i] - mb * mb).max(0.0);
            let cov = ab[i] - ma * mb;
            ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2)) / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2))
        })
        .collect()
}

/// SSIM averaged over window centres where `mask ≥ 0.5`, then over channels.
pub fn masked_ssim(a: &Frame, b: &Frame, mask: &HairMask) -> Result<Option<f64>> {
    check(a, b, mask)?;
    let (h, w) = a.dims();
    let sel: Vec<usize> = (0..h * w).filter(|&i| mask.data()[i] >= 0.5).collect();
    if sel.is_empty() {
        return Ok(None);
    }
    let plane = |f: &Frame, c: usize| f.data().iter().skip(c).step_by(3).map(|&v| v as f64).collect::<Vec<_>>();
    let mut total = 0.0;
    for c in 0..3 {
        let m = ssim_map(&plane(a, c), &plane(b, c), h, w);
        total += sel.iter().map(|&i| m[i]).sum::<f64>() / sel.len() as f64;
    }
    Ok(Some(total / 3.0))
}
