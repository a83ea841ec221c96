//! Temporal-consistency proxies on frame sequences.

use crate::error::{Error, Result};
use crate::frame::{Frame, HairMask};

use super::embedder::{cosine, IdentityEmbedder};

fn check_frames(frames: &[Frame], min: usize) -> Result<()> {
    if frames.len() < min {
        return Err(Error::Validation(format!("needs at least {min} frames, got {}", frames.len())));
    }
    let d = frames[0].dims();
    if frames.iter().any(|f| f.dims() != d) {
        return Err(Error::Shape("frames differ in size".into()));
    }
    Ok(())
}

fn mean_abs_diff(a: &Frame, b: &Frame) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs() as f64).sum::<f64>() / a.data().len() as f64
}

/// `1 − mean |f_{t+1} − f_t|`, clamped to `[0, 1]`.
pub fn temporal_flicker(frames: &[Frame]) -> Result<f64> {
    check_frames(frames, 2)?;
    let d = frames.windows(2).map(|p| mean_abs_diff(&p[0], &p[1])).sum::<f64>() / (frames.len() - 1) as f64;
    Ok((1.0 - d).clamp(0.0, 1.0))
}

/// `1 − mean |f_{t+1} − 2 f_t + f_{t−1}|`, clamped; two-frame inputs score 1.
pub fn motion_smoothness(frames: &[Frame]) -> Result<f64> {
    check_frames(frames, 2)?;
    if frames.len() == 2 {
        return Ok(1.0);
    }
    let n = frames[0].data().len() as f64;
    let mut acc = 0.0;
    for t in frames.windows(3) {
        let (a, b, c) = (t[0].data(), t[1].data(), t[2].data());
        acc += (0..a.len()).map(|i| (c[i] as f64 - 2.0 * b[i] as f64 + a[i] as f64).abs()).sum::<f64>() / n;
    }
    Ok((1.0 - acc / (frames.len() - 2) as f64).clamp(0.0, 1.0))
}

/// Flicker restricted to pixels that are background in both frames of each
/// consecutive pair; `foreground[t]` is the face ∪ hair mask of frame `t`.
pub fn background_consistency(frames: &[Frame], foreground: &[HairMask]) -> Result<Option<f64>> {
    check_frames(frames, 2)?;
    if foreground.len() != frames.len() || foreground.iter().any(|m| m.dims() != frames[0].dims()) {
        return Err(Error::Shape("one foreground mask per frame required".into()));
    }
    let (mut s, mut n) = (0.0, 0.0);
    for t in 0..frames.len() - 1 {
        let (a, b) = (frames[t].data(), frames[t + 1].data());
        for (i, (ma, mb)) in foreground[t].data().iter().zip(foreground[t + 1].data()).enumerate() {
            if *ma < 0.5 && *mb < 0.5 {
                for c in 0..3 {
                    s += (a[3 * i + c] - b[3 * i + c]).abs() as f64;
                }
                n += 3.0;
            }
        }
    }
    Ok((n > 0.0).then(|| (1.0 - s / n).clamp(0.0, 1.0)))
}

/// Mean cosine similarity of consecutive-frame embeddings; `None` below two frames.
pub fn frame_coherence(frames: &[Frame], embedder: &IdentityEmbedder) -> Result<Option<f64>> {
    if frames.len() < 2 {
        return Ok(None);
    }
    check_frames(frames, 2)?;
    let e: Vec<_> = frames.iter().map(|f| embedder.embed(f)).collect();
    Ok(Some(e.windows(2).map(|p| cosine(&p[0], &p[1])).sum::<f64>() / (e.len() - 1) as f64))
}
