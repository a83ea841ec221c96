//! Evaluation of generated videos against their driving videos.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{Frame, HairMask};

use super::embedder::{identity_similarity, IdentityEmbedder};
use super::features::{clip_features, frame_features};
use super::fidelity::{masked_l1, masked_psnr, masked_ssim};
use super::frechet::frechet_distance;
use super::temporal::{background_consistency, frame_coherence, motion_smoothness, temporal_flicker};

/// A generated video with the driving video it should follow.
pub struct EvalVideo<'a> {
    pub name: String,
    pub generated: &'a [Frame],
    pub driving: &'a [Frame],
    /// Non-hair region of each driving frame.
    pub nonhair: &'a [HairMask],
    /// Face ∪ hair of each driving frame.
    pub foreground: &'a [HairMask],
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub psnr_nonhair: Option<f64>,
    pub ssim_nonhair: Option<f64>,
    pub l1_nonhair: Option<f64>,
    pub ids: Option<f64>,
    pub temporal_flicker_proxy: Option<f64>,
    pub background_consistency_proxy: Option<f64>,
    pub motion_smoothness_proxy: Option<f64>,
    pub frame_coherence_proxy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoReport {
    pub name: String,
    pub frames: usize,
    /// Frames whose driving hair mask is empty.
    pub empty_hair_frames: Vec<usize>,
    #[serde(flatten)]
    pub metrics: MetricRow,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub aggregate: MetricRow,
    pub frechet_frame_proxy: Option<f64>,
    pub frechet_video_proxy: Option<f64>,
    pub videos: Vec<VideoReport>,
}

fn mean(v: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let xs: Vec<f64> = v.flatten().collect();
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

pub fn evaluate_video(v: &EvalVideo<'_>, embedder: &IdentityEmbedder) -> Result<VideoReport> {
    let t = v.generated.len();
    if t == 0 || v.driving.len() != t || v.nonhair.len() != t || v.foreground.len() != t {
        return Err(Error::Validation(format!("{}: generated, driving and mask sequences must have equal nonzero length", v.name)));
    }
    let mut psnr = Vec::with_capacity(t);
    let mut ssim = Vec::with_capacity(t);
    let mut l1 = Vec::with_capacity(t);
    let mut ids = Vec::with_capacity(t);
    for i in 0..t {
        psnr.push(masked_psnr(&v.generated[i], &v.driving[i], &v.nonhair[i])?);
        ssim.push(masked_ssim(&v.generated[i], &v.driving[i], &v.nonhair[i])?);
        l1.push(masked_l1(&v.generated[i], &v.driving[i], &v.nonhair[i])?);
        ids.push(Some(identity_similarity(&v.generated[i], &v.driving[i], embedder)));
    }
    let hair_empty = (0..t)
        .filter(|&i| {
            let fg = &v.foreground[i];
            let nh = &v.nonhair[i];
            fg.data().iter().zip(nh.data()).all(|(f, n)| *f < 0.5 || *n >= 0.5)
        })
        .collect();
    let multi = t >= 2;
    let metrics = MetricRow {
        psnr_nonhair: mean(psnr.into_iter()),
        ssim_nonhair: mean(ssim.into_iter()),
        l1_nonhair: mean(l1.into_iter()),
        ids: mean(ids.into_iter()),
        temporal_flicker_proxy: if multi { Some(temporal_flicker(v.generated)?) } else { None },
        background_consistency_proxy: if multi { background_consistency(v.generated, v.foreground)? } else { None },
        motion_smoothness_proxy: if multi { Some(motion_smoothness(v.generated)?) } else { None },
        frame_coherence_proxy: frame_coherence(v.generated, embedder)?,
    };
    Ok(VideoReport { name: v.name.clone(), frames: t, empty_hair_frames: hair_empty, metrics })
}

/// Per-video rows, their means, and Fréchet scores of generated against
/// driving features (absent when there are too few samples).
pub fn evaluate(videos: &[EvalVideo<'_>], embedder: &IdentityEmbedder) -> Result<EvalReport> {
    let rows = videos.iter().map(|v| evaluate_video(v, embedder)).collect::<Result<Vec<_>>>()?;
    let agg = |f: fn(&MetricRow) -> Option<f64>| mean(rows.iter().map(|r| f(&r.metrics)));
    let aggregate = MetricRow {
        psnr_nonhair: agg(|m| m.psnr_nonhair),
        ssim_nonhair: agg(|m| m.ssim_nonhair),
        l1_nonhair: agg(|m| m.l1_nonhair),
        ids: agg(|m| m.ids),
        temporal_flicker_proxy: agg(|m| m.temporal_flicker_proxy),
        background_consistency_proxy: agg(|m| m.background_consistency_proxy),
        motion_smoothness_proxy: agg(|m| m.motion_smoothness_proxy),
        frame_coherence_proxy: agg(|m| m.frame_coherence_proxy),
    };
    let gen_f: Vec<Vec<f64>> = videos.iter().flat_map(|v| v.generated.iter().map(frame_features)).collect();
    let drv_f: Vec<Vec<f64>> = videos.iter().flat_map(|v| v.driving.iter().map(frame_features)).collect();
    let frechet_frame = frechet_distance(&gen_f, &drv_f).ok();
    let gen_c: Vec<Vec<f64>> = videos.iter().flat_map(|v| clip_features(v.generated)).collect();
    let drv_c: Vec<Vec<f64>> = videos.iter().flat_map(|v| clip_features(v.driving)).collect();
    let frechet_video = frechet_distance(&gen_c, &drv_c).ok();
    Ok(EvalReport { aggregate, frechet_frame_proxy: frechet_frame, frechet_video_proxy: frechet_video, videos: rows })
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    /// Aligned table grouped as quality / non-hair fidelity / temporal.
    pub fn table(&self) -> String {
        let f = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "n/a".into());
        let a = &self.aggregate;
        let mut s = String::new();
        s.push_str(&format!("{:<12}{:>14}{:>14}\n", "quality", "frechet_frame", "frechet_video"));
        s.push_str(&format!("{:<12}{:>14}{:>14}\n\n", "", f(self.frechet_frame_proxy), f(self.frechet_video_proxy)));
        s.push_str(&format!("{:<12}{:>10}{:>10}{:>10}{:>10}\n", "non-hair", "psnr", "ssim", "l1", "ids"));
        s.push_str(&format!("{:<12}{:>10}{:>10}{:>10}{:>10}\n\n", "", f(a.psnr_nonhair), f(a.ssim_nonhair), f(a.l1_nonhair), f(a.ids)));
        s.push_str(&format!("{:<12}{:>10}{:>10}{:>10}{:>10}\n", "temporal", "flicker", "bg_cons", "smooth", "coherence"));
        s.push_str(&format!(
            "{:<12}{:>10}{:>10}{:>10}{:>10}\n",
            "",
            f(a.temporal_flicker_proxy),
            f(a.background_consistency_proxy),
            f(a.motion_smoothness_proxy),
            f(a.frame_coherence_proxy)
        ));
        s
    }
}
