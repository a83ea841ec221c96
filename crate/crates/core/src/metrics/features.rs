//! Toy per-frame and per-clip feature extractors for the Fréchet scores.

use std::sync::OnceLock;

use crate::frame::Frame;
use crate::graph::Graph;
use crate::training::PerceptualNet;

pub const CLIP_LEN: usize = 8;
/// Channel count of the deepest perceptual level.
pub const FRAME_FEATURE_DIM: usize = 32;

fn net() -> &'static PerceptualNet<f64> {
    static NET: OnceLock<PerceptualNet<f64>> = OnceLock::new();
    NET.get_or_init(PerceptualNet::new)
}

/// Spatial channel means of the deepest perceptual feature map.
pub fn frame_features(frame: &Frame) -> Vec<f64> {
    let n = net();
    let mut g = Graph::new(&n.store);
    let x = g.constant(frame.to_tensor());
    let f = *n.features(&mut g, x).last().expect("extractor has levels");
    let t = g.value(f);
    let (c, h, w) = t.chw();
    (0..c).map(|i| t.channel(i).iter().sum::<f64>() / (h * w) as f64).collect()
}

/// For every window of [`CLIP_LEN`] consecutive frames: the mean frame
/// feature followed by the mean absolute feature change between frames.
pub fn clip_features(frames: &[Frame]) -> Vec<Vec<f64>> {
    if frames.len() < CLIP_LEN {
        return Vec::new();
    }
    let f: Vec<Vec<f64>> = frames.iter().map(frame_features).collect();
    f.windows(CLIP_LEN)
        .map(|w| {
            let d = w[0].len();
            let mut out = vec![0.0; 2 * d];
            for v in w {
                for i in 0..d {
                    out[i] += v[i] / CLIP_LEN as f64;
                }
            }
            for p in w.windows(2) {
                for i in 0..d {
                    out[d + i] += (p[1][i] - p[0][i]).abs() / (CLIP_LEN - 1) as f64;
                }
            }
            out
        })
        .collect()
}
