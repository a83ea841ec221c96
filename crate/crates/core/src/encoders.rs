//! Disentangled encoder stack: motion estimator, hair appearance encoder,
//! non-hair context encoder and the motion-driven feature warper.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data_synth::{canvas_center, PoseParams};
use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::graph::{Graph, Var};
use crate::nn::{lrelu, Conv2d, Init};
use crate::params::ParamStore;
use crate::real::Real;
use crate::resample::SpatialMap;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MotionMode {
    /// Ground-truth poses are passed straight through.
    Passthrough,
    /// Poses are regressed from pixels by a small convolutional net.
    Learned,
}

pub const MOTION_DIM: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MotionDescriptor {
    Passthrough(PoseParams),
    Learned([f64; MOTION_DIM]),
}

impl MotionDescriptor {
    pub fn mode(&self) -> MotionMode {
        match self {
            Self::Passthrough(_) => MotionMode::Passthrough,
            Self::Learned(_) => MotionMode::Learned,
        }
    }

    /// The similarity transform the descriptor encodes.
    pub fn pose(&self) -> PoseParams {
        match *self {
            Self::Passthrough(p) => p,
            Self::Learned(v) => decode_pose(&v),
        }
    }
}

/// Regression target layout for the learned estimator.
pub fn encode_pose(p: &PoseParams) -> [f64; MOTION_DIM] {
    [p.yaw, p.dx / 8.0, p.dy / 8.0, (p.scale - 1.0) * 10.0, p.expression_phase.cos(), p.expression_phase.sin(), 0.0, 0.0]
}

pub fn decode_pose(v: &[f64; MOTION_DIM]) -> PoseParams {
    PoseParams {
        yaw: v[0].clamp(-PoseParams::MAX_YAW, PoseParams::MAX_YAW),
        dx: v[1] * 8.0,
        dy: v[2] * 8.0,
        scale: (1.0 + v[3] / 10.0).clamp(0.8, 1.2),
        expression_phase: v[5].atan2(v[4]).rem_euclid(std::f64::consts::TAU),
    }
}

/// Activations `(C, h, w)` at pyramid level `scale_level` (0 = coarsest).
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVolume<T = f32> {
    pub activations: Tensor<T>,
    pub scale_level: usize,
}

impl<T: Real> FeatureVolume<T> {
    pub fn hw(&self) -> (usize, usize) {
        let (_, h, w) = self.activations.chw();
        (h, w)
    }

    pub fn channels(&self) -> usize {
        self.activations.chw().0
    }

    /// Checks `(h, w) = (H, W) / 2^(depth − scale_level)`.
    pub fn check_pyramid(&self, image_hw: (usize, usize), depth: usize) -> Result<()> {
        if self.scale_level > depth {
            return Err(Error::Shape(format!("scale level {} above depth {depth}", self.scale_level)));
        }
        let f = 1usize << (depth - self.scale_level);
        let expect = (image_hw.0 / f, image_hw.1 / f);
        if self.hw() != expect {
            return Err(Error::Shape(format!("feature size {:?} at level {} (expected {expect:?})", self.hw(), self.scale_level)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub depth: usize,
    pub base_channels: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self { depth: 3, base_channels: 16 }
    }
}

impl EncoderConfig {
    pub fn out_channels(&self) -> usize {
        self.base_channels << (self.depth - 1)
    }

    pub fn validate(&self, image_hw: (usize, usize)) -> Result<()> {
        if self.depth == 0 || self.base_channels == 0 {
            return Err(Error::Config("encoder depth and base channels must be positive".into()));
        }
        let f = 1usize << self.depth;
        if image_hw.0 % f != 0 || image_hw.1 % f != 0 {
            return Err(Error::Config(format!("image size {image_hw:?} not divisible by 2^{}", self.depth)));
        }
        Ok(())
    }
}

/// Strided convolutional encoder; E_H and E_C share this architecture but
/// own separate parameters.
#[derive(Clone, Debug)]
pub struct FeatureEncoder {
    pub prefix: String,
    convs: Vec<Conv2d>,
}

impl FeatureEncoder {
    pub fn new<T: Real>(store: &mut ParamStore<T>, prefix: &str, cfg: &EncoderConfig, rng: &mut impl Rng) -> Self {
        let mut convs = Vec::with_capacity(cfg.depth);
        let mut cin = 3;
        for level in 0..cfg.depth {
            let cout = cfg.base_channels << level;
            convs.push(Conv2d::new(store, &format!("{prefix}.down{level}"), cin, cout, 3, 2, Init::He(1.0), rng));
            cin = cout;
        }
        Self { prefix: prefix.to_string(), convs }
    }

    pub fn depth(&self) -> usize {
        self.convs.len()
    }

    /// `x` is a `(3, H, W)` image in `[0, 1]`.
    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Var {
        let centered = g.scale(x, T::of(2.0));
        let mut h = g.offset(centered, T::of(-1.0));
        let last = self.convs.len() - 1;
        for (i, conv) in self.convs.iter().enumerate() {
            h = conv.forward(g, h);
            if i != last {
                h = lrelu(g, h);
            }
        }
        h
    }

    pub fn encode<T: Real>(&self, store: &ParamStore<T>, frame: &Frame) -> FeatureVolume<T> {
        let mut g = Graph::new(store);
        let x = g.constant(frame.to_tensor());
        let out = self.forward(&mut g, x);
        FeatureVolume { activations: g.value(out).clone(), scale_level: 0 }
    }
}

/// Pose regressor used in learned motion mode. Coordinate channels are
/// appended to the image so translation is observable after pooling.
#[derive(Clone, Debug)]
pub struct MotionRegressor {
    convs: Vec<Conv2d>,
    head: Conv2d,
}

impl MotionRegressor {
    pub fn new<T: Real>(store: &mut ParamStore<T>, prefix: &str, image_hw: (usize, usize), rng: &mut impl Rng) -> Self {
        let widths = [8, 16, 32, 32];
        let mut convs = Vec::new();
        let mut cin = 5;
        let mut hw = image_hw;
        for (i, &c) in widths.iter().enumerate() {
            if hw.0 < 2 || hw.1 < 2 {
                break;
            }
            convs.push(Conv2d::new(store, &format!("{prefix}.down{i}"), cin, c, 3, 2, Init::He(1.0), rng));
            cin = c;
            hw = (hw.0.div_ceil(2), hw.1.div_ceil(2));
        }
        assert_eq!(hw.0, hw.1, "motion regressor expects square frames");
        let head = Conv2d::new(store, &format!("{prefix}.head"), cin, MOTION_DIM, hw.0, 1, Init::He(0.5), rng).with_pad(0);
        Self { convs, head }
    }

    pub fn input_tensor<T: Real>(frame: &Frame) -> Tensor<T> {
        let (h, w) = frame.dims();
        let rgb = frame.to_tensor::<T>();
        let mut data = Vec::with_capacity(5 * h * w);
        data.extend(rgb.data().iter().map(|&v| v * T::of(2.0) - T::one()));
        for y in 0..h {
            for _ in 0..w {
                data.push(T::of(2.0 * y as f64 / (h - 1).max(1) as f64 - 1.0));
            }
        }
        for _ in 0..h {
            for x in 0..w {
                data.push(T::of(2.0 * x as f64 / (w - 1).max(1) as f64 - 1.0));
            }
        }
        Tensor::from_vec(&[5, h, w], data)
    }

    /// Returns a `(MOTION_DIM, 1, 1)` node.
    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Var {
        let mut h = x;
        for conv in &self.convs {
            h = conv.forward(g, h);
            h = lrelu(g, h);
        }
        self.head.forward(g, h)
    }

    pub fn predict<T: Real>(&self, store: &ParamStore<T>, frame: &Frame) -> [f64; MOTION_DIM] {
        let mut g = Graph::new(store);
        let x = g.constant(Self::input_tensor(frame));
        let out = self.forward(&mut g, x);
        let v = g.value(out).data();
        std::array::from_fn(|i| v[i].f64())
    }
}

/// `E_M`: returns the supplied pose in passthrough mode, else regresses it.
pub fn estimate_motion<T: Real>(
    mode: MotionMode,
    regressor: Option<(&MotionRegressor, &ParamStore<T>)>,
    frame: &Frame,
    ground_truth_pose: Option<&PoseParams>,
) -> Result<MotionDescriptor> {
    match mode {
        MotionMode::Passthrough => ground_truth_pose
            .copied()
            .map(MotionDescriptor::Passthrough)
            .ok_or_else(|| Error::Validation("passthrough motion mode requires a ground-truth pose".into())),
        MotionMode::Learned => {
            let (net, store) = regressor.ok_or_else(|| Error::Config("learned motion mode without a regressor".into()))?;
            Ok(MotionDescriptor::Learned(net.predict(store, frame)))
        }
    }
}

/// Sampling map that moves features from the source pose to the driving
/// pose on a `grid_hw` lattice covering an `image_hw` frame.
pub fn warp_map<T: Real>(source: &PoseParams, driving: &PoseParams, grid_hw: (usize, usize), image_hw: (usize, usize)) -> SpatialMap<T> {
    let c = canvas_center(image_hw.0, image_hw.1);
    let sy = image_hw.0 as f64 / grid_hw.0 as f64;
    let sx = image_hw.1 as f64 / grid_hw.1 as f64;
    SpatialMap::sample_at(grid_hw, grid_hw, |gx, gy| {
        let p = (gx * sx + (sx - 1.0) / 2.0, gy * sy + (sy - 1.0) / 2.0);
        let (px, py) = driving.retarget(source, p, c);
        ((px - (sx - 1.0) / 2.0) / sx, (py - (sy - 1.0) / 2.0) / sy)
    })
}

/// `W`: resamples `f_h` by the similarity transform from the source pose to
/// the driving pose, bilinear with zero fill.
pub fn warp_features<T: Real>(
    source: &MotionDescriptor,
    driving: &MotionDescriptor,
    f_h: &FeatureVolume<T>,
    image_hw: (usize, usize),
) -> Result<FeatureVolume<T>> {
    if source.mode() != driving.mode() {
        return Err(Error::Validation("source and driving motion descriptors use different modes".into()));
    }
    let hw = f_h.hw();
    let map = warp_map::<T>(&source.pose(), &driving.pose(), hw, image_hw);
    let c = f_h.channels();
    let data = map.apply(f_h.activations.data(), c);
    Ok(FeatureVolume { activations: Tensor::from_vec(&[c, hw.0, hw.1], data), scale_level: f_h.scale_level })
}

/// Graph version of [`warp_features`].
pub fn warp_var<T: Real>(g: &mut Graph<'_, T>, f_h: Var, source: &PoseParams, driving: &PoseParams, image_hw: (usize, usize)) -> Var {
    let (_, h, w) = g.value(f_h).chw();
    let map = Arc::new(warp_map::<T>(source, driving, (h, w), image_hw));
    g.spatial(f_h, map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::check::{param_grad_error, random_projection};
    use crate::params::ParamId;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_frame(h: usize, w: usize, seed: u64) -> Frame {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Frame::from_fn(h, w, |_, _| [rng.gen(), rng.gen(), rng.gen()])
    }

    fn volume(c: usize, h: usize, w: usize, f: impl Fn(usize, usize, usize) -> f64) -> FeatureVolume<f64> {
        let mut data = Vec::with_capacity(c * h * w);
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    data.push(f(ch, y, x));
                }
            }
        }
        FeatureVolume { activations: Tensor::from_vec(&[c, h, w], data), scale_level: 0 }
    }

    fn pass(p: PoseParams) -> MotionDescriptor {
        MotionDescriptor::Passthrough(p)
    }

    #[test]
    fn passthrough_wraps_pose_exactly() {
        let p = PoseParams { yaw: 0.31, dx: -2.5, dy: 1.25, scale: 1.07, expression_phase: 2.0 };
        let f = Frame::new(8, 8);
        let d = estimate_motion::<f32>(MotionMode::Passthrough, None, &f, Some(&p)).unwrap();
        assert_eq!(d, MotionDescriptor::Passthrough(p));
        assert!(estimate_motion::<f32>(MotionMode::Passthrough, None, &f, None).is_err());
        assert!(matches!(estimate_motion::<f32>(MotionMode::Learned, None, &f, None), Err(Error::Config(_))));
    }

    #[test]
    fn learned_mode_is_deterministic() {
        let mut store = ParamStore::<f32>::new();
        let net = MotionRegressor::new(&mut store, "m", (16, 16), &mut ChaCha8Rng::seed_from_u64(1));
        let f = rand_frame(16, 16, 2);
        let a = estimate_motion(MotionMode::Learned, Some((&net, &store)), &f, None).unwrap();
        let b = estimate_motion(MotionMode::Learned, Some((&net, &store)), &f.clone(), None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn pose_code_round_trips() {
        let p = PoseParams { yaw: -0.4, dx: 3.0, dy: -1.5, scale: 0.9, expression_phase: 4.0 };
        let q = decode_pose(&encode_pose(&p));
        assert!((q.yaw - p.yaw).abs() < 1e-12);
        assert!((q.dx - p.dx).abs() < 1e-12 && (q.dy - p.dy).abs() < 1e-12);
        assert!((q.scale - p.scale).abs() < 1e-12);
        assert!((q.expression_phase - p.expression_phase).abs() < 1e-12);
    }

    #[test]
    fn depth_three_encoder_shape() {
        let cfg = EncoderConfig::default();
        let mut store = ParamStore::<f32>::new();
        let enc = FeatureEncoder::new(&mut store, "enc.hair", &cfg, &mut ChaCha8Rng::seed_from_u64(3));
        let f = enc.encode(&store, &rand_frame(64, 64, 4));
        assert_eq!(f.activations.shape(), &[64, 8, 8]);
        assert!(f.check_pyramid((64, 64), 3).is_ok());
        assert!(f.check_pyramid((64, 64), 2).is_err());
        assert_eq!(enc.encode(&store, &rand_frame(64, 64, 4)), f);
    }

    #[test]
    fn encoder_config_rejects_indivisible_sizes() {
        assert!(EncoderConfig { depth: 3, base_channels: 8 }.validate((60, 64)).is_err());
        assert!(EncoderConfig { depth: 0, base_channels: 8 }.validate((64, 64)).is_err());
        assert!(EncoderConfig { depth: 2, base_channels: 8 }.validate((60, 64)).is_ok());
    }

    #[test]
    fn identity_warp_is_passthrough() {
        let f = volume(3, 8, 8, |c, y, x| (c * 64 + y * 8 + x) as f64 * 0.1 - 3.0);
        let p = PoseParams { yaw: 0.2, dx: 1.0, dy: -2.0, scale: 1.1, expression_phase: 1.0 };
        let w = warp_features(&pass(p), &pass(p), &f, (64, 64)).unwrap();
        assert!(w.activations.max_abs_diff(&f.activations) <= 1e-6);
    }

    #[test]
    fn two_cell_translation_shifts_with_zero_fill() {
        let f = volume(2, 4, 4, |c, y, x| 1.0 + (c * 16 + y * 4 + x) as f64);
        let w = warp_features(&pass(PoseParams::identity()), &pass(PoseParams::translation(8.0, 0.0)), &f, (16, 16)).unwrap();
        for c in 0..2 {
            for y in 0..4 {
                for x in 0..4 {
                    let got = w.activations.data()[(c * 4 + y) * 4 + x];
                    let want = if x >= 2 { f.activations.data()[(c * 4 + y) * 4 + x - 2] } else { 0.0 };
                    assert!((got - want).abs() < 1e-9, "c{c} y{y} x{x}: {got} vs {want}");
                }
            }
        }
    }

    #[test]
    fn round_trip_warp_restores_interior_of_linear_field() {
        let n = 16;
        let f = volume(2, n, n, |c, y, x| if c == 0 { 0.3 * x as f64 - 0.2 * y as f64 + 1.0 } else { 0.05 * (x + 2 * y) as f64 });
        let a = PoseParams::identity();
        let b = PoseParams { yaw: 0.2, dx: 3.0, dy: -2.0, scale: 1.1, expression_phase: 0.0 };
        let there = warp_features(&pass(a), &pass(b), &f, (64, 64)).unwrap();
        let back = warp_features(&pass(b), &pass(a), &there, (64, 64)).unwrap();
        // both legs move a cell by at most ~3 cells here, so a 5-cell margin keeps every tap inside
        let margin = 5;
        for c in 0..2 {
            for y in margin..n - margin {
                for x in margin..n - margin {
                    let i = (c * n + y) * n + x;
                    assert!((back.activations.data()[i] - f.activations.data()[i]).abs() <= 1e-5);
                }
            }
        }
    }

    #[test]
    fn warp_rejects_mixed_modes() {
        let f = volume(1, 2, 2, |_, _, _| 1.0);
        let r = warp_features(&pass(PoseParams::identity()), &MotionDescriptor::Learned([0.0; MOTION_DIM]), &f, (8, 8));
        assert!(r.is_err());
    }

    #[test]
    fn encoder_gradients() {
        let cfg = EncoderConfig { depth: 2, base_channels: 3 };
        let mut store = ParamStore::<f64>::new();
        let enc = FeatureEncoder::new(&mut store, "enc", &cfg, &mut ChaCha8Rng::seed_from_u64(5));
        let x = rand_frame(8, 8, 6).to_tensor::<f64>();
        let ids: Vec<ParamId> = store.ids().collect();
        let err = param_grad_error(&mut store, &ids, 1e-6, 40, |g| {
            let xv = g.constant(x.clone());
            let y = enc.forward(g, xv);
            random_projection(g, y, 7)
        });
        assert!(err <= 1e-4, "{err}");
    }

    #[test]
    fn motion_regressor_gradients() {
        let mut store = ParamStore::<f64>::new();
        let net = MotionRegressor::new(&mut store, "m", (8, 8), &mut ChaCha8Rng::seed_from_u64(8));
        let x = MotionRegressor::input_tensor::<f64>(&rand_frame(8, 8, 9));
        let ids: Vec<ParamId> = store.ids().collect();
        let err = param_grad_error(&mut store, &ids, 1e-6, 40, |g| {
            let xv = g.constant(x.clone());
            let y = net.forward(g, xv);
            random_projection(g, y, 10)
        });
        assert!(err <= 1e-4, "{err}");
    }

    #[test]
    fn warp_gradient_is_adjoint_resampling() {
        let f = volume(2, 4, 4, |c, y, x| ((c + 1) * (y + 2 * x)) as f64 * 0.1);
        let b = PoseParams { yaw: 0.1, dx: 1.0, dy: 0.5, scale: 1.05, expression_phase: 0.0 };
        let store = ParamStore::<f64>::new();
        let mut g = Graph::new(&store);
        let v = g.input(f.activations.clone(), true);
        let w = warp_var(&mut g, v, &PoseParams::identity(), &b, (16, 16));
        let l = random_projection(&mut g, w, 11);
        let analytic = g.backward(l).wrt(v).unwrap().clone();
        let numeric = crate::graph::check::numerical_grad(&f.activations, 1e-6, |p| {
            let mut g = Graph::new(&store);
            let v = g.constant(p.clone());
            let w = warp_var(&mut g, v, &PoseParams::identity(), &b, (16, 16));
            let l = random_projection(&mut g, w, 11);
            g.value(l).item()
        });
        assert!(crate::graph::check::relative_error(&analytic, &numeric, 1e-8) <= 1e-6);
    }
}
