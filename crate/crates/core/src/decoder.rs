//! Multi-scale gated SPADE decoder.
//!
//! Two pathways run side by side: the context pathway `D_C` is a plain
//! SPADE residual stack conditioned on `f_c`; the synthesis pathway `D_S`
//! is conditioned on the warped hair features `f_w`. After each synthesis
//! block a gated-fusion block modulates the context activation with
//! `f_n = concat(f_c, m_c)`, predicts a per-channel sigmoid gate from both
//! streams and blends them: `h̃_w = (1 − m̂) ⊗ h̃_c + m̂ ⊗ h_w`.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoders::FeatureVolume;
use crate::error::{Error, Result};
use crate::frame::HairMask;
use crate::graph::{Graph, Var};
use crate::nn::{lrelu, Conv2d, Init};
use crate::params::ParamStore;
use crate::real::Real;
use crate::resample::SpatialMap;
use crate::tensor::Tensor;

pub const NORM_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FusionMode {
    MultiScale,
    /// Fusion only at the coarsest block.
    SingleScale,
    None,
}

impl FusionMode {
    pub fn fuses_at(&self, scale: usize) -> bool {
        match self {
            Self::MultiScale => true,
            Self::SingleScale => scale == 0,
            Self::None => false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecoderConfig {
    pub num_scales: usize,
    /// Activation channels per scale, coarsest first.
    pub channels: Vec<usize>,
    /// Hidden width of each SPADE modulation trunk.
    pub spade_hidden: Vec<usize>,
    /// Width of the projected conditioning features.
    pub cond_channels: usize,
    pub gate_conv_kernel: usize,
    pub hmg_enabled: bool,
    pub fusion_mode: FusionMode,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            num_scales: 3,
            channels: vec![32, 16, 8],
            spade_hidden: vec![16, 16, 8],
            cond_channels: 16,
            gate_conv_kernel: 3,
            hmg_enabled: true,
            fusion_mode: FusionMode::MultiScale,
        }
    }
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_scales == 0 {
            return Err(Error::Config("decoder needs at least one scale".into()));
        }
        if self.channels.len() != self.num_scales || self.spade_hidden.len() != self.num_scales {
            return Err(Error::Config(format!(
                "decoder has {} scales but {} channel and {} hidden entries",
                self.num_scales,
                self.channels.len(),
                self.spade_hidden.len()
            )));
        }
        if self.channels.iter().chain(&self.spade_hidden).any(|&c| c == 0) || self.cond_channels == 0 {
            return Err(Error::Config("decoder channel counts must be positive".into()));
        }
        if self.gate_conv_kernel % 2 == 0 {
            return Err(Error::Config("gate kernel must be odd".into()));
        }
        Ok(())
    }
}

/// Predicts `γ` and `β` maps from a conditioning tensor.
#[derive(Clone, Debug)]
pub struct Modulation {
    trunk: Conv2d,
    gamma: Conv2d,
    beta: Conv2d,
}

impl Modulation {
    fn new<T: Real>(store: &mut ParamStore<T>, prefix: &str, cond: usize, hidden: usize, out: usize, rng: &mut impl Rng) -> Self {
        Self {
            trunk: Conv2d::new(store, &format!("{prefix}.trunk"), cond, hidden, 3, 1, Init::He(1.0), rng),
            gamma: Conv2d::new(store, &format!("{prefix}.gamma"), hidden, out, 3, 1, Init::He(0.1), rng),
            beta: Conv2d::new(store, &format!("{prefix}.beta"), hidden, out, 3, 1, Init::He(0.1), rng),
        }
    }

    /// `(γ, β)` for conditioning `cond`.
    pub fn params<T: Real>(&self, g: &mut Graph<'_, T>, cond: Var) -> (Var, Var) {
        let t = self.trunk.forward(g, cond);
        let a = g.relu(t);
        (self.gamma.forward(g, a), self.beta.forward(g, a))
    }

    /// `γ(cond) ⊗ h_norm + β(cond)`.
    pub fn apply<T: Real>(&self, g: &mut Graph<'_, T>, h_norm: Var, cond: Var) -> Var {
        let (gamma, beta) = self.params(g, cond);
        let m = g.mul(gamma, h_norm);
        g.add(m, beta)
    }

    pub fn trunk(&self) -> &Conv2d {
        &self.trunk
    }

    pub fn gamma(&self) -> &Conv2d {
        &self.gamma
    }

    pub fn beta(&self) -> &Conv2d {
        &self.beta
    }
}

/// Residual SPADE block: `h + conv(lrelu(SPADE(h, cond)))`.
#[derive(Clone, Debug)]
pub struct SpadeBlock {
    pub modulation: Modulation,
    conv: Conv2d,
}

impl SpadeBlock {
    fn new<T: Real>(store: &mut ParamStore<T>, prefix: &str, ch: usize, cond: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        Self {
            modulation: Modulation::new(store, &format!("{prefix}.spade"), cond, hidden, ch, rng),
            conv: Conv2d::new(store, &format!("{prefix}.conv"), ch, ch, 3, 1, Init::He(0.5), rng),
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, h: Var, cond: Var) -> Result<Var> {
        let (_, hh, hw) = g.value(h).chw();
        let (_, ch, cw) = g.value(cond).chw();
        if (hh, hw) != (ch, cw) {
            return Err(Error::Shape(format!("SPADE conditioning {ch}x{cw} vs activation {hh}x{hw}")));
        }
        let n = g.instance_norm(h, T::of(NORM_EPS));
        let m = self.modulation.apply(g, n, cond);
        let a = lrelu(g, m);
        let r = self.conv.forward(g, a);
        Ok(g.add(h, r))
    }

    pub fn conv(&self) -> &Conv2d {
        &self.conv
    }
}

/// One SPADE pathway (`D_C` or `D_S`).
#[derive(Clone, Debug)]
pub struct Pathway {
    stem: Conv2d,
    cond_proj: Conv2d,
    pub blocks: Vec<SpadeBlock>,
    ups: Vec<Conv2d>,
}

impl Pathway {
    fn new<T: Real>(store: &mut ParamStore<T>, prefix: &str, feat: usize, cfg: &DecoderConfig, rng: &mut impl Rng) -> Self {
        let stem = Conv2d::new(store, &format!("{prefix}.stem"), feat, cfg.channels[0], 3, 1, Init::He(1.0), rng);
        let cond_proj = Conv2d::new(store, &format!("{prefix}.cond"), feat, cfg.cond_channels, 1, 1, Init::He(1.0), rng);
        let blocks = (0..cfg.num_scales)
            .map(|k| SpadeBlock::new(store, &format!("{prefix}.block{k}"), cfg.channels[k], cfg.cond_channels, cfg.spade_hidden[k], rng))
            .collect();
        let ups = (0..cfg.num_scales - 1)
            .map(|k| Conv2d::new(store, &format!("{prefix}.up{k}"), cfg.channels[k], cfg.channels[k + 1], 1, 1, Init::He(1.0), rng))
            .collect();
        Self { stem, cond_proj, blocks, ups }
    }
}

/// Gated-fusion block inserted after synthesis block `k`.
#[derive(Clone, Debug)]
pub struct GfBlock {
    cond_proj: Conv2d,
    pub modulation: Modulation,
    gate: Conv2d,
    tail: Conv2d,
    /// Input channel of the modulation trunk that carries `m_c`.
    mask_channel: usize,
}

impl GfBlock {
    fn new<T: Real>(store: &mut ParamStore<T>, prefix: &str, feat: usize, k: usize, cfg: &DecoderConfig, rng: &mut impl Rng) -> Self {
        let ch = cfg.channels[k];
        let cond_proj = Conv2d::new(store, &format!("{prefix}.cond"), feat, cfg.cond_channels, 1, 1, Init::He(1.0), rng);
        let modulation = Modulation::new(store, &format!("{prefix}.mod"), cfg.cond_channels + 1, cfg.spade_hidden[k], ch, rng);
        // mask-channel weights start at zero so HMG begins as a no-op
        let mask_channel = cfg.cond_channels;
        let w = store.get_mut(modulation.trunk.weight);
        let s = w.shape().to_vec();
        for o in 0..s[0] {
            for i in 0..s[2] * s[3] {
                w.data_mut()[(o * s[1] + mask_channel) * s[2] * s[3] + i] = T::zero();
            }
        }
        let gk = cfg.gate_conv_kernel;
        let gate = Conv2d::new(store, &format!("{prefix}.gate"), 2 * ch, ch, gk, 1, Init::Zero(0.0), rng);
        let tail = Conv2d::new(store, &format!("{prefix}.tail"), ch, ch, 3, 1, Init::Zero(0.0), rng);
        Self { cond_proj, modulation, gate, tail, mask_channel }
    }

    pub fn gate_conv(&self) -> &Conv2d {
        &self.gate
    }

    pub fn tail_conv(&self) -> &Conv2d {
        &self.tail
    }

    pub fn cond_proj(&self) -> &Conv2d {
        &self.cond_proj
    }

    pub fn mask_channel(&self) -> usize {
        self.mask_channel
    }
}

/// Graph nodes recorded at one decoder scale.
#[derive(Clone, Copy, Debug)]
pub struct ScaleTrace {
    pub h_c: Option<Var>,
    pub h_w: Var,
    pub h_c_mod: Option<Var>,
    pub gate: Option<Var>,
    pub fused: Option<Var>,
}

#[derive(Clone, Debug)]
pub struct DecodeOutput {
    pub image: Var,
    pub scales: Vec<ScaleTrace>,
}

#[derive(Clone, Debug)]
pub struct MsgSpadeDecoder {
    pub cfg: DecoderConfig,
    pub feat_channels: usize,
    pub image_hw: (usize, usize),
    pub coarse_hw: (usize, usize),
    pub context: Pathway,
    pub synthesis: Pathway,
    pub gf: Vec<GfBlock>,
    out: Conv2d,
}

fn zero_like_mask(hw: (usize, usize)) -> HairMask {
    HairMask::zeros(hw.0, hw.1)
}

impl MsgSpadeDecoder {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        cfg: &DecoderConfig,
        feat_channels: usize,
        image_hw: (usize, usize),
        coarse_hw: (usize, usize),
        rng: &mut impl Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        let top = Self::scale_hw_for(coarse_hw, cfg.num_scales - 1);
        if top.0 > image_hw.0 || top.1 > image_hw.1 || image_hw.0 % top.0 != 0 || image_hw.1 % top.1 != 0 {
            return Err(Error::Config(format!("{} scales from {coarse_hw:?} do not fit image {image_hw:?}", cfg.num_scales)));
        }
        let context = Pathway::new(store, "decoder.context", feat_channels, cfg, rng);
        let synthesis = Pathway::new(store, "decoder.synthesis", feat_channels, cfg, rng);
        let gf = (0..cfg.num_scales).map(|k| GfBlock::new(store, &format!("decoder.gf.block{k}"), feat_channels, k, cfg, rng)).collect();
        let out = Conv2d::new(store, "decoder.synthesis.out", cfg.channels[cfg.num_scales - 1], 3, 3, 1, Init::He(1.0), rng);
        Ok(Self { cfg: cfg.clone(), feat_channels, image_hw, coarse_hw, context, synthesis, gf, out })
    }

    fn scale_hw_for(coarse: (usize, usize), k: usize) -> (usize, usize) {
        (coarse.0 << k, coarse.1 << k)
    }

    pub fn scale_hw(&self, k: usize) -> (usize, usize) {
        Self::scale_hw_for(self.coarse_hw, k)
    }

    /// Area-averaged mask at scale `k`, as a `(1, h, w)` tensor.
    pub fn mask_at<T: Real>(&self, m_c: &HairMask, k: usize) -> Result<Tensor<T>> {
        let hw = self.scale_hw(k);
        resample_mask::<T>(m_c, hw)
    }

    fn resample_cond<T: Real>(&self, g: &mut Graph<'_, T>, proj: Var, k: usize) -> Var {
        let (_, h, w) = g.value(proj).chw();
        let hw = self.scale_hw(k);
        if (h, w) == hw {
            proj
        } else {
            g.spatial(proj, Arc::new(SpatialMap::bilinear_resize((h, w), hw)))
        }
    }

    fn upsample<T: Real>(&self, g: &mut Graph<'_, T>, x: Var, hw: (usize, usize)) -> Var {
        let (_, h, w) = g.value(x).chw();
        g.spatial(x, Arc::new(SpatialMap::bilinear_resize((h, w), hw)))
    }

    /// SPADE-style modulation of the normalised context activation, with the
    /// hair mask appended to the conditioning when guidance is on.
    pub fn context_modulate<T: Real>(&self, g: &mut Graph<'_, T>, k: usize, h_c_bar: Var, f_c_proj: Var, mask: Var) -> Var {
        let blk = &self.gf[k];
        let mask = if self.cfg.hmg_enabled {
            mask
        } else {
            let zeros = Tensor::zeros(g.value(mask).shape());
            g.constant(zeros)
        };
        let f_n = g.concat(&[f_c_proj, mask]);
        blk.modulation.apply(g, h_c_bar, f_n)
    }

    /// `σ(Conv(concat(h_w, h̃_c)))`.
    pub fn compute_gate<T: Real>(&self, g: &mut Graph<'_, T>, k: usize, h_w: Var, h_c_mod: Var) -> Var {
        let cat = g.concat(&[h_w, h_c_mod]);
        let logits = self.gf[k].gate.forward(g, cat);
        g.sigmoid(logits)
    }

    /// Full decoder pass. `gate_override` replaces every learned gate with
    /// the given constant.
    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, f_w: Var, f_c: Var, m_c: &HairMask, gate_override: Option<f64>) -> Result<DecodeOutput> {
        let (cw, hw_, ww) = g.value(f_w).chw();
        let (cc, hc_, wc) = g.value(f_c).chw();
        if cw != self.feat_channels || cc != self.feat_channels || (hw_, ww) != self.coarse_hw || (hc_, wc) != self.coarse_hw {
            return Err(Error::Shape(format!(
                "decoder expects ({}, {:?}) features, got f_w ({cw}, {hw_}, {ww}) and f_c ({cc}, {hc_}, {wc})",
                self.feat_channels, self.coarse_hw
            )));
        }
        if m_c.dims() != self.image_hw {
            return Err(Error::Shape(format!("hair mask {:?} vs image {:?}", m_c.dims(), self.image_hw)));
        }
        if let Some(v) = gate_override {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Validation(format!("gate override {v} outside [0, 1]")));
            }
        }
        let mode = self.cfg.fusion_mode;
        let uses_context = (0..self.cfg.num_scales).any(|k| mode.fuses_at(k));

        let mut hs = self.synthesis.stem.forward(g, f_w);
        let cond_w = self.synthesis.cond_proj.forward(g, f_w);
        let mut hc = None;
        let mut cond_c = None;
        if uses_context {
            hc = Some(self.context.stem.forward(g, f_c));
            cond_c = Some(self.context.cond_proj.forward(g, f_c));
        }
        let mut scales = Vec::with_capacity(self.cfg.num_scales);
        for k in 0..self.cfg.num_scales {
            let cw_k = self.resample_cond(g, cond_w, k);
            hs = self.synthesis.blocks[k].forward(g, hs, cw_k)?;
            let mut trace = ScaleTrace { h_c: None, h_w: hs, h_c_mod: None, gate: None, fused: None };
            if let (Some(h), Some(cc)) = (hc, cond_c) {
                let cc_k = self.resample_cond(g, cc, k);
                let h = self.context.blocks[k].forward(g, h, cc_k)?;
                hc = Some(h);
                trace.h_c = Some(h);
                if mode.fuses_at(k) {
                    let h_bar = g.instance_norm(h, T::of(NORM_EPS));
                    let proj = self.gf[k].cond_proj.forward(g, f_c);
                    let proj = self.resample_cond(g, proj, k);
                    let mask = g.constant(self.mask_at(m_c, k)?);
                    let h_mod = self.context_modulate(g, k, h_bar, proj, mask);
                    let gate = match gate_override {
                        Some(v) => {
                            let t = Tensor::full(g.value(hs).shape(), T::of(v));
                            g.constant(t)
                        }
                        None => self.compute_gate(g, k, hs, h_mod),
                    };
                    let fused = g.fuse(h_mod, hs, gate);
                    let a = lrelu(g, fused);
                    let r = self.gf[k].tail.forward(g, a);
                    hs = g.add(fused, r);
                    trace.h_c_mod = Some(h_mod);
                    trace.gate = Some(gate);
                    trace.fused = Some(fused);
                }
            }
            scales.push(trace);
            if k + 1 < self.cfg.num_scales {
                let next = self.scale_hw(k + 1);
                let up = self.upsample(g, hs, next);
                hs = self.synthesis.ups[k].forward(g, up);
                if let Some(h) = hc {
                    let up = self.upsample(g, h, next);
                    hc = Some(self.context.ups[k].forward(g, up));
                }
            }
        }
        let top = self.scale_hw(self.cfg.num_scales - 1);
        let full = if top == self.image_hw { hs } else { self.upsample(g, hs, self.image_hw) };
        let a = lrelu(g, full);
        let logits = self.out.forward(g, a);
        let image = g.sigmoid(logits);
        Ok(DecodeOutput { image, scales })
    }

    /// Convenience wrapper over [`FeatureVolume`]s without gradients.
    pub fn decode<T: Real>(
        &self,
        store: &ParamStore<T>,
        f_w: &FeatureVolume<T>,
        f_c: &FeatureVolume<T>,
        m_c: &HairMask,
        gate_override: Option<f64>,
    ) -> Result<Tensor<T>> {
        let mut g = Graph::new(store);
        let fw = g.constant(f_w.activations.clone());
        let fc = g.constant(f_c.activations.clone());
        let out = self.forward(&mut g, fw, fc, m_c, gate_override)?;
        Ok(g.value(out.image).clone())
    }

    pub fn empty_mask(&self) -> HairMask {
        zero_like_mask(self.image_hw)
    }
}

/// Area-average downsampling of a full-resolution mask to `hw`.
pub fn resample_mask<T: Real>(m: &HairMask, hw: (usize, usize)) -> Result<Tensor<T>> {
    let (h, w) = m.dims();
    if hw.0 == 0 || hw.1 == 0 || h % hw.0 != 0 || w % hw.1 != 0 || h / hw.0 != w / hw.1 {
        return Err(Error::Validation(format!("cannot area-resample {h}x{w} mask to {hw:?}")));
    }
    let t = m.to_tensor::<T>();
    if (h, w) == hw {
        return Ok(t);
    }
    let map = SpatialMap::<T>::area_downsample((h, w), h / hw.0);
    Ok(Tensor::from_vec(&[1, hw.0, hw.1], map.apply(t.data(), 1)))
}

/// Resamples guidance to pyramid level `target_scale` (0 = coarsest):
/// bilinear for features, area average for the mask.
pub fn resample_guidance<T: Real>(
    f_c: &FeatureVolume<T>,
    m_c: &HairMask,
    target_scale: usize,
    depth: usize,
) -> Result<(FeatureVolume<T>, Tensor<T>)> {
    if target_scale > depth {
        return Err(Error::Validation(format!("target scale {target_scale} outside pyramid of depth {depth}")));
    }
    let (h, w) = m_c.dims();
    let f = 1usize << (depth - target_scale);
    if h % f != 0 || w % f != 0 {
        return Err(Error::Validation(format!("mask {h}x{w} not divisible by {f}")));
    }
    let hw = (h / f, w / f);
    let src = f_c.hw();
    let c = f_c.channels();
    let feat = if src == hw {
        f_c.clone()
    } else {
        let map = SpatialMap::<T>::bilinear_resize(src, hw);
        FeatureVolume { activations: Tensor::from_vec(&[c, hw.0, hw.1], map.apply(f_c.activations.data(), c)), scale_level: target_scale }
    };
    Ok((feat, resample_mask(m_c, hw)?))
}

/// `(1 − m̂) ⊗ h̃_c + m̂ ⊗ h_w` on plain tensors, rejecting gates outside `[0, 1]`.
pub fn gated_fuse<T: Real>(h_c_mod: &Tensor<T>, h_w: &Tensor<T>, gate: &Tensor<T>) -> Result<Tensor<T>> {
    if h_c_mod.shape() != h_w.shape() || h_w.shape() != gate.shape() {
        return Err(Error::Shape(format!("gated_fuse shapes {:?}, {:?}, {:?}", h_c_mod.shape(), h_w.shape(), gate.shape())));
    }
    if gate.data().iter().any(|&m| !(m >= T::zero() && m <= T::one())) {
        return Err(Error::Validation("gate values must lie in [0, 1]".into()));
    }
    let data = h_c_mod
        .data()
        .iter()
        .zip(h_w.data())
        .zip(gate.data())
        .map(|((&c, &w), &m)| (T::one() - m) * c + m * w)
        .collect();
    Ok(Tensor::from_vec(h_w.shape(), data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::check::{param_grad_error, random_projection};
    use crate::params::ParamId;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn small_cfg(mode: FusionMode, hmg: bool) -> DecoderConfig {
        DecoderConfig {
            num_scales: 2,
            channels: vec![4, 3],
            spade_hidden: vec![4, 4],
            cond_channels: 3,
            gate_conv_kernel: 3,
            hmg_enabled: hmg,
            fusion_mode: mode,
        }
    }

    fn rand_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = Normal::new(0.0, 1.0).unwrap();
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| d.sample(&mut rng)).collect())
    }

    fn jitter(store: &mut ParamStore<f64>, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = Normal::new(0.0, 0.3).unwrap();
        let ids: Vec<ParamId> = store.ids().collect();
        for id in ids {
            for v in store.get_mut(id).data_mut() {
                *v += d.sample(&mut rng);
            }
        }
    }

    fn test_mask() -> HairMask {
        HairMask::from_fn(8, 8, |y, x| if y < 4 && x > 1 { 1.0 } else { 0.0 })
    }

    fn build(mode: FusionMode, hmg: bool, seed: u64) -> (ParamStore<f64>, MsgSpadeDecoder) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dec = MsgSpadeDecoder::new(&mut store, &small_cfg(mode, hmg), 2, (8, 8), (2, 2), &mut rng).unwrap();
        (store, dec)
    }

    fn run(store: &ParamStore<f64>, dec: &MsgSpadeDecoder, gate: Option<f64>) -> (Vec<Tensor<f64>>, Vec<Tensor<f64>>, Vec<Tensor<f64>>, Tensor<f64>) {
        let mut g = Graph::new(store);
        let fw = g.constant(rand_tensor(&[2, 2, 2], 1));
        let fc = g.constant(rand_tensor(&[2, 2, 2], 2));
        let out = dec.forward(&mut g, fw, fc, &test_mask(), gate).unwrap();
        let mut hw = Vec::new();
        let mut hc = Vec::new();
        let mut fused = Vec::new();
        for s in &out.scales {
            hw.push(g.value(s.h_w).clone());
            hc.push(g.value(s.h_c_mod.unwrap()).clone());
            fused.push(g.value(s.fused.unwrap()).clone());
        }
        (hw, hc, fused, g.value(out.image).clone())
    }

    #[test]
    fn gate_one_selects_synthesis_stream() {
        let (mut store, dec) = build(FusionMode::MultiScale, true, 3);
        jitter(&mut store, 4);
        let (hw, _, fused, _) = run(&store, &dec, Some(1.0));
        for (a, b) in hw.iter().zip(&fused) {
            assert!(a.max_abs_diff(b) <= 1e-6);
        }
    }

    #[test]
    fn gate_zero_selects_modulated_context() {
        let (mut store, dec) = build(FusionMode::MultiScale, true, 5);
        jitter(&mut store, 6);
        let (_, hc, fused, _) = run(&store, &dec, Some(0.0));
        for (a, b) in hc.iter().zip(&fused) {
            assert!(a.max_abs_diff(b) <= 1e-6);
        }
    }

    #[test]
    fn learned_fusion_stays_inside_elementwise_envelope() {
        let (mut store, dec) = build(FusionMode::MultiScale, true, 7);
        jitter(&mut store, 8);
        let (hw, hc, fused, _) = run(&store, &dec, None);
        for ((w, c), f) in hw.iter().zip(&hc).zip(&fused) {
            for ((&w, &c), &f) in w.data().iter().zip(c.data()).zip(f.data()) {
                assert!(f >= w.min(c) - 1e-6 && f <= w.max(c) + 1e-6);
            }
        }
    }

    #[test]
    fn gate_starts_at_one_half() {
        let (store, dec) = build(FusionMode::MultiScale, true, 9);
        let mut g = Graph::new(&store);
        let fw = g.constant(rand_tensor(&[2, 2, 2], 1));
        let fc = g.constant(rand_tensor(&[2, 2, 2], 2));
        let out = dec.forward(&mut g, fw, fc, &test_mask(), None).unwrap();
        for s in &out.scales {
            assert!(g.value(s.gate.unwrap()).data().iter().all(|&v| v == 0.5));
        }
    }

    #[test]
    fn zero_mask_weights_make_guidance_a_no_op() {
        let (store, dec) = build(FusionMode::MultiScale, true, 11);
        let mut off = dec.clone();
        off.cfg.hmg_enabled = false;
        let (_, _, _, a) = run(&store, &dec, None);
        let (_, _, _, b) = run(&store, &off, None);
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn guidance_changes_output_once_mask_weights_move() {
        let (mut store, dec) = build(FusionMode::MultiScale, true, 12);
        jitter(&mut store, 13);
        let mut off = dec.clone();
        off.cfg.hmg_enabled = false;
        let (_, _, _, a) = run(&store, &dec, None);
        let (_, _, _, b) = run(&store, &off, None);
        assert!(a.max_abs_diff(&b) > 1e-6);
    }

    #[test]
    fn fusion_none_ignores_context_features() {
        let (store, dec) = build(FusionMode::None, true, 14);
        let mut g = Graph::new(&store);
        let fw = g.constant(rand_tensor(&[2, 2, 2], 1));
        let fc1 = g.constant(rand_tensor(&[2, 2, 2], 2));
        let fc2 = g.constant(rand_tensor(&[2, 2, 2], 3));
        let a = dec.forward(&mut g, fw, fc1, &test_mask(), None).unwrap();
        let b = dec.forward(&mut g, fw, fc2, &test_mask(), None).unwrap();
        assert_eq!(g.value(a.image).data(), g.value(b.image).data());
        assert!(a.scales.iter().all(|s| s.gate.is_none()));
    }

    #[test]
    fn single_scale_fuses_only_coarsest_block() {
        let (store, dec) = build(FusionMode::SingleScale, true, 15);
        let mut g = Graph::new(&store);
        let fw = g.constant(rand_tensor(&[2, 2, 2], 1));
        let fc = g.constant(rand_tensor(&[2, 2, 2], 2));
        let out = dec.forward(&mut g, fw, fc, &test_mask(), None).unwrap();
        assert!(out.scales[0].gate.is_some());
        assert!(out.scales[1].gate.is_none());
    }

    #[test]
    fn gated_fuse_matches_formula_and_rejects_bad_gates() {
        let c = rand_tensor(&[1, 2, 2], 1);
        let w = rand_tensor(&[1, 2, 2], 2);
        let m = Tensor::from_vec(&[1, 2, 2], vec![0.0, 1.0, 0.25, 0.5]);
        let f = gated_fuse(&c, &w, &m).unwrap();
        assert_eq!(f.data()[0], c.data()[0]);
        assert_eq!(f.data()[1], w.data()[1]);
        assert!((f.data()[2] - (0.75 * c.data()[2] + 0.25 * w.data()[2])).abs() < 1e-15);
        let bad = Tensor::from_vec(&[1, 2, 2], vec![0.0, 1.5, 0.2, 0.1]);
        assert!(matches!(gated_fuse(&c, &w, &bad), Err(Error::Validation(_))));
        let nan = Tensor::from_vec(&[1, 2, 2], vec![0.0, f64::NAN, 0.2, 0.1]);
        assert!(gated_fuse(&c, &w, &nan).is_err());
        assert!(matches!(gated_fuse(&c, &w, &Tensor::zeros(&[1, 1, 4])), Err(Error::Shape(_))));
    }

    #[test]
    fn forward_rejects_mismatched_inputs() {
        let (store, dec) = build(FusionMode::MultiScale, true, 16);
        let mut g = Graph::new(&store);
        let fw = g.constant(rand_tensor(&[2, 2, 2], 1));
        let bad = g.constant(rand_tensor(&[3, 2, 2], 2));
        assert!(matches!(dec.forward(&mut g, fw, bad, &test_mask(), None), Err(Error::Shape(_))));
        assert!(matches!(dec.forward(&mut g, fw, fw, &HairMask::zeros(4, 4), None), Err(Error::Shape(_))));
        assert!(matches!(dec.forward(&mut g, fw, fw, &test_mask(), Some(1.5)), Err(Error::Validation(_))));
    }

    #[test]
    fn resample_guidance_shapes_and_mask_average() {
        let f = FeatureVolume { activations: rand_tensor(&[2, 2, 2], 1), scale_level: 0 };
        let (feat, m) = resample_guidance(&f, &test_mask(), 1, 2).unwrap();
        assert_eq!(feat.activations.shape(), &[2, 4, 4]);
        assert_eq!(m.shape(), &[1, 4, 4]);
        // top-right 2x2 block of the 8x8 mask is all ones; top-left covers x in {0,1}
        assert_eq!(m.data()[3], 1.0);
        assert_eq!(m.data()[0], 0.0);
        assert!(resample_guidance(&f, &test_mask(), 3, 2).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(DecoderConfig::default().validate().is_ok());
        let mut c = DecoderConfig::default();
        c.gate_conv_kernel = 2;
        assert!(c.validate().is_err());
        let mut c = DecoderConfig::default();
        c.channels.pop();
        assert!(c.validate().is_err());
    }

    fn ids_with(store: &ParamStore<f64>, prefix: &str) -> Vec<ParamId> {
        store.ids().filter(|&id| store.name(id).starts_with(prefix)).collect()
    }

    #[test]
    fn spade_block_gradients() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let blk = SpadeBlock::new(&mut store, "b", 3, 2, 4, &mut rng);
        let h = rand_tensor(&[3, 4, 4], 22);
        let cond = rand_tensor(&[2, 4, 4], 23);
        let ids: Vec<ParamId> = store.ids().collect();
        let err = param_grad_error(&mut store, &ids, 1e-6, 40, |g| {
            let hv = g.constant(h.clone());
            let cv = g.constant(cond.clone());
            let y = blk.forward(g, hv, cv).unwrap();
            random_projection(g, y, 24)
        });
        assert!(err <= 1e-4, "{err}");
    }

    #[test]
    fn gf_spade_and_gate_gradients() {
        let (mut store, dec) = build(FusionMode::MultiScale, true, 31);
        jitter(&mut store, 32);
        let loss = |g: &mut Graph<'_, f64>| {
            let fw = g.constant(rand_tensor(&[2, 2, 2], 1));
            let fc = g.constant(rand_tensor(&[2, 2, 2], 2));
            let out = dec.forward(g, fw, fc, &test_mask(), None).unwrap();
            random_projection(g, out.image, 33)
        };
        for prefix in ["decoder.gf.block0.gate", "decoder.gf.block1.gate", "decoder.gf", "decoder.context", "decoder.synthesis"] {
            let ids = ids_with(&store, prefix);
            assert!(!ids.is_empty());
            let err = param_grad_error(&mut store, &ids, 1e-6, 24, loss);
            assert!(err <= 1e-4, "{prefix}: {err}");
        }
    }

    #[test]
    fn gate_conv_gradient_with_respect_to_streams() {
        let (mut store, dec) = build(FusionMode::MultiScale, true, 41);
        jitter(&mut store, 42);
        let h_w = rand_tensor(&[4, 2, 2], 43);
        let h_c = rand_tensor(&[4, 2, 2], 44);
        let f = |g: &mut Graph<'_, f64>, a: Var, b: Var| {
            let gate = dec.compute_gate(g, 0, a, b);
            random_projection(g, gate, 45)
        };
        let mut g = Graph::new(&store);
        let a = g.input(h_w.clone(), true);
        let b = g.constant(h_c.clone());
        let l = f(&mut g, a, b);
        let analytic = g.backward(l).wrt(a).unwrap().clone();
        let numeric = crate::graph::check::numerical_grad(&h_w, 1e-6, |p| {
            let mut g = Graph::new(&store);
            let a = g.constant(p.clone());
            let b = g.constant(h_c.clone());
            let l = f(&mut g, a, b);
            g.value(l).item()
        });
        assert!(crate::graph::check::relative_error(&analytic, &numeric, 1e-8) <= 1e-4);
    }
}
