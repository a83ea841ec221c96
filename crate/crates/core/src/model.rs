//! The animation network `G`: encoders, warper and the gated decoder
//! sharing one parameter store.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data_synth::{PoseParams, DEFAULT_SIZE};
use crate::decoder::{DecodeOutput, DecoderConfig, FusionMode, MsgSpadeDecoder};
use crate::encoders::{estimate_motion, warp_var, EncoderConfig, FeatureEncoder, FeatureVolume, MotionDescriptor, MotionMode, MotionRegressor};
use crate::error::{Error, Result};
use crate::frame::{Frame, HairMask};
use crate::graph::{Graph, Var};
use crate::params::ParamStore;
use crate::real::Real;

pub const HAIR_ENCODER: &str = "enc.hair";
pub const CONTEXT_ENCODER: &str = "enc.context";
pub const MOTION_ESTIMATOR: &str = "enc.motion";
pub const DECODER_CONTEXT: &str = "decoder.context";
pub const DECODER_SYNTHESIS: &str = "decoder.synthesis";
pub const DECODER_GF: &str = "decoder.gf";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub image_size: usize,
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
    pub motion_mode: MotionMode,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            image_size: DEFAULT_SIZE,
            encoder: EncoderConfig::default(),
            decoder: DecoderConfig::default(),
            motion_mode: MotionMode::Passthrough,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn image_hw(&self) -> (usize, usize) {
        (self.image_size, self.image_size)
    }

    pub fn coarse_hw(&self) -> (usize, usize) {
        let f = 1 << self.encoder.depth;
        (self.image_size / f, self.image_size / f)
    }
}

#[derive(Clone, Debug)]
pub struct Generator<T: Real> {
    pub cfg: ModelConfig,
    pub store: ParamStore<T>,
    pub hair_encoder: FeatureEncoder,
    pub context_encoder: FeatureEncoder,
    pub motion: MotionRegressor,
    pub decoder: MsgSpadeDecoder,
}

/// Nodes of one generator pass.
pub struct GeneratorOutput {
    pub image: Var,
    pub f_w: Var,
    pub f_c: Var,
    pub decode: DecodeOutput,
}

impl<T: Real> Generator<T> {
    pub fn new(cfg: &ModelConfig) -> Result<Self> {
        let hw = cfg.image_hw();
        cfg.encoder.validate(hw)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut store = ParamStore::new();
        let hair_encoder = FeatureEncoder::new(&mut store, HAIR_ENCODER, &cfg.encoder, &mut rng);
        let context_encoder = FeatureEncoder::new(&mut store, CONTEXT_ENCODER, &cfg.encoder, &mut rng);
        let motion = MotionRegressor::new(&mut store, MOTION_ESTIMATOR, hw, &mut rng);
        let decoder = MsgSpadeDecoder::new(&mut store, &cfg.decoder, cfg.encoder.out_channels(), hw, cfg.coarse_hw(), &mut rng)?;
        Ok(Self { cfg: cfg.clone(), store, hair_encoder, context_encoder, motion, decoder })
    }

    pub fn set_fusion_mode(&mut self, mode: FusionMode) {
        self.cfg.decoder.fusion_mode = mode;
        self.decoder.cfg.fusion_mode = mode;
    }

    pub fn set_hmg(&mut self, enabled: bool) {
        self.cfg.decoder.hmg_enabled = enabled;
        self.decoder.cfg.hmg_enabled = enabled;
    }

    /// `E_M` for this model's motion mode.
    pub fn motion_descriptor(&self, frame: &Frame, pose: Option<&PoseParams>) -> Result<MotionDescriptor> {
        estimate_motion(self.cfg.motion_mode, Some((&self.motion, &self.store)), frame, pose)
    }

    fn check_frame(&self, f: &Frame) -> Result<()> {
        if f.dims() != self.cfg.image_hw() {
            return Err(Error::Shape(format!("frame {:?} vs model {:?}", f.dims(), self.cfg.image_hw())));
        }
        Ok(())
    }

    /// `E_H(I_s)`.
    pub fn hair_features(&self, source: &Frame) -> Result<FeatureVolume<T>> {
        self.check_frame(source)?;
        Ok(self.hair_encoder.encode(&self.store, source))
    }

    /// `E_C(I_d)`.
    pub fn context_features(&self, driving: &Frame) -> Result<FeatureVolume<T>> {
        self.check_frame(driving)?;
        Ok(self.context_encoder.encode(&self.store, driving))
    }

    /// Records `I_p = D(W(E_M(I_s), E_M(I_d), E_H(I_s)), E_C(I_d), m_c)` on `g`.
    pub fn forward(
        &self,
        g: &mut Graph<'_, T>,
        source: &Frame,
        driving: &Frame,
        m_c: &HairMask,
        motion: (&MotionDescriptor, &MotionDescriptor),
        gate_override: Option<f64>,
    ) -> Result<GeneratorOutput> {
        self.check_frame(source)?;
        self.check_frame(driving)?;
        if motion.0.mode() != motion.1.mode() {
            return Err(Error::Validation("motion descriptors use different modes".into()));
        }
        let xs = g.constant(source.to_tensor());
        let f_h = self.hair_encoder.forward(g, xs);
        let f_w = warp_var(g, f_h, &motion.0.pose(), &motion.1.pose(), self.cfg.image_hw());
        let f_c = if self.decoder.cfg.fusion_mode == FusionMode::None {
            // unused by the decoder; keep a cheap placeholder of the right shape
            let t = crate::tensor::Tensor::zeros(g.value(f_w).shape());
            g.constant(t)
        } else {
            let xd = g.constant(driving.to_tensor());
            self.context_encoder.forward(g, xd)
        };
        let decode = self.decoder.forward(g, f_w, f_c, m_c, gate_override)?;
        Ok(GeneratorOutput { image: decode.image, f_w, f_c, decode })
    }

    /// Inference pass for a single frame.
    pub fn generate(
        &self,
        source: &Frame,
        driving: &Frame,
        m_c: &HairMask,
        motion: (&MotionDescriptor, &MotionDescriptor),
    ) -> Result<Frame> {
        let mut g = Graph::new(&self.store);
        let out = self.forward(&mut g, source, driving, m_c, motion, None)?;
        Ok(Frame::from_tensor(g.value(out.image)))
    }

    /// Per-frame animation with precomputed source features `f_h`.
    pub fn animate(
        &self,
        f_h: &FeatureVolume<T>,
        driving: &Frame,
        m_c: &HairMask,
        motion: (&MotionDescriptor, &MotionDescriptor),
    ) -> Result<Frame> {
        self.check_frame(driving)?;
        let mut g = Graph::new(&self.store);
        let fh = g.constant(f_h.activations.clone());
        let f_w = warp_var(&mut g, fh, &motion.0.pose(), &motion.1.pose(), self.cfg.image_hw());
        let xd = g.constant(driving.to_tensor());
        let f_c = if self.decoder.cfg.fusion_mode == FusionMode::None {
            let t = crate::tensor::Tensor::zeros(g.value(f_w).shape());
            g.constant(t)
        } else {
            self.context_encoder.forward(&mut g, xd)
        };
        let out = self.decoder.forward(&mut g, f_w, f_c, m_c, None)?;
        Ok(Frame::from_tensor(g.value(out.image)))
    }

    /// Initialises the context branch from the trained synthesis branch
    /// (`E_H → E_C`, `D_S → D_C`).
    pub fn init_context_from_synthesis(&mut self) {
        self.store.copy_prefix(&format!("{HAIR_ENCODER}."), &format!("{CONTEXT_ENCODER}."));
        self.store.copy_prefix(&format!("{DECODER_SYNTHESIS}."), &format!("{DECODER_CONTEXT}."));
    }

    pub fn cast<U: Real>(&self) -> Generator<U> {
        Generator {
            cfg: self.cfg.clone(),
            store: self.store.cast(),
            hair_encoder: self.hair_encoder.clone(),
            context_encoder: self.context_encoder.clone(),
            motion: self.motion.clone(),
            decoder: self.decoder.clone(),
        }
    }
}
