//! Training samples drawn from synthetic portrait videos.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data_synth::{build_hair_bank, generate_portrait_video_sized, sample_training_triplet, HairBankEntry, PortraitSpec, PortraitVideo, PoseParams};
use crate::error::{Error, Result};
use crate::frame::{Frame, HairMask};
use crate::iht::{make_pseudo_driving, CompositeConfig, RegionMasks};

/// `(I_s, I_d, I_d′, m_hair, m_face, m_c)` plus the two poses.
#[derive(Clone, Debug)]
pub struct TrainSample {
    pub source: Frame,
    pub source_hair_mask: HairMask,
    pub target: Frame,
    pub pseudo: Frame,
    pub hair_mask: HairMask,
    pub face_mask: HairMask,
    pub context_mask: HairMask,
    pub source_pose: PoseParams,
    pub driving_pose: PoseParams,
    /// Hair colour of the frame the pseudo driving hair was taken from.
    pub pseudo_hair_color: [f32; 3],
}

/// Which objective a sample feeds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SampleKind {
    /// `I_d′ = I_d`: plain reconstruction.
    Reconstruction,
    /// `I_d′` wears a random reference hairstyle.
    Decoupling,
}

#[derive(Clone, Debug)]
pub struct TrainingData {
    pub videos: Vec<PortraitVideo>,
    pub bank: Vec<HairBankEntry>,
    pub composite: CompositeConfig,
}

impl TrainingData {
    /// `num_videos` random portraits of `len` frames; video `i` uses seed
    /// `seed · 1_000_003 + i`.
    pub fn generate(seed: u64, num_videos: usize, len: usize, size: usize) -> Result<Self> {
        if num_videos == 0 {
            return Err(Error::Config("training data needs at least one video".into()));
        }
        let videos = (0..num_videos)
            .map(|i| {
                let spec = PortraitSpec::random(seed.wrapping_mul(1_000_003).wrapping_add(i as u64), len);
                generate_portrait_video_sized(&spec, len, size)
            })
            .collect::<Result<Vec<_>>>()?;
        let bank = build_hair_bank(seed ^ 0xba4c, size);
        Ok(Self { videos, bank, composite: CompositeConfig::default() })
    }

    pub fn size(&self) -> usize {
        self.videos[0].dims().0
    }

    pub fn sample(&self, kind: SampleKind, seed: u64) -> Result<TrainSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = &self.videos[rng.gen_range(0..self.videos.len())];
        let tri = sample_training_triplet(v, &self.bank, rng.gen())?;
        let (s, d, r) = (tri.source_index, tri.driving_index, tri.reference_index);
        let (pseudo, context_mask, pseudo_hair_color) = match kind {
            SampleKind::Reconstruction => (v.frames[d].clone(), v.hair_masks[d].clone(), v.spec.hair_color),
            SampleKind::Decoupling => {
                let refe = &self.bank[r];
                let (f, m) = make_pseudo_driving(
                    &v.frames[d],
                    RegionMasks { hair: &v.hair_masks[d], face: &v.face_masks[d] },
                    &refe.frame,
                    RegionMasks { hair: &refe.hair_mask, face: &refe.face_mask },
                    (&v.poses[d], &refe.pose),
                    &self.composite,
                )?;
                (f, m, refe.style.color)
            }
        };
        Ok(TrainSample {
            source: tri.source,
            source_hair_mask: v.hair_masks[s].clone(),
            target: tri.driving,
            pseudo,
            hair_mask: v.hair_masks[d].clone(),
            face_mask: v.face_masks[d].clone(),
            context_mask,
            source_pose: v.poses[s],
            driving_pose: v.poses[d],
            pseudo_hair_color,
        })
    }

    pub fn batch(&self, kind: SampleKind, size: usize, seed: u64) -> Result<Vec<TrainSample>> {
        (0..size as u64).map(|i| self.sample(kind, seed.wrapping_mul(0x9e37_79b9).wrapping_add(i))).collect()
    }
}
