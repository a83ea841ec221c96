//! Toy identity embedder: a four-layer convolutional net mapping a frame to
//! a unit 32-vector, trained once on synthetic identities with a cosine
//! margin loss and shipped frozen.

use std::io::Cursor;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{load_into, parse_raw, write_params};
use crate::data_synth::{random_pose, render_frame, PortraitSpec, HAIR_PALETTE, NUM_HAIR_SHAPES};
use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::graph::{Graph, Var};
use crate::nn::{lrelu, Conv2d, Init};
use crate::params::ParamStore;
use crate::tensor::Tensor;
use crate::training::Adam;

pub const EMBED_DIM: usize = 32;
pub const EMBED_SIZE: usize = 64;
/// Cross-identity pairs are pushed below this cosine.
pub const MARGIN: f64 = 0.2;
const KIND: &str = "{\"kind\":\"identity_embedder\"}";
static BUNDLED: &[u8] = include_bytes!("../../assets/identity_embedder.ckpt");

#[derive(Clone, Debug)]
pub struct IdentityEmbedder {
    pub store: ParamStore<f32>,
    layers: Vec<Conv2d>,
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na * nb)
}

impl IdentityEmbedder {
    /// Randomly initialised, untrained network.
    pub fn untrained(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let layers = vec![
            Conv2d::new(&mut store, "embed.l0", 3, 16, 3, 2, Init::He(1.0), &mut rng),
            Conv2d::new(&mut store, "embed.l1", 16, 32, 3, 2, Init::He(1.0), &mut rng),
            Conv2d::new(&mut store, "embed.l2", 32, 32, 3, 2, Init::He(1.0), &mut rng),
            Conv2d::new(&mut store, "embed.l3", 32, EMBED_DIM, EMBED_SIZE / 8, 1, Init::He(1.0), &mut rng).with_pad(0),
        ];
        Self { store, layers }
    }

    /// The frozen weights shipped with the crate.
    pub fn bundled() -> Result<Self> {
        Self::from_bytes(BUNDLED, Path::new("<bundled identity embedder>"))
    }

    pub fn from_bytes(bytes: &[u8], label: &Path) -> Result<Self> {
        let raw = parse_raw(Cursor::new(bytes), label)?;
        if raw.config_json != KIND {
            return Err(Error::Checkpoint(format!("{}: not an identity embedder", label.display())));
        }
        let mut e = Self::untrained(0);
        load_into(label, &mut e.store, &raw.params)?;
        Ok(e)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        write_params(&mut out, KIND, &self.store).expect("writing to memory");
        out
    }

    fn record(&self, g: &mut Graph<'_, f32>, frame: &Frame) -> Var {
        let x = g.constant(frame.to_tensor());
        let mut h = g.offset(x, -0.5);
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            h = l.forward(g, h);
            if i < last {
                h = lrelu(g, h);
            }
        }
        g.l2_normalize(h, 1e-12)
    }

    /// Unit-norm embedding; frames of other sizes are bilinearly resized.
    pub fn embed(&self, frame: &Frame) -> Vec<f64> {
        let f = if frame.dims() == (EMBED_SIZE, EMBED_SIZE) { frame.clone() } else { resize(frame, EMBED_SIZE) };
        let mut g = Graph::new(&self.store);
        let v = self.record(&mut g, &f);
        g.value(v).data().iter().map(|&x| x as f64).collect()
    }
}

fn resize(frame: &Frame, size: usize) -> Frame {
    let (h, w) = frame.dims();
    let map = crate::resample::SpatialMap::<f32>::bilinear_resize((h, w), (size, size));
    let t = frame.to_tensor::<f32>();
    Frame::from_tensor(&Tensor::from_vec(&[3, size, size], map.apply(t.data(), 3)))
}

/// Cosine similarity of the two frames' identity embeddings.
pub fn identity_similarity(a: &Frame, b: &Frame, embedder: &IdentityEmbedder) -> f64 {
    cosine(&embedder.embed(a), &embedder.embed(b))
}

/// A frame of identity `spec` at a random pose with a random hairstyle.
pub fn random_view(spec: &PortraitSpec, rng: &mut impl Rng) -> Frame {
    let mut s = spec.clone();
    s.hair_shape_id = rng.gen_range(0..NUM_HAIR_SHAPES);
    s.hair_color = *HAIR_PALETTE.choose(rng).unwrap();
    let pose = random_pose(rng, 0.35);
    render_frame(&s, &pose, EMBED_SIZE).0
}

/// Trains the embedder on `identities` per step, two views each.
pub fn train_identity_embedder(seed: u64, steps: usize, identities: usize, lr: f64) -> IdentityEmbedder {
    let mut e = IdentityEmbedder::untrained(seed);
    let mut opt = Adam::new(lr);
    opt.beta1 = 0.9;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1de4);
    for _ in 0..steps {
        let specs: Vec<PortraitSpec> = (0..identities).map(|_| PortraitSpec::random(rng.gen(), 1)).collect();
        let views: Vec<Frame> = specs.iter().flat_map(|s| [random_view(s, &mut rng), random_view(s, &mut rng)]).collect();
        let mut g = Graph::new(&e.store);
        let emb: Vec<Var> = views.iter().map(|f| e.record(&mut g, f)).collect();
        let mut terms = Vec::new();
        for i in 0..emb.len() {
            for j in i + 1..emb.len() {
                let p = g.mul(emb[i], emb[j]);
                let cos = g.sum(p);
                let t = if i / 2 == j / 2 {
                    let n = g.scale(cos, -1.0);
                    g.offset(n, 1.0)
                } else {
                    let m = g.offset(cos, -MARGIN as f32);
                    let r = g.relu(m);
                    g.scale(r, 1.0 / (identities as f32 - 1.0))
                };
                terms.push(t);
            }
        }
        let mut loss = terms[0];
        for &t in &terms[1..] {
            loss = g.add(loss, t);
        }
        let grads = g.backward(loss).into_params();
        opt.step(&mut e.store, &grads);
    }
    e.store.freeze_prefixes(&["embed."]);
    e
}
