//! Fixed perceptual feature extractor and the patch discriminator.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::frame::Frame;
use crate::graph::{Graph, Gradients, Var};
use crate::nn::{lrelu, Conv2d, Init};
use crate::params::ParamStore;
use crate::real::Real;
use crate::tensor::Tensor;

use super::losses::{hinge_disc, hinge_gen};

pub const PERCEPTUAL_SEED: u64 = 0x5eed_fea7;

/// Three-level random convolutional feature extractor; weights are a pure
/// function of [`PERCEPTUAL_SEED`] and never trained.
#[derive(Clone, Debug)]
pub struct PerceptualNet<T: Real> {
    pub store: ParamStore<T>,
    layers: Vec<Conv2d>,
}

impl<T: Real> Default for PerceptualNet<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> PerceptualNet<T> {
    pub fn new() -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(PERCEPTUAL_SEED);
        let mut store = ParamStore::new();
        let layers = vec![
            Conv2d::new(&mut store, "perceptual.l0", 3, 8, 3, 1, Init::He(1.0), &mut rng),
            Conv2d::new(&mut store, "perceptual.l1", 8, 16, 3, 2, Init::He(1.0), &mut rng),
            Conv2d::new(&mut store, "perceptual.l2", 16, 32, 3, 2, Init::He(1.0), &mut rng),
        ];
        store.freeze_prefixes(&["perceptual."]);
        Self { store, layers }
    }

    pub fn features(&self, g: &mut Graph<'_, T>, x: Var) -> Vec<Var> {
        let mut out = Vec::with_capacity(self.layers.len());
        let mut h = g.offset(x, T::of(-0.5));
        for l in &self.layers {
            let c = l.forward(g, h);
            h = g.relu(c);
            out.push(h);
        }
        out
    }

    fn record(&self, g: &mut Graph<'_, T>, a: Var, b: Var) -> Var {
        let fa = self.features(g, a);
        let fb = self.features(g, b);
        let mut total: Option<Var> = None;
        for (x, y) in fa.into_iter().zip(fb) {
            let d = g.sub(x, y);
            let d = g.abs(d);
            let m = g.mean(d);
            total = Some(match total {
                Some(t) => g.add(t, m),
                None => m,
            });
        }
        total.expect("extractor has layers")
    }

    /// Sum over levels of the mean absolute feature difference.
    pub fn loss(&self, a: &Tensor<T>, b: &Tensor<T>) -> f64 {
        let mut g = Graph::new(&self.store);
        let (a, b) = (g.constant(a.clone()), g.constant(b.clone()));
        let l = self.record(&mut g, a, b);
        g.value(l).item().f64()
    }

    pub fn frame_loss(&self, a: &Frame, b: &Frame) -> f64 {
        self.loss(&a.to_tensor(), &b.to_tensor())
    }

    /// Loss and its gradient with respect to `pred`.
    pub fn loss_and_grad(&self, target: &Tensor<T>, pred: &Tensor<T>) -> (f64, Tensor<T>) {
        let mut g = Graph::new(&self.store);
        let t = g.constant(target.clone());
        let p = g.input(pred.clone(), true);
        let l = self.record(&mut g, t, p);
        let v = g.value(l).item().f64();
        let grads = g.backward(l);
        (v, grads.wrt(p).cloned().unwrap_or_else(|| Tensor::zeros(pred.shape())))
    }
}

/// Four-layer hinge patch discriminator producing a grid of logits.
#[derive(Clone, Debug)]
pub struct PatchDiscriminator<T: Real> {
    pub store: ParamStore<T>,
    layers: Vec<Conv2d>,
}

impl<T: Real> PatchDiscriminator<T> {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xd15c);
        let mut store = ParamStore::new();
        let layers = vec![
            Conv2d::new(&mut store, "disc.l0", 3, 16, 3, 2, Init::He(1.0), &mut rng),
            Conv2d::new(&mut store, "disc.l1", 16, 32, 3, 2, Init::He(1.0), &mut rng),
            Conv2d::new(&mut store, "disc.l2", 32, 32, 3, 2, Init::He(1.0), &mut rng),
            Conv2d::new(&mut store, "disc.l3", 32, 1, 3, 1, Init::He(0.5), &mut rng),
        ];
        Self { store, layers }
    }

    /// Sets every weight and bias to zero (logits ≡ 0).
    pub fn zeroed(mut self) -> Self {
        let ids: Vec<_> = self.store.ids().collect();
        for id in ids {
            self.store.get_mut(id).data_mut().iter_mut().for_each(|v| *v = T::zero());
        }
        self
    }

    pub fn logits(&self, g: &mut Graph<'_, T>, x: Var) -> Var {
        let mut h = g.scale(x, T::of(2.0));
        h = g.offset(h, T::of(-1.0));
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            h = l.forward(g, h);
            if i < last {
                h = lrelu(g, h);
            }
        }
        h
    }

    pub fn logits_of(&self, x: &Tensor<T>) -> Tensor<T> {
        let mut g = Graph::new(&self.store);
        let v = g.constant(x.clone());
        let l = self.logits(&mut g, v);
        g.value(l).clone()
    }

    /// Hinge discriminator loss and its parameter gradients.
    pub fn disc_loss_and_grads(&self, real: &Tensor<T>, fake: &Tensor<T>) -> (f64, Gradients<T>) {
        let mut g = Graph::new(&self.store);
        let r = g.constant(real.clone());
        let f = g.constant(fake.clone());
        let lr = self.logits(&mut g, r);
        let lf = self.logits(&mut g, f);
        let loss = hinge_disc(&mut g, lr, lf);
        let v = g.value(loss).item().f64();
        (v, g.backward(loss))
    }

    /// Generator hinge loss and its gradient with respect to `fake`.
    pub fn gen_loss_and_grad(&self, fake: &Tensor<T>) -> (f64, Tensor<T>) {
        let mut g = Graph::new(&self.store);
        let f = g.input(fake.clone(), true);
        let lf = self.logits(&mut g, f);
        let loss = hinge_gen(&mut g, lf);
        let v = g.value(loss).item().f64();
        let grads = g.backward(loss);
        (v, grads.wrt(f).cloned().unwrap_or_else(|| Tensor::zeros(fake.shape())))
    }
}

/// `(gen_loss, disc_loss)` of the hinge formulation for one pair.
pub fn adversarial_losses<T: Real>(i_d: &Frame, i_p: &Frame, disc: &PatchDiscriminator<T>) -> (f64, f64) {
    let mut g = Graph::new(&disc.store);
    let r = g.constant(i_d.to_tensor());
    let f = g.constant(i_p.to_tensor());
    let lr = disc.logits(&mut g, r);
    let lf = disc.logits(&mut g, f);
    let d = hinge_disc(&mut g, lr, lf);
    let gl = hinge_gen(&mut g, lf);
    (g.value(gl).item().f64(), g.value(d).item().f64())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::check::{numerical_grad, param_grad_error, relative_error};
    use crate::params::ParamId;
    use rand::Rng;

    fn rand_frame(h: usize, w: usize, seed: u64) -> Frame {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Frame::from_fn(h, w, |_, _| [rng.gen(), rng.gen(), rng.gen()])
    }

    #[test]
    fn perceptual_identity_and_symmetry() {
        let net = PerceptualNet::<f64>::new();
        let a = rand_frame(16, 16, 1);
        let b = rand_frame(16, 16, 2);
        assert_eq!(net.frame_loss(&a, &a), 0.0);
        assert!((net.frame_loss(&a, &b) - net.frame_loss(&b, &a)).abs() < 1e-12);
    }

    #[test]
    fn perceptual_is_positive_on_small_edits() {
        let net = PerceptualNet::<f32>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for i in 0..100 {
            let a = rand_frame(16, 16, 100 + i);
            let mut b = a.clone();
            // 1% of 256 pixels rounds up to 3
            for _ in 0..3 {
                let (y, x) = (rng.gen_range(0..16), rng.gen_range(0..16));
                let p = a.get(y, x);
                b.set(y, x, [(p[0] + 0.5) % 1.0, p[1], p[2]]);
            }
            assert!(net.frame_loss(&a, &b) > 0.0);
        }
    }

    #[test]
    fn perceptual_weights_are_frozen_and_seeded() {
        let a = PerceptualNet::<f32>::new();
        let b = PerceptualNet::<f32>::new();
        assert!(a.store.trainable_names().is_empty());
        for id in a.store.ids() {
            assert_eq!(a.store.get(id), b.store.get(id));
        }
    }

    #[test]
    fn zero_discriminator_hinge_values() {
        let d = PatchDiscriminator::<f64>::new(0).zeroed();
        let (gen, disc) = adversarial_losses(&rand_frame(16, 16, 4), &rand_frame(16, 16, 5), &d);
        assert_eq!((gen, disc), (0.0, 2.0));
    }

    #[test]
    fn gen_loss_gradient_matches_finite_differences() {
        let d = PatchDiscriminator::<f64>::new(6);
        let x = rand_frame(8, 8, 7).to_tensor::<f64>();
        let (_, analytic) = d.gen_loss_and_grad(&x);
        let numeric = numerical_grad(&x, 1e-6, |p| d.gen_loss_and_grad(p).0);
        assert!(relative_error(&analytic, &numeric, 1e-8) <= 1e-4);
    }

    #[test]
    fn perceptual_gradient_matches_finite_differences() {
        let net = PerceptualNet::<f64>::new();
        let t = rand_frame(8, 8, 8).to_tensor::<f64>();
        let p = rand_frame(8, 8, 9).to_tensor::<f64>();
        let (_, analytic) = net.loss_and_grad(&t, &p);
        let numeric = numerical_grad(&p, 1e-6, |x| net.loss(&t, x));
        assert!(relative_error(&analytic, &numeric, 1e-8) <= 1e-4);
    }

    #[test]
    fn discriminator_parameter_gradients() {
        let mut d = PatchDiscriminator::<f64>::new(10);
        let real = rand_frame(8, 8, 11).to_tensor::<f64>();
        let fake = rand_frame(8, 8, 12).to_tensor::<f64>();
        let ids: Vec<ParamId> = d.store.ids().collect();
        let layers = d.layers.clone();
        let probe = PatchDiscriminator { store: ParamStore::new(), layers };
        let err = param_grad_error(&mut d.store, &ids, 1e-6, 30, |g| {
            let r = g.constant(real.clone());
            let f = g.constant(fake.clone());
            let lr = probe.logits(g, r);
            let lf = probe.logits(g, f);
            hinge_disc(g, lr, lf)
        });
        assert!(err <= 1e-4, "{err}");
    }
}
